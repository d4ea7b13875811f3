//! Equal error rate, its average over an active-learning run, and the
//! sampling-rate schedule.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    /// 1-based: record `t` describes the classifier trained on `t` displays.
    pub iteration: usize,
    pub sampling_percent: f64,
    /// `None` when no ground truth is available on the evaluation split.
    pub eer_percent: Option<f64>,
}

/// Operating point of the threshold `θ`, predicting "change" when `score ≥ θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub false_positive_rate: f64,
    pub false_negative_rate: f64,
}

/// Linear interpolation of the FPR/FNR crossing along a sequence of operating
/// points ordered by increasing threshold. Returns the EER as a fraction.
pub fn crossing(points: &[RatePoint]) -> f64 {
    let diff = |p: &RatePoint| p.false_positive_rate - p.false_negative_rate;
    for w in points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let (da, db) = (diff(a), diff(b));
        if da == 0.0 {
            return a.false_positive_rate;
        }
        if da > 0.0 && db <= 0.0 {
            if db == 0.0 {
                return b.false_positive_rate;
            }
            let lambda = da / (da - db);
            return a.false_positive_rate + lambda * (b.false_positive_rate - a.false_positive_rate);
        }
    }
    points.last().map(|p| p.false_positive_rate).unwrap_or(0.0)
}

/// Equal error rate in percent.
///
/// Thresholds sweep the sorted unique scores followed by `+∞`. The FPR and
/// FNR step functions are linearly interpolated between the two adjacent
/// thresholds where `FPR − FNR` changes sign.
pub fn eer<T: Scalar>(scores: &[T], labels: &[Label]) -> Result<f64> {
    Error::check_dim(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|l| l.is_positive()).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("EER needs at least one positive and one negative"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("EER scores must not be NaN"));
    }
    let mut pairs: Vec<(T, bool)> = scores.iter().copied().zip(labels.iter().map(|l| l.is_positive())).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("no NaN"));

    // Walking upward: at threshold pairs[i].0 everything from i on is
    // predicted positive.
    let mut points = Vec::with_capacity(pairs.len() + 1);
    let (mut pos_below, mut neg_below) = (0usize, 0usize);
    let mut i = 0;
    while i < pairs.len() {
        points.push(RatePoint {
            false_positive_rate: (n_neg - neg_below) as f64 / n_neg as f64,
            false_negative_rate: pos_below as f64 / n_pos as f64,
        });
        let s = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == s {
            if pairs[i].1 {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
    }
    points.push(RatePoint { false_positive_rate: 0.0, false_negative_rate: 1.0 });
    Ok(100.0 * crossing(&points))
}

/// Mean of the per-iteration EERs.
pub fn auc_over_iterations(eers: &[f64]) -> Result<f64> {
    if eers.is_empty() {
        return Err(Error::invalid("AUC needs at least one EER value"));
    }
    Ok(eers.iter().sum::<f64>() / eers.len() as f64)
}

/// Percentage of the training half labelled after `t` displays of size `k`.
pub fn sampling_percent(t: usize, k: usize, n_total: usize) -> f64 {
    if t == 0 || k == 0 || n_total == 0 {
        return 0.0;
    }
    (t * k) as f64 / (n_total as f64 / 2.0) * 100.0
}

/// Truncates to two decimals, the rounding used in published schedules.
pub fn truncate_2dp(v: f64) -> f64 {
    // The small nudge absorbs representation error such as 2.9 = 2.8999…
    ((v * 100.0) + 1e-9).floor() / 100.0
}

/// One row of an iteration report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub config: String,
    pub variant: String,
    pub eers: Vec<f64>,
}

impl ReportRow {
    pub fn auc(&self) -> Result<f64> {
        auc_over_iterations(&self.eers)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub k: usize,
    pub n_total: usize,
}

impl Report {
    pub fn new(rows: Vec<ReportRow>, k: usize, n_total: usize) -> Result<Self> {
        if let Some(first) = rows.first() {
            let t = first.eers.len();
            if t == 0 {
                return Err(Error::invalid("report rows need at least one iteration"));
            }
            if let Some(bad) = rows.iter().find(|r| r.eers.len() != t) {
                return Err(Error::invalid(format!(
                    "row {}/{} has {} iterations, expected {t}",
                    bad.config,
                    bad.variant,
                    bad.eers.len()
                )));
            }
        }
        Ok(Report { rows, k, n_total })
    }

    pub fn iterations(&self) -> usize {
        self.rows.first().map_or(0, |r| r.eers.len())
    }

    /// CSV `config,variant,iter1..iterT,auc` with full-precision values and a
    /// trailing `samp` row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let t = self.iterations();
        let mut header = vec!["config".to_string(), "variant".to_string()];
        header.extend((1..=t).map(|i| format!("iter{i}")));
        header.push("auc".into());
        writeln!(out, "{}", header.join(","))?;
        for row in &self.rows {
            let mut fields = vec![row.config.clone(), row.variant.clone()];
            fields.extend(row.eers.iter().map(|v| v.to_string()));
            fields.push(row.auc()?.to_string());
            writeln!(out, "{}", fields.join(","))?;
        }
        let mut samp = vec!["samp".to_string(), String::new()];
        samp.extend((1..=t).map(|i| sampling_percent(i, self.k, self.n_total).to_string()));
        samp.push(String::new());
        writeln!(out, "{}", samp.join(","))?;
        Ok(())
    }

    /// Fixed-width table at two decimals.
    pub fn write_table<W: Write>(&self, mut out: W) -> Result<()> {
        let t = self.iterations();
        write!(out, "{:<18} {:<10}", "config", "variant")?;
        for i in 1..=t {
            write!(out, " {:>6}", i)?;
        }
        writeln!(out, " {:>6}", "AUC")?;
        for row in &self.rows {
            write!(out, "{:<18} {:<10}", row.config, row.variant)?;
            for v in &row.eers {
                write!(out, " {:>6.2}", v)?;
            }
            writeln!(out, " {:>6.2}", row.auc()?)?;
        }
        write!(out, "{:<18} {:<10}", "samp%", "")?;
        for i in 1..=t {
            write!(out, " {:>6.2}", truncate_2dp(sampling_percent(i, self.k, self.n_total)))?;
        }
        writeln!(out, " {:>6}", "-")?;
        Ok(())
    }
}

/// Parses a report CSV written by [`Report::write_csv`]; returns the rows
/// and the `auc` column as written.
pub fn read_report_csv(text: &str) -> Result<Vec<(ReportRow, f64)>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse { line: 1, message: "empty report".into() })?;
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(Error::Parse { line: i + 1, message: "wrong field count".into() });
        }
        if fields[0] == "samp" {
            continue;
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Parse { line: i + 1, message: format!("bad number `{s}`") })
        };
        let eers = fields[2..width - 1].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
        rows.push((
            ReportRow { config: fields[0].into(), variant: fields[1].into(), eers },
            num(fields[width - 1])?,
        ));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn labels(v: &[i64]) -> Vec<Label> {
        v.iter().map(|&s| Label::from_sign(s).unwrap()).collect()
    }

    #[test]
    fn separated_scores_give_zero() {
        let e = eer(&[0.1, 0.2, 0.9, 1.5], &labels(&[-1, -1, 1, 1])).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn tied_scores_give_chance() {
        let e = eer(&[0.3; 6], &labels(&[1, -1, -1, 1, -1, -1])).unwrap();
        assert_eq!(e, 50.0);
    }

    #[test]
    fn reversed_scores_give_hundred() {
        let e = eer(&[2.0, 1.0], &labels(&[-1, 1])).unwrap();
        assert_eq!(e, 100.0);
    }

    #[test]
    fn single_class_rejected() {
        assert!(eer(&[0.1, 0.2], &labels(&[1, 1])).is_err());
        assert!(eer(&[0.1], &labels(&[1, -1])).is_err());
    }

    #[test]
    fn interpolates_between_thresholds() {
        // Thresholds 1,2,3,+inf: (FPR, FNR) = (1,0), (0.5,0), (0.5,1), (0,1).
        let e = eer(&[1.0, 2.0, 3.0], &labels(&[-1, 1, -1])).unwrap();
        assert_abs_diff_eq!(e, 50.0, epsilon = 1e-12);
    }

    #[test]
    fn auc_examples() {
        let row = [47.81, 32.56, 9.88, 4.54, 2.71, 2.00, 1.56, 1.21, 1.10, 1.08];
        assert_abs_diff_eq!(auc_over_iterations(&row).unwrap(), 10.445, epsilon = 1e-12);
        assert_eq!(auc_over_iterations(&[5.0, 5.0, 5.0]).unwrap(), 5.0);
        assert_eq!(auc_over_iterations(&[3.25]).unwrap(), 3.25);
        assert!(auc_over_iterations(&[]).is_err());
    }

    #[test]
    fn sampling_examples() {
        assert_abs_diff_eq!(sampling_percent(1, 16, 2200), 1.454545, epsilon = 1e-6);
        assert_eq!(truncate_2dp(sampling_percent(1, 16, 2200)), 1.45);
        assert_eq!(truncate_2dp(sampling_percent(10, 16, 2200)), 14.54);
        assert_eq!(sampling_percent(4, 0, 2200), 0.0);
        assert_eq!(sampling_percent(0, 16, 2200), 0.0);
        let step = sampling_percent(1, 16, 2200);
        for t in 1..10 {
            assert_abs_diff_eq!(sampling_percent(t + 1, 16, 2200) - sampling_percent(t, 16, 2200), step, epsilon = 1e-12);
        }
    }

    #[test]
    fn report_layout_and_consistency() {
        let report = Report::new(
            vec![ReportRow { config: "rep+div+amb".into(), variant: "surrogate".into(), eers: vec![40.0, 20.5, 9.25] }],
            16,
            2200,
        )
        .unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "config,variant,iter1,iter2,iter3,auc");
        assert_eq!(lines.len(), 3);
        let samp: Vec<f64> = lines[2].split(',').skip(2).take(3).map(|s| s.parse().unwrap()).collect();
        for (t, v) in samp.iter().enumerate() {
            assert_eq!(*v, sampling_percent(t + 1, 16, 2200));
        }
        let parsed = read_report_csv(&text).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].1, auc_over_iterations(&parsed[0].0.eers).unwrap());

        let mut table = Vec::new();
        report.write_table(&mut table).unwrap();
        let table = String::from_utf8(table).unwrap();
        assert!(table.contains(" 23.25"));
        assert!(table.contains("  1.45"));
    }

    #[test]
    fn report_rejects_mismatched_lengths() {
        let rows = vec![
            ReportRow { config: "a".into(), variant: "x".into(), eers: vec![1.0, 2.0] },
            ReportRow { config: "b".into(), variant: "x".into(), eers: vec![1.0] },
        ];
        assert!(Report::new(rows, 16, 2200).is_err());
    }
}
