//! Pools of aligned patch-pair samples: CSV I/O, synthetic generation and
//! the even train/eval split.
//!
//! A pool is immutable once built. Splitting returns a new pool sharing no
//! mutable state with the input, so pools can be handed to several sessions
//! behind an `Arc`.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type SampleId = u64;

/// Binary change label, stored as `+1` (change) or `-1` (no change).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i64")]
pub enum Label {
    Change,
    NoChange,
}

impl Label {
    pub fn from_sign(v: i64) -> Result<Self> {
        match v {
            1 => Ok(Label::Change),
            -1 => Ok(Label::NoChange),
            other => Err(Error::invalid(format!("label must be -1 or +1, got {other}"))),
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Label::Change => 1,
            Label::NoChange => -1,
        }
    }

    pub fn value<T: Scalar>(self) -> T {
        match self {
            Label::Change => T::one(),
            Label::NoChange => -T::one(),
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Change
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        l.sign()
    }
}

impl TryFrom<i64> for Label {
    type Error = Error;
    fn try_from(v: i64) -> Result<Self> {
        Label::from_sign(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub id: SampleId,
    pub features: Vec<T>,
    pub label: Option<Label>,
    pub thumbnail_before: Option<String>,
    pub thumbnail_after: Option<String>,
}

impl<T: Scalar> Sample<T> {
    pub fn new(id: SampleId, features: Vec<T>, label: Option<Label>) -> Self {
        Sample {
            id,
            features,
            label,
            thumbnail_before: None,
            thumbnail_after: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

/// Read counters for ground-truth labels, shared by clones of a pool.
#[derive(Debug, Default)]
pub struct LabelAudit {
    train_reads: AtomicUsize,
    eval_reads: AtomicUsize,
}

impl LabelAudit {
    pub fn train_reads(&self) -> usize {
        self.train_reads.load(Ordering::Relaxed)
    }

    pub fn eval_reads(&self) -> usize {
        self.eval_reads.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone)]
pub struct Pool<T> {
    samples: Vec<Sample<T>>,
    dim: usize,
    split: Vec<Split>,
    index: HashMap<SampleId, usize>,
    audit: Arc<LabelAudit>,
}

impl<T: Scalar> Pool<T> {
    /// Builds a pool with every sample tagged `Train`.
    pub fn new(samples: Vec<Sample<T>>, dim: usize) -> Result<Self> {
        let mut index = HashMap::with_capacity(samples.len());
        for (pos, s) in samples.iter().enumerate() {
            Error::check_dim(dim, s.features.len())?;
            if index.insert(s.id, pos).is_some() {
                return Err(Error::Integrity(format!("duplicate sample id {}", s.id)));
            }
        }
        let split = vec![Split::Train; samples.len()];
        Ok(Pool {
            samples,
            dim,
            split,
            index,
            audit: Arc::new(LabelAudit::default()),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[Sample<T>] {
        &self.samples
    }

    pub fn split_tags(&self) -> &[Split] {
        &self.split
    }

    pub fn audit(&self) -> &LabelAudit {
        &self.audit
    }

    pub fn position(&self, id: SampleId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn sample(&self, id: SampleId) -> Option<&Sample<T>> {
        self.position(id).map(|p| &self.samples[p])
    }

    pub fn features(&self, id: SampleId) -> Result<&[T]> {
        self.sample(id)
            .map(|s| s.features.as_slice())
            .ok_or_else(|| Error::invalid(format!("unknown sample id {id}")))
    }

    pub fn split_of(&self, id: SampleId) -> Option<Split> {
        self.position(id).map(|p| self.split[p])
    }

    /// Ids tagged `Train`, in pool order.
    pub fn train_ids(&self) -> Vec<SampleId> {
        self.ids_in(Split::Train)
    }

    pub fn eval_ids(&self) -> Vec<SampleId> {
        self.ids_in(Split::Eval)
    }

    fn ids_in(&self, which: Split) -> Vec<SampleId> {
        self.samples
            .iter()
            .zip(&self.split)
            .filter(|(_, &tag)| tag == which)
            .map(|(s, _)| s.id)
            .collect()
    }

    /// Ground-truth label of a `Train` sample. This is the read path of the
    /// simulated oracle; it is counted in the audit.
    pub fn train_ground_truth(&self, id: SampleId) -> Result<Option<Label>> {
        let pos = self
            .position(id)
            .ok_or_else(|| Error::invalid(format!("unknown sample id {id}")))?;
        if self.split[pos] != Split::Train {
            return Err(Error::InvalidState(format!("sample {id} is not in the training split")));
        }
        self.audit.train_reads.fetch_add(1, Ordering::Relaxed);
        Ok(self.samples[pos].label)
    }

    /// Features and labels of the `Eval` samples that carry a label.
    /// Counted in the audit.
    pub fn eval_ground_truth(&self) -> (Vec<&[T]>, Vec<Label>) {
        self.audit.eval_reads.fetch_add(1, Ordering::Relaxed);
        self.samples
            .iter()
            .zip(&self.split)
            .filter(|(_, &tag)| tag == Split::Eval)
            .filter_map(|(s, _)| s.label.map(|l| (s.features.as_slice(), l)))
            .unzip()
    }

    pub fn positives(&self) -> usize {
        self.samples
            .iter()
            .filter(|s| s.label == Some(Label::Change))
            .count()
    }

    /// Returns a copy with fresh split tags and a fresh audit.
    fn with_split(&self, split: Vec<Split>) -> Self {
        Pool {
            samples: self.samples.clone(),
            dim: self.dim,
            split,
            index: self.index.clone(),
            audit: Arc::new(LabelAudit::default()),
        }
    }
}

/// Parses a pool from CSV text with header `id,f0,..,f{d-1},label[,thumb_before,thumb_after]`.
pub fn read_csv<T: Scalar, R: Read>(input: R) -> Result<Pool<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = reader.records();

    let header = match records.next() {
        None => return Pool::new(Vec::new(), 0),
        Some(h) => h.map_err(|e| csv_error(1, e))?,
    };
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let label_col = names
        .iter()
        .position(|n| *n == "label")
        .ok_or(Error::Parse { line: 1, message: "header has no `label` column".into() })?;
    if names.first() != Some(&"id") || label_col < 1 {
        return Err(Error::Parse { line: 1, message: "header must start with `id`".into() });
    }
    let dim = label_col - 1;
    for (j, name) in names[1..label_col].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected feature column f{j}, found `{name}`"),
            });
        }
    }
    let thumbs = match &names[label_col + 1..] {
        [] => false,
        ["thumb_before", "thumb_after"] => true,
        other => {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected trailing columns {other:?}"),
            })
        }
    };
    let width = names.len();

    let mut samples = Vec::new();
    for record in records {
        let record = record.map_err(|e| csv_error(0, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        let id: SampleId = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse { line, message: format!("bad id `{}`", &record[0]) })?;
        let features = (1..=dim)
            .map(|j| {
                record[j].trim().parse::<T>().map_err(|_| Error::Parse {
                    line,
                    message: format!("non-numeric feature f{} `{}`", j - 1, &record[j]),
                })
            })
            .collect::<Result<Vec<T>>>()?;
        let raw_label = record[label_col].trim();
        let label = if raw_label.is_empty() {
            None
        } else {
            let v: i64 = raw_label
                .parse()
                .map_err(|_| Error::Parse { line, message: format!("bad label `{raw_label}`") })?;
            Some(Label::from_sign(v).map_err(|e| Error::Parse { line, message: e.to_string() })?)
        };
        let mut sample = Sample::new(id, features, label);
        if thumbs {
            sample.thumbnail_before = non_empty(&record[label_col + 1]);
            sample.thumbnail_after = non_empty(&record[label_col + 2]);
        }
        samples.push(sample);
    }
    Pool::new(samples, dim)
}

fn non_empty(s: &str) -> Option<String> {
    let s = s.trim();
    (!s.is_empty()).then(|| s.to_string())
}

fn csv_error(line: usize, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(line);
    Error::Parse { line, message: e.to_string() }
}

pub fn load_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<Pool<T>> {
    read_csv(File::open(path)?)
}

/// Writes the pool in the format accepted by [`read_csv`]. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_csv<T: Scalar, W: Write>(pool: &Pool<T>, out: W) -> Result<()> {
    let thumbs = pool
        .samples
        .iter()
        .any(|s| s.thumbnail_before.is_some() || s.thumbnail_after.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string()];
    header.extend((0..pool.dim).map(|j| format!("f{j}")));
    header.push("label".into());
    if thumbs {
        header.push("thumb_before".into());
        header.push("thumb_after".into());
    }
    w.write_record(&header).map_err(io_error)?;
    for s in &pool.samples {
        let mut row = Vec::with_capacity(header.len());
        row.push(s.id.to_string());
        row.extend(s.features.iter().map(|v| v.to_string()));
        row.push(s.label.map(|l| l.sign().to_string()).unwrap_or_default());
        if thumbs {
            row.push(s.thumbnail_before.clone().unwrap_or_default());
            row.push(s.thumbnail_after.clone().unwrap_or_default());
        }
        w.write_record(&row).map_err(io_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv<T: Scalar>(pool: &Pool<T>, path: impl AsRef<Path>) -> Result<()> {
    write_csv(pool, File::create(path)?)
}

fn io_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

const NEGATIVE_MODES: usize = 4;
const MODE_SEPARATION: f64 = 4.0;
const NEGATIVE_SPREAD: f64 = 1.0;
const POSITIVE_SPREAD: f64 = 0.5;
const POSITIVE_OFFSET: f64 = 2.0;

/// Synthetic labelled pool standing in for a real change-detection corpus.
///
/// Negatives come from four isotropic Gaussian modes centred at `±4·e0` and
/// `±4·e1`. Positives come from one compact mode two standard deviations
/// outside the `+4·e0` negative mode (and shifted along `e2` when `d > 2`),
/// so its tail overlaps that mode. Sample order is shuffled, ids are `0..n`.
pub fn synthesize<T: Scalar>(n: usize, d: usize, positive_fraction: f64, seed: u64) -> Result<Pool<T>> {
    if n < 2 || d < 2 {
        return Err(Error::invalid(format!("synthesize needs n >= 2 and d >= 2, got n={n}, d={d}")));
    }
    if !(positive_fraction > 0.0 && positive_fraction < 1.0) {
        return Err(Error::invalid("positive_fraction must lie in (0, 1)"));
    }
    let n_pos = (n as f64 * positive_fraction).round() as usize;
    if n_pos == 0 || n_pos == n {
        return Err(Error::invalid(format!(
            "positive count rounds to {n_pos} of {n}; both classes must be present"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");

    let mut centers = vec![vec![0.0; d]; NEGATIVE_MODES];
    centers[0][0] = MODE_SEPARATION;
    centers[1][1] = MODE_SEPARATION;
    centers[2][0] = -MODE_SEPARATION;
    centers[3][1] = -MODE_SEPARATION;
    let mut positive_center = centers[0].clone();
    positive_center[0] += POSITIVE_OFFSET * NEGATIVE_SPREAD;
    if d > 2 {
        positive_center[2] += 1.5 * NEGATIVE_SPREAD;
    }

    let mut draws: Vec<(Vec<f64>, Label)> = Vec::with_capacity(n);
    for i in 0..n - n_pos {
        let c = &centers[i % NEGATIVE_MODES];
        let x = c.iter().map(|&m| m + NEGATIVE_SPREAD * unit.sample(&mut rng)).collect();
        draws.push((x, Label::NoChange));
    }
    for _ in 0..n_pos {
        let x = positive_center
            .iter()
            .map(|&m| m + POSITIVE_SPREAD * unit.sample(&mut rng))
            .collect();
        draws.push((x, Label::Change));
    }
    draws.shuffle(&mut rng);

    let samples = draws
        .into_iter()
        .enumerate()
        .map(|(i, (x, label))| Sample::new(i as SampleId, x.into_iter().map(T::lit).collect(), Some(label)))
        .collect();
    Pool::new(samples, d)
}

/// Even random split: the first `floor(n/2)` samples of a seeded permutation
/// are tagged `Train`, the rest `Eval`.
pub fn split_half<T: Scalar>(pool: &Pool<T>, seed: u64) -> Result<Pool<T>> {
    split_half_with(pool, seed, false)
}

/// As [`split_half`]; with `stratified` each label group (including
/// unlabelled samples) is halved separately before filling up to `floor(n/2)`.
pub fn split_half_with<T: Scalar>(pool: &Pool<T>, seed: u64, stratified: bool) -> Result<Pool<T>> {
    let n = pool.len();
    if n < 2 {
        return Err(Error::invalid(format!("split_half needs at least 2 samples, got {n}")));
    }
    let n_train = n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut split = vec![Split::Eval; n];
    if stratified {
        let mut chosen = HashSet::with_capacity(n_train);
        for group in [Some(Label::Change), Some(Label::NoChange), None] {
            let members: Vec<usize> = order
                .iter()
                .copied()
                .filter(|&p| pool.samples[p].label == group)
                .collect();
            chosen.extend(members.iter().take(members.len() / 2).copied());
        }
        for &p in &order {
            if chosen.len() >= n_train {
                break;
            }
            chosen.insert(p);
        }
        for p in chosen {
            split[p] = Split::Train;
        }
    } else {
        for &p in &order[..n_train] {
            split[p] = Split::Train;
        }
    }
    Ok(pool.with_split(split))
}
