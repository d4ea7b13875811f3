//! Batch experiments with the ground-truth oracle: gate ablations and
//! strategy comparisons over several seeds.
//!
//! Cells (configuration × seed) run in parallel and are collected in a fixed
//! order, so repeated runs write byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use frugal_core::active_loop::{fully_supervised_eer, run_session, GroundTruthOracle, SolveSummary};
use frugal_core::dataset::{load_csv, split_half, synthesize};
use frugal_core::evaluation::{auc_over_iterations, Report, ReportRow};
use frugal_core::optimizer::write_trajectory_csv;
use frugal_core::{Error, Gates, Pool, Result, SessionConfig, Strategy, TrainConfig, Variant};
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Csv(PathBuf),
    /// Generated from `seed` when given; otherwise every experiment seed
    /// draws its own pool.
    Synth { n: usize, d: usize, positives: usize, seed: Option<u64> },
}

impl DatasetSource {
    /// The pool used by experiment seed `run_seed`, before splitting.
    pub fn load(&self, run_seed: u64) -> Result<Pool> {
        match self {
            DatasetSource::Csv(path) => load_csv(path),
            DatasetSource::Synth { n, d, positives, seed } => {
                synth_with_count(*n, *d, *positives, seed.unwrap_or(run_seed))
            }
        }
    }
}

/// Synthetic pool with exactly `positives` change samples.
pub fn synth_with_count(n: usize, d: usize, positives: usize, seed: u64) -> Result<Pool> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let pool: Pool = synthesize(n, d, positives as f64 / n as f64, seed)?;
    if pool.positives() != positives {
        return Err(Error::InvalidArgument(format!("cannot place exactly {positives} positives among {n} samples")));
    }
    Ok(pool)
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub dataset: DatasetSource,
    pub strategies: Vec<Strategy>,
    pub gates: Vec<Gates>,
    pub variants: Vec<Variant>,
    pub k: usize,
    pub t: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub gamma_scale: Option<f64>,
    pub trajectories: bool,
}

impl ExperimentSpec {
    pub fn new(dataset: DatasetSource, out_dir: impl Into<PathBuf>) -> Self {
        ExperimentSpec {
            dataset,
            strategies: Strategy::ALL.to_vec(),
            gates: Gates::ablation_grid().to_vec(),
            variants: vec![Variant::Early, Variant::Surrogate],
            k: 16,
            t: 10,
            seeds: vec![0],
            out_dir: out_dir.into(),
            gamma_scale: None,
            trajectories: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one seed is required".into()));
        }
        if self.k == 0 || self.t == 0 {
            return Err(Error::InvalidArgument("K and T must be at least 1".into()));
        }
        fs::create_dir_all(&self.out_dir)?;
        let probe = self.out_dir.join(".write-probe");
        fs::write(&probe, b"")?;
        fs::remove_file(&probe)?;
        Ok(())
    }

    fn session_config(&self, strategy: Strategy, gates: Gates, seed: u64) -> SessionConfig {
        let mut cfg = SessionConfig::new(strategy, seed).with_k(self.k).with_iterations(self.t).with_gates(gates);
        if let Some(rho) = self.gamma_scale {
            cfg.optimizer.gamma_scale = rho;
        }
        cfg.keep_trajectories = self.trajectories;
        cfg
    }

    fn split_pools(&self) -> Result<Vec<Pool>> {
        let shared = match &self.dataset {
            DatasetSource::Synth { seed: None, .. } => None,
            fixed => Some(fixed.load(0)?),
        };
        self.seeds
            .iter()
            .map(|&s| match &shared {
                Some(base) => split_half(base, s),
                None => split_half(&self.dataset.load(s)?, s),
            })
            .collect()
    }
}

/// A failed cell; the remaining cells still run and report.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub config: String,
    pub variant: String,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub files: Vec<PathBuf>,
    pub mean: Report,
    pub per_seed: Vec<(u64, Report)>,
    pub failures: Vec<CellFailure>,
}

struct Cell {
    config: String,
    variant: String,
    seed_index: usize,
    strategy: Strategy,
    gates: Gates,
}

struct CellResult {
    eers: Vec<f64>,
    solves: Vec<SolveSummary<f64>>,
}

fn run_cell(spec: &ExperimentSpec, cell: &Cell, pool: &Pool) -> Result<CellResult> {
    let seed = spec.seeds[cell.seed_index];
    let state = run_session(pool, spec.session_config(cell.strategy, cell.gates, seed), &mut GroundTruthOracle::new(pool))?;
    let eers = state
        .metrics
        .iter()
        .map(|m| {
            m.eer_percent
                .ok_or_else(|| Error::InvalidState("evaluation split lacks one of the classes".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CellResult { eers, solves: state.solves })
}

/// Seven gate patterns × variants × seeds with the learned strategies.
/// Writes `ablation.csv` (seed mean), `ablation_std.csv`,
/// `ablation_seed<s>.csv` and `ablation.txt`.
pub fn run_ablation(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let mut cells = Vec::new();
    for &gates in &spec.gates {
        for &variant in &spec.variants {
            for seed_index in 0..spec.seeds.len() {
                cells.push(Cell {
                    config: gates.label(),
                    variant: variant.name().into(),
                    seed_index,
                    strategy: Strategy::learned(variant),
                    gates,
                });
            }
        }
    }
    run_grid(spec, "ablation", cells, None)
}

/// Every strategy in `spec.strategies` plus a fully-supervised reference row.
/// Writes `comparison.csv`, `comparison_std.csv`, `comparison_seed<s>.csv`
/// and `comparison.txt`.
pub fn run_comparison(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let mut cells = Vec::new();
    for &strategy in &spec.strategies {
        for seed_index in 0..spec.seeds.len() {
            cells.push(Cell {
                config: strategy.name().into(),
                variant: strategy.variant().map_or("-", Variant::name).into(),
                seed_index,
                strategy,
                gates: Gates::ALL,
            });
        }
    }
    run_grid(spec, "comparison", cells, Some(REFERENCE))
}

pub const REFERENCE: &str = "fully-supervised";

fn run_grid(spec: &ExperimentSpec, stem: &str, cells: Vec<Cell>, reference: Option<&str>) -> Result<ExperimentOutput> {
    let pools = spec.split_pools()?;
    let results: Vec<Result<CellResult>> = cells.par_iter().map(|c| run_cell(spec, c, &pools[c.seed_index])).collect();

    let mut failures = Vec::new();
    let mut rows: Vec<(String, String, Vec<Option<Vec<f64>>>)> = Vec::new();
    let mut files = Vec::new();
    for (cell, result) in cells.iter().zip(results) {
        if rows.last().is_none_or(|r| r.0 != cell.config || r.1 != cell.variant) {
            rows.push((cell.config.clone(), cell.variant.clone(), vec![None; spec.seeds.len()]));
        }
        let seed = spec.seeds[cell.seed_index];
        match result {
            Ok(r) => {
                if spec.trajectories {
                    files.extend(dump_trajectories(&spec.out_dir, stem, cell, seed, &r.solves)?);
                }
                rows.last_mut().expect("row pushed").2[cell.seed_index] = Some(r.eers);
            }
            Err(e) => failures.push(CellFailure {
                config: cell.config.clone(),
                variant: cell.variant.clone(),
                seed,
                message: e.to_string(),
            }),
        }
    }

    if let Some(name) = reference {
        let cfg = TrainConfig::default();
        let eers: Vec<Option<Vec<f64>>> = pools
            .par_iter()
            .zip(spec.seeds.par_iter())
            .map(|(pool, &seed)| match fully_supervised_eer(pool, &cfg, seed) {
                Ok(Some(e)) => Ok(vec![e; spec.t]),
                Ok(None) => Err("evaluation split lacks one of the classes".to_string()),
                Err(e) => Err(e.to_string()),
            })
            .collect::<Vec<_>>()
            .into_iter()
            .zip(&spec.seeds)
            .map(|(r, &seed)| {
                r.map_err(|message| {
                    failures.push(CellFailure { config: name.into(), variant: "-".into(), seed, message })
                })
                .ok()
            })
            .collect();
        rows.push((name.into(), "-".into(), eers));
    }

    let n_total = pools[0].len();
    let mut per_seed = Vec::new();
    for (si, &seed) in spec.seeds.iter().enumerate() {
        let seed_rows = rows
            .iter()
            .filter_map(|(c, v, e)| e[si].clone().map(|eers| ReportRow { config: c.clone(), variant: v.clone(), eers }))
            .collect();
        let report = Report::new(seed_rows, spec.k, n_total)?;
        files.push(write_report(&spec.out_dir.join(format!("{stem}_seed{seed}.csv")), &report)?);
        per_seed.push((seed, report));
    }

    let mut mean_rows = Vec::new();
    let mut std_lines = Vec::new();
    for (config, variant, per) in &rows {
        let done: Vec<&Vec<f64>> = per.iter().flatten().collect();
        if done.is_empty() {
            continue;
        }
        let eers: Vec<f64> = (0..spec.t).map(|i| mean(done.iter().map(|e| e[i]))).collect();
        let aucs = done.iter().map(|e| auc_over_iterations(e)).collect::<Result<Vec<_>>>()?;
        let mut fields = vec![config.clone(), variant.clone()];
        fields.extend((0..spec.t).map(|i| std_dev(done.iter().map(|e| e[i])).to_string()));
        fields.push(std_dev(aucs.into_iter()).to_string());
        fields.push(done.len().to_string());
        std_lines.push(fields.join(","));
        mean_rows.push(ReportRow { config: config.clone(), variant: variant.clone(), eers });
    }
    let mean_report = Report::new(mean_rows, spec.k, n_total)?;
    files.push(write_report(&spec.out_dir.join(format!("{stem}.csv")), &mean_report)?);

    let mut header = vec!["config".to_string(), "variant".to_string()];
    header.extend((1..=spec.t).map(|i| format!("iter{i}")));
    header.push("auc".into());
    header.push("seeds".into());
    let std_path = spec.out_dir.join(format!("{stem}_std.csv"));
    fs::write(&std_path, format!("{}\n{}\n", header.join(","), std_lines.join("\n")))?;
    files.push(std_path);

    let mut table = Vec::new();
    mean_report.write_table(&mut table)?;
    let table_path = spec.out_dir.join(format!("{stem}.txt"));
    fs::write(&table_path, table)?;
    files.push(table_path);

    Ok(ExperimentOutput { files, mean: mean_report, per_seed, failures })
}

fn write_report(path: &Path, report: &Report) -> Result<PathBuf> {
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    fs::write(path, buf)?;
    Ok(path.to_path_buf())
}

fn dump_trajectories(out: &Path, stem: &str, cell: &Cell, seed: u64, solves: &[SolveSummary<f64>]) -> Result<Vec<PathBuf>> {
    let dir = out.join("trajectories");
    fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    for s in solves {
        let path = dir.join(format!(
            "{stem}_{}_{}_seed{seed}_t{}.csv",
            cell.config, cell.variant, s.after_iteration
        ));
        let mut buf = Vec::new();
        write_trajectory_csv(&s.trajectory, &mut buf)?;
        fs::write(&path, buf)?;
        files.push(path);
    }
    Ok(files)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Sample standard deviation; zero for a single value.
fn std_dev(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v.iter().copied());
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}
