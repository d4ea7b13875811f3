//! `frugal`: synthetic pools, simulated-oracle sessions, ablation and
//! comparison experiments, and the labelling server.

pub mod experiment;

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use frugal_core::active_loop::{GroundTruthOracle, Oracle};
use frugal_core::dataset::save_csv;
use frugal_core::{Gates, Strategy, Variant};
use frugal_service::{CreateSession, Hyperparameters, SessionService};

use experiment::{run_ablation, run_comparison, synth_with_count, DatasetSource, ExperimentOutput, ExperimentSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "frugal", version, about = "Active learning with learned virtual-exemplar displays")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic labelled pool as CSV.
    Synth {
        #[arg(long, default_value_t = 2200)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        d: usize,
        /// Exact number of change samples.
        #[arg(long, default_value_t = 39)]
        pos: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one session with the ground-truth oracle through the session service.
    Session {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "learned-surrogate")]
        strategy: Strategy,
        #[arg(long, default_value_t = 16)]
        k: usize,
        #[arg(long, default_value_t = 10)]
        t: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides the temperature scale of the display optimizer.
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gate ablation of the learned display (7 patterns × variants × seeds).
    Ablate {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_delimiter = ',', default_values = ["early", "surrogate"])]
        variant: Vec<Variant>,
        /// Gate patterns such as `rep+div`; defaults to all seven.
        #[arg(long, value_delimiter = ',')]
        gates: Vec<Gates>,
    },
    /// Compare display strategies against a fully-supervised reference.
    Compare {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_delimiter = ',', default_values = ["random", "uncertainty", "maxmin", "learned-early", "learned-surrogate"])]
        strategy: Vec<Strategy>,
    },
    /// Serve labelling sessions over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value = "sessions")]
        state_dir: PathBuf,
        /// Directory served under /assets.
        #[arg(long)]
        assets: Option<PathBuf>,
    },
}

/// A CSV pool, or synthetic pool parameters when `--data` is absent.
#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 2200)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    d: usize,
    #[arg(long, default_value_t = 39)]
    pos: usize,
    /// Seed of the synthetic pool; by default each run seed draws its own.
    #[arg(long)]
    data_seed: Option<u64>,
}

impl DataArgs {
    fn source(&self) -> DatasetSource {
        match &self.data {
            Some(p) => DatasetSource::Csv(p.clone()),
            None => DatasetSource::Synth { n: self.n, d: self.d, positives: self.pos, seed: self.data_seed },
        }
    }
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 16)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    t: usize,
    /// Comma-separated seeds; each seed fixes the split and the session.
    #[arg(long = "seed", value_delimiter = ',', default_values_t = [0u64])]
    seeds: Vec<u64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Also write the optimizer trajectory of every learned display.
    #[arg(long)]
    trajectories: bool,
    #[arg(long)]
    out: PathBuf,
}

impl GridArgs {
    fn spec(&self) -> ExperimentSpec {
        ExperimentSpec {
            k: self.k,
            t: self.t,
            seeds: self.seeds.clone(),
            gamma_scale: self.rho,
            trajectories: self.trajectories,
            ..ExperimentSpec::new(self.data.source(), &self.out)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}

fn run(command: Command) -> Result<(), String> {
    match command {
        Command::Synth { n, d, pos, seed, out } => {
            let pool = synth_with_count(n, d, pos, seed).map_err(|e| e.to_string())?;
            save_csv(&pool, &out).map_err(|e| e.to_string())?;
            println!("wrote {} samples ({} positive) to {}", pool.len(), pool.positives(), out.display());
            Ok(())
        }
        Command::Session { data, strategy, k, t, seed, rho, out } => run_session(&data, strategy, k, t, seed, rho, &out),
        Command::Ablate { grid, variant, gates } => {
            let mut spec = grid.spec();
            spec.variants = variant;
            if !gates.is_empty() {
                spec.gates = gates;
            }
            report(run_ablation(&spec).map_err(|e| e.to_string())?)
        }
        Command::Compare { grid, strategy } => {
            let mut spec = grid.spec();
            spec.strategies = strategy;
            report(run_comparison(&spec).map_err(|e| e.to_string())?)
        }
        Command::Serve { addr, state_dir, assets } => {
            let service = Arc::new(SessionService::open(state_dir).map_err(|e| e.to_string())?);
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            eprintln!("listening on http://{addr}");
            rt.block_on(frugal_service::http::serve(addr, service, assets)).map_err(|e| e.to_string())
        }
    }
}

fn report(output: ExperimentOutput) -> Result<(), String> {
    let mut table = Vec::new();
    output.mean.write_table(&mut table).map_err(|e| e.to_string())?;
    print!("{}", String::from_utf8_lossy(&table));
    for f in &output.files {
        eprintln!("wrote {}", f.display());
    }
    if output.failures.is_empty() {
        return Ok(());
    }
    for f in &output.failures {
        eprintln!("cell {}/{} seed {} failed: {}", f.config, f.variant, f.seed, f.message);
    }
    Err(format!("{} cell(s) failed", output.failures.len()))
}

/// Drives the session service directly, answering from the ground truth.
fn run_session(
    data: &DataArgs,
    strategy: Strategy,
    k: usize,
    t: usize,
    seed: u64,
    rho: Option<f64>,
    out: &std::path::Path,
) -> Result<(), String> {
    let err = |e: &dyn std::fmt::Display| e.to_string();
    std::fs::create_dir_all(out).map_err(|e| err(&e))?;
    let dataset = match data.source() {
        DatasetSource::Csv(p) => p,
        synth => {
            let path = out.join("pool.csv");
            save_csv(&synth.load(seed).map_err(|e| err(&e))?, &path).map_err(|e| err(&e))?;
            path
        }
    };
    let service = SessionService::open(out.join("sessions")).map_err(|e| err(&e))?;
    let request = CreateSession {
        k,
        t,
        seed,
        hyperparameters: Hyperparameters { gamma_scale: rho, ..Hyperparameters::default() },
        ..CreateSession::new(&dataset, strategy.name())
    };
    let id = service.create_session(&request).map_err(|e| err(&e))?.session_id;
    let pool = service.pool(&id).map_err(|e| err(&e))?;
    let mut oracle = GroundTruthOracle::new(&pool);
    let mut lines = vec!["iteration,sampling_percent,eer_percent".to_string()];
    loop {
        let ids: Vec<u64> = service.get_display(&id).map_err(|e| err(&e))?.items.iter().map(|i| i.sample_id).collect();
        let answers = oracle.query(&ids).map_err(|e| err(&e))?;
        let labels: Vec<(u64, i64)> = ids.into_iter().zip(answers).collect();
        let summary = service.submit_labels(&id, &labels).map_err(|e| err(&e))?;
        let m = *service.get_metrics(&id).map_err(|e| err(&e))?.last().expect("one record per submit");
        let eer = m.eer_percent.map_or(String::new(), |v| v.to_string());
        println!("t={:<3} samp={:>6.2}% eer={}", m.iteration, m.sampling_percent, eer);
        lines.push(format!("{},{},{}", m.iteration, m.sampling_percent, eer));
        if summary.complete {
            break;
        }
    }
    let path = out.join("session_metrics.csv");
    std::fs::write(&path, lines.join("\n") + "\n").map_err(|e| err(&e))?;
    eprintln!("session {id}; wrote {}", path.display());
    Ok(())
}
