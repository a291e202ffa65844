//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use cofiba_core::environment::{generate_world, ClusterBalance, WorldParams};
use cofiba_core::replay::{open_log, parse_log, replay_evaluate, simulate_log, synthesize_candidates, write_generic_csv, LogFormat};
use cofiba_core::PolicyKind;
use serde::Serialize;

use crate::config::{ExperimentConfig, Synthesize};
use crate::error::{config, HarnessError, Result};
use crate::experiment::{grid_search, run_experiment, Curve, Environment};
use crate::export::{export_cluster_histogram, export_report, read_snapshot, write_curve};

#[derive(Debug, Parser)]
#[command(name = "cofiba", version, about = "Clustering bandit experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tune and run every policy of a config on every seed.
    Run(RunArgs),
    /// Grid search only; prints the tuned policy specs.
    Tune(TuneArgs),
    /// Replay one policy on a logged data set.
    Replay(ReplayArgs),
    /// Export the cluster-size histogram of a snapshot file.
    Histogram(HistogramArgs),
    /// Write a synthetic world and, optionally, a uniformly logged click log.
    Worldgen(WorldgenArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Seeds, replacing the config's list.
    #[arg(long, required = true, value_delimiter = ',')]
    pub seed: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub horizon: Option<u64>,
    /// Run everything on the calling thread.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
    #[arg(long)]
    pub horizon: Option<u64>,
    /// Also write `tuning.json` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value = "generic_csv")]
    pub format: String,
    /// Policy spec such as `cofiba:alpha=0.2,alpha2=0.5`.
    #[arg(long)]
    pub policy: String,
    #[arg(long, default_value_t = 10)]
    pub candidates: usize,
    #[arg(long, default_value = "auto")]
    pub synthesize: String,
    #[arg(long, default_value_t = 0)]
    pub candidate_seed: u64,
    /// Raw records skipped at the start of the log.
    #[arg(long, default_value_t = 0)]
    pub tuning_prefix: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HistogramArgs {
    /// Snapshot JSON written by `run`.
    #[arg(long)]
    pub snapshot: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WorldgenArgs {
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub d: usize,
    #[arg(long, default_value_t = 3)]
    pub g: usize,
    #[arg(long, default_value_t = 4)]
    pub m: usize,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value = "unbalanced")]
    pub balance: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Records of simulated click log to write; 0 writes none.
    #[arg(long, default_value_t = 0)]
    pub log_records: usize,
    #[arg(long, default_value_t = 10)]
    pub candidates: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn config_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run(a) => run(a),
        Command::Tune(a) => tune(a),
        Command::Replay(a) => replay(a),
        Command::Histogram(a) => {
            let snap = read_snapshot(&a.snapshot)?;
            export_cluster_histogram(&snap, &a.out)
        }
        Command::Worldgen(a) => worldgen(a),
    }
}

fn load(path: &Path, seeds: Vec<u64>, horizon: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if !seeds.is_empty() {
        cfg.seeds = seeds;
    }
    if let Some(h) = horizon {
        cfg.horizon = h;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = load(&a.config, a.seed, a.horizon)?;
    cfg.out = Some(a.out.clone());
    let report = run_experiment(&cfg, !a.sequential)?;
    export_report(&report, &cfg, &a.out)?;
    let failed: Vec<String> = report
        .policies
        .iter()
        .flat_map(|p| p.runs.iter().filter(|r| r.outcome.is_err()).map(move |r| format!("{} seed {}", p.label, r.seed)))
        .collect();
    if !failed.is_empty() {
        return Err(cofiba_core::Error::Domain(format!("failed runs: {}", failed.join(", "))).into());
    }
    Ok(())
}

#[derive(Serialize)]
struct TuneOutput {
    requested: String,
    tuned: String,
    points: Vec<(String, f64)>,
}

fn tune(a: TuneArgs) -> Result<()> {
    let cfg = load(&a.config, a.seed, a.horizon)?;
    let env = Environment::from_config(&cfg)?;
    let mut out = Vec::new();
    for p in &cfg.policies {
        let r = grid_search(&env, p, &cfg, true)?;
        println!("{}", r.best);
        out.push(TuneOutput {
            requested: p.to_string(),
            tuned: r.best.to_string(),
            points: r.points.iter().map(|g| (g.kind.to_string(), g.objective)).collect(),
        });
    }
    if let Some(dir) = a.out {
        fs::create_dir_all(&dir)?;
        let mut w = BufWriter::new(fs::File::create(dir.join("tuning.json"))?);
        serde_json::to_writer_pretty(&mut w, &out)?;
        writeln!(w)?;
        w.flush()?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ReplaySummary {
    policy: String,
    records: usize,
    tuning_prefix: usize,
    retained: u64,
    clicks: u64,
    ctr: Option<f64>,
}

fn replay(a: ReplayArgs) -> Result<()> {
    let format: LogFormat = a.format.parse().map_err(config_err)?;
    let kind: PolicyKind = a.policy.parse().map_err(config_err)?;
    let synthesize: Synthesize = a.synthesize.parse()?;
    let mut log = parse_log(open_log(&a.log)?, format)?;
    let missing = log.records.iter().any(|r| r.candidates.is_none());
    if missing && synthesize == Synthesize::Never {
        return config("log lacks candidate lists and synthesize = never");
    }
    if missing || synthesize == Synthesize::Always {
        let n_items = log.n_items();
        synthesize_candidates(&mut log.records, n_items, a.candidates, a.candidate_seed)?;
    }
    let items = Arc::new(log.item_universe()?);
    let mut policy = kind.build(items.clone(), log.n_users(), a.seed)?;
    let report = replay_evaluate(policy.as_mut(), &log.records, &items, a.tuning_prefix)?;

    fs::create_dir_all(&a.out)?;
    let label = kind.label();
    let curve = Curve {
        rounds: report.ctr_curve.iter().map(|p| p.0).collect(),
        ctr: report.ctr_curve.iter().map(|p| p.1).collect(),
        cum_regret: None,
    };
    let mut w = BufWriter::new(fs::File::create(a.out.join(format!("{label}.csv")))?);
    write_curve(&curve, &mut w)?;
    w.flush()?;
    let summary = ReplaySummary {
        policy: kind.to_string(),
        records: report.records,
        tuning_prefix: report.tuning_prefix,
        retained: report.retained,
        clicks: report.clicks,
        ctr: report.ctr(),
    };
    let mut w = BufWriter::new(fs::File::create(a.out.join(format!("{label}.json")))?);
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn worldgen(a: WorldgenArgs) -> Result<()> {
    let mut params = WorldParams::new(a.n, a.d, a.g, a.m, a.gamma, a.sigma, a.seed);
    params.balance = a.balance.parse::<ClusterBalance>().map_err(config_err)?;
    params.validate().map_err(config_err)?;
    let world = generate_world(params)?;
    fs::create_dir_all(&a.out)?;
    let mut w = BufWriter::new(fs::File::create(a.out.join("world.txt"))?);
    world.write_text(&mut w, true)?;
    w.flush()?;
    if a.log_records > 0 {
        let records = simulate_log(&world, a.log_records, a.candidates, a.seed)?;
        let mut w = BufWriter::new(fs::File::create(a.out.join("log.csv"))?);
        write_generic_csv(&records, &mut w)?;
        w.flush()?;
    }
    Ok(())
}
