//! Single runs, grid search and multi-seed orchestration.

use std::sync::Arc;
use std::time::{Duration, Instant};

use cofiba_core::environment::{generate_world, SyntheticWorld};
use cofiba_core::model::ItemUniverse;
use cofiba_core::policy::ClusterSnapshot;
use cofiba_core::replay::{open_log, parse_log, replay_evaluate, synthesize_candidates, LoggedRecord, ParsedLog};
use cofiba_core::rng::{self, tags};
use cofiba_core::{Policy, PolicyKind};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Mode, Synthesize};
use crate::error::{config, HarnessError, Result};

/// Per-round curve. In synthetic mode `ctr` is the running mean payoff.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub rounds: Vec<u64>,
    pub ctr: Vec<f64>,
    pub cum_regret: Option<Vec<f64>>,
}

impl Curve {
    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn final_ctr(&self) -> Option<f64> {
        self.ctr.last().copied()
    }

    pub fn final_regret(&self) -> Option<f64> {
        self.cum_regret.as_ref().and_then(|r| r.last().copied())
    }

    /// Pointwise mean over the common prefix of `curves`.
    pub fn mean(curves: &[&Curve]) -> Option<Curve> {
        let len = curves.iter().map(|c| c.len()).min()?;
        let k = curves.len() as f64;
        let avg = |f: &dyn Fn(&Curve) -> &[f64]| -> Vec<f64> {
            (0..len).map(|i| curves.iter().map(|c| f(c)[i]).sum::<f64>() / k).collect()
        };
        let cum_regret = if curves.iter().all(|c| c.cum_regret.is_some()) {
            Some(avg(&|c| c.cum_regret.as_deref().unwrap()))
        } else {
            None
        };
        Some(Curve {
            rounds: curves[0].rounds[..len].to_vec(),
            ctr: avg(&|c| &c.ctr),
            cum_regret,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub curve: Curve,
    pub snapshot: Option<ClusterSnapshot>,
    /// Records before retention; equal to the horizon in synthetic mode.
    pub records: usize,
    pub elapsed: Duration,
}

/// What a run is played against.
pub enum Environment {
    Synthetic {
        world: SyntheticWorld,
        candidates: usize,
    },
    Replay {
        records: Arc<Vec<LoggedRecord>>,
        items: Arc<ItemUniverse>,
        n_users: usize,
        tuning_prefix: usize,
    },
}

impl Environment {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        match cfg.mode {
            Mode::Synthetic => Ok(Environment::Synthetic {
                world: generate_world(cfg.world)?,
                candidates: cfg.candidates,
            }),
            Mode::Replay => {
                let log_cfg = cfg.log.as_ref().expect("validated");
                let mut log = parse_log(open_log(&log_cfg.path)?, log_cfg.format)?;
                if cfg.horizon > 0 && (cfg.horizon as usize) < log.records.len() {
                    log.records.truncate(cfg.horizon as usize);
                }
                let missing = log.records.iter().any(|r| r.candidates.is_none());
                if missing && log_cfg.synthesize == Synthesize::Never {
                    return config("log lacks candidate lists and synthesize = never");
                }
                if missing || log_cfg.synthesize == Synthesize::Always {
                    let n_items = log.n_items();
                    synthesize_candidates(&mut log.records, n_items, cfg.candidates, log_cfg.candidate_seed)?;
                }
                let tuning_prefix = log_cfg
                    .tuning_prefix
                    .unwrap_or((cfg.tuning_fraction * log.records.len() as f64).round() as usize);
                Self::from_log(log, tuning_prefix)
            }
        }
    }

    pub fn from_log(log: ParsedLog, tuning_prefix: usize) -> Result<Self> {
        if log.records.iter().any(|r| r.candidates.is_none()) {
            return Err(cofiba_core::Error::Domain("replay needs candidate lists on every record".into()).into());
        }
        Ok(Environment::Replay {
            items: Arc::new(log.item_universe()?),
            n_users: log.n_users(),
            records: Arc::new(log.records),
            tuning_prefix,
        })
    }

    pub fn mode(&self) -> Mode {
        match self {
            Environment::Synthetic { .. } => Mode::Synthetic,
            Environment::Replay { .. } => Mode::Replay,
        }
    }

    /// Evaluation run for one policy and seed.
    pub fn run(&self, kind: &PolicyKind, horizon: u64, seed: u64) -> Result<RunOutput> {
        let start = Instant::now();
        let (curve, policy, records) = match self {
            Environment::Synthetic { world, candidates } => {
                let (curve, policy) = run_synthetic(world, kind, horizon, *candidates, seed, seed)?;
                (curve, policy, horizon as usize)
            }
            Environment::Replay {
                records,
                items,
                n_users,
                tuning_prefix,
            } => {
                let mut policy = kind.build(items.clone(), *n_users, seed)?;
                let report = replay_evaluate(policy.as_mut(), records, items, *tuning_prefix)?;
                let curve = Curve {
                    rounds: report.ctr_curve.iter().map(|p| p.0).collect(),
                    ctr: report.ctr_curve.iter().map(|p| p.1).collect(),
                    cum_regret: None,
                };
                (curve, policy, records.len())
            }
        };
        Ok(RunOutput {
            curve,
            snapshot: policy.cluster_snapshot(),
            records,
            elapsed: start.elapsed(),
        })
    }

    /// Tuning objective: higher is better.
    pub fn tuning_objective(&self, kind: &PolicyKind, horizon: u64, fraction: f64, seed: u64) -> Result<f64> {
        match self {
            Environment::Synthetic { world, candidates } => {
                let rounds = ((horizon as f64 * fraction).ceil() as u64).max(1);
                let stream = rng::derive_seed(world.params().seed, tags::TUNING);
                let (curve, _) = run_synthetic(world, kind, rounds, *candidates, stream, seed)?;
                Ok(-curve.final_regret().unwrap_or(0.0))
            }
            Environment::Replay {
                records,
                items,
                n_users,
                tuning_prefix,
            } => {
                let mut policy = kind.build(items.clone(), *n_users, seed)?;
                let prefix = &records[..(*tuning_prefix).min(records.len())];
                let report = replay_evaluate(policy.as_mut(), prefix, items, 0)?;
                Ok(report.ctr().unwrap_or(f64::NEG_INFINITY))
            }
        }
    }
}

/// Plays `horizon` rounds. Users, candidates and noise come from
/// `stream_seed`; the policy's own randomness from `policy_seed`.
pub fn run_synthetic(
    world: &SyntheticWorld,
    kind: &PolicyKind,
    horizon: u64,
    candidates: usize,
    stream_seed: u64,
    policy_seed: u64,
) -> Result<(Curve, Box<dyn Policy>)> {
    let mut policy = kind.build(world.items(), world.n(), policy_seed)?;
    let mut round_rng = rng::stream(stream_seed, tags::ROUNDS);
    let mut noise_rng = rng::stream(stream_seed, tags::NOISE);
    let n = horizon as usize;
    let mut curve = Curve {
        rounds: Vec::with_capacity(n),
        ctr: Vec::with_capacity(n),
        cum_regret: Some(Vec::with_capacity(n)),
    };
    let (mut payoff_sum, mut regret_sum) = (0.0, 0.0);
    for t in 1..=horizon {
        let round = world.draw_round(t, candidates, &mut round_rng)?;
        let k = policy.select(&round)?;
        let item = round.candidates[k];
        let payoff = world.payoff(round.user, item, &mut noise_rng);
        regret_sum += world.instant_regret(&round, k)?;
        payoff_sum += payoff;
        policy.update(&round, k, payoff)?;
        curve.rounds.push(t);
        curve.ctr.push(payoff_sum / t as f64);
        curve.cum_regret.as_mut().expect("synthetic").push(regret_sum);
    }
    Ok((curve, policy))
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub kind: PolicyKind,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub best: PolicyKind,
    pub points: Vec<GridPoint>,
}

/// All grid points for `kind`, in increasing lexicographic order of the
/// parameter vector (canonical parameter order). Params already set in
/// `kind` stay fixed.
pub fn grid_points(kind: &PolicyKind, cfg: &ExperimentConfig) -> Result<Vec<PolicyKind>> {
    let mut points = vec![kind.clone()];
    for &param in kind.tag.params() {
        if kind.params.contains_key(param) {
            continue;
        }
        let mut values = cfg.grid_for(param).to_vec();
        if values.is_empty() {
            return config(format!("empty grid for {param}"));
        }
        values.sort_by(f64::total_cmp);
        values.dedup();
        points = points
            .into_iter()
            .flat_map(|p| values.iter().map(move |&v| p.clone().with(param, v)))
            .collect();
    }
    for p in &points {
        p.validate().map_err(|e| HarnessError::Config(format!("grid point {p}: {e}")))?;
    }
    let key = |p: &PolicyKind| -> Vec<f64> { p.tag.params().iter().map(|n| p.param(n)).collect() };
    points.sort_by(|a, b| {
        key(a)
            .iter()
            .zip(key(b).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(points)
}

/// Exhaustive grid search for one policy. The best objective wins; ties go
/// to the lexicographically smallest parameter vector.
pub fn grid_search(env: &Environment, kind: &PolicyKind, cfg: &ExperimentConfig, parallel: bool) -> Result<TuneResult> {
    let points = grid_points(kind, cfg)?;
    let seed = cfg.seeds[0];
    let eval = |p: &PolicyKind| -> Result<GridPoint> {
        Ok(GridPoint {
            kind: p.clone(),
            objective: env.tuning_objective(p, cfg.horizon, cfg.tuning_fraction, seed)?,
        })
    };
    let evaluated: Vec<GridPoint> = if parallel {
        points.par_iter().map(eval).collect::<Result<_>>()?
    } else {
        points.iter().map(eval).collect::<Result<_>>()?
    };
    let mut best = &evaluated[0];
    for p in &evaluated[1..] {
        if p.objective > best.objective {
            best = p;
        }
    }
    Ok(TuneResult {
        best: best.kind.clone(),
        points: evaluated,
    })
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub outcome: std::result::Result<RunOutput, String>,
}

#[derive(Debug, Clone)]
pub struct PolicyReport {
    /// File-name label, unique within the report.
    pub label: String,
    pub requested: PolicyKind,
    pub tuned: PolicyKind,
    pub tuning: Vec<GridPoint>,
    pub runs: Vec<SeedRun>,
    pub average: Option<Curve>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub mode: Mode,
    pub horizon: u64,
    pub seeds: Vec<u64>,
    pub policies: Vec<PolicyReport>,
}

/// Unique labels: the tag, suffixed with its occurrence number when a tag
/// appears more than once.
pub fn policy_labels(policies: &[PolicyKind]) -> Vec<String> {
    policies
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let same = policies.iter().filter(|q| q.tag == p.tag).count();
            if same == 1 {
                p.label()
            } else {
                let nth = policies[..i].iter().filter(|q| q.tag == p.tag).count() + 1;
                format!("{}-{nth}", p.label())
            }
        })
        .collect()
}

/// Tunes every policy, then runs each policy on each seed. Runs may execute
/// concurrently; the report does not depend on it.
pub fn run_experiment(cfg: &ExperimentConfig, parallel: bool) -> Result<RunReport> {
    cfg.validate()?;
    let env = Environment::from_config(cfg)?;
    run_experiment_in(&env, cfg, parallel)
}

pub fn run_experiment_in(env: &Environment, cfg: &ExperimentConfig, parallel: bool) -> Result<RunReport> {
    let tuned: Vec<TuneResult> = cfg
        .policies
        .iter()
        .map(|p| {
            if cfg.tune {
                let r = grid_search(env, p, cfg, parallel)?;
                log::info!("tuned {} -> {}", p, r.best);
                Ok(r)
            } else {
                Ok(TuneResult {
                    best: p.clone(),
                    points: Vec::new(),
                })
            }
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, u64)> = (0..cfg.policies.len())
        .flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let run_one = |&(p, seed): &(usize, u64)| -> SeedRun {
        let outcome = env.run(&tuned[p].best, cfg.horizon, seed).map_err(|e| e.to_string());
        match &outcome {
            Ok(out) => log::info!("{} seed {seed}: {:.2?}", tuned[p].best, out.elapsed),
            Err(e) => log::error!("{} seed {seed} failed: {e}", tuned[p].best),
        }
        SeedRun { seed, outcome }
    };
    let mut runs: Vec<SeedRun> = if parallel {
        jobs.par_iter().map(run_one).collect()
    } else {
        jobs.iter().map(run_one).collect()
    };

    let labels = policy_labels(&cfg.policies);
    let mut policies = Vec::new();
    for (p, (requested, tune)) in cfg.policies.iter().zip(tuned).enumerate() {
        let rest = runs.split_off(cfg.seeds.len());
        let mine = std::mem::replace(&mut runs, rest);
        let ok: Vec<&Curve> = mine
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok().map(|o| &o.curve))
            .collect();
        policies.push(PolicyReport {
            label: labels[p].clone(),
            requested: requested.clone(),
            tuned: tune.best,
            tuning: tune.points,
            average: Curve::mean(&ok),
            runs: mine,
        });
    }
    Ok(RunReport {
        mode: env.mode(),
        horizon: cfg.horizon,
        seeds: cfg.seeds.clone(),
        policies,
    })
}
