//! Acceptance suite. Runs every criterion and prints one PASS/FAIL line per
//! criterion. With `ACCEPTANCE_STRICT=1` any failure makes the target exit
//! non-zero; otherwise failures are reported and the workspace run continues.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use cofiba_core::baselines::{Club, DynUcb, LinUcbInd, LinUcbOne};
use cofiba_core::cofiba::{Cofiba, CofibaParams};
use cofiba_core::environment::{generate_world, s_moments, ClusterBalance, SyntheticWorld, WorldParams};
use cofiba_core::graph::DynamicGraph;
use cofiba_core::linalg::{aggregate_state, LsqState};
use cofiba_core::model::{ItemUniverse, Partition, RoundContext};
use cofiba_core::replay::{replay_evaluate, synthesize_candidates, LoggedRecord};
use cofiba_core::rng::{self, tags};
use cofiba_core::{Policy, PolicyKind, PolicyTag};
use cofiba_harness::config::ExperimentConfig;
use cofiba_harness::experiment::{grid_search, run_experiment, Environment, RunReport};
use cofiba_harness::export::export_report;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const ORDERING_CONFIG: &str = "[experiment]\nmode = synthetic\npolicies = linucb_one linucb_ind cofiba\n\
    horizon = 20000\nseeds = 1 2 3\ncandidates = 10\ntuning_fraction = 0.2\n\
    [world]\nn = 50\nd = 20\ng = 3\nm = 4\ngamma = 0.5\nsigma = 0.1\nseed = 1\n";

fn final_regrets(report: &RunReport, label: &str) -> Vec<f64> {
    let p = report.policies.iter().find(|p| p.label == label).expect("policy in report");
    p.runs
        .iter()
        .map(|r| r.outcome.as_ref().expect("run succeeded").curve.final_regret().unwrap())
        .collect()
}

fn criterion_1(report: &RunReport, seconds: f64) -> Outcome {
    let one = final_regrets(report, "linucb_one");
    let ind = final_regrets(report, "linucb_ind");
    let cof = final_regrets(report, "cofiba");
    let wins = (0..3).filter(|&s| cof[s] < one[s] && cof[s] < ind[s]).count();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let best = mean(&one).min(mean(&ind));
    let ratio = mean(&cof) / best;
    let tuned: Vec<String> = report.policies.iter().map(|p| p.tuned.to_string()).collect();
    check(
        wins >= 2 && ratio <= 0.9 && seconds < 300.0,
        format!(
            "regret one={one:.0?} ind={ind:.0?} cofiba={cof:.0?}; wins {wins}/3, ratio {ratio:.3} (need <= 0.9); \
             tuned {tuned:?}; {seconds:.1}s"
        ),
    )
}

fn criterion_3(report: &RunReport) -> Outcome {
    let p = report.policies.iter().find(|p| p.label == "cofiba").unwrap();
    let mut ratios = Vec::new();
    for r in &p.runs {
        let c = &r.outcome.as_ref().unwrap().curve;
        let cum = c.cum_regret.as_ref().unwrap();
        let t = cum.len();
        let half = t / 2;
        let first = cum[half - 1] / half as f64;
        let second = (cum[t - 1] - cum[half - 1]) / (t - half) as f64;
        ratios.push(second / first);
    }
    check(ratios.iter().all(|&r| r < 0.6), format!("second/first half mean regret per seed {ratios:.3?}"))
}

fn criterion_2() -> Outcome {
    let mut cfg = ExperimentConfig::parse(ORDERING_CONFIG).unwrap();
    cfg.world.noise_sigma = 0.0;
    cfg.policies = vec![PolicyKind::new(PolicyTag::Cofiba)];
    let env = Environment::from_config(&cfg).map_err(|e| e.to_string())?;
    let tuned = grid_search(&env, &cfg.policies[0], &cfg, true).map_err(|e| e.to_string())?.best;
    let Environment::Synthetic { world, candidates } = &env else { unreachable!() };
    let params = CofibaParams::new(tuned.param("alpha"), tuned.param("alpha2"));
    let mut policy = Cofiba::new(world.items(), world.n(), params, 1).unwrap();
    let mut round_rng = rng::stream(1, tags::ROUNDS);
    let mut noise_rng = rng::stream(1, tags::NOISE);
    let mut visits = vec![0u32; world.n()];
    let mut t = 0;
    while visits.iter().any(|&v| v < 200) {
        t += 1;
        let round = world.draw_round(t, *candidates, &mut round_rng).unwrap();
        visits[round.user] += 1;
        policy.step(&round, |u, h| world.payoff(u, h, &mut noise_rng)).unwrap();
    }
    let snap = policy.snapshot();
    let mut exact = 0;
    let mut found = Vec::new();
    for c in &snap.item_clusters {
        let learned = Partition::from_groups(world.n(), &c.user_clusters).unwrap();
        let planted: Vec<&Partition> = c.items.iter().map(|&h| world.partition_of_item(h)).collect();
        if planted.iter().all(|p| **p == learned) {
            exact += 1;
        }
        found.push(c.user_clusters.len());
    }
    check(
        exact == snap.item_clusters.len(),
        format!(
            "{tuned} after {t} rounds: {exact}/{} item clusters match their planted partition; \
             user clusters per item cluster {found:?}, planted m = {}",
            snap.item_clusters.len(),
            world.params().m
        ),
    )
}

fn criterion_4() -> Outcome {
    let n = 50;
    let mut worst: f64 = 0.0;
    let mut p = WorldParams::new(n, 6, 1, n, 0.04, 0.0, 2);
    p.balance = ClusterBalance::Balanced;
    let world = generate_world(p).map_err(|e| e.to_string())?;
    let s = world.theory_s_stats(10);
    worst = worst.max((s.e_s - n as f64).abs()).max(s.var_s.abs());
    for m in [1, 2, 4, 10, 25] {
        let labels: Vec<usize> = (0..n).map(|i| if i < n - m + 1 { 0 } else { i }).collect();
        let part = Partition::from_labels(&labels);
        let (e, v) = s_moments(&[&part, &part, &part, &part], &[0.1, 0.2, 0.3, 0.4]);
        let expected = ((n - m + 1) as f64).sqrt() + (m - 1) as f64;
        worst = worst.max((e - expected).abs()).max(v.abs());
    }
    check(worst <= 1e-12, format!("largest deviation {worst:e}"))
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_5() -> Outcome {
    let d = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = LsqState::new(d);
    let mut m = DMatrix::<f64>::identity(d, d);
    for _ in 0..10_000 {
        let x = unit(&mut rng, d);
        s.rank_one_update(&x, rng.random_range(-1.0..1.0)).unwrap();
        let xv = DVector::from_column_slice(&x);
        m += &xv * xv.transpose();
    }
    let dense: Vec<f64> = m.try_inverse().unwrap().transpose().iter().copied().collect();
    let inv_err = max_diff(s.inverse(), &dense);

    let mut users: Vec<LsqState> = (0..7).map(|_| LsqState::new(d)).collect();
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    for k in 0..2_000 {
        let x = unit(&mut rng, d);
        let a = rng.random_range(-1.0..1.0);
        users[k % 7].rank_one_update(&x, a).unwrap();
        rows.extend_from_slice(&x);
        ys.push(a);
    }
    let x = DMatrix::from_row_slice(ys.len(), d, &rows);
    let y = DVector::from_vec(ys);
    let w = (DMatrix::<f64>::identity(d, d) + x.transpose() * &x)
        .lu()
        .solve(&(x.transpose() * y))
        .unwrap();
    let refs: Vec<&LsqState> = users.iter().collect();
    let agg_err = max_diff(&aggregate_state(&refs).unwrap().solve_weights(), w.as_slice());
    check(
        inv_err <= 1e-8 && agg_err <= 1e-8,
        format!("inverse error {inv_err:e}, aggregate weight error {agg_err:e}"),
    )
}

fn decisions(world: &SyntheticWorld, policies: &mut [&mut dyn Policy], rounds: u64, seed: u64) -> Vec<Vec<usize>> {
    let mut round_rng = rng::stream(seed, tags::ROUNDS);
    let mut noise_rng = rng::stream(seed, tags::NOISE);
    let mut out = vec![Vec::new(); policies.len()];
    for t in 1..=rounds {
        let round = world.draw_round(t, 10, &mut round_rng).unwrap();
        let eps = world.payoff(round.user, round.candidates[0], &mut noise_rng)
            - world.expected_payoff(round.user, round.candidates[0]);
        for (p, seq) in policies.iter_mut().zip(&mut out) {
            let k = p.select(&round).unwrap();
            let a = (world.expected_payoff(round.user, round.candidates[k]) + eps).clamp(-1.0, 1.0);
            p.update(&round, k, a).unwrap();
            seq.push(k);
        }
    }
    out
}

fn criterion_6() -> Outcome {
    let world = generate_world(WorldParams::new(50, 20, 3, 4, 0.5, 0.1, 6)).unwrap();
    let items = world.items();
    let mut one = LinUcbOne::new(items.clone(), 0.2);
    let mut cofiba = Cofiba::new(items.clone(), 50, CofibaParams::new(0.2, f64::INFINITY), 6).unwrap();
    let s = decisions(&world, &mut [&mut one, &mut cofiba], 10_000, 61);
    let a = s[0] == s[1];

    let mut ind = LinUcbInd::new(items.clone(), 50, 0.2);
    let mut club = Club::with_graph(items.clone(), DynamicGraph::edgeless(50), 0.2, 0.5).unwrap();
    let s = decisions(&world, &mut [&mut ind, &mut club], 10_000, 62);
    let b = s[0] == s[1];

    let mut one = LinUcbOne::new(items.clone(), 0.2);
    let mut dyn1 = DynUcb::new(items, 50, 0.2, 1).unwrap();
    let s = decisions(&world, &mut [&mut one, &mut dyn1], 10_000, 63);
    let c = s[0] == s[1];
    check(
        a && b && c,
        format!("identical decisions: cofiba/one {a}, club/ind {b}, dynucb/one {c}"),
    )
}

const CLICK: [[f64; 3]; 2] = [[0.9, 0.2, 0.5], [0.1, 0.6, 0.3]];

/// Prefers item 2, then 0, then 1 for user 0 and 1, 0, 2 for user 1.
struct Fixed;

impl Policy for Fixed {
    fn name(&self) -> &str {
        "fixed"
    }

    fn select(&self, round: &RoundContext) -> cofiba_core::Result<usize> {
        let rank = [[1, 0, 2], [1, 2, 0]][round.user];
        Ok((0..round.candidates.len()).max_by_key(|&k| rank[round.candidates[k]]).unwrap())
    }

    fn update(&mut self, _: &RoundContext, _: usize, _: f64) -> cofiba_core::Result<()> {
        Ok(())
    }

    fn rounds(&self) -> u64 {
        0
    }
}

fn criterion_7() -> Outcome {
    let items = Arc::new(ItemUniverse::one_hot(3).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let log: Vec<LoggedRecord> = (0..100_000)
        .map(|t| {
            let user = rng.random_range(0..2);
            let mut c = vec![0, 1, 2];
            c.shuffle(&mut rng);
            c.truncate(2);
            let served = c[rng.random_range(0..2)];
            LoggedRecord {
                timestamp: t,
                user,
                served,
                click: rng.random_bool(CLICK[user][served]),
                candidates: Some(c),
            }
        })
        .collect();

    let mut exact = 0.0;
    let mut cases = 0.0;
    for (user, clicks) in CLICK.iter().enumerate() {
        for a in 0..3 {
            for b in (0..3).filter(|&b| b != a) {
                let round = RoundContext::new(1, user, vec![a, b], &items).unwrap();
                exact += clicks[round.candidates[Fixed.select(&round).unwrap()]];
                cases += 1.0;
            }
        }
    }
    exact /= cases;
    let report = replay_evaluate(&mut Fixed, &log, &items, 0).unwrap();
    let ctr = report.ctr().unwrap();

    let mut learner = Cofiba::new(items.clone(), 2, CofibaParams::new(0.3, 0.2), 7).unwrap();
    let mut untouched = true;
    let mut discarded = 0;
    for (t, r) in log.iter().take(5_000).enumerate() {
        let cands = r.candidates.clone().unwrap();
        let round = RoundContext::new(t as u64 + 1, r.user, cands.clone(), &items).unwrap();
        let before = format!("{learner:?}");
        let k = learner.select(&round).unwrap();
        if cands[k] == r.served {
            learner.update(&round, k, f64::from(u8::from(r.click))).unwrap();
        } else {
            discarded += 1;
            untouched &= format!("{learner:?}") == before;
        }
    }
    check(
        (ctr - exact).abs() <= 0.02 && untouched && discarded > 0,
        format!(
            "replay CTR {ctr:.4} vs exact {exact:.4} over {} retained (2-of-3 candidate lists); \
             {discarded} discarded records left the state unchanged: {untouched}",
            report.retained
        ),
    )
}

fn criterion_8() -> Outcome {
    let (n_items, c) = (50, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut log: Vec<LoggedRecord> = (0..100_000)
        .map(|t| LoggedRecord {
            timestamp: t,
            user: 0,
            served: rng.random_range(0..n_items),
            click: false,
            candidates: None,
        })
        .collect();
    synthesize_candidates(&mut log, n_items, c, 8).unwrap();
    let mut present = vec![0u64; n_items];
    let mut served = vec![0u64; n_items];
    for r in &log {
        for &h in r.candidates.as_ref().unwrap() {
            present[h] += 1;
        }
        served[r.served] += 1;
    }
    let p = 1.0 / c as f64;
    let stat: f64 = (0..n_items)
        .map(|h| {
            let e = present[h] as f64 * p;
            (served[h] as f64 - e).powi(2) / (e * (1.0 - p))
        })
        .sum();
    let critical = ChiSquared::new(n_items as f64).unwrap().inverse_cdf(0.99);
    let overall = served.iter().sum::<u64>() as f64 / present.iter().sum::<u64>() as f64;
    check(
        stat < critical,
        format!("chi2 {stat:.1} < {critical:.1} ({n_items} dof); pooled frequency {overall:.4}"),
    )
}

fn criterion_9() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for (n, d, seed) in [(50, 20, 9), (120, 16, 10)] {
        let world = generate_world(WorldParams::new(n, d, 3, 4, 0.5, 0.1, seed)).unwrap();
        let mut p = Cofiba::new(world.items(), n, CofibaParams::new(0.2, 0.3), seed).unwrap();
        let mut round_rng = rng::stream(seed, tags::ROUNDS);
        let mut noise_rng = rng::stream(seed, tags::NOISE);
        let mut g_last = 1;
        let mut counts_last = vec![1];
        let mut worst: f64 = 0.0;
        for t in 1..=10_000 {
            let round = world.draw_round(t, 10, &mut round_rng).unwrap();
            p.step(&round, |u, h| world.payoff(u, h, &mut noise_rng)).unwrap();
            let g = p.item_cluster_count();
            let counts = p.user_cluster_counts_by_graph();
            ok &= g >= g_last && counts.len() >= counts_last.len();
            ok &= counts.iter().zip(&counts_last).all(|(a, b)| a >= b);
            if n > 64 {
                let bound = 6.0 * n as f64 * g as f64 * (n as f64).ln();
                worst = worst.max(p.allocated_user_edges() as f64 / bound);
            }
            g_last = g;
            counts_last = counts;
        }
        ok &= worst <= 1.0;
        detail.push(format!("n={n}: g_T={g_last}, edges/bound {worst:.3}"));
    }
    check(ok, detail.join("; "))
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn criterion_10() -> Outcome {
    let mut cfg = ExperimentConfig::parse(ORDERING_CONFIG).unwrap();
    cfg.policies = "linucb_one dynucb club linucb_v cofiba"
        .split(' ')
        .map(|s| s.parse().unwrap())
        .collect();
    cfg.horizon = 3_000;
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (i, parallel) in [true, true, false].into_iter().enumerate() {
        let dir = tmp.path().join(i.to_string());
        let report = run_experiment(&cfg, parallel).map_err(|e| e.to_string())?;
        export_report(&report, &cfg, &dir).map_err(|e| e.to_string())?;
        outputs.push(dir_bytes(&dir));
    }
    let files = outputs[0].len();
    check(
        outputs[0] == outputs[1] && outputs[0] == outputs[2],
        format!("{files} files identical across two parallel runs and one sequential run"),
    )
}

fn main() {
    let cfg = ExperimentConfig::parse(ORDERING_CONFIG).unwrap();
    let start = Instant::now();
    let report = run_experiment(&cfg, true).expect("ordering experiment runs");
    let seconds = start.elapsed().as_secs_f64();

    let results: Vec<(usize, &str, Outcome)> = vec![
        (1, "qualitative ordering", criterion_1(&report, seconds)),
        (2, "cluster recovery", criterion_2()),
        (3, "sublinear regret", criterion_3(&report)),
        (4, "S statistic extremes", criterion_4()),
        (5, "numerical oracle", criterion_5()),
        (6, "reductions", criterion_6()),
        (7, "replay unbiasedness", criterion_7()),
        (8, "candidate-synthesis frequency", criterion_8()),
        (9, "monotonicity and storage", criterion_9()),
        (10, "determinism", criterion_10()),
    ];
    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(d) => println!("criterion {n:>2} PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
