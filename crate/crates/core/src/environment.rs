//! Synthetic latent-cluster worlds: users whose expected payoff on each
//! item is shared within the clusters of an item-specific partition.
//!
//! Items are one-hot, so user `i`'s expected payoff on item `h` is the
//! `h`-th coordinate of its profile.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index::{sample, sample_weighted};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{ItemUniverse, Partition, RoundContext};
use crate::rng::{self, tags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterBalance {
    /// Sizes roughly halve from one cluster to the next.
    Unbalanced,
    /// Sizes differ by at most one.
    Balanced,
}

impl fmt::Display for ClusterBalance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusterBalance::Unbalanced => "unbalanced",
            ClusterBalance::Balanced => "balanced",
        })
    }
}

impl FromStr for ClusterBalance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "unbalanced" => Ok(ClusterBalance::Unbalanced),
            "balanced" => Ok(ClusterBalance::Balanced),
            other => domain(format!("unknown cluster balance {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    pub n: usize,
    pub d: usize,
    /// Number of distinct item partitions.
    pub g: usize,
    /// Clusters per partition.
    pub m: usize,
    pub gamma: f64,
    pub noise_sigma: f64,
    pub balance: ClusterBalance,
    pub seed: u64,
}

impl WorldParams {
    pub fn new(n: usize, d: usize, g: usize, m: usize, gamma: f64, noise_sigma: f64, seed: u64) -> Self {
        Self {
            n,
            d,
            g,
            m,
            gamma,
            noise_sigma,
            balance: ClusterBalance::Unbalanced,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return domain("world needs at least one user and one item");
        }
        if self.g == 0 || self.g > self.d {
            return domain(format!("g={} must lie in 1..={}", self.g, self.d));
        }
        if self.m == 0 || self.m > self.n {
            return domain(format!("m={} must lie in 1..={}", self.m, self.n));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return domain(format!("gap {} must be positive", self.gamma));
        }
        if self.m as f64 * self.gamma > 2.0 {
            return domain(format!(
                "{} clusters {} apart do not fit in [-1, 1]",
                self.m, self.gamma
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return domain(format!("noise sigma {} must be nonnegative", self.noise_sigma));
        }
        Ok(())
    }
}

/// Cluster sizes for `n` users in `m` clusters, largest first.
pub fn cluster_sizes(n: usize, m: usize, balance: ClusterBalance) -> Vec<usize> {
    match balance {
        ClusterBalance::Balanced => (0..m).map(|j| n / m + usize::from(j < n % m)).collect(),
        ClusterBalance::Unbalanced => {
            let mut sizes = Vec::with_capacity(m);
            let mut rest = n;
            for j in 0..m {
                let left = m - j - 1;
                let s = if left == 0 { rest } else { rest.div_ceil(2).min(rest - left).max(1) };
                sizes.push(s);
                rest -= s;
            }
            sizes
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    params: WorldParams,
    items: Arc<ItemUniverse>,
    /// Row-major `n × d`.
    profiles: Vec<f64>,
    partitions: Vec<Partition>,
    item_partition: Vec<usize>,
    item_dist: Vec<f64>,
}

/// Draws a world. Deterministic given `params.seed`.
pub fn generate_world(params: WorldParams) -> Result<SyntheticWorld> {
    params.validate()?;
    let WorldParams { n, d, g, m, gamma, .. } = params;
    let mut rng = rng::stream(params.seed, tags::WORLD);

    let sizes = cluster_sizes(n, m, params.balance);
    let mut partitions: Vec<Partition> = Vec::with_capacity(g);
    let mut attempts = 0;
    while partitions.len() < g {
        attempts += 1;
        if attempts > 1000 * g {
            return domain(format!("could not draw {g} distinct partitions of {n} users into {m} clusters"));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut labels = vec![0usize; n];
        let mut at = 0;
        for (c, &s) in sizes.iter().enumerate() {
            for &i in &perm[at..at + s] {
                labels[i] = c;
            }
            at += s;
        }
        let p = Partition::from_labels(&labels);
        if !partitions.contains(&p) {
            partitions.push(p);
        }
    }

    // Every partition is used by at least one item; the rest are random.
    let mut item_partition: Vec<usize> = (0..d).map(|h| if h < g { h } else { rng.random_range(0..g) }).collect();
    item_partition.shuffle(&mut rng);

    let levels = (2.0 / gamma + 1e-9).floor() as usize + 1;
    let mut profiles = vec![0.0; n * d];
    for h in 0..d {
        let part = &partitions[item_partition[h]];
        let mut picks: Vec<usize> = sample(&mut rng, levels, m).into_vec();
        picks.sort_unstable();
        let top = -1.0 + gamma * *picks.last().expect("m >= 1") as f64;
        let offset = rng.random_range(0.0..=(1.0 - top).max(0.0));
        let mut values: Vec<f64> = picks.iter().map(|&k| -1.0 + gamma * k as f64 + offset).collect();
        values.shuffle(&mut rng);
        for i in 0..n {
            profiles[i * d + h] = values[part.cluster_of(i)].clamp(-1.0, 1.0);
        }
    }

    Ok(SyntheticWorld {
        params,
        items: Arc::new(ItemUniverse::one_hot(d)?),
        profiles,
        partitions,
        item_partition,
        item_dist: vec![1.0 / d as f64; d],
    })
}

impl SyntheticWorld {
    pub fn params(&self) -> &WorldParams {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn d(&self) -> usize {
        self.params.d
    }

    pub fn items(&self) -> Arc<ItemUniverse> {
        self.items.clone()
    }

    pub fn profile(&self, user: usize) -> &[f64] {
        let d = self.params.d;
        &self.profiles[user * d..(user + 1) * d]
    }

    /// The `g` distinct partitions.
    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    /// Planted partition of users induced by item `h`.
    pub fn partition_of_item(&self, h: usize) -> &Partition {
        &self.partitions[self.item_partition[h]]
    }

    /// Index into [`partitions`](Self::partitions) used by each item.
    pub fn item_partition(&self) -> &[usize] {
        &self.item_partition
    }

    pub fn item_dist(&self) -> &[f64] {
        &self.item_dist
    }

    /// Replaces the uniform item distribution.
    pub fn with_item_dist(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.params.d {
            return domain("item distribution has the wrong length");
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return domain("item weights must be finite and nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return domain("item weights sum to zero");
        }
        self.item_dist = weights.into_iter().map(|w| w / total).collect();
        Ok(self)
    }

    /// `u_iᵀ x_h`.
    pub fn expected_payoff(&self, user: usize, item: usize) -> f64 {
        let x = self.items.vector(item);
        self.profile(user).iter().zip(x).map(|(u, x)| u * x).sum()
    }

    /// Checks within-cluster equality and the between-cluster gap on every
    /// item. Returns the smallest between-cluster gap seen.
    pub fn check_invariants(&self) -> Result<f64> {
        let n = self.params.n;
        let mut min_gap = f64::INFINITY;
        for h in 0..self.params.d {
            let part = self.partition_of_item(h);
            for i in 0..n {
                for j in (i + 1)..n {
                    let (a, b) = (self.profile(i)[h], self.profile(j)[h]);
                    if part.same_cluster(i, j) {
                        if a != b {
                            return domain(format!("users {i}, {j} share a cluster on item {h} but differ"));
                        }
                    } else {
                        let gap = (a - b).abs();
                        if gap < self.params.gamma - 1e-12 {
                            return domain(format!("users {i}, {j} only {gap} apart on item {h}"));
                        }
                        min_gap = min_gap.min(gap);
                    }
                }
            }
        }
        let distinct = self
            .partitions
            .iter()
            .enumerate()
            .all(|(a, p)| self.partitions[..a].iter().all(|q| q != p));
        if !distinct || self.partitions.len() != self.params.g {
            return domain("partitions are not distinct");
        }
        Ok(min_gap)
    }

    /// Uniform user and `c` distinct candidates drawn from the item
    /// distribution.
    pub fn draw_round<R: Rng + ?Sized>(&self, t: u64, c: usize, rng: &mut R) -> Result<RoundContext> {
        let d = self.params.d;
        if c == 0 || c > d {
            return domain(format!("candidate count {c} outside 1..={d}"));
        }
        let user = rng.random_range(0..self.params.n);
        let uniform = self.item_dist.iter().all(|&w| w == self.item_dist[0]);
        let candidates = if uniform {
            sample(rng, d, c).into_vec()
        } else {
            sample_weighted(rng, d, |h| self.item_dist[h], c)
                .map_err(|e| Error::Domain(format!("cannot draw {c} candidates: {e}")))?
                .into_vec()
        };
        RoundContext::new(t, user, candidates, &self.items)
    }

    /// Noisy payoff: expected payoff plus Gaussian noise truncated at
    /// `±3σ`, clamped to `[-1, 1]`.
    pub fn payoff<R: Rng + ?Sized>(&self, user: usize, item: usize, rng: &mut R) -> f64 {
        let mean = self.expected_payoff(user, item);
        let sigma = self.params.noise_sigma;
        if sigma == 0.0 {
            return mean.clamp(-1.0, 1.0);
        }
        let normal = Normal::new(0.0, sigma).expect("sigma validated");
        let eps = loop {
            let e: f64 = normal.sample(rng);
            if e.abs() <= 3.0 * sigma {
                break e;
            }
        };
        (mean + eps).clamp(-1.0, 1.0)
    }

    /// Best candidate's expected payoff minus the chosen one's.
    pub fn instant_regret(&self, round: &RoundContext, chosen: usize) -> Result<f64> {
        let Some(&picked) = round.candidates.get(chosen) else {
            return domain(format!("chosen index {chosen} outside the candidate list"));
        };
        let best = round
            .candidates
            .iter()
            .map(|&h| self.expected_payoff(round.user, h))
            .fold(f64::NEG_INFINITY, f64::max);
        Ok((best - self.expected_payoff(round.user, picked)).max(0.0))
    }

    /// Index of the best candidate under the true profiles.
    pub fn oracle_choice(&self, round: &RoundContext) -> usize {
        crate::policy::argmax(round.candidates.iter().map(|&h| self.expected_payoff(round.user, h)))
            .expect("round has candidates")
    }

    /// Regret-bound statistics for `c` candidates per round.
    pub fn theory_s_stats(&self, c: usize) -> SStats {
        let parts: Vec<&Partition> = (0..self.params.d).map(|h| self.partition_of_item(h)).collect();
        let (e_s, var_s) = s_moments(&parts, &self.item_dist);
        SStats::new(e_s, var_s, c, self.params.m, self.params.n, self.params.d)
    }

    /// Writes the parameters and, optionally, the profiles so that the world
    /// can be rebuilt and checked.
    pub fn write_text<W: Write>(&self, mut w: W, with_profiles: bool) -> std::io::Result<()> {
        let p = &self.params;
        writeln!(w, "[world]")?;
        writeln!(w, "n={}", p.n)?;
        writeln!(w, "d={}", p.d)?;
        writeln!(w, "g={}", p.g)?;
        writeln!(w, "m={}", p.m)?;
        writeln!(w, "gamma={}", p.gamma)?;
        writeln!(w, "noise_sigma={}", p.noise_sigma)?;
        writeln!(w, "balance={}", p.balance)?;
        writeln!(w, "seed={}", p.seed)?;
        if with_profiles {
            writeln!(w, "[profiles]")?;
            for i in 0..p.n {
                let row: Vec<String> = self.profile(i).iter().map(f64::to_string).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
        }
        Ok(())
    }

    /// Rebuilds a world written by [`write_text`](Self::write_text). A
    /// profile section, if present, must match the regenerated world.
    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut section = String::new();
        let mut fields = std::collections::BTreeMap::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.to_string();
                continue;
            }
            match section.as_str() {
                "world" => {
                    let (k, v) = line
                        .split_once('=')
                        .ok_or_else(|| Error::Format(format!("expected key=value, got {line:?}")))?;
                    fields.insert(k.trim().to_string(), v.trim().to_string());
                }
                "profiles" => rows.push(
                    line.split_whitespace()
                        .map(|v| v.parse().map_err(|_| Error::Format(format!("bad profile value {v:?}"))))
                        .collect::<Result<_>>()?,
                ),
                other => return Err(Error::Format(format!("unknown section {other:?}"))),
            }
        }
        fn get<T: FromStr>(f: &std::collections::BTreeMap<String, String>, k: &str) -> Result<T> {
            f.get(k)
                .ok_or_else(|| Error::Format(format!("missing world key {k:?}")))?
                .parse()
                .map_err(|_| Error::Format(format!("bad value for world key {k:?}")))
        }
        let params = WorldParams {
            n: get(&fields, "n")?,
            d: get(&fields, "d")?,
            g: get(&fields, "g")?,
            m: get(&fields, "m")?,
            gamma: get(&fields, "gamma")?,
            noise_sigma: get(&fields, "noise_sigma")?,
            balance: fields
                .get("balance")
                .map(|b| b.parse())
                .transpose()?
                .unwrap_or(ClusterBalance::Unbalanced),
            seed: get(&fields, "seed")?,
        };
        let world = generate_world(params)?;
        if !rows.is_empty() {
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            if flat != world.profiles {
                return Err(Error::Format("stored profiles do not match the regenerated world".into()));
            }
        }
        Ok(world)
    }
}

/// `S(h) = Σ_j sqrt(v_{h,j})` over the cluster sizes of one partition.
pub fn s_value(partition: &Partition) -> f64 {
    partition.cluster_sizes().iter().map(|&v| (v as f64).sqrt()).sum()
}

/// Mean and variance of `S(h)` for `h` drawn with the given weights.
pub fn s_moments(partitions: &[&Partition], weights: &[f64]) -> (f64, f64) {
    let s: Vec<f64> = partitions.iter().map(|p| s_value(p)).collect();
    let mean: f64 = s.iter().zip(weights).map(|(s, w)| s * w).sum();
    let var: f64 = s.iter().zip(weights).map(|(s, w)| w * (s - mean) * (s - mean)).sum();
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SStats {
    pub e_s: f64,
    pub var_s: f64,
    /// `(E_S + sqrt(c·sqrt(m·n)·VAR_S) + 1)·sqrt(d/n)`.
    pub bound_shape: f64,
}

impl SStats {
    pub fn new(e_s: f64, var_s: f64, c: usize, m: usize, n: usize, d: usize) -> Self {
        let (c, m, n, d) = (c as f64, m as f64, n as f64, d as f64);
        let bound_shape = (e_s + (c * (m * n).sqrt() * var_s).sqrt() + 1.0) * (d / n).sqrt();
        Self { e_s, var_s, bound_shape }
    }
}

/// Per-round regret and payoff accounting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    pub instant: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub payoff_sum: f64,
}

impl RegretLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, regret: f64, payoff: f64) {
        let last = self.cumulative.last().copied().unwrap_or(0.0);
        self.instant.push(regret);
        self.cumulative.push(last + regret);
        self.payoff_sum += payoff;
    }

    pub fn rounds(&self) -> usize {
        self.instant.len()
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Mean payoff so far.
    pub fn mean_payoff(&self) -> f64 {
        if self.instant.is_empty() {
            0.0
        } else {
            self.payoff_sum / self.instant.len() as f64
        }
    }

    /// Mean instantaneous regret over rounds `from..to` (0-based, half open).
    pub fn mean_regret(&self, from: usize, to: usize) -> f64 {
        let slice = &self.instant[from..to];
        if slice.is_empty() {
            0.0
        } else {
            slice.iter().sum::<f64>() / slice.len() as f64
        }
    }
}
