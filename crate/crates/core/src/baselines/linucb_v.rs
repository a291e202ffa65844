use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{ItemUniverse, RoundContext};
use crate::policy::{argmax, check_chosen, check_payoff, Policy, PolicyTag};

use super::check_candidates;

/// Running mean and variance of one arm (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct ArmStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl ArmStats {
    fn push(&mut self, a: f64) {
        self.n += 1;
        let delta = a - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (a - self.mean);
    }

    fn variance(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).max(0.0)
        }
    }
}

/// Context-free UCB with empirical-variance bonus, one arm per item, shared
/// across users.
#[derive(Debug, Clone)]
pub struct LinUcbV {
    items: Arc<ItemUniverse>,
    zeta: f64,
    arms: Vec<ArmStats>,
    t: u64,
}

impl LinUcbV {
    pub fn new(items: Arc<ItemUniverse>, zeta: f64) -> Self {
        let arms = vec![ArmStats::default(); items.len()];
        Self {
            items,
            zeta,
            arms,
            t: 0,
        }
    }

    /// `mean + sqrt(2·V·ζ·ln(t+1)/n) + 3·ζ·ln(t+1)/n`; unpulled arms score `+∞`.
    pub fn index(&self, item: usize, t: u64) -> f64 {
        let arm = &self.arms[item];
        if arm.n == 0 {
            return f64::INFINITY;
        }
        let n = arm.n as f64;
        let e = self.zeta * ((t + 1) as f64).ln();
        arm.mean + (2.0 * arm.variance() * e / n).sqrt() + 3.0 * e / n
    }

    /// Pull count, mean and population variance of `item`.
    pub fn arm(&self, item: usize) -> (u64, f64, f64) {
        let a = &self.arms[item];
        (a.n, a.mean, a.variance())
    }
}

impl Policy for LinUcbV {
    fn name(&self) -> &str {
        PolicyTag::LinucbV.as_str()
    }

    fn select(&self, round: &RoundContext) -> Result<usize> {
        check_candidates(round, &self.items, None)?;
        argmax(round.candidates.iter().map(|&h| self.index(h, round.t)))
            .ok_or_else(|| Error::Domain("candidate list is empty".into()))
    }

    fn update(&mut self, round: &RoundContext, chosen: usize, payoff: f64) -> Result<()> {
        check_candidates(round, &self.items, None)?;
        let item = check_chosen(round, chosen)?;
        check_payoff(payoff)?;
        self.arms[item].push(payoff);
        self.t = self.t.max(round.t);
        Ok(())
    }

    fn rounds(&self) -> u64 {
        self.t
    }
}
