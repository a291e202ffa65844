use std::sync::Arc;

use crate::cofiba::pool;
use crate::error::{domain, Result};
use crate::linalg::LsqState;
use crate::model::{ItemUniverse, Partition, RoundContext};
use crate::policy::{check_chosen, check_payoff, Policy, PolicyTag};

use super::{check_candidates, ucb_choice};

/// LinUCB over `K` dynamically re-assigned user clusters. Each cluster
/// pools its members' statistics; after every update the served user moves
/// to the cluster whose centroid (mean member weight vector) is nearest.
#[derive(Debug, Clone)]
pub struct DynUcb {
    items: Arc<ItemUniverse>,
    alpha: f64,
    users: Vec<LsqState>,
    weights: Vec<Vec<f64>>,
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
    pools: Vec<LsqState>,
    t: u64,
}

impl DynUcb {
    /// Users start in cluster `i mod K`.
    pub fn new(items: Arc<ItemUniverse>, n_users: usize, alpha: f64, k: usize) -> Result<Self> {
        if k == 0 {
            return domain("DynUCB needs at least one cluster");
        }
        let d = items.dim();
        let users = vec![LsqState::new(d); n_users];
        let assignment: Vec<usize> = (0..n_users).map(|i| i % k).collect();
        let mut members = vec![Vec::new(); k];
        for (i, &c) in assignment.iter().enumerate() {
            members[c].push(i);
        }
        let pools = members
            .iter()
            .map(|m| if m.is_empty() { Ok(LsqState::new(d)) } else { pool(&users, m) })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            items,
            alpha,
            weights: vec![vec![0.0; d]; n_users],
            users,
            assignment,
            members,
            pools,
            t: 0,
        })
    }

    pub fn partition(&self) -> Partition {
        Partition::from_labels(&self.assignment)
    }

    pub fn cluster_of(&self, user: usize) -> usize {
        self.assignment[user]
    }

    fn centroid(&self, c: usize) -> Option<Vec<f64>> {
        let m = &self.members[c];
        if m.is_empty() {
            return None;
        }
        let mut acc = vec![0.0; self.items.dim()];
        for &j in m {
            for (a, w) in acc.iter_mut().zip(&self.weights[j]) {
                *a += w;
            }
        }
        let n = m.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Some(acc)
    }

    fn nearest(&self, w: &[f64]) -> usize {
        let mut best = (self.assignment.len(), f64::INFINITY);
        for c in 0..self.members.len() {
            if let Some(cent) = self.centroid(c) {
                let d = dist2(w, &cent);
                if d < best.1 || best.0 == self.assignment.len() {
                    best = (c, d);
                }
            }
        }
        best.0
    }

    fn move_user(&mut self, user: usize, to: usize) -> Result<()> {
        let from = self.assignment[user];
        self.members[from].retain(|&j| j != user);
        let pos = self.members[to].partition_point(|&j| j < user);
        self.members[to].insert(pos, user);
        self.assignment[user] = to;
        for c in [from, to] {
            self.pools[c] = if self.members[c].is_empty() {
                LsqState::new(self.items.dim())
            } else {
                pool(&self.users, &self.members[c])?
            };
        }
        Ok(())
    }

    /// Refills an empty cluster with the user farthest from its own
    /// centroid among clusters of two or more members.
    fn reseed(&mut self, empty: usize) -> Result<()> {
        let mut best: Option<(usize, f64)> = None;
        for c in 0..self.members.len() {
            if self.members[c].len() < 2 {
                continue;
            }
            let cent = self.centroid(c).expect("nonempty cluster");
            for &j in &self.members[c] {
                let d = dist2(&self.weights[j], &cent);
                if best.is_none_or(|(_, b)| d > b) {
                    best = Some((j, d));
                }
            }
        }
        if let Some((j, _)) = best {
            self.move_user(j, empty)?;
        }
        Ok(())
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Policy for DynUcb {
    fn name(&self) -> &str {
        PolicyTag::Dynucb.as_str()
    }

    fn select(&self, round: &RoundContext) -> Result<usize> {
        check_candidates(round, &self.items, Some(self.users.len()))?;
        let c = self.assignment[round.user];
        ucb_choice(&self.pools[c], &self.items, round, self.alpha)
    }

    fn update(&mut self, round: &RoundContext, chosen: usize, payoff: f64) -> Result<()> {
        check_candidates(round, &self.items, Some(self.users.len()))?;
        let item = check_chosen(round, chosen)?;
        check_payoff(payoff)?;
        let user = round.user;
        let x = self.items.vector(item);
        self.users[user].rank_one_update(x, payoff)?;
        self.pools[self.assignment[user]].rank_one_update(x, payoff)?;
        self.weights[user] = self.users[user].solve_weights();

        let from = self.assignment[user];
        let to = self.nearest(&self.weights[user]);
        if to != from {
            self.move_user(user, to)?;
            if self.members[from].is_empty() {
                self.reseed(from)?;
            }
        }
        self.t = self.t.max(round.t);
        Ok(())
    }

    fn rounds(&self) -> u64 {
        self.t
    }
}
