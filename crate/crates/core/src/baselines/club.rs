use std::sync::Arc;

use crate::cofiba::UserGraphSlot;
use crate::error::{domain, Result};
use crate::graph::{default_edge_probability, init_sparse_graph, ClusteredGraph, DynamicGraph};
use crate::linalg::LsqState;
use crate::model::{ItemUniverse, RoundContext};
use crate::policy::{check_chosen, check_payoff, ClusterSnapshot, ItemClusterSnapshot, Policy, PolicyTag};
use crate::rng::{self, tags};

use super::{check_candidates, ucb_choice};

/// Graph-based user clustering with a single user graph for all items.
/// Edge `(i, j)` goes once `‖wᵢ − wⱼ‖ > α₂·(W(Tᵢ) + W(Tⱼ))`, where
/// `W(T) = sqrt((1 + ln(1 + T)) / (1 + T))` and `T` counts updates.
#[derive(Debug, Clone)]
pub struct Club {
    items: Arc<ItemUniverse>,
    alpha: f64,
    alpha2: f64,
    users: Vec<LsqState>,
    weights: Vec<Vec<f64>>,
    slot: UserGraphSlot,
    t: u64,
}

/// `sqrt((1 + ln(1 + T)) / (1 + T))`.
pub fn club_width(updates: u64) -> f64 {
    let t = updates as f64;
    ((1.0 + t.ln_1p()) / (1.0 + t)).sqrt()
}

impl Club {
    pub fn new(items: Arc<ItemUniverse>, n_users: usize, alpha: f64, alpha2: f64, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, tags::POLICY);
        let g = init_sparse_graph(n_users, default_edge_probability(n_users), &mut rng)?;
        Self::with_graph(items, g, alpha, alpha2)
    }

    pub fn with_graph(items: Arc<ItemUniverse>, graph: DynamicGraph, alpha: f64, alpha2: f64) -> Result<Self> {
        if alpha2.is_nan() || alpha2 < 0.0 {
            return domain(format!("alpha2={alpha2} must be nonnegative"));
        }
        let n = graph.node_count();
        let d = items.dim();
        let users = vec![LsqState::new(d); n];
        let slot = UserGraphSlot::new(graph, &users)?;
        Ok(Self {
            items,
            alpha,
            alpha2,
            weights: vec![vec![0.0; d]; n],
            users,
            slot,
            t: 0,
        })
    }

    pub fn graph(&self) -> &ClusteredGraph {
        &self.slot.graph
    }
}

impl Policy for Club {
    fn name(&self) -> &str {
        PolicyTag::Club.as_str()
    }

    fn select(&self, round: &RoundContext) -> Result<usize> {
        check_candidates(round, &self.items, Some(self.users.len()))?;
        ucb_choice(self.slot.pool_of(round.user), &self.items, round, self.alpha)
    }

    fn update(&mut self, round: &RoundContext, chosen: usize, payoff: f64) -> Result<()> {
        check_candidates(round, &self.items, Some(self.users.len()))?;
        let item = check_chosen(round, chosen)?;
        check_payoff(payoff)?;
        let user = round.user;
        let x = self.items.vector(item);
        self.users[user].rank_one_update(x, payoff)?;
        let label = self.slot.graph.label(user);
        self.slot
            .pools
            .get_mut(&label)
            .expect("every component has a pool")
            .rank_one_update(x, payoff)?;
        self.weights[user] = self.users[user].solve_weights();

        let wi = &self.weights[user];
        let ci = club_width(self.users[user].updates());
        let deleted: Vec<usize> = self
            .slot
            .graph
            .neighborhood(user)?
            .iter()
            .copied()
            .filter(|&j| {
                let gap: f64 = wi
                    .iter()
                    .zip(&self.weights[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                gap > self.alpha2 * (ci + club_width(self.users[j].updates()))
            })
            .collect();
        if !deleted.is_empty() {
            if let Some(split) = self.slot.graph.delete_incident(user, &deleted)? {
                self.slot.apply_split(split, &self.users)?;
            }
        }
        self.t = self.t.max(round.t);
        Ok(())
    }

    fn rounds(&self) -> u64 {
        self.t
    }

    fn cluster_snapshot(&self) -> Option<ClusterSnapshot> {
        Some(ClusterSnapshot {
            policy: PolicyTag::Club.to_string(),
            n_users: self.users.len(),
            n_items: self.items.len(),
            item_clusters: vec![ItemClusterSnapshot {
                items: (0..self.items.len()).collect(),
                user_clusters: self.slot.groups().into_values().collect(),
            }],
        })
    }
}
