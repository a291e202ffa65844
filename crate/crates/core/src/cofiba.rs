//! Collaborative filtering bandit with co-clustering of users and items.
//!
//! Items live in one graph whose components are the item clusters. Every
//! item cluster owns a graph over all users; the components of that graph
//! are the user clusters as seen by the items of the cluster. Pooled
//! least-squares statistics are cached per user-graph component and kept in
//! step with every update, so selection is read-only.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::graph::{default_edge_probability, init_sparse_graph, ClusteredGraph, DynamicGraph, Split};
use crate::linalg::{aggregate_state, LsqState};
use crate::model::{ItemUniverse, RoundContext};
use crate::policy::{argmax, check_chosen, check_payoff, ClusterSnapshot, ItemClusterSnapshot, Policy, PolicyTag};
use crate::rng::{self, tags};

/// Which users take part in the item-graph neighbourhood test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemTestScope {
    /// Every other user.
    AllUsers,
    /// Only the served user's neighbours before this round's deletions.
    GraphNeighbors,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CofibaParams {
    /// Exploration scale in the selection rule.
    pub alpha: f64,
    /// Confidence scale in both deletion tests; `inf` disables deletions.
    pub alpha2: f64,
    /// Edge probability of fresh user graphs; `None` picks it from `n`.
    pub user_edge_probability: Option<f64>,
    /// Edge probability of the initial item graph; `None` picks it from `|I|`.
    pub item_edge_probability: Option<f64>,
    pub item_scope: ItemTestScope,
}

impl CofibaParams {
    pub fn new(alpha: f64, alpha2: f64) -> Self {
        Self {
            alpha,
            alpha2,
            user_edge_probability: None,
            item_edge_probability: None,
            item_scope: ItemTestScope::AllUsers,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return domain(format!("alpha={} must be finite and nonnegative", self.alpha));
        }
        if self.alpha2.is_nan() || self.alpha2 < 0.0 {
            return domain(format!("alpha2={} must be nonnegative", self.alpha2));
        }
        for p in [self.user_edge_probability, self.item_edge_probability].into_iter().flatten() {
            if !(p > 0.0 && p <= 1.0) {
                return domain(format!("edge probability {p} outside (0, 1]"));
            }
        }
        Ok(())
    }
}

/// A user graph together with the pooled statistics of each component.
#[derive(Debug, Clone)]
pub(crate) struct UserGraphSlot {
    pub(crate) graph: ClusteredGraph,
    /// Keyed by component label.
    pub(crate) pools: BTreeMap<usize, LsqState>,
}

impl UserGraphSlot {
    pub(crate) fn new(graph: DynamicGraph, users: &[LsqState]) -> Result<Self> {
        let graph = ClusteredGraph::new(graph);
        let mut slot = Self {
            graph,
            pools: BTreeMap::new(),
        };
        for (label, members) in slot.groups() {
            slot.pools.insert(label, pool(users, &members)?);
        }
        Ok(slot)
    }

    pub(crate) fn groups(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.graph.labels().iter().enumerate() {
            out.entry(l).or_default().push(i);
        }
        out
    }

    pub(crate) fn pool_of(&self, user: usize) -> &LsqState {
        &self.pools[&self.graph.label(user)]
    }

    pub(crate) fn apply_split(&mut self, split: Split, users: &[LsqState]) -> Result<()> {
        self.pools.remove(&split.old_label);
        for (label, members) in &split.pieces {
            self.pools.insert(*label, pool(users, members)?);
        }
        Ok(())
    }
}

pub(crate) fn pool(users: &[LsqState], members: &[usize]) -> Result<LsqState> {
    let states: Vec<&LsqState> = members.iter().map(|&j| &users[j]).collect();
    aggregate_state(&states)
}

/// Per-candidate detail of one selection.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateTrace {
    pub item: usize,
    /// The served user's cluster in the candidate's item cluster.
    pub neighborhood: Vec<usize>,
    pub estimate: f64,
    pub width: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTrace {
    /// Index into the candidate list.
    pub chosen: usize,
    pub candidates: Vec<CandidateTrace>,
}

/// Result of the user-graph step, needed by the item-graph step.
#[derive(Debug, Clone, PartialEq)]
pub struct UserGraphUpdate {
    /// Item cluster (by label) whose user graph was tested.
    pub item_cluster: usize,
    /// Neighbours of the served user before deletion.
    pub previous_neighbors: Vec<usize>,
    pub deleted: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Cofiba {
    items: Arc<ItemUniverse>,
    params: CofibaParams,
    scope: ItemTestScope,
    users: Vec<LsqState>,
    item_graph: ClusteredGraph,
    /// Item-cluster label to user-graph slot.
    slot_of_cluster: BTreeMap<usize, usize>,
    slots: Vec<UserGraphSlot>,
    t: u64,
    rng: rng::Rng,
}

impl Cofiba {
    /// Fresh state: zero-knowledge users, one initial user graph shared by
    /// the components of the initial item graph.
    pub fn new(items: Arc<ItemUniverse>, n_users: usize, params: CofibaParams, seed: u64) -> Result<Self> {
        params.validate()?;
        if n_users == 0 {
            return domain("need at least one user");
        }
        let mut rng = rng::stream(seed, tags::POLICY);
        let p_items = params
            .item_edge_probability
            .unwrap_or_else(|| default_edge_probability(items.len()));
        let item_graph = init_sparse_graph(items.len(), p_items, &mut rng)?;
        let p_users = params
            .user_edge_probability
            .unwrap_or_else(|| default_edge_probability(n_users));
        let user_graph = init_sparse_graph(n_users, p_users, &mut rng)?;
        let users = vec![LsqState::new(items.dim()); n_users];
        let item_graph = ClusteredGraph::new(item_graph);
        let labels: BTreeSet<usize> = item_graph.labels().iter().copied().collect();
        let slots = vec![UserGraphSlot::new(user_graph.clone(), &users)?; labels.len()];
        let slot_of_cluster = labels.into_iter().zip(0..).collect();
        Ok(Self {
            items,
            params,
            scope: params.item_scope,
            users,
            item_graph,
            slot_of_cluster,
            slots,
            t: 0,
            rng,
        })
    }

    /// State assembled from explicit parts. `user_graphs` lists one graph
    /// per item-graph component, in increasing order of the component's
    /// smallest item.
    pub fn from_parts(
        items: Arc<ItemUniverse>,
        users: Vec<LsqState>,
        item_graph: DynamicGraph,
        user_graphs: Vec<DynamicGraph>,
        params: CofibaParams,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        if users.is_empty() {
            return domain("need at least one user");
        }
        if item_graph.node_count() != items.len() {
            return domain("item graph size differs from the item universe");
        }
        if users.iter().any(|u| u.dim() != items.dim()) {
            return domain("user state dimension differs from item dimension");
        }
        let item_graph = ClusteredGraph::new(item_graph);
        let labels: BTreeSet<usize> = item_graph.labels().iter().copied().collect();
        if labels.len() != user_graphs.len() {
            return domain(format!(
                "{} item clusters but {} user graphs",
                labels.len(),
                user_graphs.len()
            ));
        }
        let mut slots = Vec::with_capacity(user_graphs.len());
        for g in user_graphs {
            if g.node_count() != users.len() {
                return domain("user graph size differs from the number of users");
            }
            slots.push(UserGraphSlot::new(g, &users)?);
        }
        Ok(Self {
            items,
            params,
            scope: params.item_scope,
            users,
            item_graph,
            slot_of_cluster: labels.into_iter().zip(0..).collect(),
            slots,
            t: 0,
            rng: rng::stream(seed, tags::POLICY),
        })
    }

    pub fn params(&self) -> &CofibaParams {
        &self.params
    }

    /// The item-test scope in effect.
    pub fn item_scope(&self) -> ItemTestScope {
        self.scope
    }

    pub fn items(&self) -> &ItemUniverse {
        &self.items
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn user_state(&self, user: usize) -> &LsqState {
        &self.users[user]
    }

    pub fn item_graph(&self) -> &ClusteredGraph {
        &self.item_graph
    }

    pub fn item_cluster_count(&self) -> usize {
        self.item_graph.num_clusters()
    }

    /// Label of the item cluster containing `item`.
    pub fn item_cluster_of(&self, item: usize) -> usize {
        self.item_graph.label(item)
    }

    /// User graph owned by the item cluster containing `item`.
    pub fn user_graph_for_item(&self, item: usize) -> &ClusteredGraph {
        &self.slot_for_item(item).graph
    }

    /// User-cluster counts per item cluster, ordered by item-cluster label.
    pub fn user_cluster_counts(&self) -> Vec<usize> {
        self.slot_of_cluster
            .values()
            .map(|&s| self.slots[s].graph.num_clusters())
            .collect()
    }

    /// User-cluster counts per user graph, in order of graph creation. A
    /// graph keeps its position for the whole run.
    pub fn user_cluster_counts_by_graph(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.graph.num_clusters()).collect()
    }

    /// Edges ever allocated across all user graphs.
    pub fn allocated_user_edges(&self) -> usize {
        self.slots.iter().map(|s| s.graph.graph().allocated_edges()).sum()
    }

    pub fn user_graph_count(&self) -> usize {
        self.slots.len()
    }

    /// The served user's cluster in the user graph of `item`'s cluster.
    pub fn user_neighborhood(&self, user: usize, item: usize) -> Result<Vec<usize>> {
        self.check_user(user)?;
        self.check_item(item)?;
        Ok(self.slot_for_item(item).graph.component_of(user))
    }

    /// Pooled statistics of `user`'s cluster in the user graph of `item`'s
    /// cluster.
    pub fn pooled_state(&self, user: usize, item: usize) -> &LsqState {
        self.slot_for_item(item).pool_of(user)
    }

    fn slot_for_item(&self, item: usize) -> &UserGraphSlot {
        &self.slots[self.slot_of_cluster[&self.item_graph.label(item)]]
    }

    fn check_user(&self, user: usize) -> Result<()> {
        if user >= self.users.len() {
            return domain(format!("user {user} outside 0..{}", self.users.len()));
        }
        Ok(())
    }

    fn check_item(&self, item: usize) -> Result<()> {
        if item >= self.items.len() {
            return domain(format!("item {item} outside 0..{}", self.items.len()));
        }
        Ok(())
    }

    fn score(&self, user: usize, item: usize, t: u64) -> (f64, f64) {
        let x = self.items.vector(item);
        let pool = self.pooled_state(user, item);
        (pool.predict(x), pool.width(x, t, self.params.alpha))
    }

    fn check_round(&self, round: &RoundContext) -> Result<()> {
        self.check_user(round.user)?;
        if round.candidates.is_empty() {
            return domain("candidate list is empty");
        }
        for &h in &round.candidates {
            self.check_item(h)?;
        }
        if round.t == 0 {
            return domain("rounds are numbered from 1");
        }
        Ok(())
    }

    /// Scores every candidate and returns the argmax (lowest index on ties)
    /// together with the per-candidate detail.
    pub fn select_item(&self, round: &RoundContext) -> Result<SelectionTrace> {
        self.check_round(round)?;
        let candidates: Vec<CandidateTrace> = round
            .candidates
            .iter()
            .map(|&h| {
                let (estimate, width) = self.score(round.user, h, round.t);
                CandidateTrace {
                    item: h,
                    neighborhood: self.slot_for_item(h).graph.component_of(round.user),
                    estimate,
                    width,
                    score: estimate + width,
                }
            })
            .collect();
        let chosen = argmax(candidates.iter().map(|c| c.score))
            .ok_or_else(|| Error::Domain("no candidate has a finite score".into()))?;
        Ok(SelectionTrace { chosen, candidates })
    }

    fn choose(&self, round: &RoundContext) -> Result<usize> {
        self.check_round(round)?;
        let scores = round.candidates.iter().map(|&h| {
            let (e, w) = self.score(round.user, h, round.t);
            e + w
        });
        argmax(scores).ok_or_else(|| Error::Domain("no candidate has a finite score".into()))
    }

    /// Folds `(x_item, payoff)` into the served user's statistics and into
    /// every pool that contains the user.
    pub fn update_payoff(&mut self, user: usize, item: usize, payoff: f64) -> Result<()> {
        self.check_user(user)?;
        self.check_item(item)?;
        check_payoff(payoff)?;
        let x = self.items.vector(item);
        self.users[user].rank_one_update(x, payoff)?;
        for slot in &mut self.slots {
            let label = slot.graph.label(user);
            let pool = slot
                .pools
                .get_mut(&label)
                .expect("every component has a pool");
            pool.rank_one_update(x, payoff)?;
        }
        Ok(())
    }

    fn bound(&self, j: usize, x: &[f64], t: u64) -> (f64, f64) {
        let s = &self.users[j];
        (s.predict(x), s.width(x, t, self.params.alpha2))
    }

    /// Deletes edges `(user, j)` of the chosen item's user graph whose
    /// estimated payoffs on the chosen item differ by more than the sum of
    /// their confidence widths.
    pub fn update_user_graph(&mut self, user: usize, item: usize, t: u64) -> Result<UserGraphUpdate> {
        self.check_user(user)?;
        self.check_item(item)?;
        let cluster = self.item_graph.label(item);
        let slot_idx = self.slot_of_cluster[&cluster];
        let x = self.items.vector(item);
        let (pi, ci) = self.bound(user, x, t);
        let previous_neighbors: Vec<usize> = self.slots[slot_idx]
            .graph
            .neighborhood(user)?
            .iter()
            .copied()
            .collect();
        let deleted: Vec<usize> = previous_neighbors
            .iter()
            .copied()
            .filter(|&j| {
                let (pj, cj) = self.bound(j, x, t);
                (pi - pj).abs() > ci + cj
            })
            .collect();
        if !deleted.is_empty() {
            let slot = &mut self.slots[slot_idx];
            if let Some(split) = slot.graph.delete_incident(user, &deleted)? {
                slot.apply_split(split, &self.users)?;
            }
        }
        Ok(UserGraphUpdate {
            item_cluster: cluster,
            previous_neighbors,
            deleted,
        })
    }

    /// Deletes item edges `(item, ℓ)` where the set of users that look like
    /// `user` on `ℓ` differs from `user`'s current neighbourhood in the
    /// chosen item's user graph. New item clusters receive fresh user graphs.
    pub fn update_item_graph(&mut self, user: usize, item: usize, t: u64, prev: &UserGraphUpdate) -> Result<Vec<usize>> {
        self.check_user(user)?;
        self.check_item(item)?;
        let slot_idx = self.slot_of_cluster[&prev.item_cluster];
        let current: &BTreeSet<usize> = self.slots[slot_idx].graph.neighborhood(user)?;
        let item_neighbors: Vec<usize> = self.item_graph.neighborhood(item)?.iter().copied().collect();

        let mut deleted = Vec::new();
        for &l in &item_neighbors {
            let x = self.items.vector(l);
            let (pi, ci) = self.bound(user, x, t);
            let close = |j: usize| {
                let (pj, cj) = self.bound(j, x, t);
                (pi - pj).abs() <= ci + cj
            };
            let differs = match self.scope {
                ItemTestScope::GraphNeighbors => prev
                    .previous_neighbors
                    .iter()
                    .any(|&j| close(j) != current.contains(&j)),
                ItemTestScope::AllUsers => (0..self.users.len())
                    .filter(|&j| j != user)
                    .any(|j| close(j) != current.contains(&j)),
            };
            if differs {
                deleted.push(l);
            }
        }

        if !deleted.is_empty() {
            if let Some(split) = self.item_graph.delete_incident(item, &deleted)? {
                self.apply_item_split(split, item)?;
            }
        }
        Ok(deleted)
    }

    fn apply_item_split(&mut self, split: Split, item: usize) -> Result<()> {
        let old_slot = self
            .slot_of_cluster
            .remove(&split.old_label)
            .expect("split cluster has a user graph");
        let keeper = self.item_graph.label(item);
        let p = self
            .params
            .user_edge_probability
            .unwrap_or_else(|| default_edge_probability(self.users.len()));
        for (label, _) in &split.pieces {
            if *label == keeper {
                self.slot_of_cluster.insert(*label, old_slot);
            } else {
                let g = init_sparse_graph(self.users.len(), p, &mut self.rng)?;
                self.slots.push(UserGraphSlot::new(g, &self.users)?);
                self.slot_of_cluster.insert(*label, self.slots.len() - 1);
            }
        }
        Ok(())
    }

    /// One full round: select, observe the payoff through `feedback`, then
    /// run the three updates.
    pub fn step<F>(&mut self, round: &RoundContext, feedback: F) -> Result<SelectionTrace>
    where
        F: FnOnce(usize, usize) -> f64,
    {
        let trace = self.select_item(round)?;
        let item = round.candidates[trace.chosen];
        let payoff = feedback(round.user, item);
        self.learn(round.user, item, round.t, payoff)?;
        Ok(trace)
    }

    fn learn(&mut self, user: usize, item: usize, t: u64, payoff: f64) -> Result<()> {
        self.update_payoff(user, item, payoff)?;
        let prev = self.update_user_graph(user, item, t)?;
        self.update_item_graph(user, item, t, &prev)?;
        self.t = self.t.max(t);
        Ok(())
    }

    /// Adds a user with no history. In every user graph it is attached to a
    /// random sample of one existing cluster, so no clusters merge.
    pub fn add_user(&mut self) -> Result<usize> {
        let n = self.users.len();
        let id = n;
        self.users.push(LsqState::new(self.items.dim()));
        let want = ((3.0 * (n.max(2) as f64).ln()).ceil() as usize).max(1);
        for slot in &mut self.slots {
            let anchor = self.rng.random_range(0..n);
            let component = slot.graph.component_of(anchor);
            let k = want.min(component.len());
            let links: Vec<usize> = sample(&mut self.rng, component.len(), k)
                .into_iter()
                .map(|i| component[i])
                .collect();
            slot.graph.add_node(&links)?;
            // A fresh user contributes nothing to its pool.
        }
        Ok(id)
    }

    /// Adds an item to a random existing item cluster, which it shares the
    /// user graph with. Rejected for one-hot universes.
    pub fn add_item(&mut self, x: Vec<f64>) -> Result<usize> {
        let n = self.items.len();
        let id = Arc::make_mut(&mut self.items).push(x)?;
        let anchor = self.rng.random_range(0..n);
        let component = self.item_graph.component_of(anchor);
        let want = ((3.0 * ((n + 1).max(2) as f64).ln()).ceil() as usize).max(1);
        let k = want.min(component.len());
        let links: Vec<usize> = sample(&mut self.rng, component.len(), k)
            .into_iter()
            .map(|i| component[i])
            .collect();
        self.item_graph.add_node(&links)?;
        Ok(id)
    }

    /// Recomputes every cached pool from scratch and compares; also checks
    /// that each item cluster owns exactly one user graph.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        let labels: BTreeSet<usize> = self.item_graph.labels().iter().copied().collect();
        let owned: BTreeSet<usize> = self.slot_of_cluster.keys().copied().collect();
        if labels != owned {
            return domain("item clusters and user graphs are out of step");
        }
        let used: BTreeSet<usize> = self.slot_of_cluster.values().copied().collect();
        if used.len() != owned.len() {
            return domain("two item clusters share a user graph");
        }
        for slot in &self.slots {
            let groups = slot.groups();
            if groups.len() != slot.graph.num_clusters() || groups.len() != slot.pools.len() {
                return domain("pool count differs from component count");
            }
            for (label, members) in groups {
                let fresh = pool(&self.users, &members)?;
                let cached = slot
                    .pools
                    .get(&label)
                    .ok_or_else(|| Error::Domain(format!("no pool for component {label}")))?;
                let gap = fresh
                    .matrix()
                    .iter()
                    .zip(cached.matrix())
                    .chain(fresh.bias().iter().zip(cached.bias()))
                    .chain(fresh.inverse().iter().zip(cached.inverse()))
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                if gap > tol {
                    return domain(format!("pool of component {label} drifted by {gap}"));
                }
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> ClusterSnapshot {
        let mut by_cluster: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (h, &l) in self.item_graph.labels().iter().enumerate() {
            by_cluster.entry(l).or_default().push(h);
        }
        let item_clusters = by_cluster
            .into_iter()
            .map(|(label, items)| {
                let slot = &self.slots[self.slot_of_cluster[&label]];
                ItemClusterSnapshot {
                    items,
                    user_clusters: slot.groups().into_values().collect(),
                }
            })
            .collect();
        ClusterSnapshot {
            policy: PolicyTag::Cofiba.to_string(),
            n_users: self.users.len(),
            n_items: self.items.len(),
            item_clusters,
        }
    }
}

impl Policy for Cofiba {
    fn name(&self) -> &str {
        PolicyTag::Cofiba.as_str()
    }

    fn select(&self, round: &RoundContext) -> Result<usize> {
        self.choose(round)
    }

    fn update(&mut self, round: &RoundContext, chosen: usize, payoff: f64) -> Result<()> {
        self.check_round(round)?;
        let item = check_chosen(round, chosen)?;
        self.learn(round.user, item, round.t, payoff)
    }

    fn rounds(&self) -> u64 {
        self.t
    }

    fn cluster_snapshot(&self) -> Option<ClusterSnapshot> {
        Some(self.snapshot())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items2() -> Arc<ItemUniverse> {
        Arc::new(ItemUniverse::one_hot(2).unwrap())
    }

    fn state(m: [f64; 4], b: [f64; 2]) -> LsqState {
        LsqState::from_parts(2, m.to_vec(), b.to_vec()).unwrap()
    }

    #[test]
    fn selection_scores_use_the_pooled_cluster() {
        // Two users in one cluster with M = diag(2, 1) pooled.
        let users = vec![state([2.0, 0.0, 0.0, 1.0], [1.0, 0.0]), LsqState::new(2)];
        let p = CofibaParams::new(0.5, 1.0);
        let c = Cofiba::from_parts(
            items2(),
            users,
            DynamicGraph::complete(2),
            vec![DynamicGraph::complete(2)],
            p,
            0,
        )
        .unwrap();
        let round = RoundContext::new(2, 1, vec![0, 1], c.items()).unwrap();
        let trace = c.select_item(&round).unwrap();
        // w̄ = (0.5, 0); item 0: 0.5 + 0.5·sqrt(0.5·ln 3), item 1: 0.5·sqrt(ln 3).
        assert_eq!(trace.chosen, 0);
        assert!((trace.candidates[0].score - 0.870_575_951_841_877_9).abs() < 1e-12);
        assert!((trace.candidates[1].score - 0.524_073_536_984_102_5).abs() < 1e-12);
        assert_eq!(trace.candidates[0].neighborhood, vec![0, 1]);
        assert_eq!(Policy::select(&c, &round).unwrap(), 0);
    }

    #[test]
    fn user_graph_deletion_threshold() {
        // w_i = (1, 0), w_j = 0, M = I: the gap on e_1 is 1 and the
        // threshold at t = 1 is 2·α₂·sqrt(ln 2).
        let build = |alpha2: f64| {
            let users = vec![state([1.0, 0.0, 0.0, 1.0], [1.0, 0.0]), LsqState::new(2)];
            Cofiba::from_parts(
                items2(),
                users,
                DynamicGraph::complete(2),
                vec![DynamicGraph::complete(2)],
                CofibaParams::new(0.1, alpha2),
                0,
            )
            .unwrap()
        };
        let mut c = build(0.2);
        let up = c.update_user_graph(0, 0, 1).unwrap();
        assert_eq!(up.deleted, vec![1]);
        assert_eq!(c.user_graph_for_item(0).num_clusters(), 2);
        c.check_invariants(1e-12).unwrap();

        let mut c = build(2.0);
        assert!(c.update_user_graph(0, 0, 1).unwrap().deleted.is_empty());
        assert_eq!(c.user_graph_for_item(0).num_clusters(), 1);
    }

    #[test]
    fn infinite_alpha2_never_deletes() {
        let items = Arc::new(ItemUniverse::one_hot(4).unwrap());
        let mut c = Cofiba::new(items.clone(), 5, CofibaParams::new(0.3, f64::INFINITY), 3).unwrap();
        for t in 1..=200u64 {
            let user = (t as usize * 7) % 5;
            let round = RoundContext::new(t, user, vec![0, 1, 2, 3], &items).unwrap();
            c.step(&round, |u, h| if (u + h) % 2 == 0 { 1.0 } else { -1.0 }).unwrap();
        }
        assert_eq!(c.item_cluster_count(), 1);
        assert_eq!(c.user_cluster_counts(), vec![1]);
        c.check_invariants(1e-9).unwrap();
    }

    #[test]
    fn item_split_spawns_fresh_user_graph() {
        let items = Arc::new(ItemUniverse::one_hot(2).unwrap());
        // User 0 likes item 1, user 1 dislikes it; after a few rounds the
        // item edge must go.
        let mut c = Cofiba::new(items.clone(), 2, CofibaParams::new(0.0, 0.05), 1).unwrap();
        let mut t = 0;
        for _ in 0..50 {
            for user in 0..2 {
                t += 1;
                let round = RoundContext::new(t, user, vec![1], &items).unwrap();
                c.step(&round, |u, _| if u == 0 { 1.0 } else { -1.0 }).unwrap();
                c.check_invariants(1e-9).unwrap();
            }
        }
        assert_eq!(c.item_cluster_count(), 2);
        assert_eq!(c.user_graph_count(), 2);
        // The chosen item's cluster keeps the old (split) user graph.
        assert_eq!(c.user_graph_for_item(1).num_clusters(), 2);
        assert_eq!(c.user_graph_for_item(0).num_clusters(), 1);
        let snap = c.snapshot();
        assert_eq!(snap.item_clusters.len(), 2);
    }

    #[test]
    fn dynamic_arrivals_keep_invariants() {
        let items = Arc::new(ItemUniverse::from_features(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]).unwrap());
        let mut c = Cofiba::new(items, 3, CofibaParams::new(0.2, 0.5), 9).unwrap();
        let before = c.user_cluster_counts();
        let u = c.add_user().unwrap();
        assert_eq!(u, 3);
        assert_eq!(c.user_cluster_counts(), before);
        let h = c.add_item(vec![0.8, 0.6]).unwrap();
        assert_eq!(h, 3);
        assert_eq!(c.item_cluster_count(), 1);
        c.check_invariants(0.0).unwrap();

        let mut one_hot = Cofiba::new(items2(), 2, CofibaParams::new(0.2, 0.5), 0).unwrap();
        assert!(one_hot.add_item(vec![1.0, 1.0]).is_err());
    }
}
