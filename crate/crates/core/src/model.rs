//! Shared vocabulary: items, users, rounds and partitions.
//!
//! Indices are 0-based everywhere in memory. File formats and CLI output
//! shift them to 1-based at the boundary.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Canonical basis vector `e_h` of `R^d`, with `h` 0-based.
pub fn one_hot(h: usize, d: usize) -> Result<Vec<f64>> {
    if h >= d {
        return domain(format!("basis index {h} out of range for dimension {d}"));
    }
    let mut v = vec![0.0; d];
    v[h] = 1.0;
    Ok(v)
}

/// The set of recommendable items, each a feature vector in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemUniverse {
    dim: usize,
    items: Vec<Vec<f64>>,
    one_hot: bool,
}

impl ItemUniverse {
    /// Items are exactly `e_1, ..., e_d`.
    pub fn one_hot(d: usize) -> Result<Self> {
        if d == 0 {
            return domain("item universe needs at least one item");
        }
        let items = (0..d).map(|h| one_hot(h, d)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim: d,
            items,
            one_hot: true,
        })
    }

    /// Arbitrary feature vectors sharing one dimension.
    pub fn from_features(items: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = items.first() else {
            return domain("item universe needs at least one item");
        };
        let dim = first.len();
        if dim == 0 {
            return domain("item dimension must be positive");
        }
        if let Some(bad) = items.iter().position(|x| x.len() != dim) {
            return domain(format!(
                "item {bad} has dimension {} (expected {dim})",
                items[bad].len()
            ));
        }
        Ok(Self {
            dim,
            items,
            one_hot: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_one_hot(&self) -> bool {
        self.one_hot
    }

    pub fn get(&self, h: usize) -> Option<&[f64]> {
        self.items.get(h).map(Vec::as_slice)
    }

    /// Feature vector of item `h`. Panics on an invalid index; callers
    /// validate candidate lists through [`RoundContext::new`].
    pub fn vector(&self, h: usize) -> &[f64] {
        &self.items[h]
    }

    /// Appends a new item. One-hot universes cannot grow without changing
    /// their dimension, so this is rejected for them.
    pub fn push(&mut self, x: Vec<f64>) -> Result<usize> {
        if self.one_hot {
            return domain("cannot append to a one-hot item universe");
        }
        if x.len() != self.dim {
            return domain(format!(
                "new item has dimension {} (expected {})",
                x.len(),
                self.dim
            ));
        }
        self.items.push(x);
        Ok(self.items.len() - 1)
    }
}

/// Users `0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSet {
    n: usize,
}

impl UserSet {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return domain("user set must be nonempty");
        }
        Ok(Self { n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.n
    }
}

/// One interaction round: the served user and the items on offer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundContext {
    /// Round index, starting at 1.
    pub t: u64,
    pub user: usize,
    pub candidates: Vec<usize>,
    pub payoff: Option<f64>,
}

impl RoundContext {
    pub fn new(t: u64, user: usize, candidates: Vec<usize>, items: &ItemUniverse) -> Result<Self> {
        if t == 0 {
            return domain("rounds are numbered from 1");
        }
        if candidates.is_empty() {
            return domain("candidate list is empty");
        }
        if let Some(&h) = candidates.iter().find(|&&h| h >= items.len()) {
            return domain(format!(
                "candidate item {h} outside universe of {} items",
                items.len()
            ));
        }
        Ok(Self {
            t,
            user,
            candidates,
            payoff: None,
        })
    }

    pub fn with_payoff(mut self, a: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&a) {
            return domain(format!("payoff {a} outside [-1, 1]"));
        }
        self.payoff = Some(a);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Clamps an externally supplied payoff into `[-1, 1]`, warning when it
/// had to be moved.
pub fn clip_payoff(a: f64) -> f64 {
    if a.is_nan() {
        log::warn!("NaN payoff replaced by 0");
        return 0.0;
    }
    let c = a.clamp(-1.0, 1.0);
    if c != a {
        log::warn!("payoff {a} clipped to {c}");
    }
    c
}

/// A partition of users into clusters with contiguous ids `0..m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    assignment: Vec<usize>,
    sizes: Vec<usize>,
}

impl Partition {
    /// Builds a partition from arbitrary labels. Cluster ids are assigned in
    /// order of first appearance, so equal groupings yield equal partitions.
    pub fn from_labels<L: Eq + std::hash::Hash + Copy>(labels: &[L]) -> Self {
        let mut ids = std::collections::HashMap::new();
        let mut sizes = Vec::new();
        let assignment = labels
            .iter()
            .map(|l| {
                let next = ids.len();
                let id = *ids.entry(*l).or_insert(next);
                if id == sizes.len() {
                    sizes.push(0);
                }
                sizes[id] += 1;
                id
            })
            .collect();
        Self { assignment, sizes }
    }

    /// Builds a partition from explicit member lists, which must cover
    /// `0..n` exactly once.
    pub fn from_groups(n: usize, groups: &[Vec<usize>]) -> Result<Self> {
        let mut labels = vec![usize::MAX; n];
        for (c, group) in groups.iter().enumerate() {
            for &i in group {
                if i >= n {
                    return domain(format!("member {i} outside 0..{n}"));
                }
                if labels[i] != usize::MAX {
                    return domain(format!("member {i} appears twice"));
                }
                labels[i] = c;
            }
        }
        if labels.contains(&usize::MAX) {
            return domain("groups do not cover every element");
        }
        Ok(Self::from_labels(&labels))
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.sizes.len()
    }

    pub fn cluster_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn cluster_sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Members of each cluster, in increasing order.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.sizes.len()];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    pub fn same_cluster(&self, i: usize, j: usize) -> bool {
        self.assignment[i] == self.assignment[j]
    }
}
