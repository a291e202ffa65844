//! The common interface of all recommendation policies, and the
//! `tag:key=value,...` policy specification strings.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{Club, DynUcb, LinUcbInd, LinUcbOne, LinUcbV};
use crate::cofiba::{Cofiba, CofibaParams};
use crate::error::{domain, Error, Result};
use crate::model::{ItemUniverse, RoundContext};

/// A sequential recommendation policy.
///
/// `select` never changes the policy; everything the policy learns arrives
/// through `update`, so a replayed record that gets discarded leaves the
/// policy untouched.
pub trait Policy: Send {
    /// Short name, the policy tag for built-in policies.
    fn name(&self) -> &str;

    /// Index into `round.candidates` of the recommended item.
    fn select(&self, round: &RoundContext) -> Result<usize>;

    /// Feeds back the payoff of the candidate at index `chosen`.
    fn update(&mut self, round: &RoundContext, chosen: usize, payoff: f64) -> Result<()>;

    /// Rounds learned from so far.
    fn rounds(&self) -> u64;

    /// Current clusterings, for policies that maintain any.
    fn cluster_snapshot(&self) -> Option<ClusterSnapshot> {
        None
    }
}

/// Lowest-index argmax. NaN scores never win.
pub(crate) fn argmax(scores: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, s) in scores.into_iter().enumerate() {
        match best {
            None if !s.is_nan() => best = Some((k, s)),
            Some((_, b)) if s > b => best = Some((k, s)),
            _ => {}
        }
    }
    best.map(|(k, _)| k)
}

pub(crate) fn check_chosen(round: &RoundContext, chosen: usize) -> Result<usize> {
    round.candidates.get(chosen).copied().ok_or_else(|| {
        Error::Domain(format!(
            "chosen index {chosen} outside {} candidates",
            round.candidates.len()
        ))
    })
}

pub(crate) fn check_payoff(a: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&a) {
        return domain(format!("payoff {a} outside [-1, 1]"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyTag {
    LinucbOne,
    LinucbInd,
    Dynucb,
    Club,
    LinucbV,
    Cofiba,
}

impl PolicyTag {
    pub const ALL: [PolicyTag; 6] = [
        PolicyTag::LinucbOne,
        PolicyTag::LinucbInd,
        PolicyTag::Dynucb,
        PolicyTag::Club,
        PolicyTag::LinucbV,
        PolicyTag::Cofiba,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyTag::LinucbOne => "linucb_one",
            PolicyTag::LinucbInd => "linucb_ind",
            PolicyTag::Dynucb => "dynucb",
            PolicyTag::Club => "club",
            PolicyTag::LinucbV => "linucb_v",
            PolicyTag::Cofiba => "cofiba",
        }
    }

    /// Parameters the policy reads, in canonical order.
    pub fn params(self) -> &'static [&'static str] {
        match self {
            PolicyTag::LinucbOne | PolicyTag::LinucbInd => &["alpha"],
            PolicyTag::Dynucb => &["alpha", "k"],
            PolicyTag::Club | PolicyTag::Cofiba => &["alpha", "alpha2"],
            PolicyTag::LinucbV => &["zeta"],
        }
    }

    fn default_param(self, name: &str) -> f64 {
        match name {
            "alpha" => 0.2,
            "alpha2" => 0.5,
            "k" => 4.0,
            "zeta" => 1.0,
            _ => unreachable!("unknown parameter {name} for {}", self.as_str()),
        }
    }
}

impl fmt::Display for PolicyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Domain(format!("unknown policy {s:?}")))
    }
}

/// A policy tag with its parameters, e.g. `club:alpha=0.3,alpha2=0.5`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyKind {
    pub tag: PolicyTag,
    pub params: BTreeMap<String, f64>,
}

impl PolicyKind {
    pub fn new(tag: PolicyTag) -> Self {
        Self {
            tag,
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    /// Explicit value or the tag's default.
    pub fn param(&self, name: &str) -> f64 {
        self.params
            .get(name)
            .copied()
            .unwrap_or_else(|| self.tag.default_param(name))
    }

    /// Checks that only known parameters are set and that they are in range.
    /// `alpha` may be 0 (greedy); `alpha2` may be infinite (no deletions).
    pub fn validate(&self) -> Result<()> {
        for (name, &v) in &self.params {
            if !self.tag.params().contains(&name.as_str()) {
                return domain(format!("{} does not take parameter {name:?}", self.tag));
            }
            let ok = match name.as_str() {
                "alpha" => v.is_finite() && v >= 0.0,
                "alpha2" => v >= 0.0 && !v.is_nan(),
                "k" => v >= 1.0 && v.fract() == 0.0 && v.is_finite(),
                _ => v.is_finite() && v > 0.0,
            };
            if !ok {
                return domain(format!("parameter {name}={v} out of range for {}", self.tag));
            }
        }
        Ok(())
    }

    /// Builds a fresh policy for `n_users` users over `items`.
    pub fn build(&self, items: Arc<ItemUniverse>, n_users: usize, seed: u64) -> Result<Box<dyn Policy>> {
        self.validate()?;
        if n_users == 0 {
            return domain("policy needs at least one user");
        }
        Ok(match self.tag {
            PolicyTag::LinucbOne => Box::new(LinUcbOne::new(items, self.param("alpha"))),
            PolicyTag::LinucbInd => Box::new(LinUcbInd::new(items, n_users, self.param("alpha"))),
            PolicyTag::Dynucb => Box::new(DynUcb::new(
                items,
                n_users,
                self.param("alpha"),
                self.param("k") as usize,
            )?),
            PolicyTag::Club => Box::new(Club::new(
                items,
                n_users,
                self.param("alpha"),
                self.param("alpha2"),
                seed,
            )?),
            PolicyTag::LinucbV => Box::new(LinUcbV::new(items, self.param("zeta"))),
            PolicyTag::Cofiba => Box::new(Cofiba::new(
                items,
                n_users,
                CofibaParams::new(self.param("alpha"), self.param("alpha2")),
                seed,
            )?),
        })
    }

    /// Policy name used in output file names: the tag alone.
    pub fn label(&self) -> String {
        self.tag.to_string()
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag.as_str())?;
        let mut sep = ':';
        for (k, v) in &self.params {
            write!(f, "{sep}{k}={v}")?;
            sep = ',';
        }
        Ok(())
    }
}

/// Parses a parameter value; accepts `inf`.
pub fn parse_param_value(s: &str) -> Result<f64> {
    let s = s.trim();
    match s {
        "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
        _ => s
            .parse()
            .map_err(|_| Error::Domain(format!("bad parameter value {s:?}"))),
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (tag, rest) = match s.split_once(':') {
            Some((t, r)) => (t, Some(r)),
            None => (s, None),
        };
        let mut kind = PolicyKind::new(tag.trim().parse()?);
        if let Some(rest) = rest {
            for kv in rest.split(',').filter(|p| !p.trim().is_empty()) {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Domain(format!("expected key=value, got {kv:?}")))?;
                kind.params.insert(k.trim().to_string(), parse_param_value(v)?);
            }
        }
        kind.validate()?;
        Ok(kind)
    }
}

/// Item clusters and, per item cluster, the user clustering it owns.
/// Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSnapshot {
    pub policy: String,
    pub n_users: usize,
    pub n_items: usize,
    pub item_clusters: Vec<ItemClusterSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemClusterSnapshot {
    pub items: Vec<usize>,
    pub user_clusters: Vec<Vec<usize>>,
}

impl ClusterSnapshot {
    /// Relative item-cluster sizes and, for each, the relative user-cluster
    /// sizes, both sorted in decreasing order.
    pub fn relative_sizes(&self) -> Vec<(f64, Vec<f64>)> {
        let mut out: Vec<(f64, Vec<f64>)> = self
            .item_clusters
            .iter()
            .map(|c| {
                let mut users: Vec<f64> = c
                    .user_clusters
                    .iter()
                    .map(|u| u.len() as f64 / self.n_users as f64)
                    .collect();
                users.sort_by(|a, b| b.total_cmp(a));
                (c.items.len() as f64 / self.n_items as f64, users)
            })
            .collect();
        out.sort_by(|a, b| b.0.total_cmp(&a.0));
        out
    }
}
