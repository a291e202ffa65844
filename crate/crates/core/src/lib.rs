//! Collaborative-filtering bandits.
//!
//! The crate implements COFIBA, a linear upper-confidence bandit that
//! co-clusters users and items through deletion-only graphs, together with
//! the usual comparison policies, a synthetic latent-cluster environment and
//! rejection-sampling replay over logged click data.

pub mod baselines;
pub mod cofiba;
pub mod environment;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod policy;
pub mod replay;
pub mod rng;

pub use error::{Error, Result};
pub use policy::{Policy, PolicyKind, PolicyTag};
