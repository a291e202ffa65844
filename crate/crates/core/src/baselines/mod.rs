//! Reference policies: shared and per-user LinUCB, DynUCB, CLUB and a
//! variance-aware context-free UCB.

mod club;
mod dynucb;
mod linucb;
mod linucb_v;

pub use club::Club;
pub use dynucb::DynUcb;
pub use linucb::{LinUcbInd, LinUcbOne};
pub use linucb_v::LinUcbV;

use crate::error::{Error, Result};
use crate::linalg::LsqState;
use crate::model::{ItemUniverse, RoundContext};
use crate::policy::argmax;

/// Optimistic choice among the round's candidates for one least-squares
/// state.
pub(crate) fn ucb_choice(state: &LsqState, items: &ItemUniverse, round: &RoundContext, alpha: f64) -> Result<usize> {
    if round.t == 0 {
        return Err(Error::Domain("rounds are numbered from 1".into()));
    }
    let scores = round.candidates.iter().map(|&h| {
        let x = items.vector(h);
        state.predict(x) + state.width(x, round.t, alpha)
    });
    argmax(scores).ok_or_else(|| Error::Domain("candidate list is empty".into()))
}

pub(crate) fn check_candidates(round: &RoundContext, items: &ItemUniverse, n_users: Option<usize>) -> Result<()> {
    if let Some(n) = n_users {
        if round.user >= n {
            return Err(Error::Domain(format!("user {} outside 0..{n}", round.user)));
        }
    }
    if let Some(&h) = round.candidates.iter().find(|&&h| h >= items.len()) {
        return Err(Error::Domain(format!("candidate {h} outside 0..{}", items.len())));
    }
    Ok(())
}
