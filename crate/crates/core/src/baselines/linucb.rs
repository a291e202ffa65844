use std::sync::Arc;

use crate::error::Result;
use crate::linalg::LsqState;
use crate::model::{ItemUniverse, RoundContext};
use crate::policy::{check_chosen, check_payoff, Policy, PolicyTag};

use super::{check_candidates, ucb_choice};

/// One LinUCB learner shared by every user.
#[derive(Debug, Clone)]
pub struct LinUcbOne {
    items: Arc<ItemUniverse>,
    alpha: f64,
    state: LsqState,
    t: u64,
}

impl LinUcbOne {
    pub fn new(items: Arc<ItemUniverse>, alpha: f64) -> Self {
        let state = LsqState::new(items.dim());
        Self {
            items,
            alpha,
            state,
            t: 0,
        }
    }

    pub fn state(&self) -> &LsqState {
        &self.state
    }
}

impl Policy for LinUcbOne {
    fn name(&self) -> &str {
        PolicyTag::LinucbOne.as_str()
    }

    fn select(&self, round: &RoundContext) -> Result<usize> {
        check_candidates(round, &self.items, None)?;
        ucb_choice(&self.state, &self.items, round, self.alpha)
    }

    fn update(&mut self, round: &RoundContext, chosen: usize, payoff: f64) -> Result<()> {
        let item = check_chosen(round, chosen)?;
        check_payoff(payoff)?;
        self.state.rank_one_update(self.items.vector(item), payoff)?;
        self.t = self.t.max(round.t);
        Ok(())
    }

    fn rounds(&self) -> u64 {
        self.t
    }
}

/// An independent LinUCB learner per user.
#[derive(Debug, Clone)]
pub struct LinUcbInd {
    items: Arc<ItemUniverse>,
    alpha: f64,
    users: Vec<LsqState>,
    t: u64,
}

impl LinUcbInd {
    pub fn new(items: Arc<ItemUniverse>, n_users: usize, alpha: f64) -> Self {
        let users = vec![LsqState::new(items.dim()); n_users];
        Self {
            items,
            alpha,
            users,
            t: 0,
        }
    }

    pub fn user_state(&self, user: usize) -> &LsqState {
        &self.users[user]
    }
}

impl Policy for LinUcbInd {
    fn name(&self) -> &str {
        PolicyTag::LinucbInd.as_str()
    }

    fn select(&self, round: &RoundContext) -> Result<usize> {
        check_candidates(round, &self.items, Some(self.users.len()))?;
        ucb_choice(&self.users[round.user], &self.items, round, self.alpha)
    }

    fn update(&mut self, round: &RoundContext, chosen: usize, payoff: f64) -> Result<()> {
        check_candidates(round, &self.items, Some(self.users.len()))?;
        let item = check_chosen(round, chosen)?;
        check_payoff(payoff)?;
        self.users[round.user].rank_one_update(self.items.vector(item), payoff)?;
        self.t = self.t.max(round.t);
        Ok(())
    }

    fn rounds(&self) -> u64 {
        self.t
    }
}
