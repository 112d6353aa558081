//! The interface every controller implements, scripted or learned.

use crate::sim::{Action, Observation};

pub trait Policy {
    /// Called before the first action of every episode. Stochastic policies
    /// reseed their private stream here.
    fn begin_episode(&mut self, _episode_seed: u64) {}

    fn act(&mut self, obs: &Observation) -> Action;
}

/// Never moves.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn act(&mut self, _obs: &Observation) -> Action {
        Action::zero()
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn begin_episode(&mut self, episode_seed: u64) {
        (**self).begin_episode(episode_seed)
    }
    fn act(&mut self, obs: &Observation) -> Action {
        (**self).act(obs)
    }
}

impl<P: Policy + ?Sized> Policy for &mut P {
    fn begin_episode(&mut self, episode_seed: u64) {
        (**self).begin_episode(episode_seed)
    }
    fn act(&mut self, obs: &Observation) -> Action {
        (**self).act(obs)
    }
}
