//! One-shot multi-armed bandits as depth-one search problems.

use super::{Edge, Environment};
use crate::simcore::SimRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Arm {
    /// Pays 1 with probability `p`, else 0.
    Bernoulli(f64),
    /// Pays `mean ± spread` with equal probability.
    TwoPoint { mean: f64, spread: f64 },
}

impl Arm {
    pub fn mean(&self) -> f64 {
        match *self {
            Arm::Bernoulli(p) => p,
            Arm::TwoPoint { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Arm::Bernoulli(p) => p * (1.0 - p),
            Arm::TwoPoint { spread, .. } => spread * spread,
        }
    }

    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        match *self {
            Arm::Bernoulli(p) => (rng.next_f64() < p) as u8 as f64,
            Arm::TwoPoint { mean, spread } => {
                if rng.next_u64() & 1 == 0 {
                    mean - spread
                } else {
                    mean + spread
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditEnv {
    pub arms: Vec<Arm>,
}

impl Environment for BanditEnv {
    /// Whether an arm has been pulled.
    type State = bool;

    fn num_actions(&self) -> usize {
        self.arms.len()
    }

    fn is_deterministic(&self) -> bool {
        false
    }

    fn is_terminal(&self, state: &bool) -> bool {
        *state
    }

    fn apply(&self, state: &mut bool, action: usize, rng: &mut SimRng) -> Edge {
        *state = true;
        Edge {
            reward: self.arms[action].sample(rng),
            discount: 1.0,
            terminal: true,
            failure: false,
        }
    }
}
