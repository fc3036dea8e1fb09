//! The scenario search problem: one tree action holds a (steer, accel)
//! pair on the target for a fixed number of simulation steps.

use std::cell::RefCell;

use super::{Edge, Environment};
use crate::dynamics::{ActionGrid, ControlInput};
use crate::metrics::{naturalistic_cost, MetricThresholds, StepSample};
use crate::reward::{
    collision_signature, score_step, DiversityLedger, RewardBreakdown, RewardConfig, StepContext,
};
use crate::simcore::{CollisionEvent, SimRng, TerminalStatus, WorldState};

pub type TrafficState = WorldState;

#[derive(Debug, Clone)]
pub struct TrafficEnv {
    pub grid: ActionGrid,
    pub decision_interval: u32,
    /// Episode length in simulation steps, counted from the root.
    pub horizon: u64,
    pub reward: RewardConfig,
    pub thresholds: MetricThresholds,
    /// Collision signatures seen before this search.
    pub ledger: DiversityLedger,
    /// Signatures this search has evaluated, once each. A signature found
    /// earlier in the same search pays as if seen once more.
    pub found: RefCell<DiversityLedger>,
}

/// One simulation step under a target control, with its reward.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub reward: RewardBreakdown,
    pub events: Vec<CollisionEvent>,
}

impl TrafficEnv {
    /// Advances `world` one step with the target on `control` (or on the
    /// default policy when `None`) and scores the step without recording.
    pub fn step(&self, world: &mut WorldState, control: Option<ControlInput>) -> StepRecord {
        self.step_with(world, control, false)
    }

    fn step_with(
        &self,
        world: &mut WorldState,
        control: Option<ControlInput>,
        record: bool,
    ) -> StepRecord {
        let prev_speed = world.target().map(|a| a.state.speed);
        let was_off = world.target_off_network();
        let outcome = match control {
            Some(u) => world.step(u),
            None => world.step_default(),
        };
        let events = world.collision_log()[outcome.new_events].to_vec();
        let sample = match (prev_speed, world.target()) {
            (Some(prev_speed), Some(t)) => Some(StepSample {
                prev_speed,
                speed: t.state.speed,
                accel: t.state.accel,
                steer: t.state.steer,
                lateral_offset: t.state.d,
                lane_width: world.network().lane(t.state.lane).width,
                wheelbase: t.spec.wheelbase,
            }),
            _ => None,
        };
        let ctx = StepContext {
            sample,
            control: control.unwrap_or_default(),
            events: &events,
            naturalistic: naturalistic_cost(world, &self.thresholds),
            left_network: world.target_off_network() && !was_off,
            dt: world.params().dt,
        };
        let mut found = self.found.borrow_mut();
        let collision = events
            .iter()
            .filter(|e| e.target_involved)
            .map(|e| {
                let sig = collision_signature(e, self.reward.signature_cell);
                let seen = found.count(&sig);
                if record && seen == 0 {
                    found.record(sig);
                }
                self.reward.collision_value(self.ledger.count(&sig) + seen)
            })
            .sum();
        StepRecord {
            reward: score_step(&ctx, collision, &self.thresholds, &self.reward),
            events,
        }
    }

    pub fn status(&self, world: &WorldState) -> TerminalStatus {
        world.is_terminal(self.horizon)
    }

    fn hold(&self, world: &mut WorldState, action: usize, record: bool) -> Edge {
        let control = self.grid.action(action);
        let gamma = self.reward.discount;
        let mut reward = 0.0;
        let mut discount = 1.0;
        for _ in 0..self.decision_interval {
            if self.is_terminal(world) {
                break;
            }
            reward += discount * self.step_with(world, Some(control), record).reward.total;
            discount *= gamma;
        }
        let status = self.status(world);
        Edge {
            reward,
            discount,
            terminal: status.is_terminal(),
            failure: status == TerminalStatus::CollisionTarget,
        }
    }
}

impl Environment for TrafficEnv {
    type State = WorldState;

    fn num_actions(&self) -> usize {
        self.grid.len()
    }

    fn is_terminal(&self, state: &WorldState) -> bool {
        self.status(state).is_terminal()
    }

    fn apply(&self, world: &mut WorldState, action: usize, _rng: &mut SimRng) -> Edge {
        self.hold(world, action, true)
    }

    fn replay(&self, world: &mut WorldState, action: usize, _rng: &mut SimRng) -> Edge {
        self.hold(world, action, false)
    }

    fn coast_action(&self) -> usize {
        let nearest = |v: &[f64]| {
            (0..v.len())
                .min_by(|a, b| v[*a].abs().total_cmp(&v[*b].abs()).then(a.cmp(b)))
                .expect("grid is non-empty")
        };
        nearest(self.grid.steer_values()) * self.grid.accel_values().len()
            + nearest(self.grid.accel_values())
    }
}
