//! Random traffic generation and warm-up.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{SimContext, WorldState};
use crate::dynamics::{IdmParams, VehicleClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutePolicy {
    RandomOd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMix {
    pub bicycle: f64,
    pub car: f64,
    pub truck: f64,
}

impl ClassMix {
    fn weights(&self) -> [f64; 3] {
        [self.bicycle, self.car, self.truck]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    /// Inclusive range.
    pub vehicle_count: [u32; 2],
    pub class_mix: ClassMix,
    /// Departures per second.
    pub depart_rate: f64,
    pub route_policy: RoutePolicy,
    /// Inclusive range of warm-up steps.
    pub warmup_steps: [u64; 2],
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            vehicle_count: [20, 30],
            class_mix: ClassMix {
                bicycle: 0.1,
                car: 0.8,
                truck: 0.1,
            },
            depart_rate: 2.0,
            route_policy: RoutePolicy::RandomOd,
            warmup_steps: [100, 200],
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<(), SpawnError> {
        let bad = |m: &str| Err(SpawnError::Config(m.to_string()));
        if self.vehicle_count[0] < 1 || self.vehicle_count[0] > self.vehicle_count[1] {
            return bad("vehicle_count must be a range [min, max] with 1 <= min <= max");
        }
        let w = self.class_mix.weights();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return bad("class_mix weights must be non-negative");
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("class_mix weights must sum to 1");
        }
        if !(self.depart_rate.is_finite() && self.depart_rate > 0.0) {
            return bad("depart_rate must be > 0");
        }
        if self.warmup_steps[0] > self.warmup_steps[1] {
            return bad("warmup_steps must be a range [min, max]");
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpawnError {
    #[error("invalid flow: {0}")]
    Config(String),
    #[error("network has no source lanes")]
    NoSources,
    #[error("network too small for {requested} vehicles; at most {max_feasible} fit at safe gaps")]
    Capacity { requested: u32, max_feasible: u32 },
    #[error("no vehicle present after warm-up to serve as target")]
    NoTarget,
}

/// Per-class driver parameters for background traffic.
pub fn default_idm(class: VehicleClass) -> IdmParams {
    let base = IdmParams::default();
    match class {
        VehicleClass::Bicycle => IdmParams {
            desired_speed: 5.5,
            max_accel: 1.0,
            ..base
        },
        VehicleClass::Car => base,
        VehicleClass::Truck => IdmParams {
            desired_speed: 25.0,
            max_accel: 1.0,
            time_headway: 2.0,
            ..base
        },
    }
}

/// Builds the post-warm-up world for one episode.
///
/// Draw order from the seeded generator: vehicle count, then for each
/// vehicle its class, origin, destination and departure gap, then the
/// warm-up length. Insertion speeds and target choice follow during the
/// simulation itself.
pub fn spawn_traffic(
    ctx: Arc<SimContext>,
    flow: &FlowConfig,
    seed: u64,
) -> Result<WorldState, SpawnError> {
    flow.validate()?;
    let net = ctx.network();
    let sources = net.source_lanes();
    if sources.is_empty() {
        return Err(SpawnError::NoSources);
    }
    let mut world = WorldState::new(Arc::clone(&ctx), seed);
    let rng = world.rng_mut();
    let count =
        rng.range_inclusive(flow.vehicle_count[0] as u64, flow.vehicle_count[1] as u64) as u32;

    let min_gap = IdmParams::default().min_gap;
    let slot = ctx.max_vehicle_length() + min_gap;
    let max_feasible: u32 = net
        .lane_indices()
        .map(|l| (net.lane(l).length() / slot).floor() as u32)
        .sum();
    if count > max_feasible {
        return Err(SpawnError::Capacity {
            requested: count,
            max_feasible,
        });
    }

    let dt = ctx.params().dt;
    let weights = flow.class_mix.weights();
    let mut depart_time = 0.0;
    let mut plans = Vec::with_capacity(count as usize);
    for i in 0..count {
        let rng = world.rng_mut();
        let class = VehicleClass::ALL[rng.weighted(&weights)];
        let origin = sources[rng.below(sources.len() as u64) as usize];
        let sinks = net.reachable_sinks(origin);
        let dest = if sinks.is_empty() {
            origin
        } else {
            sinks[rng.below(sinks.len() as u64) as usize]
        };
        if i > 0 {
            depart_time += rng.exponential(flow.depart_rate);
        }
        let route = net.lane_path(origin, dest).expect("sink is reachable");
        plans.push((class, route, (depart_time / dt).round() as u64));
    }
    let warmup = world
        .rng_mut()
        .range_inclusive(flow.warmup_steps[0], flow.warmup_steps[1]);
    for (class, route, depart) in plans {
        world.schedule(ctx.spec(class), ctx.idm(class), route, depart);
    }

    world.insert_due();
    policy_warmup(&mut world, warmup);

    let cars: Vec<_> = world
        .agents()
        .filter(|a| a.spec.vehicle_class == VehicleClass::Car)
        .map(|a| a.id)
        .collect();
    let pool: Vec<_> = if cars.is_empty() {
        world.agents().map(|a| a.id).collect()
    } else {
        cars
    };
    if pool.is_empty() {
        return Err(SpawnError::NoTarget);
    }
    let pick = pool[world.rng_mut().below(pool.len() as u64) as usize];
    world.set_target(pick);
    world.mark_root();
    Ok(world)
}

fn policy_warmup(world: &mut WorldState, steps: u64) {
    for _ in 0..steps {
        world.step_default();
    }
}
