//! Surrogate safety measures, comfort costs, mileage and emissions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::curvature;
use crate::simcore::{AgentId, FollowingPair, WorldState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("gap must be > 0 for a valid pair, got {0}")]
    NonPositiveGap(f64),
}

/// Follower/leader kinematics; `gap` is bumper to bumper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairKinematics {
    pub gap: f64,
    pub follower_speed: f64,
    pub leader_speed: f64,
}

impl From<FollowingPair> for PairKinematics {
    fn from(p: FollowingPair) -> Self {
        Self {
            gap: p.gap,
            follower_speed: p.follower_speed,
            leader_speed: p.leader_speed,
        }
    }
}

pub fn time_to_collision(pk: PairKinematics) -> Result<f64, MetricsError> {
    if pk.gap.is_nan() || pk.gap <= 0.0 {
        return Err(MetricsError::NonPositiveGap(pk.gap));
    }
    let closing = pk.follower_speed - pk.leader_speed;
    Ok(if closing > 0.0 {
        pk.gap / closing
    } else {
        f64::INFINITY
    })
}

/// Deceleration rate to avoid a collision.
pub fn drac(pk: PairKinematics) -> Result<f64, MetricsError> {
    if pk.gap.is_nan() || pk.gap <= 0.0 {
        return Err(MetricsError::NonPositiveGap(pk.gap));
    }
    let closing = pk.follower_speed - pk.leader_speed;
    Ok(if closing > 0.0 {
        closing * closing / (2.0 * pk.gap)
    } else {
        0.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricThresholds {
    /// |accel| above this (m/s²) is penalized.
    pub lon_accel: f64,
    /// |v²κ| above this (m/s²) is penalized.
    pub lat_accel: f64,
    /// |κ| above this (rad/m) counts as a sharp turn.
    pub curvature: f64,
    /// Decelerations harder than this (m/s², positive) are emergency brakes.
    pub emergency_brake: f64,
    pub emergency_brake_weight: f64,
    /// Speed change allowed per second before it is penalized.
    pub speed_change_rate: f64,
    pub ttc: f64,
    pub drac: f64,
    pub ttc_weight: f64,
    pub drac_weight: f64,
}

impl Default for MetricThresholds {
    fn default() -> Self {
        Self {
            lon_accel: 2.5,
            lat_accel: 2.0,
            curvature: 0.1,
            emergency_brake: 4.5,
            emergency_brake_weight: 1.0,
            speed_change_rate: 2.5,
            ttc: 3.0,
            drac: 3.5,
            ttc_weight: 1.0,
            drac_weight: 1.0,
        }
    }
}

/// Polynomial CO₂ model in speed and acceleration, g/s. The defaults are
/// illustrative, not calibrated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmissionCoefficients {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
}

impl Default for EmissionCoefficients {
    fn default() -> Self {
        Self {
            c0: 0.5,
            c1: 0.08,
            c2: 0.0005,
            c3: 0.00005,
            c4: 0.12,
            c5: 0.01,
        }
    }
}

impl EmissionCoefficients {
    pub const ZERO: EmissionCoefficients = EmissionCoefficients {
        c0: 0.0,
        c1: 0.0,
        c2: 0.0,
        c3: 0.0,
        c4: 0.0,
        c5: 0.0,
    };
}

pub fn co2_rate(v: f64, a: f64, c: &EmissionCoefficients) -> f64 {
    let rate = c.c0 + c.c1 * v + c.c2 * v * v + c.c3 * v * v * v + c.c4 * a * v + c.c5 * a * a * v;
    rate.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub thresholds: MetricThresholds,
    pub emission: EmissionCoefficients,
}

/// One agent over one simulation step: the control it applied and the
/// resulting state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSample {
    pub prev_speed: f64,
    pub speed: f64,
    pub accel: f64,
    pub steer: f64,
    pub lateral_offset: f64,
    pub lane_width: f64,
    pub wheelbase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RationalityCosts {
    pub lon_accel_cost: f64,
    pub lat_accel_cost: f64,
    pub sharp_turn_cost: f64,
    /// In [0, 1]; 1 when always on the centerline.
    pub lateral_offset_score: f64,
    pub speed_change_cost: f64,
    pub emergency_brake_cost: f64,
}

/// Summed comfort penalties over a slice of steps sharing one `dt`; the
/// lateral offset score is the mean over the slice.
pub fn rationality_costs(
    samples: &[StepSample],
    dt: f64,
    th: &MetricThresholds,
) -> RationalityCosts {
    let mut out = RationalityCosts::default();
    if samples.is_empty() {
        out.lateral_offset_score = 1.0;
        return out;
    }
    let mut offset_sum = 0.0;
    for s in samples {
        let kappa = curvature(s.steer, s.wheelbase);
        out.lon_accel_cost -= (s.accel.abs() - th.lon_accel).max(0.0);
        out.lat_accel_cost -= ((s.speed * s.speed * kappa).abs() - th.lat_accel).max(0.0);
        out.sharp_turn_cost -= (kappa.abs() - th.curvature).max(0.0);
        if s.accel < -th.emergency_brake {
            out.emergency_brake_cost -= th.emergency_brake_weight;
        }
        out.speed_change_cost -=
            ((s.speed - s.prev_speed).abs() - th.speed_change_rate * dt).max(0.0);
        offset_sum += (1.0 - s.lateral_offset.abs() / (0.5 * s.lane_width)).max(0.0);
    }
    out.lateral_offset_score = offset_sum / samples.len() as f64;
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NaturalisticCost {
    pub ttc_cost: f64,
    pub drac_cost: f64,
}

impl NaturalisticCost {
    pub fn total(&self) -> f64 {
        self.ttc_cost + self.drac_cost
    }
}

/// TTC and DRAC penalties over car-following pairs. Overlapping pairs are
/// collisions, not conflicts, and are skipped.
pub fn pair_costs(pairs: &[PairKinematics], th: &MetricThresholds) -> NaturalisticCost {
    let mut out = NaturalisticCost::default();
    for pk in pairs {
        let (Ok(ttc), Ok(drac)) = (time_to_collision(*pk), drac(*pk)) else {
            continue;
        };
        out.ttc_cost -= th.ttc_weight * ((th.ttc - ttc) / th.ttc).max(0.0);
        out.drac_cost -= th.drac_weight * (drac - th.drac).max(0.0);
    }
    out
}

/// Penalties for the pairs around the target: its leader and its followers.
pub fn naturalistic_cost(world: &WorldState, th: &MetricThresholds) -> NaturalisticCost {
    let Some(target) = world.target_id() else {
        return NaturalisticCost::default();
    };
    let pairs: Vec<PairKinematics> = world
        .following_pairs(target)
        .into_iter()
        .map(Into::into)
        .collect();
    pair_costs(&pairs, th)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSample {
    pub id: AgentId,
    pub speed: f64,
    pub accel: f64,
    pub steer: f64,
    pub lateral_offset: f64,
    pub lane_width: f64,
    pub wheelbase: f64,
    pub odometer: f64,
}

/// Every agent's state at one instant, plus the target's conflict costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFrame {
    pub step: u64,
    pub agents: Vec<AgentSample>,
    pub naturalistic: NaturalisticCost,
}

impl TraceFrame {
    pub fn capture(world: &WorldState, th: &MetricThresholds) -> Self {
        let net = world.network();
        let agents = world
            .agents()
            .map(|a| AgentSample {
                id: a.id,
                speed: a.state.speed,
                accel: a.state.accel,
                steer: a.state.steer,
                lateral_offset: a.state.d,
                lane_width: net.lane(a.state.lane).width,
                wheelbase: a.spec.wheelbase,
                odometer: a.state.odometer,
            })
            .collect();
        Self {
            step: world.step_count(),
            agents,
            naturalistic: naturalistic_cost(world, th),
        }
    }

    fn get(&self, id: AgentId) -> Option<&AgentSample> {
        self.agents
            .binary_search_by_key(&id, |a| a.id)
            .ok()
            .map(|i| &self.agents[i])
    }
}

/// Frames at the root and after every step of one episode.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub target: Option<AgentId>,
    pub dt: f64,
    pub frames: Vec<TraceFrame>,
}

impl EpisodeTrace {
    pub fn new(target: Option<AgentId>, dt: f64) -> Self {
        Self {
            target,
            dt,
            frames: Vec::new(),
        }
    }

    pub fn push(&mut self, world: &WorldState, th: &MetricThresholds) {
        self.frames.push(TraceFrame::capture(world, th));
    }

    /// Per-step samples of one agent, for every step after the first frame
    /// in which it was present in both the previous and current frame.
    pub fn samples(&self, id: AgentId) -> Vec<StepSample> {
        self.frames
            .windows(2)
            .filter_map(|w| {
                let (prev, cur) = (w[0].get(id)?, w[1].get(id)?);
                Some(StepSample {
                    prev_speed: prev.speed,
                    speed: cur.speed,
                    accel: cur.accel,
                    steer: cur.steer,
                    lateral_offset: cur.lateral_offset,
                    lane_width: cur.lane_width,
                    wheelbase: cur.wheelbase,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectoryQuality {
    pub lon_accel_cost: f64,
    pub lat_accel_cost: f64,
    pub emergency_brake_cost: f64,
    pub sharp_turn_cost: f64,
    pub speed_change_cost: f64,
    pub lateral_offset_score: f64,
    pub ttc_cost: f64,
    pub drac_cost: f64,
    pub distance: f64,
    pub co2: f64,
}

/// Display name and field name of every quality metric, in report order.
pub const METRIC_NAMES: [(&str, &str); 10] = [
    ("Longitudinal Accel", "lon_accel_cost"),
    ("Lateral Accel", "lat_accel_cost"),
    ("Emergency Brake", "emergency_brake_cost"),
    ("Sharp Turn", "sharp_turn_cost"),
    ("Speed Change", "speed_change_cost"),
    ("Lateral Offset", "lateral_offset_score"),
    ("TTC", "ttc_cost"),
    ("DRAC", "drac_cost"),
    ("Distance", "distance"),
    ("Emission (CO2, g)", "co2"),
];

impl TrajectoryQuality {
    /// Looks a metric up by field name.
    pub fn field(&self, name: &str) -> Option<f64> {
        Some(match name {
            "lon_accel_cost" => self.lon_accel_cost,
            "lat_accel_cost" => self.lat_accel_cost,
            "emergency_brake_cost" => self.emergency_brake_cost,
            "sharp_turn_cost" => self.sharp_turn_cost,
            "speed_change_cost" => self.speed_change_cost,
            "lateral_offset_score" => self.lateral_offset_score,
            "ttc_cost" => self.ttc_cost,
            "drac_cost" => self.drac_cost,
            "distance" => self.distance,
            "co2" => self.co2,
            _ => return None,
        })
    }

    pub fn values(&self) -> [(&'static str, f64); 10] {
        METRIC_NAMES.map(|(_, f)| (f, self.field(f).expect("known field")))
    }
}

/// Mileage of all agents over the trace.
pub fn trace_distance(trace: &EpisodeTrace) -> f64 {
    mileage_by_agent(trace).values().sum()
}

/// Mileage per agent: odometer growth between consecutive frames, plus the
/// distance covered before the first frame for agents inserted mid-trace.
pub fn mileage_by_agent(trace: &EpisodeTrace) -> BTreeMap<AgentId, f64> {
    let mut out = BTreeMap::new();
    for (k, frame) in trace.frames.iter().enumerate() {
        for a in &frame.agents {
            let before = match k {
                0 => a.odometer,
                _ => trace.frames[k - 1].get(a.id).map_or(0.0, |p| p.odometer),
            };
            *out.entry(a.id).or_insert(0.0) += a.odometer - before;
        }
    }
    out
}

/// Grams of CO₂ emitted by all agents over every step of the trace.
pub fn trace_co2(trace: &EpisodeTrace, coeffs: &EmissionCoefficients) -> f64 {
    trace
        .frames
        .iter()
        .skip(1)
        .flat_map(|f| f.agents.iter())
        .map(|a| co2_rate(a.speed, a.accel, coeffs) * trace.dt)
        .sum()
}

/// Comfort and conflict costs of the target plus the mileage and emissions
/// of all traffic.
pub fn aggregate_quality(trace: &EpisodeTrace, config: &MetricsConfig) -> TrajectoryQuality {
    let th = &config.thresholds;
    let rc = match trace.target {
        Some(t) => rationality_costs(&trace.samples(t), trace.dt, th),
        None => rationality_costs(&[], trace.dt, th),
    };
    let (ttc_cost, drac_cost) = trace.frames.iter().skip(1).fold((0.0, 0.0), |(t, d), f| {
        (t + f.naturalistic.ttc_cost, d + f.naturalistic.drac_cost)
    });
    TrajectoryQuality {
        lon_accel_cost: rc.lon_accel_cost,
        lat_accel_cost: rc.lat_accel_cost,
        emergency_brake_cost: rc.emergency_brake_cost,
        sharp_turn_cost: rc.sharp_turn_cost,
        speed_change_cost: rc.speed_change_cost,
        lateral_offset_score: rc.lateral_offset_score,
        ttc_cost,
        drac_cost,
        distance: trace_distance(trace),
        co2: trace_co2(trace, &config.emission),
    }
}
