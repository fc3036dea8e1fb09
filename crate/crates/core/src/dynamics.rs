//! Vehicle kinematics, the target's discrete action grid, and the
//! car-following / lane-keeping laws used by background traffic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, Vec2};
use crate::netmodel::LaneIdx;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("gap must be > 0, got {0}")]
    NonPositiveGap(f64),
    #[error("invalid action grid: {0}")]
    Grid(String),
    #[error("invalid vehicle spec: {0}")]
    Spec(String),
    #[error("invalid IDM parameters: {0}")]
    Idm(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleClass {
    Bicycle,
    Car,
    Truck,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 3] = [
        VehicleClass::Bicycle,
        VehicleClass::Car,
        VehicleClass::Truck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VehicleClass::Bicycle => "bicycle",
            VehicleClass::Car => "car",
            VehicleClass::Truck => "truck",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub length: f64,
    pub width: f64,
    pub wheelbase: f64,
    pub max_accel: f64,
    /// Braking capability, as a positive magnitude.
    pub max_decel: f64,
    pub max_steer: f64,
    pub vehicle_class: VehicleClass,
}

impl VehicleSpec {
    pub fn default_for(class: VehicleClass) -> Self {
        match class {
            VehicleClass::Bicycle => Self {
                length: 1.8,
                width: 0.65,
                wheelbase: 1.1,
                max_accel: 1.2,
                max_decel: 4.0,
                max_steer: 0.6,
                vehicle_class: class,
            },
            VehicleClass::Car => Self {
                length: 4.5,
                width: 1.8,
                wheelbase: 2.7,
                max_accel: 3.0,
                max_decel: 9.0,
                max_steer: 0.6,
                vehicle_class: class,
            },
            VehicleClass::Truck => Self {
                length: 8.0,
                width: 2.5,
                wheelbase: 5.0,
                max_accel: 1.5,
                max_decel: 6.0,
                max_steer: 0.5,
                vehicle_class: class,
            },
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let positive = [
            ("length", self.length),
            ("width", self.width),
            ("wheelbase", self.wheelbase),
            ("max_accel", self.max_accel),
            ("max_decel", self.max_decel),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(DynamicsError::Spec(format!("{name} must be > 0")));
            }
        }
        if self.wheelbase > self.length {
            return Err(DynamicsError::Spec("wheelbase exceeds length".into()));
        }
        if !(self.max_steer > 0.0 && self.max_steer < std::f64::consts::FRAC_PI_2) {
            return Err(DynamicsError::Spec(
                "max_steer must lie in (0, pi/2)".into(),
            ));
        }
        Ok(())
    }

    pub fn clamp(&self, control: ControlInput) -> ControlInput {
        ControlInput {
            steer: control.steer.clamp(-self.max_steer, self.max_steer),
            accel: control.accel.clamp(-self.max_decel, self.max_accel),
        }
    }
}

/// Kinematic state plus the network-relative pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Geometric centre of the vehicle footprint.
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    /// Last applied acceleration.
    pub accel: f64,
    /// Last applied steering angle.
    pub steer: f64,
    pub lane: LaneIdx,
    pub s: f64,
    pub d: f64,
    pub odometer: f64,
}

/// A (steering angle, acceleration) pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub steer: f64,
    pub accel: f64,
}

impl ControlInput {
    pub const COAST: ControlInput = ControlInput {
        steer: 0.0,
        accel: 0.0,
    };

    pub fn new(steer: f64, accel: f64) -> Self {
        Self { steer, accel }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdmParams {
    /// Desired speed; the effective value is capped by the lane speed limit.
    pub desired_speed: f64,
    pub time_headway: f64,
    pub min_gap: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub exponent: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            desired_speed: 40.0,
            time_headway: 1.5,
            min_gap: 2.0,
            max_accel: 1.5,
            comfort_decel: 2.0,
            exponent: 4.0,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let fields = [
            ("desired_speed", self.desired_speed),
            ("time_headway", self.time_headway),
            ("min_gap", self.min_gap),
            ("max_accel", self.max_accel),
            ("comfort_decel", self.comfort_decel),
            ("exponent", self.exponent),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(DynamicsError::Idm(format!("{name} must be > 0")));
            }
        }
        if self.exponent < 1.0 {
            return Err(DynamicsError::Idm("exponent must be >= 1".into()));
        }
        Ok(())
    }

    /// Copy with the desired speed capped at `limit`.
    pub fn capped(&self, limit: f64) -> IdmParams {
        IdmParams {
            desired_speed: self.desired_speed.min(limit),
            ..*self
        }
    }

    /// Desired dynamic gap s*.
    pub fn desired_gap(&self, v: f64, closing_speed: f64) -> f64 {
        let dynamic = v * self.time_headway
            + v * closing_speed / (2.0 * (self.max_accel * self.comfort_decel).sqrt());
        self.min_gap + dynamic.max(0.0)
    }
}

/// Intelligent Driver Model acceleration.
///
/// `gap` is bumper to bumper (use `f64::INFINITY` on a free road) and
/// `closing_speed` is follower minus leader speed. The result is clamped to
/// `[-max_decel, params.max_accel]`.
pub fn idm_acceleration(
    params: &IdmParams,
    v: f64,
    gap: f64,
    closing_speed: f64,
    max_decel: f64,
) -> Result<f64, DynamicsError> {
    if gap.is_nan() || gap <= 0.0 {
        return Err(DynamicsError::NonPositiveGap(gap));
    }
    let free = (v / params.desired_speed).powf(params.exponent);
    let interaction = if gap.is_infinite() {
        0.0
    } else {
        let ratio = params.desired_gap(v, closing_speed) / gap;
        ratio * ratio
    };
    let a = params.max_accel * (1.0 - free - interaction);
    Ok(a.clamp(-max_decel, params.max_accel))
}

/// Advances one vehicle by `dt` under the kinematic bicycle model.
///
/// Controls are clamped to the spec first. Yaw rate uses the pre-step speed;
/// position moves along the mid-step heading by the exact distance covered
/// (which accounts for stopping part-way through the step). The
/// network-relative fields are left untouched for the caller to refresh.
pub fn bicycle_step(
    state: &VehicleState,
    spec: &VehicleSpec,
    control: ControlInput,
    dt: f64,
) -> VehicleState {
    let c = spec.clamp(control);
    let v = state.speed;
    let raw = v + c.accel * dt;
    let (v_next, distance) = if raw >= 0.0 {
        (raw, 0.5 * (v + raw) * dt)
    } else {
        // Stops inside the step.
        (0.0, v * v / (2.0 * -c.accel))
    };
    let yaw = v / spec.wheelbase * c.steer.tan() * dt;
    let mid_heading = state.heading + 0.5 * yaw;
    let position = state.position + Vec2::from_heading(mid_heading) * distance;
    VehicleState {
        position,
        heading: wrap_angle(state.heading + yaw),
        speed: v_next,
        accel: c.accel,
        steer: c.steer,
        odometer: state.odometer + distance,
        ..*state
    }
}

/// Path curvature (rad/m) produced by a steering angle.
pub fn curvature(steer: f64, wheelbase: f64) -> f64 {
    steer.tan() / wheelbase
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneKeepingGains {
    pub heading_gain: f64,
    /// Cross-track gain, 1/s.
    pub offset_gain: f64,
    /// Speed softening term, m/s.
    pub soft_speed: f64,
}

impl Default for LaneKeepingGains {
    fn default() -> Self {
        Self {
            heading_gain: 1.0,
            offset_gain: 1.0,
            soft_speed: 1.0,
        }
    }
}

/// Steering toward the lane centerline: curvature feed-forward, heading
/// correction, and a cross-track term that steers right when `d > 0`.
pub fn lane_keeping_steer(
    spec: &VehicleSpec,
    gains: &LaneKeepingGains,
    speed: f64,
    heading_error: f64,
    lateral_offset: f64,
    lane_curvature: f64,
) -> f64 {
    let feed_forward = (spec.wheelbase * lane_curvature).atan();
    let cross_track = (gains.offset_gain * lateral_offset / (speed + gains.soft_speed)).atan();
    (feed_forward + gains.heading_gain * heading_error - cross_track)
        .clamp(-spec.max_steer, spec.max_steer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionGridConfig {
    pub steer_values: Vec<f64>,
    pub accel_values: Vec<f64>,
}

impl Default for ActionGridConfig {
    fn default() -> Self {
        Self {
            steer_values: vec![-0.3, -0.15, 0.0, 0.15, 0.3],
            accel_values: vec![-8.0, -4.5, -2.0, 0.0, 2.0],
        }
    }
}

/// The target's finite action set. Index order is steer-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionGrid {
    steer_values: Vec<f64>,
    accel_values: Vec<f64>,
}

pub fn build_action_grid(config: &ActionGridConfig) -> Result<ActionGrid, DynamicsError> {
    fn increasing(name: &str, v: &[f64]) -> Result<(), DynamicsError> {
        if v.is_empty() {
            return Err(DynamicsError::Grid(format!("{name} is empty")));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(DynamicsError::Grid(format!("{name} has non-finite values")));
        }
        if v.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DynamicsError::Grid(format!(
                "{name} must be strictly increasing"
            )));
        }
        Ok(())
    }
    increasing("steer_values", &config.steer_values)?;
    increasing("accel_values", &config.accel_values)?;
    let steer = &config.steer_values;
    let symmetric = steer
        .iter()
        .zip(steer.iter().rev())
        .all(|(a, b)| (a + b).abs() <= 1e-12);
    if !symmetric {
        return Err(DynamicsError::Grid(
            "steer_values must be symmetric about 0".into(),
        ));
    }
    Ok(ActionGrid {
        steer_values: config.steer_values.clone(),
        accel_values: config.accel_values.clone(),
    })
}

impl ActionGrid {
    pub fn len(&self) -> usize {
        self.steer_values.len() * self.accel_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn action(&self, index: usize) -> ControlInput {
        let n = self.accel_values.len();
        ControlInput::new(self.steer_values[index / n], self.accel_values[index % n])
    }

    /// (steer index, accel index) of an action index.
    pub fn coordinates(&self, index: usize) -> (usize, usize) {
        let n = self.accel_values.len();
        (index / n, index % n)
    }

    pub fn steer_values(&self) -> &[f64] {
        &self.steer_values
    }

    pub fn accel_values(&self) -> &[f64] {
        &self.accel_values
    }

    pub fn actions(&self) -> impl Iterator<Item = ControlInput> + '_ {
        (0..self.len()).map(|i| self.action(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(speed: f64) -> VehicleState {
        VehicleState {
            position: Vec2::ZERO,
            heading: 0.3,
            speed,
            accel: 0.0,
            steer: 0.0,
            lane: LaneIdx(0),
            s: 0.0,
            d: 0.0,
            odometer: 0.0,
        }
    }

    fn reference_idm() -> IdmParams {
        IdmParams {
            desired_speed: 15.0,
            time_headway: 1.5,
            min_gap: 2.0,
            max_accel: 1.5,
            comfort_decel: 2.0,
            exponent: 4.0,
        }
    }

    #[test]
    fn idm_free_road_at_desired_speed() {
        let a = idm_acceleration(&reference_idm(), 15.0, f64::INFINITY, 0.0, 9.0).unwrap();
        assert!(a.abs() < 1e-12);
    }

    #[test]
    fn idm_standstill_at_min_gap() {
        let a = idm_acceleration(&reference_idm(), 0.0, 2.0, 0.0, 9.0).unwrap();
        assert!(a.abs() < 1e-12);
    }

    #[test]
    fn idm_reference_point() {
        // Independent evaluation of the closed form.
        let s_star = 2.0 + 10.0 * 1.5 + 10.0 * 5.0 / (2.0 * (1.5f64 * 2.0).sqrt());
        let expected = 1.5 * (1.0 - (10.0f64 / 15.0).powi(4) - (s_star / 30.0).powi(2));
        let a = idm_acceleration(&reference_idm(), 10.0, 30.0, 5.0, 9.0).unwrap();
        assert!((a - expected).abs() < 1e-9, "{a} vs {expected}");
    }

    #[test]
    fn idm_rejects_non_positive_gap() {
        assert_eq!(
            idm_acceleration(&reference_idm(), 5.0, 0.0, 0.0, 9.0),
            Err(DynamicsError::NonPositiveGap(0.0))
        );
    }

    #[test]
    fn idm_monotone_sweep() {
        let p = reference_idm();
        for gi in 0..20 {
            let gap = 1.0 + gi as f64 * 5.0;
            let mut prev = f64::INFINITY;
            for vi in 0..20 {
                let v = vi as f64;
                let a = idm_acceleration(&p, v, gap, 1.0, 9.0).unwrap();
                assert!(a <= prev + 1e-12, "not non-increasing in v at gap {gap}");
                prev = a;
            }
        }
        for vi in 0..20 {
            let v = vi as f64;
            let mut prev = f64::NEG_INFINITY;
            for gi in 0..20 {
                let gap = 1.0 + gi as f64 * 5.0;
                let a = idm_acceleration(&p, v, gap, 1.0, 9.0).unwrap();
                assert!(a >= prev - 1e-12, "not non-decreasing in gap at v {v}");
                prev = a;
            }
        }
    }

    #[test]
    fn straight_coast_advances_one_meter() {
        let spec = VehicleSpec::default_for(VehicleClass::Car);
        let s0 = VehicleState {
            heading: 0.0,
            ..state(10.0)
        };
        let s1 = bicycle_step(&s0, &spec, ControlInput::COAST, 0.1);
        assert!((s1.position.x - 1.0).abs() < 1e-12);
        assert!(s1.position.y.abs() < 1e-15);
        assert_eq!(s1.heading, 0.0);
        assert!((s1.odometer - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_reverse() {
        let spec = VehicleSpec::default_for(VehicleClass::Car);
        let s1 = bicycle_step(&state(0.0), &spec, ControlInput::new(0.0, -3.0), 0.1);
        assert_eq!(s1.speed, 0.0);
        assert_eq!(s1.position, Vec2::ZERO);
    }

    #[test]
    fn heading_increment_matches_formula() {
        let spec = VehicleSpec {
            wheelbase: 2.5,
            ..VehicleSpec::default_for(VehicleClass::Car)
        };
        let s1 = bicycle_step(&state(10.0), &spec, ControlInput::new(0.1, 0.0), 0.1);
        let expected = (10.0 / 2.5) * 0.1f64.tan() * 0.1;
        assert!((s1.heading - 0.3 - expected).abs() < 1e-12);
    }

    #[test]
    fn half_steps_compose() {
        let spec = VehicleSpec::default_for(VehicleClass::Car);
        for v in [1.0, 10.0, 20.0, 30.0] {
            for u in [
                ControlInput::new(0.3, 2.0),
                ControlInput::new(-0.15, -4.5),
                ControlInput::new(0.0, -8.0),
            ] {
                let s = state(v);
                let full = bicycle_step(&s, &spec, u, 0.1);
                let half = bicycle_step(&bicycle_step(&s, &spec, u, 0.05), &spec, u, 0.05);
                // Splitting changes the result through the chord-versus-arc
                // term (distance * yaw^2) and through the speed used for yaw
                // (distance * curvature * accel * dt^2).
                let yaw = wrap_angle(full.heading - s.heading).abs();
                let k = curvature(u.steer, spec.wheelbase).abs();
                let bound = full.odometer * (yaw * yaw / 16.0 + k * u.accel.abs() * 0.01) + 1e-9;
                let err = full.position.distance(half.position);
                assert!(err < bound, "v={v} {u:?} err={err} bound={bound}");
            }
        }
    }

    #[test]
    fn lane_keeping_signs() {
        let spec = VehicleSpec::default_for(VehicleClass::Car);
        let g = LaneKeepingGains::default();
        assert_eq!(lane_keeping_steer(&spec, &g, 10.0, 0.0, 0.0, 0.0), 0.0);
        assert!(lane_keeping_steer(&spec, &g, 10.0, 0.0, 0.5, 0.0) < 0.0);
        assert!(lane_keeping_steer(&spec, &g, 10.0, 0.0, -0.5, 0.0) > 0.0);
    }

    #[test]
    fn default_grid_has_25_actions() {
        let g = build_action_grid(&ActionGridConfig::default()).unwrap();
        assert_eq!(g.len(), 25);
        assert_eq!(g.action(0), ControlInput::new(-0.3, -8.0));
        assert_eq!(g.action(1), ControlInput::new(-0.3, -4.5));
        assert_eq!(g.action(24), ControlInput::new(0.3, 2.0));
    }

    #[test]
    fn coast_only_grid() {
        let g = build_action_grid(&ActionGridConfig {
            steer_values: vec![0.0],
            accel_values: vec![0.0],
        })
        .unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.action(0), ControlInput::COAST);
    }

    #[test]
    fn non_monotone_grid_rejected() {
        let cfg = ActionGridConfig {
            steer_values: vec![0.1, -0.1],
            accel_values: vec![0.0],
        };
        assert!(build_action_grid(&cfg).is_err());
        let cfg = ActionGridConfig {
            steer_values: vec![],
            accel_values: vec![0.0],
        };
        assert!(build_action_grid(&cfg).is_err());
    }
}
