//! Step reward for the search: collision reward with a diversity bonus,
//! plus weighted comfort and conflict costs.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ControlInput, VehicleClass};
use crate::metrics::{
    rationality_costs, MetricThresholds, NaturalisticCost, RationalityCosts, StepSample,
};
use crate::simcore::CollisionEvent;

pub const HEADING_BUCKETS: u8 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("invalid reward config: {0}")]
    Config(String),
}

/// Identity of a collision mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CollisionSignature {
    /// Ordered so that `class_pair.0 <= class_pair.1`.
    pub class_pair: (VehicleClass, VehicleClass),
    pub cell: (i64, i64),
    /// Absolute relative heading in `[0, pi]`, split into equal buckets.
    pub heading_bucket: u8,
}

pub fn collision_signature(event: &CollisionEvent, cell_size: f64) -> CollisionSignature {
    let (a, b) = event.primary_classes;
    let class_pair = if a <= b { (a, b) } else { (b, a) };
    let cell = (
        (event.location.x / cell_size).floor() as i64,
        (event.location.y / cell_size).floor() as i64,
    );
    let angle = event.relative_heading.abs().min(PI);
    let bucket = ((angle / PI) * HEADING_BUCKETS as f64).floor() as u8;
    CollisionSignature {
        class_pair,
        cell,
        heading_bucket: bucket.min(HEADING_BUCKETS - 1),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LedgerEntry {
    signature: CollisionSignature,
    count: u64,
}

/// Occurrence count of every signature seen so far.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(into = "Vec<LedgerEntry>", from = "Vec<LedgerEntry>")]
pub struct DiversityLedger {
    counts: BTreeMap<CollisionSignature, u64>,
}

impl From<DiversityLedger> for Vec<LedgerEntry> {
    fn from(l: DiversityLedger) -> Self {
        l.counts
            .into_iter()
            .map(|(signature, count)| LedgerEntry { signature, count })
            .collect()
    }
}

impl From<Vec<LedgerEntry>> for DiversityLedger {
    fn from(entries: Vec<LedgerEntry>) -> Self {
        let mut l = DiversityLedger::default();
        for e in entries.into_iter().filter(|e| e.count > 0) {
            *l.counts.entry(e.signature).or_insert(0) += e.count;
        }
        l
    }
}

impl DiversityLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self, sig: &CollisionSignature) -> u64 {
        self.counts.get(sig).copied().unwrap_or(0)
    }

    /// Returns the prior count and increments it.
    pub fn record(&mut self, sig: CollisionSignature) -> u64 {
        let c = self.counts.entry(sig).or_insert(0);
        *c += 1;
        *c - 1
    }

    pub fn merge(&mut self, other: &DiversityLedger) {
        for (sig, n) in &other.counts {
            *self.counts.entry(*sig).or_insert(0) += n;
        }
    }

    /// Counts added since `earlier`, which must be a prior state of this ledger.
    pub fn since(&self, earlier: &DiversityLedger) -> DiversityLedger {
        let counts = self
            .counts
            .iter()
            .map(|(sig, n)| (*sig, n - earlier.count(sig).min(*n)))
            .filter(|(_, n)| *n > 0)
            .collect();
        DiversityLedger { counts }
    }

    /// Number of distinct signatures.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CollisionSignature, u64)> {
        self.counts.iter().map(|(s, n)| (s, *n))
    }
}

/// A ledger shared between threads; each record is one critical section.
#[derive(Debug, Default)]
pub struct SharedLedger(Mutex<DiversityLedger>);

impl SharedLedger {
    pub fn new(ledger: DiversityLedger) -> Self {
        Self(Mutex::new(ledger))
    }

    pub fn record(&self, sig: CollisionSignature) -> u64 {
        self.0.lock().expect("ledger lock poisoned").record(sig)
    }

    pub fn snapshot(&self) -> DiversityLedger {
        self.0.lock().expect("ledger lock poisoned").clone()
    }

    pub fn into_inner(self) -> DiversityLedger {
        self.0.into_inner().expect("ledger lock poisoned")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    pub lon_accel: f64,
    pub lat_accel: f64,
    pub sharp_turn: f64,
    /// Applied to `1 - lateral_offset_score`.
    pub lateral_offset: f64,
    pub speed_change: f64,
    pub emergency_brake: f64,
    pub ttc: f64,
    pub drac: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            lon_accel: 0.0005,
            lat_accel: 0.00025,
            sharp_turn: 0.05,
            lateral_offset: 0.0005,
            speed_change: 0.00125,
            emergency_brake: 0.00125,
            ttc: 0.0005,
            drac: 0.000125,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub base_collision_reward: f64,
    pub diversity_decay: f64,
    /// Pay nothing for a signature seen before.
    pub zero_repeats: bool,
    pub signature_cell: f64,
    pub weights: CostWeights,
    /// Added once when the target leaves the road network.
    pub off_network_penalty: f64,
    pub clip: [f64; 2],
    pub discount: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            base_collision_reward: 1.0,
            diversity_decay: 0.5,
            zero_repeats: false,
            signature_cell: 5.0,
            weights: CostWeights::default(),
            off_network_penalty: -0.5,
            clip: [-1.0, 1.0],
            discount: 0.99,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let bad = |m: &str| Err(RewardError::Config(m.to_string()));
        if !(self.base_collision_reward.is_finite() && self.base_collision_reward > 0.0) {
            return bad("base_collision_reward must be > 0");
        }
        if !(self.diversity_decay > 0.0 && self.diversity_decay <= 1.0) {
            return bad("diversity_decay must be in (0, 1]");
        }
        if !(self.signature_cell.is_finite() && self.signature_cell > 0.0) {
            return bad("signature_cell must be > 0");
        }
        let w = &self.weights;
        let all = [
            w.lon_accel,
            w.lat_accel,
            w.sharp_turn,
            w.lateral_offset,
            w.speed_change,
            w.emergency_brake,
            w.ttc,
            w.drac,
        ];
        if all.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return bad("cost weights must be finite and >= 0");
        }
        if !(self.off_network_penalty.is_finite() && self.off_network_penalty <= 0.0) {
            return bad("off_network_penalty must be <= 0");
        }
        if !(self.clip[0].is_finite() && self.clip[1].is_finite() && self.clip[0] < self.clip[1]) {
            return bad("clip must be [r_min, r_max] with r_min < r_max");
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return bad("discount must be in [0, 1]");
        }
        Ok(())
    }

    /// Reward for a signature already seen `prior` times.
    pub fn collision_value(&self, prior: u64) -> f64 {
        if prior > 0 && self.zero_repeats {
            0.0
        } else {
            self.base_collision_reward
                * self.diversity_decay.powi(prior.min(i32::MAX as u64) as i32)
        }
    }
}

/// Reward for a target collision, recording it in the ledger. Collisions
/// without the target pay nothing and leave the ledger alone.
pub fn collision_reward(
    event: &CollisionEvent,
    ledger: &mut DiversityLedger,
    cfg: &RewardConfig,
) -> f64 {
    if !event.target_involved {
        return 0.0;
    }
    let prior = ledger.record(collision_signature(event, cfg.signature_cell));
    cfg.collision_value(prior)
}

/// Like [`collision_reward`] but reads the ledger without recording.
pub fn peek_collision_reward(
    event: &CollisionEvent,
    ledger: &DiversityLedger,
    cfg: &RewardConfig,
) -> f64 {
    if !event.target_involved {
        return 0.0;
    }
    cfg.collision_value(ledger.count(&collision_signature(event, cfg.signature_cell)))
}

/// Everything the reward needs about one simulation step of the target.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub sample: Option<StepSample>,
    pub control: ControlInput,
    pub events: &'a [CollisionEvent],
    pub naturalistic: NaturalisticCost,
    pub left_network: bool,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub collision: f64,
    pub rationality: f64,
    pub naturalistic: f64,
    pub off_network: f64,
    /// Clipped sum of the components.
    pub total: f64,
}

/// Weighted sum of one step's comfort costs.
pub fn weighted_rationality(c: &RationalityCosts, w: &CostWeights) -> f64 {
    w.lon_accel * c.lon_accel_cost
        + w.lat_accel * c.lat_accel_cost
        + w.sharp_turn * c.sharp_turn_cost
        + w.speed_change * c.speed_change_cost
        + w.emergency_brake * c.emergency_brake_cost
        - w.lateral_offset * (1.0 - c.lateral_offset_score)
}

/// Scores one step, recording its target collisions in the ledger.
pub fn evaluate(
    step: &StepContext<'_>,
    ledger: &mut DiversityLedger,
    thresholds: &MetricThresholds,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let collision = step
        .events
        .iter()
        .map(|e| collision_reward(e, ledger, cfg))
        .sum();
    score_step(step, collision, thresholds, cfg)
}

/// Like [`evaluate`] but reads the ledger without recording.
pub fn peek_evaluate(
    step: &StepContext<'_>,
    ledger: &DiversityLedger,
    thresholds: &MetricThresholds,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let collision = step
        .events
        .iter()
        .map(|e| peek_collision_reward(e, ledger, cfg))
        .sum();
    score_step(step, collision, thresholds, cfg)
}

/// Composes a step reward around an already computed collision reward.
pub fn score_step(
    step: &StepContext<'_>,
    collision: f64,
    thresholds: &MetricThresholds,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let rationality = match step.sample {
        Some(s) => {
            weighted_rationality(&rationality_costs(&[s], step.dt, thresholds), &cfg.weights)
        }
        None => 0.0,
    };
    let naturalistic = cfg.weights.ttc * step.naturalistic.ttc_cost
        + cfg.weights.drac * step.naturalistic.drac_cost;
    let off_network = if step.left_network {
        cfg.off_network_penalty
    } else {
        0.0
    };
    let sum: f64 = collision + rationality + naturalistic + off_network;
    RewardBreakdown {
        collision,
        rationality,
        naturalistic,
        off_network,
        total: sum.clamp(cfg.clip[0], cfg.clip[1]),
    }
}

/// Σ γ^(t-1) r_t.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use proptest::prelude::*;

    fn event(
        x: f64,
        y: f64,
        rel: f64,
        classes: (VehicleClass, VehicleClass),
        target: bool,
    ) -> CollisionEvent {
        CollisionEvent {
            step: 3,
            time: 0.3,
            participants: vec![0, 1],
            participant_classes: vec![classes.0, classes.1],
            location: Vec2::new(x, y),
            relative_heading: rel,
            target_involved: target,
            primary: (0, 1),
            primary_classes: classes,
        }
    }

    use VehicleClass::*;

    #[test]
    fn signature_is_deterministic_and_symmetric() {
        let e = event(12.0, -3.0, 1.2, (Truck, Car), true);
        assert_eq!(collision_signature(&e, 5.0), collision_signature(&e, 5.0));
        let mut swapped = e.clone();
        swapped.primary = (1, 0);
        swapped.primary_classes = (Car, Truck);
        swapped.relative_heading = -1.2;
        assert_eq!(
            collision_signature(&e, 5.0),
            collision_signature(&swapped, 5.0)
        );
        let sig = collision_signature(&e, 5.0);
        assert_eq!(sig.class_pair, (Car, Truck));
        assert_eq!(sig.cell, (2, -1));
        assert_eq!(sig.heading_bucket, 3);
    }

    #[test]
    fn six_metres_apart_is_another_cell() {
        let a = collision_signature(&event(1.0, 1.0, 0.0, (Car, Car), true), 5.0);
        let b = collision_signature(&event(7.0, 1.0, 0.0, (Car, Car), true), 5.0);
        assert_ne!(a, b);
    }

    #[test]
    fn heading_extremes_stay_in_range() {
        for rel in [-PI, -1e-12, 0.0, PI - 1e-12, PI] {
            let sig = collision_signature(&event(0.0, 0.0, rel, (Car, Car), true), 5.0);
            assert!(sig.heading_bucket < HEADING_BUCKETS);
        }
    }

    #[test]
    fn repeats_decay_geometrically() {
        let cfg = RewardConfig::default();
        let mut ledger = DiversityLedger::new();
        let e = event(0.0, 0.0, 0.5, (Car, Car), true);
        let r: Vec<f64> = (0..3)
            .map(|_| collision_reward(&e, &mut ledger, &cfg))
            .collect();
        assert_eq!(r, vec![1.0, 0.5, 0.25]);
        assert_eq!(ledger.len(), 1);
        assert_eq!(ledger.total(), 3);
    }

    #[test]
    fn background_collision_pays_nothing() {
        let cfg = RewardConfig::default();
        let mut ledger = DiversityLedger::new();
        let e = event(0.0, 0.0, 0.5, (Car, Car), false);
        assert_eq!(collision_reward(&e, &mut ledger, &cfg), 0.0);
        assert!(ledger.is_empty());
    }

    #[test]
    fn zeroing_repeats() {
        let cfg = RewardConfig {
            diversity_decay: 1.0,
            zero_repeats: true,
            ..RewardConfig::default()
        };
        assert_eq!(cfg.collision_value(0), 1.0);
        assert_eq!(cfg.collision_value(1), 0.0);
        let flat = RewardConfig {
            diversity_decay: 1.0,
            ..RewardConfig::default()
        };
        assert_eq!(flat.collision_value(7), 1.0);
    }

    fn calm(dt: f64) -> StepContext<'static> {
        StepContext {
            sample: Some(StepSample {
                prev_speed: 10.0,
                speed: 10.0,
                accel: 0.0,
                steer: 0.0,
                lateral_offset: 0.0,
                lane_width: 3.5,
                wheelbase: 2.7,
            }),
            control: ControlInput::COAST,
            events: &[],
            naturalistic: NaturalisticCost::default(),
            left_network: false,
            dt,
        }
    }

    #[test]
    fn calm_step_is_neutral() {
        let r = evaluate(
            &calm(0.1),
            &mut DiversityLedger::new(),
            &MetricThresholds::default(),
            &RewardConfig::default(),
        );
        assert_eq!(r, RewardBreakdown::default());
    }

    #[test]
    fn fresh_collision_is_clipped() {
        let events = [event(0.0, 0.0, 0.5, (Car, Car), true)];
        let cfg = RewardConfig {
            base_collision_reward: 3.0,
            ..RewardConfig::default()
        };
        let step = StepContext {
            events: &events,
            ..calm(0.1)
        };
        let r = evaluate(
            &step,
            &mut DiversityLedger::new(),
            &MetricThresholds::default(),
            &cfg,
        );
        assert_eq!(r.collision, 3.0);
        assert_eq!(r.total, 1.0);
    }

    #[test]
    fn evaluate_records_and_peek_does_not() {
        let events = [event(0.0, 0.0, 0.5, (Car, Car), true)];
        let step = StepContext {
            events: &events,
            ..calm(0.1)
        };
        let (th, cfg) = (MetricThresholds::default(), RewardConfig::default());
        let mut ledger = DiversityLedger::new();
        assert_eq!(peek_evaluate(&step, &ledger, &th, &cfg).collision, 1.0);
        assert!(ledger.is_empty());
        assert_eq!(evaluate(&step, &mut ledger, &th, &cfg).collision, 1.0);
        assert_eq!(evaluate(&step, &mut ledger, &th, &cfg).collision, 0.5);
        assert_eq!(peek_evaluate(&step, &ledger, &th, &cfg).collision, 0.25);
        assert_eq!(ledger.total(), 2);
    }

    #[test]
    fn low_sum_clips_to_floor_and_keeps_parts() {
        let cfg = RewardConfig {
            off_network_penalty: -5.0,
            ..RewardConfig::default()
        };
        let step = StepContext {
            left_network: true,
            ..calm(0.1)
        };
        let r = evaluate(
            &step,
            &mut DiversityLedger::new(),
            &MetricThresholds::default(),
            &cfg,
        );
        assert_eq!(r.off_network, -5.0);
        assert_eq!(r.total, -1.0);
    }

    #[test]
    fn discount_examples() {
        assert_eq!(discounted_return(&[1.0, 1.0, 1.0], 0.5), 1.75);
        assert_eq!(discounted_return(&[1.0, 2.0, 3.0], 1.0), 6.0);
        assert_eq!(discounted_return(&[4.0, 2.0, 3.0], 0.0), 4.0);
        assert_eq!(discounted_return(&[], 0.9), 0.0);
    }

    #[test]
    fn ledger_json_round_trip() {
        let mut l = DiversityLedger::new();
        l.record(collision_signature(
            &event(3.0, 4.0, 2.0, (Bicycle, Car), true),
            5.0,
        ));
        l.record(collision_signature(
            &event(30.0, 4.0, 2.0, (Car, Car), true),
            5.0,
        ));
        let text = serde_json::to_string(&l).unwrap();
        assert_eq!(serde_json::from_str::<DiversityLedger>(&text).unwrap(), l);
    }

    #[test]
    fn shared_ledger_counts_every_record() {
        let shared = SharedLedger::default();
        let sig = collision_signature(&event(0.0, 0.0, 0.0, (Car, Car), true), 5.0);
        let priors: Vec<u64> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..8).map(|_| s.spawn(|| shared.record(sig))).collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let mut sorted = priors.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..8).collect::<Vec<_>>());
        assert_eq!(shared.into_inner().count(&sig), 8);
    }

    fn arb_event() -> impl Strategy<Value = CollisionEvent> {
        (
            -50.0..50.0f64,
            -50.0..50.0f64,
            -PI..PI,
            0usize..3,
            0usize..3,
            any::<bool>(),
        )
            .prop_map(|(x, y, r, a, b, t)| {
                event(x, y, r, (VehicleClass::ALL[a], VehicleClass::ALL[b]), t)
            })
    }

    proptest! {
        #[test]
        fn repeated_rewards_never_increase(beta in 0.01..=1.0f64, n in 1usize..12) {
            let cfg = RewardConfig { diversity_decay: beta, ..RewardConfig::default() };
            let mut ledger = DiversityLedger::new();
            let e = event(0.0, 0.0, 0.0, (Car, Car), true);
            let r: Vec<f64> = (0..n).map(|_| collision_reward(&e, &mut ledger, &cfg)).collect();
            prop_assert!(r.windows(2).all(|w| w[1] <= w[0]));
        }

        #[test]
        fn final_counts_ignore_order(events in proptest::collection::vec(arb_event(), 0..30), seed in any::<u64>()) {
            let cfg = RewardConfig::default();
            let mut a = DiversityLedger::new();
            for e in &events { collision_reward(e, &mut a, &cfg); }
            let mut shuffled = events.clone();
            let mut rng = crate::simcore::SimRng::new(seed);
            for i in (1..shuffled.len()).rev() {
                let j = rng.below(i as u64 + 1) as usize;
                shuffled.swap(i, j);
            }
            let mut b = DiversityLedger::new();
            for e in &shuffled { collision_reward(e, &mut b, &cfg); }
            prop_assert_eq!(a, b);
        }

        #[test]
        fn total_within_clip(accel in -9.0..4.0f64, steer in -0.5..0.5f64, d in -3.0..3.0f64,
                             ttc in -1.0..=0.0f64, drac in -50.0..=0.0f64, collide in any::<bool>(), off in any::<bool>()) {
            let events = [event(0.0, 0.0, 0.5, (Car, Car), true)];
            let step = StepContext {
                sample: Some(StepSample { prev_speed: 10.0, speed: 9.0, accel, steer, lateral_offset: d, lane_width: 3.5, wheelbase: 2.7 }),
                control: ControlInput::new(steer, accel),
                events: if collide { &events } else { &[] },
                naturalistic: NaturalisticCost { ttc_cost: ttc, drac_cost: drac },
                left_network: off,
                dt: 0.1,
            };
            let cfg = RewardConfig::default();
            let r = evaluate(&step, &mut DiversityLedger::new(), &MetricThresholds::default(), &cfg);
            prop_assert!(r.total >= cfg.clip[0] && r.total <= cfg.clip[1]);
            prop_assert!(r.collision >= 0.0);
            prop_assert!(r.rationality <= 0.0 && r.naturalistic <= 0.0 && r.off_network <= 0.0);
        }

        #[test]
        fn discounting_is_linear(r in proptest::collection::vec(-1.0..1.0f64, 0..50),
                                 s in proptest::collection::vec(-1.0..1.0f64, 50), k in -3.0..3.0f64, g in 0.0..=1.0f64) {
            let s = &s[..r.len()];
            let mix: Vec<f64> = r.iter().zip(s).map(|(a, b)| a + k * b).collect();
            let lhs = discounted_return(&mix, g);
            let rhs = discounted_return(&r, g) + k * discounted_return(s, g);
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }
}
