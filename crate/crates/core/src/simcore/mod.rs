//! Microscopic traffic simulator with cheap snapshots.
//!
//! A [`WorldState`] owns every agent, the pending departures, the collision
//! log and the PRNG. Static data (network, conflict zones, parameters) sits
//! behind an `Arc` so cloning a world is a snapshot.

mod collision;
mod conflicts;
mod policy;
mod rng;
mod spawn;

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{
    bicycle_step, ControlInput, IdmParams, LaneKeepingGains, VehicleClass, VehicleSpec,
    VehicleState,
};
use crate::geometry::{OrientedRect, Vec2};
use crate::netmodel::{LaneIdx, RoadNetwork};

pub use collision::{detect_overlap_groups, Body, CollisionEvent, OverlapGroup};
pub use conflicts::{ConflictMap, ConflictParams, ConflictZone, ZoneId};
pub use rng::SimRng;
pub use spawn::{default_idm, spawn_traffic, ClassMix, FlowConfig, RoutePolicy, SpawnError};

pub type AgentId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    pub dt: f64,
    pub capture_radius: f64,
    /// Crossing agents closer than this (in seconds) block a zone grant.
    pub gap_acceptance_time: f64,
    /// How far ahead leaders, zones and curves are scanned, m.
    pub lookahead: f64,
    pub collision_linger_steps: u64,
    pub lane_keeping: LaneKeepingGains,
    /// Zones are requested once inside `v^2 / (2 * request_decel) + request_margin`.
    pub request_decel: f64,
    pub request_margin: f64,
    /// Zones along a route separated by less than this are requested together.
    pub zone_group_gap: f64,
    /// Deceleration a crossing agent is assumed to manage when yielding.
    pub yield_decel: f64,
    /// Lateral acceleration background drivers accept in curves.
    pub curve_lat_accel: f64,
    pub zone_sample_step: f64,
    pub zone_lateral_margin: f64,
    pub zone_longitudinal_margin: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            capture_radius: crate::netmodel::DEFAULT_CAPTURE_RADIUS,
            gap_acceptance_time: 4.0,
            lookahead: 100.0,
            collision_linger_steps: 0,
            lane_keeping: LaneKeepingGains::default(),
            request_decel: 2.5,
            request_margin: 12.0,
            zone_group_gap: 3.0,
            yield_decel: 3.0,
            curve_lat_accel: 2.0,
            zone_sample_step: 0.5,
            zone_lateral_margin: 0.15,
            zone_longitudinal_margin: 0.5,
        }
    }
}

/// Immutable data shared by every world derived from one network.
#[derive(Debug)]
pub struct SimContext {
    network: RoadNetwork,
    conflicts: ConflictMap,
    params: SimParams,
    specs: BTreeMap<VehicleClass, VehicleSpec>,
    idm: BTreeMap<VehicleClass, IdmParams>,
    lane_max_curvature: Vec<f64>,
    /// Lanes sharing a predecessor with each lane.
    siblings: Vec<Vec<LaneIdx>>,
    /// Lanes on junction-internal edges (ids starting with ':') yield to
    /// traffic on ordinary lanes.
    internal: Vec<bool>,
}

impl SimContext {
    /// `specs` gives the footprint of each class; the largest sizes the
    /// conflict zones.
    pub fn new(
        network: RoadNetwork,
        params: SimParams,
        specs: BTreeMap<VehicleClass, VehicleSpec>,
    ) -> Self {
        let length = specs.values().map(|s| s.length).fold(0.0, f64::max);
        let width = specs.values().map(|s| s.width).fold(0.0, f64::max);
        let conflicts = ConflictMap::build(
            &network,
            &ConflictParams {
                sample_step: params.zone_sample_step,
                vehicle_length: length,
                vehicle_width: width,
                lateral_margin: params.zone_lateral_margin,
                longitudinal_margin: params.zone_longitudinal_margin,
            },
        );
        let lane_max_curvature = network
            .lane_indices()
            .map(|l| {
                let lane = network.lane(l);
                let n = (lane.length() / 1.0).ceil() as usize;
                (0..=n)
                    .map(|k| lane.curvature_at((k as f64).min(lane.length())).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        let siblings = network
            .lane_indices()
            .map(|l| {
                let mut out: Vec<LaneIdx> = network
                    .predecessors(l)
                    .iter()
                    .flat_map(|p| network.successors(*p).iter().copied())
                    .filter(|s| *s != l)
                    .collect();
                out.sort_unstable();
                out.dedup();
                out
            })
            .collect();
        let internal = network
            .lane_indices()
            .map(|l| network.lane_edge(l).id.starts_with(':'))
            .collect();
        Self {
            network,
            conflicts,
            params,
            specs,
            idm: BTreeMap::new(),
            lane_max_curvature,
            siblings,
            internal,
        }
    }

    /// Context using the default class footprints.
    pub fn with_defaults(network: RoadNetwork, params: SimParams) -> Self {
        let specs = VehicleClass::ALL
            .iter()
            .map(|c| (*c, VehicleSpec::default_for(*c)))
            .collect();
        Self::new(network, params, specs)
    }

    /// Replaces the per-class driver parameters used for spawned traffic.
    pub fn with_idm(mut self, idm: BTreeMap<VehicleClass, IdmParams>) -> Self {
        self.idm = idm;
        self
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.network
    }

    pub fn idm(&self, class: VehicleClass) -> IdmParams {
        self.idm
            .get(&class)
            .copied()
            .unwrap_or_else(|| spawn::default_idm(class))
    }

    pub fn conflicts(&self) -> &ConflictMap {
        &self.conflicts
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn spec(&self, class: VehicleClass) -> VehicleSpec {
        self.specs
            .get(&class)
            .copied()
            .unwrap_or_else(|| VehicleSpec::default_for(class))
    }

    pub fn max_vehicle_length(&self) -> f64 {
        self.specs.values().map(|s| s.length).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Agent {
    pub id: AgentId,
    pub spec: VehicleSpec,
    pub state: VehicleState,
    pub idm: IdmParams,
    pub route: Vec<LaneIdx>,
    pub route_pos: usize,
    /// Conflict zones currently reserved, sorted.
    pub held: Vec<ZoneId>,
    pub off_network: bool,
    pub exited: bool,
    pub collided_at: Option<u64>,
}

impl Agent {
    pub fn rect(&self) -> OrientedRect {
        OrientedRect::new(
            self.state.position,
            self.state.heading,
            self.spec.length,
            self.spec.width,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PendingVehicle {
    pub id: AgentId,
    pub spec: VehicleSpec,
    pub idm: IdmParams,
    pub route: Vec<LaneIdx>,
    pub depart_step: u64,
}

/// A follower behind a leader on its route. `gap` is bumper to bumper and
/// may be non-positive when the two overlap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowingPair {
    pub leader: AgentId,
    pub follower: AgentId,
    pub gap: f64,
    pub leader_speed: f64,
    pub follower_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalStatus {
    Running,
    CollisionTarget,
    HorizonReached,
    TargetOffNetwork,
}

impl TerminalStatus {
    pub fn is_terminal(self) -> bool {
        self != TerminalStatus::Running
    }
}

/// One row of the trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub time: f64,
    pub agent_id: AgentId,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub accel: f64,
    pub steer: f64,
    pub lane_id: String,
    pub s: f64,
    pub d: f64,
}

pub const TRAJECTORY_HEADER: &str = "time,agent_id,x,y,heading,speed,accel,steer,lane_id,s,d";

pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.time, r.agent_id, r.x, r.y, r.heading, r.speed, r.accel, r.steer, r.lane_id, r.s, r.d
        )?;
    }
    Ok(())
}

/// Effects of one step that callers may want without diffing worlds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutcome {
    /// Indices into the collision log of events raised by this step.
    pub new_events: std::ops::Range<usize>,
    pub despawned: Vec<AgentId>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WorldState {
    #[serde(skip)]
    ctx: Arc<SimContext>,
    step_count: u64,
    root_step: u64,
    agents: BTreeMap<AgentId, Agent>,
    pending: VecDeque<PendingVehicle>,
    target: Option<AgentId>,
    rng: SimRng,
    collision_log: Vec<CollisionEvent>,
    target_off_network: bool,
}

impl PartialEq for WorldState {
    fn eq(&self, o: &Self) -> bool {
        Arc::ptr_eq(&self.ctx, &o.ctx)
            && self.step_count == o.step_count
            && self.root_step == o.root_step
            && self.agents == o.agents
            && self.pending == o.pending
            && self.target == o.target
            && self.rng == o.rng
            && self.collision_log == o.collision_log
            && self.target_off_network == o.target_off_network
    }
}

/// Deep copy of a world.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot(WorldState);

impl Snapshot {
    pub fn restore(&self) -> WorldState {
        self.0.clone()
    }

    pub fn world(&self) -> &WorldState {
        &self.0
    }
}

impl WorldState {
    /// Empty world at step zero.
    pub fn new(ctx: Arc<SimContext>, seed: u64) -> Self {
        Self {
            ctx,
            step_count: 0,
            root_step: 0,
            agents: BTreeMap::new(),
            pending: VecDeque::new(),
            target: None,
            rng: SimRng::new(seed),
            collision_log: Vec::new(),
            target_off_network: false,
        }
    }

    pub fn context(&self) -> &Arc<SimContext> {
        &self.ctx
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.ctx.network
    }

    pub fn params(&self) -> &SimParams {
        &self.ctx.params
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn time(&self) -> f64 {
        self.step_count as f64 * self.ctx.params.dt
    }

    pub fn steps_since_root(&self) -> u64 {
        self.step_count - self.root_step
    }

    /// Makes the current step the origin for horizon accounting.
    pub fn mark_root(&mut self) {
        self.root_step = self.step_count;
    }

    pub fn agents(&self) -> impl Iterator<Item = &Agent> {
        self.agents.values()
    }

    pub fn agent(&self, id: AgentId) -> Option<&Agent> {
        self.agents.get(&id)
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn pending(&self) -> impl Iterator<Item = &PendingVehicle> {
        self.pending.iter()
    }

    pub fn target_id(&self) -> Option<AgentId> {
        self.target
    }

    pub fn target(&self) -> Option<&Agent> {
        self.target.and_then(|t| self.agents.get(&t))
    }

    pub fn set_target(&mut self, id: AgentId) {
        assert!(self.agents.contains_key(&id), "unknown agent {id}");
        self.target = Some(id);
    }

    pub fn rng(&self) -> &SimRng {
        &self.rng
    }

    pub fn collision_log(&self) -> &[CollisionEvent] {
        &self.collision_log
    }

    pub fn target_off_network(&self) -> bool {
        self.target_off_network
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot(self.clone())
    }

    /// SHA-256 over the canonical JSON form of every dynamic field.
    pub fn state_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("world serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Places an agent directly (no gap checks). Pose fields are derived
    /// from `state.position` and the first route lane.
    pub fn insert_agent(
        &mut self,
        spec: VehicleSpec,
        idm: IdmParams,
        route: Vec<LaneIdx>,
        mut state: VehicleState,
    ) -> AgentId {
        assert!(!route.is_empty(), "route must name at least one lane");
        let id = self.next_agent_id();
        let lane = self.ctx.network.lane(route[0]);
        let proj = lane.project(state.position);
        state.lane = route[0];
        state.s = proj.s;
        state.d = proj.d;
        self.agents.insert(
            id,
            Agent {
                id,
                spec,
                state,
                idm,
                route,
                route_pos: 0,
                held: Vec::new(),
                off_network: false,
                exited: false,
                collided_at: None,
            },
        );
        id
    }

    fn next_agent_id(&self) -> AgentId {
        let a = self.agents.keys().next_back().map_or(0, |k| k + 1);
        let p = self.pending.iter().map(|p| p.id + 1).max().unwrap_or(0);
        a.max(p)
    }

    /// Queues a departure; the vehicle enters once its first lane has room.
    pub fn schedule(
        &mut self,
        spec: VehicleSpec,
        idm: IdmParams,
        route: Vec<LaneIdx>,
        depart_step: u64,
    ) -> AgentId {
        assert!(!route.is_empty(), "route must name at least one lane");
        let id = self.next_agent_id();
        let pos = self
            .pending
            .partition_point(|p| p.depart_step <= depart_step);
        self.pending.insert(
            pos,
            PendingVehicle {
                id,
                spec,
                idm,
                route,
                depart_step,
            },
        );
        id
    }

    pub fn is_terminal(&self, horizon: u64) -> TerminalStatus {
        if self.collision_log.iter().any(|e| e.target_involved) {
            TerminalStatus::CollisionTarget
        } else if self.target_off_network {
            TerminalStatus::TargetOffNetwork
        } else if self.steps_since_root() >= horizon {
            TerminalStatus::HorizonReached
        } else {
            TerminalStatus::Running
        }
    }

    /// Car-following pairs that involve agent `id`: its own leader and every
    /// agent that has `id` as its leader. Sorted by (leader, follower).
    pub fn following_pairs(&self, id: AgentId) -> Vec<FollowingPair> {
        let pair = |follower: &Agent, leader: AgentId, gap: f64| FollowingPair {
            leader,
            follower: follower.id,
            gap,
            leader_speed: self.agents[&leader].state.speed,
            follower_speed: follower.state.speed,
        };
        let mut out = Vec::new();
        let Some(me) = self.agents.get(&id) else {
            return out;
        };
        if let Some((leader, gap)) = policy::leader_of(self, id) {
            out.push(pair(me, leader, gap));
        }
        let reach = self.ctx.params.lookahead + self.ctx.max_vehicle_length();
        let near = |a: &&Agent| a.id != id && a.state.position.distance(me.state.position) <= reach;
        for other in self.agents.values().filter(near) {
            if let Some((leader, gap)) = policy::leader_of(self, other.id) {
                if leader == id {
                    out.push(pair(other, id, gap));
                }
            }
        }
        out.sort_by_key(|p| (p.leader, p.follower));
        out
    }

    /// Background control law for agent `id`.
    pub fn default_policy(&self, id: AgentId) -> ControlInput {
        policy::default_policy(self, id)
    }

    /// Advances one step; the target follows `target_control` and everyone
    /// else the default policy.
    pub fn step(&mut self, target_control: ControlInput) -> StepOutcome {
        self.step_with(Some(target_control))
    }

    /// Advances one step with every agent, the target included, on the
    /// default policy.
    pub fn step_default(&mut self) -> StepOutcome {
        self.step_with(None)
    }

    fn step_with(&mut self, target_control: Option<ControlInput>) -> StepOutcome {
        let ctx = Arc::clone(&self.ctx);
        let dt = ctx.params.dt;
        let controls: Vec<(AgentId, ControlInput)> = self
            .agents
            .keys()
            .map(|&id| match target_control {
                Some(u) if Some(id) == self.target => (id, u),
                _ => (id, policy::default_policy(self, id)),
            })
            .collect();
        for (id, u) in controls {
            let agent = self.agents.get_mut(&id).expect("agent exists");
            agent.state = bicycle_step(&agent.state, &agent.spec, u, dt);
            let is_target = Some(id) == self.target;
            refresh_pose(&ctx, agent, is_target);
        }
        self.step_count += 1;

        self.insert_due();

        let before = self.collision_log.len();
        self.log_collisions();

        let mut despawned = Vec::new();
        let linger = ctx.params.collision_linger_steps;
        let step = self.step_count;
        let target = self.target;
        self.agents.retain(|id, a| {
            if Some(*id) == target {
                return true;
            }
            let collided = a.collided_at.is_some_and(|c| c + linger <= step);
            let keep = !(a.exited || a.off_network || collided);
            if !keep {
                despawned.push(*id);
            }
            keep
        });
        if let Some(t) = self.target() {
            if t.off_network || t.exited {
                self.target_off_network = true;
            }
        }

        policy::update_locks(self);

        StepOutcome {
            new_events: before..self.collision_log.len(),
            despawned,
        }
    }

    fn insert_due(&mut self) {
        let mut deferred = Vec::new();
        while self
            .pending
            .front()
            .is_some_and(|p| p.depart_step <= self.step_count)
        {
            let p = self.pending.pop_front().expect("front exists");
            let speed_draw = self.rng.next_f64();
            if !self.try_insert(&p, speed_draw) {
                deferred.push(p);
            }
        }
        for p in deferred.into_iter().rev() {
            self.pending.push_front(p);
        }
    }

    /// Inserts at the start of the first route lane if the gap to the
    /// nearest vehicle ahead allows `s0 + v * T_h`.
    fn try_insert(&mut self, p: &PendingVehicle, speed_draw: f64) -> bool {
        let net = &self.ctx.network;
        let lane = net.lane(p.route[0]);
        let s = 0.5 * p.spec.length + 0.1;
        let v0 = p.idm.desired_speed.min(lane.speed_limit);
        let mut speed = v0 * (0.6 + 0.4 * speed_draw);
        let position = lane.point_at(s, 0.0);
        let heading = lane.heading_at(s);
        let body = OrientedRect::new(position, heading, p.spec.length + 1.0, p.spec.width + 0.5);

        let mut gap_ahead = f64::INFINITY;
        for b in self.agents.values() {
            if body.overlaps(&b.rect()) {
                return false;
            }
            let mut offset = -s;
            for (k, l) in p.route.iter().enumerate() {
                if offset > self.ctx.params.lookahead {
                    break;
                }
                if *l == b.state.lane {
                    let dist = offset + b.state.s;
                    if dist > 0.0 {
                        gap_ahead = gap_ahead.min(dist - 0.5 * (p.spec.length + b.spec.length));
                    }
                    break;
                }
                if k + 1 < p.route.len() {
                    offset += net.lane(*l).length();
                }
            }
        }
        if gap_ahead.is_finite() {
            let room = gap_ahead - p.idm.min_gap;
            if room < 0.0 {
                return false;
            }
            speed = speed.min(room / p.idm.time_headway);
        }
        let state = VehicleState {
            position,
            heading,
            speed,
            accel: 0.0,
            steer: 0.0,
            lane: p.route[0],
            s,
            d: 0.0,
            odometer: 0.0,
        };
        self.agents.insert(
            p.id,
            Agent {
                id: p.id,
                spec: p.spec,
                state,
                idm: p.idm,
                route: p.route.clone(),
                route_pos: 0,
                held: Vec::new(),
                off_network: false,
                exited: false,
                collided_at: None,
            },
        );
        true
    }

    /// Current overlaps, one event per connected group.
    pub fn detect_collisions(&self) -> Vec<CollisionEvent> {
        let bodies: Vec<Body> = self
            .agents
            .values()
            .map(|a| Body {
                id: a.id,
                rect: a.rect(),
                class: a.spec.vehicle_class,
            })
            .collect();
        let cell = self.ctx.max_vehicle_length().max(1.0);
        detect_overlap_groups(&bodies, cell)
            .into_iter()
            .map(|g| {
                CollisionEvent::from_group(&g, &bodies, self.target, self.step_count, self.time())
            })
            .collect()
    }

    fn log_collisions(&mut self) {
        for event in self.detect_collisions() {
            let fresh = event
                .participants
                .iter()
                .any(|id| self.agents[id].collided_at.is_none());
            if !fresh {
                continue;
            }
            for id in &event.participants {
                let a = self.agents.get_mut(id).expect("participant exists");
                a.collided_at.get_or_insert(self.step_count);
            }
            self.collision_log.push(event);
        }
    }

    pub fn trajectory_rows(&self) -> Vec<TrajectoryRow> {
        let t = self.time();
        self.agents
            .values()
            .map(|a| TrajectoryRow {
                time: t,
                agent_id: a.id,
                x: a.state.position.x,
                y: a.state.position.y,
                heading: a.state.heading,
                speed: a.state.speed,
                accel: a.state.accel,
                steer: a.state.steer,
                lane_id: self.ctx.network.lane(a.state.lane).id.clone(),
                s: a.state.s,
                d: a.state.d,
            })
            .collect()
    }

    pub(crate) fn agents_map(&self) -> &BTreeMap<AgentId, Agent> {
        &self.agents
    }

    pub(crate) fn agents_map_mut(&mut self) -> &mut BTreeMap<AgentId, Agent> {
        &mut self.agents
    }

    pub(crate) fn rng_mut(&mut self) -> &mut SimRng {
        &mut self.rng
    }
}

/// Follows the first successor from `lane` until a sink or `max_len` lanes.
pub fn greedy_route(net: &RoadNetwork, lane: LaneIdx, max_len: usize) -> Vec<LaneIdx> {
    let mut route = vec![lane];
    while route.len() < max_len {
        match net.successors(*route.last().expect("non-empty")).first() {
            Some(next) if !route.contains(next) => route.push(*next),
            _ => break,
        }
    }
    route
}

/// Re-derives lane, arclength and offset after a move.
fn refresh_pose(ctx: &SimContext, agent: &mut Agent, is_target: bool) {
    let net = &ctx.network;
    let p = agent.state.position;
    let pos = agent.route_pos;
    let cur = net.lane(agent.route[pos]);
    let mut best = (pos, cur.project_near(p, agent.state.s, 10.0));
    let mut at_end = best.1.s >= cur.length() - 1e-9;
    let mut k = pos + 1;
    while at_end && k < agent.route.len() && k <= pos + 3 {
        let lane = net.lane(agent.route[k]);
        let proj = lane.project_near(p, 0.0, 10.0);
        if proj.distance <= best.1.distance + 1e-9 {
            best = (k, proj);
        }
        at_end = proj.s >= lane.length() - 1e-9;
        k += 1;
    }
    let (k, proj) = best;
    agent.route_pos = k;
    agent.state.lane = agent.route[k];
    agent.state.s = proj.s;
    agent.state.d = proj.d;

    let lane = net.lane(agent.state.lane);
    if k + 1 == agent.route.len() && proj.s >= lane.length() - 1e-9 {
        let end = lane.point_at(lane.length(), 0.0);
        let along = (p - end).dot(Vec2::from_heading(lane.heading_at(lane.length())));
        if along > 0.5 * agent.spec.length {
            agent.exited = true;
            return;
        }
    }

    if is_target {
        if proj.d.abs() > 0.5 * lane.width {
            match net.locate_on_lane(p, agent.state.heading, ctx.params.capture_radius) {
                Ok(loc) => {
                    if loc.lane != agent.state.lane {
                        agent.route = greedy_route(net, loc.lane, 64);
                        agent.route_pos = 0;
                        agent.state.lane = loc.lane;
                    }
                    agent.state.s = loc.s;
                    agent.state.d = loc.d;
                }
                Err(_) => agent.off_network = true,
            }
        }
    } else if proj.distance > ctx.params.capture_radius {
        agent.off_network = true;
    }
}

#[cfg(test)]
mod tests;
