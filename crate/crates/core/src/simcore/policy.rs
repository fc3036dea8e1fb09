//! Background driver: IDM car following, lane keeping, curve speed
//! adaptation and conflict-zone reservations at junctions.

use super::{Agent, AgentId, SimContext, WorldState, ZoneId};
use crate::dynamics::{idm_acceleration, lane_keeping_steer, ControlInput};
use crate::geometry::wrap_angle;
use crate::netmodel::{LaneIdx, RoadNetwork};

/// A lane on an agent's route with the signed distance from the agent's
/// center to that lane's start.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RouteLane {
    pub route_index: usize,
    pub lane: LaneIdx,
    pub offset: f64,
}

/// Route lanes from the previous one up to `ahead` metres in front.
pub(crate) fn route_window(net: &RoadNetwork, agent: &Agent, ahead: f64) -> Vec<RouteLane> {
    let pos = agent.route_pos;
    let mut out = Vec::new();
    if pos > 0 {
        let prev = agent.route[pos - 1];
        out.push(RouteLane {
            route_index: pos - 1,
            lane: prev,
            offset: -agent.state.s - net.lane(prev).length(),
        });
    }
    let mut offset = -agent.state.s;
    for k in pos..agent.route.len() {
        if offset > ahead {
            break;
        }
        let lane = agent.route[k];
        out.push(RouteLane {
            route_index: k,
            lane,
            offset,
        });
        offset += net.lane(lane).length();
    }
    out
}

/// Distances from the agent's center to the start and end of a zone, if the
/// zone lies on the window.
fn zone_span(window: &[RouteLane], zone: &super::ConflictZone) -> Option<(f64, f64)> {
    window
        .iter()
        .find(|w| w.lane == zone.lane)
        .map(|w| (w.offset + zone.start, w.offset + zone.end))
}

/// Vehicles ahead on the route, with the route distance to their centers.
/// Vehicles that just took a sibling branch of a fork count too, since
/// they still share the road near the fork.
fn ahead_on_path<'a>(
    world: &'a WorldState,
    agent: &'a Agent,
    window: &'a [RouteLane],
) -> impl Iterator<Item = (f64, &'a Agent)> + 'a {
    const FORK_REACH: f64 = 15.0;
    let siblings = &world.context().siblings;
    world
        .agents_map()
        .values()
        .filter(move |b| b.id != agent.id)
        .filter_map(move |b| {
            window
                .iter()
                .filter(|w| w.route_index >= agent.route_pos)
                .find(|w| {
                    w.lane == b.state.lane
                        || (b.state.s < FORK_REACH
                            && siblings[w.lane.index()].contains(&b.state.lane))
                })
                .map(|w| (w.offset + b.state.s, b))
                .filter(|(dist, _)| *dist > 0.0)
        })
}

/// Nearest vehicle ahead on the route by bumper gap.
fn leader<'a>(
    world: &'a WorldState,
    agent: &'a Agent,
    window: &'a [RouteLane],
) -> Option<(f64, &'a Agent)> {
    let mut best: Option<(f64, &Agent)> = None;
    for (dist, other) in ahead_on_path(world, agent, window) {
        let lateral = (other.state.d - agent.state.d).abs();
        if other.state.lane == agent.state.lane
            && lateral > 0.5 * (agent.spec.width + other.spec.width) + 0.3
        {
            continue;
        }
        let gap = dist - 0.5 * (agent.spec.length + other.spec.length);
        if best.is_none_or(|(g, b)| gap < g || (gap == g && other.id < b.id)) {
            best = Some((gap, other));
        }
    }
    best
}

/// The leader of agent `id` within the lookahead: (leader id, bumper gap).
pub(crate) fn leader_of(world: &WorldState, id: AgentId) -> Option<(AgentId, f64)> {
    let agent = world.agents_map().get(&id)?;
    if agent.off_network {
        return None;
    }
    let lookahead = world.params().lookahead;
    let window = route_window(world.network(), agent, lookahead);
    leader(world, agent, &window)
        .filter(|(gap, _)| *gap <= lookahead)
        .map(|(gap, b)| (b.id, gap))
}

/// Nearest vehicle ahead on the route: distance to its center and the
/// vehicle itself.
fn nearest_ahead<'a>(
    world: &'a WorldState,
    agent: &'a Agent,
    window: &'a [RouteLane],
) -> Option<(f64, &'a Agent)> {
    ahead_on_path(world, agent, window).min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)))
}

/// Distance to the first reserved-by-someone-else point ahead: the start of
/// the nearest zone this agent does not hold.
fn stop_distance(world: &WorldState, agent: &Agent, window: &[RouteLane]) -> Option<f64> {
    let conflicts = world.context().conflicts();
    let mut best: Option<f64> = None;
    for w in window {
        for z in conflicts.on_lane(w.lane) {
            if agent.held.binary_search(z).is_ok() {
                continue;
            }
            let zone = conflicts.zone(*z);
            let start = w.offset + zone.start;
            // Already committed once the center is at the line.
            if start < 0.1 {
                continue;
            }
            if best.is_none_or(|b| start < b) {
                best = Some(start);
            }
        }
    }
    best
}

/// Free-road target speed, lowered ahead of tight curves so that the
/// driver can slow down at `comfort_decel` before reaching them.
fn curve_speed(world: &WorldState, agent: &Agent, window: &[RouteLane]) -> f64 {
    let ctx = world.context();
    let a_lat = ctx.params().curve_lat_accel;
    let b = agent.idm.comfort_decel;
    let mut v = f64::INFINITY;
    for w in window.iter().filter(|w| w.route_index >= agent.route_pos) {
        let k = ctx.lane_max_curvature[w.lane.index()];
        if k < 1e-6 {
            continue;
        }
        let v_curve = (a_lat / k).sqrt();
        let dist = w.offset.max(0.0);
        v = v.min((v_curve * v_curve + 2.0 * b * dist).sqrt());
    }
    v
}

pub(crate) fn default_policy(world: &WorldState, id: AgentId) -> ControlInput {
    let agent = &world.agents_map()[&id];
    let spec = &agent.spec;
    if agent.off_network {
        return ControlInput::new(0.0, -spec.max_decel);
    }
    let ctx = world.context();
    let net = ctx.network();
    let params = ctx.params();
    let lane = net.lane(agent.state.lane);
    let window = route_window(net, agent, params.lookahead);

    let v = agent.state.speed;
    let limit = lane
        .speed_limit
        .min(curve_speed(world, agent, &window))
        .max(0.5);
    let idm = agent.idm.capped(limit);
    let idm_at = |gap: f64, closing: f64| {
        idm_acceleration(&idm, v, gap, closing, spec.max_decel).unwrap_or(-spec.max_decel)
    };

    let mut accel = idm_at(f64::INFINITY, 0.0);
    if let Some((gap, b)) = leader(world, agent, &window) {
        accel = accel.min(idm_at(gap, v - b.state.speed));
    }
    if let Some(dist) = stop_distance(world, agent, &window) {
        accel = accel.min(idm_at(dist, v));
    }

    let heading_error = wrap_angle(lane.heading_at(agent.state.s) - agent.state.heading);
    let preview = agent.state.s + 0.3 * v;
    let curvature = if preview <= lane.length() {
        lane.curvature_at(preview)
    } else {
        match agent.route.get(agent.route_pos + 1) {
            Some(next) => net.lane(*next).curvature_at(preview - lane.length()),
            None => lane.curvature_at(lane.length()),
        }
    };
    let steer = lane_keeping_steer(
        spec,
        &params.lane_keeping,
        v,
        heading_error,
        agent.state.d,
        curvature,
    );
    ControlInput::new(steer, accel)
}

/// Leaders slower than this are treated as not freeing space soon.
const STALLED_SPEED: f64 = 3.0;

/// How far the agent's center can advance before reaching a standstill gap
/// behind the vehicle ahead.
fn room_behind(agent: &Agent, dist: f64, ahead: &Agent) -> f64 {
    dist - 0.5 * (agent.spec.length + ahead.spec.length) - agent.idm.min_gap
}

/// Releases zones that agents have cleared, then grants new reservations in
/// order of proximity. A request covers every zone of one junction pass and
/// is granted whole or not at all.
pub(crate) fn update_locks(world: &mut WorldState) {
    let ctx = std::sync::Arc::clone(world.context());
    let net = ctx.network();
    let conflicts = ctx.conflicts();
    let params = *ctx.params();

    let windows: Vec<(AgentId, Vec<RouteLane>)> = world
        .agents_map()
        .values()
        .map(|a| {
            let reach = a.state.speed * a.state.speed / (2.0 * params.request_decel)
                + params.request_margin;
            (
                a.id,
                route_window(net, a, reach + 2.0 * params.lookahead.min(60.0)),
            )
        })
        .collect();

    // Drop zones already cleared, zones not yet entered that lie beyond a
    // vehicle ahead (it has to pass first), and zones not yet entered when a
    // stalled leader leaves no room past them and the agent can still stop.
    for (id, window) in &windows {
        let agent = &world.agents_map()[id];
        let ahead = nearest_ahead(world, agent, window);
        let v = agent.state.speed;
        let stopping = v * v / (2.0 * params.yield_decel) + 0.5;
        let pending: Vec<(f64, f64)> = agent
            .held
            .iter()
            .filter(|z| priority(&ctx, **z) != Priority::Major)
            .filter_map(|z| zone_span(window, conflicts.zone(*z)))
            .filter(|(start, _)| *start > 0.0)
            .collect();
        let stalled = match ahead {
            Some((dist, b)) if !pending.is_empty() => {
                let last_end = pending.iter().map(|(_, e)| *e).fold(0.0, f64::max);
                let first = pending
                    .iter()
                    .map(|(s, _)| *s)
                    .fold(f64::INFINITY, f64::min);
                b.state.speed < STALLED_SPEED
                    && room_behind(agent, dist, b) < last_end
                    && first >= stopping
            }
            _ => false,
        };
        let ahead = ahead.map_or(f64::INFINITY, |(d, _)| d);
        let agent = world.agents_map_mut().get_mut(id).expect("agent exists");
        agent.held.retain(|z| {
            zone_span(window, conflicts.zone(*z)).is_some_and(|(start, end)| {
                end > 0.0 && (start <= 0.0 || (start < ahead && !stalled))
            })
        });
    }

    let mut holder: Vec<Option<AgentId>> = vec![None; conflicts.len()];
    for a in world.agents_map().values() {
        for z in &a.held {
            holder[z.0 as usize] = Some(a.id);
        }
    }

    let mut requests: Vec<(f64, AgentId, Vec<ZoneId>)> = Vec::new();
    for (id, window) in &windows {
        let agent = &world.agents_map()[id];
        if agent.off_network {
            continue;
        }
        let reach = agent.state.speed * agent.state.speed / (2.0 * params.request_decel)
            + params.request_margin;
        let mut wanted: Vec<(f64, ZoneId)> = Vec::new();
        for w in window {
            for z in conflicts.on_lane(w.lane) {
                let zone = conflicts.zone(*z);
                let (start, end) = (w.offset + zone.start, w.offset + zone.end);
                if end <= 0.0 || agent.held.binary_search(z).is_ok() {
                    continue;
                }
                wanted.push((start, *z));
            }
        }
        wanted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let Some(&(first, _)) = wanted.first() else {
            continue;
        };
        if first > reach {
            continue;
        }
        // Queue discipline: whoever is ahead on the same path reserves first.
        // Chain zones whose spans overlap or nearly touch into one request.
        let mut zones: Vec<(f64, ZoneId)> = Vec::new();
        let mut group_end = f64::NEG_INFINITY;
        for (start, z) in &wanted {
            if !zones.is_empty() && *start > group_end + params.zone_group_gap {
                break;
            }
            let end = zone_span(window, conflicts.zone(*z)).map_or(*start, |(_, e)| e);
            group_end = group_end.max(end);
            zones.push((*start, *z));
        }
        if let Some((dist, b)) = nearest_ahead(world, agent, window) {
            // Whoever is ahead on the same path reserves first.
            if dist < first {
                continue;
            }
            // Keep clear: do not enter unless there is room behind a
            // stationary leader beyond the last zone.
            let last_end = zones
                .iter()
                .map(|(_, z)| zone_span(window, conflicts.zone(*z)).map_or(0.0, |(_, e)| e))
                .fold(0.0, f64::max);
            let major = zones
                .iter()
                .all(|(_, z)| priority(&ctx, *z) == Priority::Major);
            if !major && b.state.speed < STALLED_SPEED && room_behind(agent, dist, b) < last_end {
                continue;
            }
        }
        let zones = zones.into_iter().map(|(_, z)| z).collect();
        requests.push((first.max(0.0), *id, zones));
    }
    requests.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    for (_, id, zones) in requests {
        let granted = zones
            .iter()
            .all(|z| grantable(world, &windows, &holder, id, *z));
        if granted {
            for z in &zones {
                holder[z.0 as usize] = Some(id);
            }
            let agent = world.agents_map_mut().get_mut(&id).expect("agent exists");
            agent.held.extend(zones);
            agent.held.sort_unstable();
            agent.held.dedup();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Priority {
    Major,
    Minor,
    Equal,
}

/// Junction connectors give way to through lanes they cut across.
fn priority(ctx: &SimContext, zone: ZoneId) -> Priority {
    let conflicts = ctx.conflicts();
    let own = ctx.internal[conflicts.zone(zone).lane.index()];
    let other = ctx.internal[conflicts.zone(conflicts.zone(zone).twin).lane.index()];
    match (own, other) {
        (true, false) => Priority::Minor,
        (false, true) => Priority::Major,
        _ => Priority::Equal,
    }
}

fn grantable(
    world: &WorldState,
    windows: &[(AgentId, Vec<RouteLane>)],
    holder: &[Option<AgentId>],
    id: AgentId,
    zone: ZoneId,
) -> bool {
    let ctx = world.context();
    let conflicts = ctx.conflicts();
    let params = ctx.params();
    let twin_id = conflicts.zone(zone).twin;
    if holder[twin_id.0 as usize].is_some_and(|h| h != id) {
        return false;
    }
    let twin = conflicts.zone(twin_id);
    for (other, window) in windows {
        if *other == id {
            continue;
        }
        let Some((start, end)) = zone_span(window, twin) else {
            continue;
        };
        if start <= 0.0 && end > 0.0 {
            return false;
        }
        if start > 0.0 {
            let b = &world.agents_map()[other];
            let v = b.state.speed;
            let eta = start / v.max(0.1);
            let stopping = v * v / (2.0 * params.yield_decel) + 0.3 * v + 1.0;
            // A minor approach gives way to any major-road vehicle inside the
            // acceptance gap; otherwise only to one that could not stop.
            let minor = priority(ctx, zone) == Priority::Minor;
            if eta < params.gap_acceptance_time && (minor || start < stopping) {
                return false;
            }
        }
    }
    true
}
