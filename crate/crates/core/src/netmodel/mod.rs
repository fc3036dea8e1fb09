//! Road network data model.
//!
//! A [`RoadNetwork`] is built once, validated, and then treated as immutable.
//! Lanes are addressed internally by a dense [`LaneIdx`]; the string ids from
//! the serialized form are kept for I/O.

mod geo;
mod json;
mod lane;
mod osm;

use std::collections::{BTreeMap, HashMap, HashSet};

use thiserror::Error;

use crate::geometry::{wrap_angle, Vec2};

pub use geo::{GeoOrigin, EARTH_RADIUS_M};
pub use json::{load_network, save_network};
pub use lane::Lane;
pub use osm::{parse_osm_subset, parse_osm_with, OsmImportOptions};

/// Default capture radius for [`RoadNetwork::locate_on_lane`], in meters.
pub const DEFAULT_CAPTURE_RADIUS: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("xml parse error at {line}:{column}: {message}")]
    Xml {
        line: u32,
        column: u32,
        message: String,
    },
    #[error("no drivable ways in input")]
    EmptyNetwork,
    #[error("way {way_id} references unknown node {node_id}")]
    DanglingReference { way_id: String, node_id: String },
    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid network at `{path}`: {message}")]
    Validation { path: String, message: String },
    #[error("no lane within {radius} m of ({x:.3}, {y:.3})")]
    OffNetwork { x: f64, y: f64, radius: f64 },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> NetworkError {
    NetworkError::Validation {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkNode {
    pub id: String,
    pub position: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadEdge {
    pub id: String,
    pub from_node: String,
    pub to_node: String,
    pub lanes: Vec<Lane>,
}

/// Dense lane handle, valid only for the network that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LaneIdx(pub u32);

impl LaneIdx {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl serde::Serialize for LaneIdx {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u32(self.0)
    }
}

impl<'de> serde::Deserialize<'de> for LaneIdx {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        u32::deserialize(d).map(LaneIdx)
    }
}

/// Signed pose of a point relative to a lane centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneLocation {
    pub lane: LaneIdx,
    /// Arclength of the nearest centerline point.
    pub s: f64,
    /// Signed lateral offset, positive to the left of travel direction.
    pub d: f64,
    /// Euclidean distance to the nearest centerline point.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    nodes: Vec<NetworkNode>,
    edges: Vec<RoadEdge>,
    origin: Option<GeoOrigin>,
    lane_refs: Vec<(usize, usize)>,
    lane_ids: HashMap<String, LaneIdx>,
    successors: Vec<Vec<LaneIdx>>,
    predecessors: Vec<Vec<LaneIdx>>,
}

impl RoadNetwork {
    /// Builds and validates a network.
    pub fn new(
        nodes: Vec<NetworkNode>,
        mut edges: Vec<RoadEdge>,
        origin: Option<GeoOrigin>,
    ) -> Result<Self, NetworkError> {
        let mut node_ids = HashSet::new();
        for (i, n) in nodes.iter().enumerate() {
            if !node_ids.insert(n.id.as_str()) {
                return Err(invalid(
                    format!("nodes[{i}].id"),
                    format!("duplicate node id {}", n.id),
                ));
            }
            if !n.position.is_finite() {
                return Err(invalid(format!("nodes[{i}]"), "position is not finite"));
            }
        }

        let mut edge_ids = HashSet::new();
        let mut lane_refs = Vec::new();
        let mut lane_ids = HashMap::new();
        for (ei, e) in edges.iter_mut().enumerate() {
            if !edge_ids.insert(e.id.clone()) {
                return Err(invalid(
                    format!("edges[{ei}].id"),
                    format!("duplicate edge id {}", e.id),
                ));
            }
            if !node_ids.contains(e.from_node.as_str()) {
                return Err(invalid(
                    format!("edges[{ei}].from"),
                    format!("unknown node {}", e.from_node),
                ));
            }
            if !node_ids.contains(e.to_node.as_str()) {
                return Err(invalid(
                    format!("edges[{ei}].to"),
                    format!("unknown node {}", e.to_node),
                ));
            }
            if e.lanes.is_empty() {
                return Err(invalid(format!("edges[{ei}].lanes"), "edge has no lanes"));
            }
            for (li, lane) in e.lanes.iter_mut().enumerate() {
                let path = format!("edges[{ei}].lanes[{li}]");
                lane.rebuild()
                    .map_err(|(field, msg)| invalid(format!("{path}.{field}"), msg))?;
                let idx = LaneIdx(lane_refs.len() as u32);
                if lane_ids.insert(lane.id.clone(), idx).is_some() {
                    return Err(invalid(
                        format!("{path}.id"),
                        format!("duplicate lane id {}", lane.id),
                    ));
                }
                lane_refs.push((ei, li));
            }
        }

        let mut successors = vec![Vec::new(); lane_refs.len()];
        let mut predecessors = vec![Vec::new(); lane_refs.len()];
        for (idx, &(ei, li)) in lane_refs.iter().enumerate() {
            for (si, succ) in edges[ei].lanes[li].successors.iter().enumerate() {
                let Some(&target) = lane_ids.get(succ) else {
                    return Err(invalid(
                        format!("edges[{ei}].lanes[{li}].successors[{si}]"),
                        format!("unknown lane {succ}"),
                    ));
                };
                successors[idx].push(target);
                predecessors[target.index()].push(LaneIdx(idx as u32));
            }
        }

        Ok(Self {
            nodes,
            edges,
            origin,
            lane_refs,
            lane_ids,
            successors,
            predecessors,
        })
    }

    pub fn nodes(&self) -> &[NetworkNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[RoadEdge] {
        &self.edges
    }

    pub fn origin(&self) -> Option<GeoOrigin> {
        self.origin
    }

    pub fn lane_count(&self) -> usize {
        self.lane_refs.len()
    }

    pub fn lane_indices(&self) -> impl Iterator<Item = LaneIdx> {
        (0..self.lane_refs.len() as u32).map(LaneIdx)
    }

    pub fn lane(&self, idx: LaneIdx) -> &Lane {
        let (e, l) = self.lane_refs[idx.index()];
        &self.edges[e].lanes[l]
    }

    pub fn lane_edge(&self, idx: LaneIdx) -> &RoadEdge {
        &self.edges[self.lane_refs[idx.index()].0]
    }

    pub fn lane_idx(&self, id: &str) -> Option<LaneIdx> {
        self.lane_ids.get(id).copied()
    }

    pub fn successors(&self, idx: LaneIdx) -> &[LaneIdx] {
        &self.successors[idx.index()]
    }

    pub fn predecessors(&self, idx: LaneIdx) -> &[LaneIdx] {
        &self.predecessors[idx.index()]
    }

    /// Lanes nobody feeds into; traffic enters the network here.
    pub fn source_lanes(&self) -> Vec<LaneIdx> {
        self.lane_indices()
            .filter(|&l| self.predecessors(l).is_empty())
            .collect()
    }

    /// Lanes reachable from `from` (inclusive) that have no successors.
    pub fn reachable_sinks(&self, from: LaneIdx) -> Vec<LaneIdx> {
        let mut seen = vec![false; self.lane_count()];
        let mut stack = vec![from];
        let mut sinks = Vec::new();
        seen[from.index()] = true;
        while let Some(l) = stack.pop() {
            let succ = self.successors(l);
            if succ.is_empty() {
                sinks.push(l);
            }
            for &s in succ {
                if !seen[s.index()] {
                    seen[s.index()] = true;
                    stack.push(s);
                }
            }
        }
        sinks.sort();
        sinks
    }

    /// Shortest lane sequence (by lane count, then lowest indices) from `from` to `to`.
    pub fn lane_path(&self, from: LaneIdx, to: LaneIdx) -> Option<Vec<LaneIdx>> {
        let mut parent: Vec<Option<LaneIdx>> = vec![None; self.lane_count()];
        let mut seen = vec![false; self.lane_count()];
        let mut queue = std::collections::VecDeque::from([from]);
        seen[from.index()] = true;
        while let Some(l) = queue.pop_front() {
            if l == to {
                let mut path = vec![to];
                let mut cur = to;
                while let Some(p) = parent[cur.index()] {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            for &s in self.successors(l) {
                if !seen[s.index()] {
                    seen[s.index()] = true;
                    parent[s.index()] = Some(l);
                    queue.push_back(s);
                }
            }
        }
        None
    }

    /// Weakly connected components over nodes, edges and lane successor links.
    /// A single entry means the network is connected.
    pub fn components(&self) -> Vec<Vec<String>> {
        let index: BTreeMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        let mut parent: Vec<usize> = (0..self.nodes.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let union = |a: usize, b: usize, p: &mut Vec<usize>| {
            let (ra, rb) = (find(p, a), find(p, b));
            if ra != rb {
                p[ra.max(rb)] = ra.min(rb);
            }
        };
        for e in &self.edges {
            union(
                index[e.from_node.as_str()],
                index[e.to_node.as_str()],
                &mut parent,
            );
        }
        for l in self.lane_indices() {
            let from = index[self.lane_edge(l).to_node.as_str()];
            for &s in self.successors(l) {
                let to = index[self.lane_edge(s).from_node.as_str()];
                union(from, to, &mut parent);
            }
        }
        let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(n.id.clone());
        }
        groups.into_values().collect()
    }

    /// Finds the lane best matching `point` travelling at `heading`.
    ///
    /// Candidates must lie within `capture_radius` and have a centerline
    /// heading within 90 degrees of `heading`; among those the smallest
    /// distance to the centerline wins, ties to the lowest lane index.
    pub fn locate_on_lane(
        &self,
        point: Vec2,
        heading: f64,
        capture_radius: f64,
    ) -> Result<LaneLocation, NetworkError> {
        let mut best: Option<LaneLocation> = None;
        for idx in self.lane_indices() {
            let lane = self.lane(idx);
            if !lane.bbox_within(point, capture_radius) {
                continue;
            }
            let proj = lane.project(point);
            if proj.distance > capture_radius {
                continue;
            }
            if wrap_angle(lane.heading_at(proj.s) - heading).abs() >= std::f64::consts::FRAC_PI_2 {
                continue;
            }
            if best.is_none_or(|b| proj.distance < b.distance) {
                best = Some(LaneLocation {
                    lane: idx,
                    s: proj.s,
                    d: proj.d,
                    distance: proj.distance,
                });
            }
        }
        best.ok_or(NetworkError::OffNetwork {
            x: point.x,
            y: point.y,
            radius: capture_radius,
        })
    }

    /// Axis-aligned bounds of all lane geometry: (min, max).
    pub fn bounds(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for l in self.lane_indices() {
            for p in &self.lane(l).centerline {
                lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
            }
        }
        (lo, hi)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn straight_pair() -> RoadNetwork {
        // Two opposing lanes 3.2 m apart along the x axis.
        let nodes = vec![
            NetworkNode {
                id: "a".into(),
                position: Vec2::new(0.0, 0.0),
            },
            NetworkNode {
                id: "b".into(),
                position: Vec2::new(100.0, 0.0),
            },
        ];
        let edges = vec![
            RoadEdge {
                id: "ab".into(),
                from_node: "a".into(),
                to_node: "b".into(),
                lanes: vec![Lane::new(
                    "ab_0",
                    vec![Vec2::new(0.0, -1.6), Vec2::new(100.0, -1.6)],
                    3.2,
                    13.9,
                    vec![],
                )],
            },
            RoadEdge {
                id: "ba".into(),
                from_node: "b".into(),
                to_node: "a".into(),
                lanes: vec![Lane::new(
                    "ba_0",
                    vec![Vec2::new(100.0, 1.6), Vec2::new(0.0, 1.6)],
                    3.2,
                    13.9,
                    vec![],
                )],
            },
        ];
        RoadNetwork::new(nodes, edges, None).unwrap()
    }

    #[test]
    fn on_centerline_has_zero_offset() {
        let net = straight_pair();
        let loc = net
            .locate_on_lane(Vec2::new(30.0, -1.6), 0.0, DEFAULT_CAPTURE_RADIUS)
            .unwrap();
        assert_eq!(net.lane(loc.lane).id, "ab_0");
        assert!(loc.d.abs() < 1e-12);
        assert!((loc.s - 30.0).abs() < 1e-12);
    }

    #[test]
    fn left_offset_is_positive() {
        let net = straight_pair();
        let loc = net
            .locate_on_lane(Vec2::new(30.0, -0.6), 0.0, DEFAULT_CAPTURE_RADIUS)
            .unwrap();
        assert_eq!(net.lane(loc.lane).id, "ab_0");
        assert!((loc.d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equidistant_point_prefers_codirectional_lane() {
        let net = straight_pair();
        let east = net.locate_on_lane(Vec2::new(50.0, 0.0), 0.0, 10.0).unwrap();
        assert_eq!(net.lane(east.lane).id, "ab_0");
        let west = net
            .locate_on_lane(Vec2::new(50.0, 0.0), std::f64::consts::PI, 10.0)
            .unwrap();
        assert_eq!(net.lane(west.lane).id, "ba_0");
    }

    #[test]
    fn far_point_is_off_network() {
        let net = straight_pair();
        let err = net
            .locate_on_lane(Vec2::new(50.0, 30.0), 0.0, 10.0)
            .unwrap_err();
        assert!(matches!(err, NetworkError::OffNetwork { .. }));
    }

    #[test]
    fn rejects_unknown_successor() {
        let nodes = vec![
            NetworkNode {
                id: "a".into(),
                position: Vec2::ZERO,
            },
            NetworkNode {
                id: "b".into(),
                position: Vec2::new(1.0, 0.0),
            },
        ];
        let edges = vec![RoadEdge {
            id: "e".into(),
            from_node: "a".into(),
            to_node: "b".into(),
            lanes: vec![Lane::new(
                "l",
                vec![Vec2::ZERO, Vec2::new(1.0, 0.0)],
                3.0,
                10.0,
                vec!["nope".into()],
            )],
        }];
        let err = RoadNetwork::new(nodes, edges, None).unwrap_err();
        assert!(
            matches!(err, NetworkError::Validation { ref path, .. } if path == "edges[0].lanes[0].successors[0]")
        );
    }

    #[test]
    fn components_report_disconnection() {
        let mut net = straight_pair();
        assert_eq!(net.components().len(), 1);
        net.nodes.push(NetworkNode {
            id: "z".into(),
            position: Vec2::new(500.0, 0.0),
        });
        assert_eq!(net.components().len(), 2);
    }
}
