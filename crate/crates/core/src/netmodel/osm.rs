//! Importer for a small OpenStreetMap XML subset.
//!
//! Only `node` (id, lat, lon) and `way` (nd refs plus the `highway`, `lanes`,
//! `oneway` and `maxspeed` tags) are read. Ways are split at nodes shared
//! with other drivable ways; each piece becomes one edge per travel
//! direction. At nodes joining three or more pieces lane ends are pulled back
//! and joined by straight connector lanes.

use std::collections::{BTreeMap, HashMap};

use super::{GeoOrigin, Lane, NetworkError, NetworkNode, RoadEdge, RoadNetwork};
use crate::geometry::{offset_polyline, trim_polyline, Vec2};

const NON_VEHICLE_HIGHWAYS: &[&str] = &[
    "footway",
    "path",
    "cycleway",
    "pedestrian",
    "steps",
    "bridleway",
    "corridor",
    "elevator",
    "platform",
];

#[derive(Debug, Clone, PartialEq)]
pub struct OsmImportOptions {
    pub lane_width: f64,
    /// Speed limits (m/s) by `highway` value when `maxspeed` is absent.
    pub class_speeds: BTreeMap<String, f64>,
    pub fallback_speed: f64,
}

impl Default for OsmImportOptions {
    fn default() -> Self {
        Self {
            lane_width: 3.2,
            class_speeds: BTreeMap::from([
                ("motorway".to_string(), 27.8),
                ("residential".to_string(), 13.9),
            ]),
            fallback_speed: 13.9,
        }
    }
}

struct Way {
    id: String,
    refs: Vec<String>,
    highway: String,
    lanes: Option<u32>,
    oneway: Oneway,
    maxspeed: Option<String>,
}

#[derive(Clone, Copy, PartialEq)]
enum Oneway {
    No,
    Forward,
    Backward,
}

struct DirectedEdge {
    id: String,
    segment: usize,
    forward: bool,
    from: String,
    to: String,
    geometry: Vec<Vec2>,
    lane_count: usize,
    speed: f64,
}

pub fn parse_osm_subset(xml_text: &str) -> Result<RoadNetwork, NetworkError> {
    parse_osm_with(xml_text, &OsmImportOptions::default())
}

pub fn parse_osm_with(
    xml_text: &str,
    opts: &OsmImportOptions,
) -> Result<RoadNetwork, NetworkError> {
    let doc = roxmltree::Document::parse(xml_text).map_err(|e| {
        let pos = e.pos();
        NetworkError::Xml {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;

    let mut coords: HashMap<String, (f64, f64)> = HashMap::new();
    let mut ways = Vec::new();
    for el in doc.root_element().children().filter(|n| n.is_element()) {
        match el.tag_name().name() {
            "node" => {
                let (Some(id), Some(lat), Some(lon)) =
                    (el.attribute("id"), el.attribute("lat"), el.attribute("lon"))
                else {
                    continue;
                };
                if let (Ok(lat), Ok(lon)) = (lat.parse::<f64>(), lon.parse::<f64>()) {
                    coords.insert(id.to_string(), (lat, lon));
                }
            }
            "way" => {
                let id = el.attribute("id").unwrap_or_default().to_string();
                let mut refs = Vec::new();
                let mut tags = HashMap::new();
                for c in el.children().filter(|n| n.is_element()) {
                    match c.tag_name().name() {
                        "nd" => {
                            if let Some(r) = c.attribute("ref") {
                                if refs.last().map(String::as_str) != Some(r) {
                                    refs.push(r.to_string());
                                }
                            }
                        }
                        "tag" => {
                            if let (Some(k), Some(v)) = (c.attribute("k"), c.attribute("v")) {
                                tags.insert(k.to_string(), v.to_string());
                            }
                        }
                        _ => {}
                    }
                }
                let Some(highway) = tags.get("highway").cloned() else {
                    continue;
                };
                if NON_VEHICLE_HIGHWAYS.contains(&highway.as_str()) {
                    continue;
                }
                let oneway = match tags.get("oneway").map(String::as_str) {
                    Some("yes" | "true" | "1") => Oneway::Forward,
                    Some("-1" | "reverse") => Oneway::Backward,
                    _ => Oneway::No,
                };
                ways.push(Way {
                    id,
                    refs,
                    highway,
                    lanes: tags
                        .get("lanes")
                        .and_then(|v| v.trim().parse::<u32>().ok())
                        .filter(|&n| n >= 1),
                    oneway,
                    maxspeed: tags.get("maxspeed").cloned(),
                });
            }
            _ => {}
        }
    }

    if ways.is_empty() {
        return Err(NetworkError::EmptyNetwork);
    }
    for w in &ways {
        for r in &w.refs {
            if !coords.contains_key(r) {
                return Err(NetworkError::DanglingReference {
                    way_id: w.id.clone(),
                    node_id: r.clone(),
                });
            }
        }
    }
    ways.retain(|w| w.refs.len() >= 2);
    if ways.is_empty() {
        return Err(NetworkError::EmptyNetwork);
    }

    // Origin: mean of every referenced node, in first-use order.
    let mut used: Vec<&str> = Vec::new();
    let mut usage: HashMap<&str, usize> = HashMap::new();
    for w in &ways {
        for r in &w.refs {
            let c = usage.entry(r.as_str()).or_insert(0);
            if *c == 0 {
                used.push(r.as_str());
            }
            *c += 1;
        }
    }
    let (mut lat_sum, mut lon_sum) = (0.0, 0.0);
    for r in &used {
        let (lat, lon) = coords[*r];
        lat_sum += lat;
        lon_sum += lon;
    }
    let origin = GeoOrigin {
        lat: lat_sum / used.len() as f64,
        lon: lon_sum / used.len() as f64,
    };
    let project = |r: &str| {
        let (lat, lon) = coords[r];
        origin.project(lat, lon)
    };

    // Split ways at shared nodes.
    let mut segments: Vec<(usize, Vec<String>)> = Vec::new();
    for (wi, w) in ways.iter().enumerate() {
        let mut current = vec![w.refs[0].clone()];
        for (k, r) in w.refs.iter().enumerate().skip(1) {
            current.push(r.clone());
            let last = k == w.refs.len() - 1;
            if last || usage[r.as_str()] >= 2 {
                segments.push((wi, std::mem::replace(&mut current, vec![r.clone()])));
            }
        }
    }

    let mut node_order: Vec<String> = Vec::new();
    let mut degree: HashMap<String, usize> = HashMap::new();
    for (_, refs) in &segments {
        for end in [refs.first().unwrap(), refs.last().unwrap()] {
            let d = degree.entry(end.clone()).or_insert(0);
            if *d == 0 {
                node_order.push(end.clone());
            }
            *d += 1;
        }
    }

    let mut per_way_count: HashMap<usize, usize> = HashMap::new();
    let mut directed: Vec<DirectedEdge> = Vec::new();
    for (si, (wi, refs)) in segments.iter().enumerate() {
        let w = &ways[*wi];
        let k = per_way_count.entry(*wi).or_insert(0);
        let seg_id = format!("{}_{}", w.id, k);
        *k += 1;
        let pts: Vec<Vec2> = refs.iter().map(|r| project(r)).collect();
        let speed = speed_limit(w, opts);
        let lane_count = match (w.lanes, w.oneway == Oneway::No) {
            (Some(n), true) => (n as usize / 2).max(1),
            (Some(n), false) => n as usize,
            (None, _) => 1,
        };
        if w.oneway != Oneway::Backward {
            directed.push(DirectedEdge {
                id: format!("{seg_id}_f"),
                segment: si,
                forward: true,
                from: refs.first().unwrap().clone(),
                to: refs.last().unwrap().clone(),
                geometry: pts.clone(),
                lane_count,
                speed,
            });
        }
        if w.oneway != Oneway::Forward {
            directed.push(DirectedEdge {
                id: format!("{seg_id}_b"),
                segment: si,
                forward: false,
                from: refs.last().unwrap().clone(),
                to: refs.first().unwrap().clone(),
                geometry: pts.iter().rev().copied().collect(),
                lane_count,
                speed,
            });
        }
    }

    // Junction radius per node: widest road half-width touching it plus margin.
    let width = opts.lane_width;
    let mut radius: HashMap<&str, f64> = HashMap::new();
    for e in &directed {
        let two_way = directed
            .iter()
            .any(|o| o.segment == e.segment && o.forward != e.forward);
        let half = if two_way {
            e.lane_count as f64 * width
        } else {
            0.5 * e.lane_count as f64 * width
        };
        for n in [e.from.as_str(), e.to.as_str()] {
            if degree[n] >= 3 {
                let r = radius.entry(n).or_insert(0.0);
                *r = r.max(half + 2.0);
            }
        }
    }

    let mut edges: Vec<RoadEdge> = Vec::new();
    for e in &directed {
        let two_way = directed
            .iter()
            .any(|o| o.segment == e.segment && o.forward != e.forward);
        let start_cut = radius.get(e.from.as_str()).copied().unwrap_or(0.0);
        let end_cut = radius.get(e.to.as_str()).copied().unwrap_or(0.0);
        let lanes = (0..e.lane_count)
            .map(|i| {
                let left = if two_way {
                    -(i as f64 + 0.5) * width
                } else {
                    (i as f64 - (e.lane_count as f64 - 1.0) / 2.0) * width
                };
                let shifted = offset_polyline(&e.geometry, left);
                let line = trim_polyline(&shifted, start_cut, end_cut, 1.0);
                Lane::new(format!("{}_{}", e.id, i), line, width, e.speed, Vec::new())
            })
            .collect();
        edges.push(RoadEdge {
            id: e.id.clone(),
            from_node: e.from.clone(),
            to_node: e.to.clone(),
            lanes,
        });
    }

    // Lane connections.
    let mut connectors: Vec<RoadEdge> = Vec::new();
    let mut links: Vec<(usize, usize, String)> = Vec::new();
    for (ii, inc) in directed.iter().enumerate() {
        for (oi, out) in directed.iter().enumerate() {
            if out.from != inc.to || out.segment == inc.segment {
                continue;
            }
            let junction = degree[inc.to.as_str()] >= 3;
            let mut conn_lanes = Vec::new();
            for li in 0..inc.lane_count {
                let lj = li.min(out.lane_count - 1);
                let a = *edges[ii].lanes[li].centerline.last().unwrap();
                let b = edges[oi].lanes[lj].centerline[0];
                let out_id = edges[oi].lanes[lj].id.clone();
                if junction && a.distance(b) > 0.1 {
                    let id = format!(":{}_{}>{}_{}", inc.to, inc.id, out.id, li);
                    links.push((ii, li, id.clone()));
                    conn_lanes.push(Lane::new(
                        id,
                        vec![a, b],
                        width,
                        inc.speed.min(out.speed),
                        vec![out_id],
                    ));
                } else {
                    links.push((ii, li, out_id));
                }
            }
            if !conn_lanes.is_empty() {
                connectors.push(RoadEdge {
                    id: format!(":{}_{}>{}", inc.to, inc.id, out.id),
                    from_node: inc.to.clone(),
                    to_node: inc.to.clone(),
                    lanes: conn_lanes,
                });
            }
        }
    }
    for (ei, li, succ) in links {
        edges[ei].lanes[li].successors.push(succ);
    }
    edges.extend(connectors);

    let nodes = node_order
        .iter()
        .map(|id| NetworkNode {
            id: id.clone(),
            position: project(id),
        })
        .collect();
    RoadNetwork::new(nodes, edges, Some(origin))
}

fn speed_limit(w: &Way, opts: &OsmImportOptions) -> f64 {
    if let Some(raw) = &w.maxspeed {
        let raw = raw.trim();
        let (num, factor) = if let Some(v) = raw.strip_suffix("mph") {
            (v.trim(), 0.44704)
        } else if let Some(v) = raw.strip_suffix("km/h").or_else(|| raw.strip_suffix("kmh")) {
            (v.trim(), 1.0 / 3.6)
        } else {
            (raw, 1.0 / 3.6)
        };
        if let Ok(v) = num.parse::<f64>() {
            if v > 0.0 {
                return v * factor;
            }
        }
    }
    opts.class_speeds
        .get(&w.highway)
        .copied()
        .unwrap_or(opts.fallback_speed)
}
