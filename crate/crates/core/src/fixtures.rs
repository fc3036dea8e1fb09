//! Programmatic builders for the bundled scenario networks.
//!
//! The JSON files under `fixtures/` are the canonical output of these
//! builders; `fixture_json` returns the bundled text.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::geometry::{offset_polyline, Vec2};
use crate::netmodel::{load_network, Lane, NetworkNode, RoadEdge, RoadNetwork};

pub const FIXTURE_NAMES: [&str; 4] = [
    "intersection",
    "t_junction",
    "narrow_corridor",
    "roundabout",
];

const LANE_WIDTH: f64 = 3.5;
const SPEED: f64 = 13.9;

/// Bundled canonical JSON for a fixture.
pub fn fixture_json(name: &str) -> Option<&'static str> {
    match name {
        "intersection" => Some(include_str!("../fixtures/intersection.json")),
        "t_junction" => Some(include_str!("../fixtures/t_junction.json")),
        "narrow_corridor" => Some(include_str!("../fixtures/narrow_corridor.json")),
        "roundabout" => Some(include_str!("../fixtures/roundabout.json")),
        _ => None,
    }
}

/// Loads a bundled fixture.
pub fn load_fixture(name: &str) -> Option<RoadNetwork> {
    fixture_json(name).map(|t| load_network(t).expect("bundled fixture is valid"))
}

/// Builds a fixture from scratch.
pub fn build_fixture(name: &str) -> Option<RoadNetwork> {
    match name {
        "intersection" => Some(intersection()),
        "t_junction" => Some(t_junction()),
        "narrow_corridor" => Some(narrow_corridor()),
        "roundabout" => Some(roundabout()),
        _ => None,
    }
}

fn round(p: Vec2) -> Vec2 {
    // Millimetre grid keeps the JSON short and platform independent.
    Vec2::new(
        (p.x * 1000.0).round() / 1000.0,
        (p.y * 1000.0).round() / 1000.0,
    )
}

fn bezier(p0: Vec2, p1: Vec2, p2: Vec2, p3: Vec2, n: usize) -> Vec<Vec2> {
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let u = 1.0 - t;
            p0 * (u * u * u) + p1 * (3.0 * u * u * t) + p2 * (3.0 * u * t * t) + p3 * (t * t * t)
        })
        .collect()
}

/// Smooth path leaving `a` along `ha` and arriving at `b` along `hb`.
fn connector(a: Vec2, ha: f64, b: Vec2, hb: f64) -> Vec<Vec2> {
    let ta = Vec2::from_heading(ha);
    let tb = Vec2::from_heading(hb);
    if ta.cross(tb).abs() < 1e-9 && ta.dot(tb) > 0.0 && ta.cross(b - a).abs() < 1e-6 {
        return vec![a, b];
    }
    // Quarter-circle Bezier handle, scaled to the chord.
    let k = 0.5523 * a.distance(b) / std::f64::consts::SQRT_2;
    bezier(a, a + ta * k, b - tb * k, b, 16)
}

struct Builder {
    nodes: Vec<NetworkNode>,
    edges: Vec<RoadEdge>,
}

impl Builder {
    fn new() -> Self {
        Self {
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    fn node(&mut self, id: &str, p: Vec2) {
        self.nodes.push(NetworkNode {
            id: id.to_string(),
            position: round(p),
        });
    }

    fn lane(
        &mut self,
        edge: &str,
        from: &str,
        to: &str,
        points: Vec<Vec2>,
        width: f64,
        successors: Vec<String>,
    ) {
        let points = points.into_iter().map(round).collect();
        self.edges.push(RoadEdge {
            id: edge.to_string(),
            from_node: from.to_string(),
            to_node: to.to_string(),
            lanes: vec![Lane::new(
                format!("{edge}_0"),
                points,
                width,
                SPEED,
                successors,
            )],
        });
    }

    fn finish(self) -> RoadNetwork {
        RoadNetwork::new(self.nodes, self.edges, None).expect("fixture is valid")
    }
}

/// Junction with one lane per direction on each listed arm (angles in
/// radians, arms extending `length` beyond a junction box of `radius`).
fn junction(arms: &[(&str, f64)], radius: f64, length: f64) -> RoadNetwork {
    let mut b = Builder::new();
    b.node("c", Vec2::ZERO);
    let half = 0.5 * LANE_WIDTH;
    let geom: Vec<_> = arms
        .iter()
        .map(|(name, angle)| {
            let u = Vec2::from_heading(*angle);
            let side = u.perp() * half;
            // Inbound runs toward the centre on the right-hand side.
            let in_start = u * (radius + length) + side;
            let in_end = u * radius + side;
            let out_start = u * radius - side;
            let out_end = u * (radius + length) - side;
            (*name, *angle, in_start, in_end, out_start, out_end)
        })
        .collect();
    for (name, _, in_start, _, _, out_end) in &geom {
        b.node(name, (*in_start + *out_end) * 0.5);
    }
    for (i, (name, angle, in_start, in_end, _, _)) in geom.iter().enumerate() {
        let mut succ = Vec::new();
        for (j, (other, ..)) in geom.iter().enumerate() {
            if i == j {
                continue;
            }
            let cid = format!(":c_{name}>{other}");
            succ.push(format!("{cid}_0"));
            let (_, out_angle, _, _, out_start, _) = geom[j];
            let pts = connector(*in_end, angle + PI, out_start, out_angle);
            b.lane(
                &cid,
                "c",
                "c",
                pts,
                LANE_WIDTH,
                vec![format!("{other}_out_0")],
            );
        }
        b.lane(
            &format!("{name}_in"),
            name,
            "c",
            vec![*in_start, *in_end],
            LANE_WIDTH,
            succ,
        );
    }
    for (name, _, _, _, out_start, out_end) in &geom {
        b.lane(
            &format!("{name}_out"),
            "c",
            name,
            vec![*out_start, *out_end],
            LANE_WIDTH,
            vec![],
        );
    }
    b.finish()
}

/// Four-way junction, 120 m approaches.
pub fn intersection() -> RoadNetwork {
    junction(
        &[("e", 0.0), ("n", FRAC_PI_2), ("w", PI), ("s", -FRAC_PI_2)],
        12.0,
        120.0,
    )
}

/// Three-way junction, 120 m approaches.
pub fn t_junction() -> RoadNetwork {
    junction(&[("e", 0.0), ("w", PI), ("s", -FRAC_PI_2)], 12.0, 120.0)
}

/// 400 m two-way road with 3.2 m lanes and a gentle S bend.
pub fn narrow_corridor() -> RoadNetwork {
    let width = 3.2;
    let center: Vec<Vec2> = (0..=80)
        .map(|i| {
            let x = i as f64 * 5.0;
            Vec2::new(x, 8.0 * (x / 400.0 * 2.0 * PI).sin())
        })
        .collect();
    let mut b = Builder::new();
    b.node("a", center[0]);
    b.node("b", *center.last().expect("non-empty"));
    let east = offset_polyline(&center, -0.5 * width);
    let mut west = offset_polyline(&center, 0.5 * width);
    west.reverse();
    b.lane("ab", "a", "b", east, width, vec![]);
    b.lane("ba", "b", "a", west, width, vec![]);
    b.finish()
}

/// Single-lane roundabout of radius 20 m with four 100 m arms.
pub fn roundabout() -> RoadNetwork {
    let ring_r = 20.0;
    let arm_r = 32.0;
    let length = 100.0;
    let delta = 25f64.to_radians();
    // Splitter island between entry and exit lanes.
    let half = 0.5 * LANE_WIDTH + 1.0;
    let arms = [("e", 0.0), ("n", FRAC_PI_2), ("w", PI), ("s", -FRAC_PI_2)];
    let arc = |a0: f64, a1: f64| -> Vec<Vec2> {
        let n = (((a1 - a0) / 5f64.to_radians()).ceil() as usize).max(2);
        (0..=n)
            .map(|i| Vec2::from_heading(a0 + (a1 - a0) * i as f64 / n as f64) * ring_r)
            .collect()
    };
    let mut b = Builder::new();
    let k = arms.len();
    for (i, (name, phi)) in arms.iter().enumerate() {
        let u = Vec2::from_heading(*phi);
        let side = u.perp() * half;
        let next = arms[(i + 1) % k].0;
        b.node(name, u * (arm_r + length));
        b.node(
            &format!("x_{name}"),
            Vec2::from_heading(phi - delta) * ring_r,
        );
        b.node(
            &format!("y_{name}"),
            Vec2::from_heading(phi + delta) * ring_r,
        );

        let in_start = u * (arm_r + length) + side;
        let in_end = u * arm_r + side;
        let out_start = u * arm_r - side;
        let out_end = u * (arm_r + length) - side;
        let entry = Vec2::from_heading(phi + delta) * ring_r;
        let exit = Vec2::from_heading(phi - delta) * ring_r;

        b.lane(
            &format!("{name}_in"),
            name,
            &format!("y_{name}"),
            vec![in_start, in_end],
            LANE_WIDTH,
            vec![format!(":{name}_entry_0")],
        );
        b.lane(
            &format!(":{name}_entry"),
            &format!("y_{name}"),
            &format!("y_{name}"),
            connector(in_end, phi + PI, entry, phi + delta + FRAC_PI_2),
            LANE_WIDTH,
            vec![format!("r_{name}_b_0")],
        );
        b.lane(
            &format!(":{name}_exit"),
            &format!("x_{name}"),
            &format!("x_{name}"),
            connector(exit, phi - delta + FRAC_PI_2, out_start, *phi),
            LANE_WIDTH,
            vec![format!("{name}_out_0")],
        );
        b.lane(
            &format!("{name}_out"),
            &format!("x_{name}"),
            name,
            vec![out_start, out_end],
            LANE_WIDTH,
            vec![],
        );
        // Ring: past this arm (exit -> entry), then on to the next exit.
        b.lane(
            &format!("r_{name}_a"),
            &format!("x_{name}"),
            &format!("y_{name}"),
            arc(phi - delta, phi + delta),
            LANE_WIDTH,
            vec![format!("r_{name}_b_0")],
        );
        let next_phi = phi + FRAC_PI_2;
        b.lane(
            &format!("r_{name}_b"),
            &format!("y_{name}"),
            &format!("x_{next}"),
            arc(phi + delta, next_phi - delta),
            LANE_WIDTH,
            vec![format!("r_{next}_a_0"), format!(":{next}_exit_0")],
        );
    }
    b.finish()
}
