//! Native JSON network format (version 1).

use serde::{Deserialize, Serialize};

use super::{GeoOrigin, Lane, NetworkError, NetworkNode, RoadEdge, RoadNetwork};
use crate::geometry::Vec2;

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    version: u32,
    nodes: Vec<NodeDoc>,
    edges: Vec<EdgeDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origin: Option<GeoOrigin>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    x: f64,
    y: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDoc {
    id: String,
    from: String,
    to: String,
    lanes: Vec<LaneDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LaneDoc {
    id: String,
    width: f64,
    speed_limit: f64,
    centerline: Vec<[f64; 2]>,
    successors: Vec<String>,
}

pub fn load_network(json_text: &str) -> Result<RoadNetwork, NetworkError> {
    let de = &mut serde_json::Deserializer::from_str(json_text);
    let doc: NetworkDoc =
        serde_path_to_error::deserialize(de).map_err(|e| NetworkError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    if doc.version != FORMAT_VERSION {
        return Err(NetworkError::Schema {
            path: "version".into(),
            message: format!("unsupported version {}", doc.version),
        });
    }
    let nodes = doc
        .nodes
        .into_iter()
        .map(|n| NetworkNode {
            id: n.id,
            position: Vec2::new(n.x, n.y),
        })
        .collect();
    let edges = doc
        .edges
        .into_iter()
        .map(|e| RoadEdge {
            id: e.id,
            from_node: e.from,
            to_node: e.to,
            lanes: e
                .lanes
                .into_iter()
                .map(|l| {
                    let pts = l
                        .centerline
                        .into_iter()
                        .map(|[x, y]| Vec2::new(x, y))
                        .collect();
                    Lane::new(l.id, pts, l.width, l.speed_limit, l.successors)
                })
                .collect(),
        })
        .collect();
    RoadNetwork::new(nodes, edges, doc.origin)
}

/// Canonical pretty-printed form, newline-terminated.
pub fn save_network(network: &RoadNetwork) -> String {
    let doc = NetworkDoc {
        version: FORMAT_VERSION,
        nodes: network
            .nodes()
            .iter()
            .map(|n| NodeDoc {
                id: n.id.clone(),
                x: n.position.x,
                y: n.position.y,
            })
            .collect(),
        edges: network
            .edges()
            .iter()
            .map(|e| EdgeDoc {
                id: e.id.clone(),
                from: e.from_node.clone(),
                to: e.to_node.clone(),
                lanes: e
                    .lanes
                    .iter()
                    .map(|l| LaneDoc {
                        id: l.id.clone(),
                        width: l.width,
                        speed_limit: l.speed_limit,
                        centerline: l.centerline.iter().map(|p| [p.x, p.y]).collect(),
                        successors: l.successors.clone(),
                    })
                    .collect(),
            })
            .collect(),
        origin: network.origin(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("network serializes");
    text.push('\n');
    text
}
