//! Footprint overlap detection: uniform-grid broad phase, SAT narrow phase,
//! and grouping of overlapping pairs into connected components.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::AgentId;
use crate::dynamics::VehicleClass;
use crate::geometry::{wrap_angle, OrientedRect, Vec2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub id: AgentId,
    pub rect: OrientedRect,
    pub class: VehicleClass,
}

/// A maximal set of mutually connected overlapping bodies.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapGroup {
    /// Sorted ids.
    pub members: Vec<AgentId>,
    /// Directly overlapping pairs `(a, b)` with `a < b`, sorted.
    pub pairs: Vec<(AgentId, AgentId)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub step: u64,
    pub time: f64,
    /// Sorted, at least two.
    pub participants: Vec<AgentId>,
    /// Sorted multiset.
    pub participant_classes: Vec<VehicleClass>,
    /// Mean of the pairwise overlap centroids.
    pub location: Vec2,
    /// Partner heading minus primary heading, wrapped to [-pi, pi).
    pub relative_heading: f64,
    pub target_involved: bool,
    /// Primary participant (the target when involved) and its nearest partner.
    pub primary: (AgentId, AgentId),
    pub primary_classes: (VehicleClass, VehicleClass),
}

impl CollisionEvent {
    pub(crate) fn from_group(
        group: &OverlapGroup,
        bodies: &[Body],
        target: Option<AgentId>,
        step: u64,
        time: f64,
    ) -> CollisionEvent {
        let by_id: BTreeMap<AgentId, &Body> = bodies.iter().map(|b| (b.id, b)).collect();
        let location = {
            let sum = group.pairs.iter().fold(Vec2::ZERO, |acc, (a, b)| {
                acc + by_id[a].rect.overlap_centroid(&by_id[b].rect)
            });
            sum * (1.0 / group.pairs.len() as f64)
        };
        let target_involved = target.is_some_and(|t| group.members.contains(&t));
        let primary = match target {
            Some(t) if target_involved => {
                let c = by_id[&t].rect.center;
                let partner = group
                    .members
                    .iter()
                    .filter(|m| **m != t)
                    .min_by(|a, b| {
                        let da = by_id[*a].rect.center.distance(c);
                        let db = by_id[*b].rect.center.distance(c);
                        da.total_cmp(&db).then(a.cmp(b))
                    })
                    .copied()
                    .expect("group has two members");
                (t, partner)
            }
            _ => group.pairs[0],
        };
        let (p, q) = (by_id[&primary.0], by_id[&primary.1]);
        let mut participant_classes: Vec<_> =
            group.members.iter().map(|m| by_id[m].class).collect();
        participant_classes.sort();
        CollisionEvent {
            step,
            time,
            participants: group.members.clone(),
            participant_classes,
            location,
            relative_heading: wrap_angle(q.rect.heading - p.rect.heading),
            target_involved,
            primary,
            primary_classes: (p.class, q.class),
        }
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// All overlap groups among `bodies`. The result does not depend on the
/// order of `bodies`; groups are sorted by their smallest member.
pub fn detect_overlap_groups(bodies: &[Body], cell: f64) -> Vec<OverlapGroup> {
    let mut grid: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, b) in bodies.iter().enumerate() {
        let r = b.rect.bounding_radius();
        let c = b.rect.center;
        let (x0, x1) = (
            ((c.x - r) / cell).floor() as i64,
            ((c.x + r) / cell).floor() as i64,
        );
        let (y0, y1) = (
            ((c.y - r) / cell).floor() as i64,
            ((c.y + r) / cell).floor() as i64,
        );
        for gx in x0..=x1 {
            for gy in y0..=y1 {
                grid.entry((gx, gy)).or_default().push(i);
            }
        }
    }
    let mut candidates = BTreeSet::new();
    for members in grid.values() {
        for (k, &i) in members.iter().enumerate() {
            for &j in &members[k + 1..] {
                candidates.insert((i.min(j), i.max(j)));
            }
        }
    }

    let mut parent: Vec<usize> = (0..bodies.len()).collect();
    let mut pairs = Vec::new();
    for (i, j) in candidates {
        if bodies[i].rect.overlaps(&bodies[j].rect) {
            let (a, b) = (bodies[i].id, bodies[j].id);
            pairs.push((a.min(b), a.max(b)));
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }

    let mut groups: BTreeMap<usize, OverlapGroup> = BTreeMap::new();
    for &(a, b) in &pairs {
        let i = bodies.iter().position(|x| x.id == a).expect("id present");
        let root = find(&mut parent, i);
        let g = groups.entry(root).or_insert_with(|| OverlapGroup {
            members: Vec::new(),
            pairs: Vec::new(),
        });
        g.pairs.push((a, b));
        g.members.push(a);
        g.members.push(b);
    }
    let mut out: Vec<OverlapGroup> = groups
        .into_values()
        .map(|mut g| {
            g.members.sort_unstable();
            g.members.dedup();
            g.pairs.sort_unstable();
            g
        })
        .collect();
    out.sort_by_key(|g| g.members[0]);
    out
}
