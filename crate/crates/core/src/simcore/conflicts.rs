//! Precomputed conflict zones between lanes.
//!
//! For every pair of lanes whose swept footprints intersect, each lane gets
//! a zone: the interval of center arclengths at which a vehicle of the
//! largest configured size would touch a vehicle on the other lane. Zones
//! come in twins (one per lane of the pair) and drive junction right of way.

use serde::Serialize;

use crate::geometry::OrientedRect;
use crate::netmodel::{LaneIdx, RoadNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ZoneId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConflictZone {
    pub lane: LaneIdx,
    /// Center arclength interval on `lane`. Values below zero or past the lane
    /// length extend onto the neighbouring lanes of a route.
    pub start: f64,
    pub end: f64,
    pub twin: ZoneId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConflictParams {
    pub sample_step: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    pub lateral_margin: f64,
    pub longitudinal_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConflictMap {
    zones: Vec<ConflictZone>,
    by_lane: Vec<Vec<ZoneId>>,
}

impl ConflictMap {
    pub fn build(net: &RoadNetwork, params: &ConflictParams) -> ConflictMap {
        let length = params.vehicle_length + 2.0 * params.longitudinal_margin;
        let width = params.vehicle_width + 2.0 * params.lateral_margin;
        let reach = 0.5 * (length * length + width * width).sqrt();

        let samples: Vec<Vec<(f64, OrientedRect)>> = net
            .lane_indices()
            .map(|l| {
                let lane = net.lane(l);
                let n = (lane.length() / params.sample_step).ceil().max(1.0) as usize;
                (0..=n)
                    .map(|k| {
                        let s = (k as f64 * params.sample_step).min(lane.length());
                        (
                            s,
                            OrientedRect::new(
                                lane.point_at(s, 0.0),
                                lane.heading_at(s),
                                length,
                                width,
                            ),
                        )
                    })
                    .collect()
            })
            .collect();
        let boxes: Vec<_> = samples
            .iter()
            .map(|pts| {
                let mut lo = (f64::INFINITY, f64::INFINITY);
                let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                for (_, r) in pts {
                    lo = (lo.0.min(r.center.x - reach), lo.1.min(r.center.y - reach));
                    hi = (hi.0.max(r.center.x + reach), hi.1.max(r.center.y + reach));
                }
                (lo, hi)
            })
            .collect();

        let mut map = ConflictMap {
            zones: Vec::new(),
            by_lane: vec![Vec::new(); net.lane_count()],
        };
        let count = net.lane_count();
        for i in 0..count {
            for j in (i + 1)..count {
                let (li, lj) = (LaneIdx(i as u32), LaneIdx(j as u32));
                if net.successors(li).contains(&lj) || net.successors(lj).contains(&li) {
                    continue;
                }
                let (a, b) = (boxes[i], boxes[j]);
                if a.1 .0 < b.0 .0 || b.1 .0 < a.0 .0 || a.1 .1 < b.0 .1 || b.1 .1 < a.0 .1 {
                    continue;
                }
                let mut span_i = (f64::INFINITY, f64::NEG_INFINITY);
                let mut span_j = (f64::INFINITY, f64::NEG_INFINITY);
                for (si, ri) in &samples[i] {
                    for (sj, rj) in &samples[j] {
                        if ri.overlaps(rj) {
                            span_i = (span_i.0.min(*si), span_i.1.max(*si));
                            span_j = (span_j.0.min(*sj), span_j.1.max(*sj));
                        }
                    }
                }
                if span_i.0 > span_i.1 {
                    continue;
                }
                // Lanes forking from a common predecessor are ordered by the
                // queue on that predecessor; no reservation needed.
                let fork = net
                    .predecessors(li)
                    .iter()
                    .any(|p| net.predecessors(lj).contains(p));
                if fork && span_i.0 <= params.sample_step && span_j.0 <= params.sample_step {
                    continue;
                }
                let zi = ZoneId(map.zones.len() as u32);
                let zj = ZoneId(zi.0 + 1);
                let pad = params.sample_step;
                let extend = |span: (f64, f64), lane_len: f64| {
                    let start = if span.0 <= pad {
                        -0.5 * length
                    } else {
                        span.0 - pad
                    };
                    let end = if span.1 >= lane_len - pad {
                        lane_len + 0.5 * length
                    } else {
                        span.1 + pad
                    };
                    (start, end)
                };
                let (s0, e0) = extend(span_i, net.lane(li).length());
                let (s1, e1) = extend(span_j, net.lane(lj).length());
                map.zones.push(ConflictZone {
                    lane: li,
                    start: s0,
                    end: e0,
                    twin: zj,
                });
                map.zones.push(ConflictZone {
                    lane: lj,
                    start: s1,
                    end: e1,
                    twin: zi,
                });
                map.by_lane[i].push(zi);
                map.by_lane[j].push(zj);
            }
        }
        for list in &mut map.by_lane {
            list.sort_by(|a, b| {
                let (za, zb) = (&map.zones[a.0 as usize], &map.zones[b.0 as usize]);
                za.start.total_cmp(&zb.start).then(a.cmp(b))
            });
        }
        map
    }

    pub fn len(&self) -> usize {
        self.zones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    pub fn zone(&self, id: ZoneId) -> &ConflictZone {
        &self.zones[id.0 as usize]
    }

    /// Zones on `lane`, ordered by start.
    pub fn on_lane(&self, lane: LaneIdx) -> &[ZoneId] {
        self.by_lane
            .get(lane.index())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}
