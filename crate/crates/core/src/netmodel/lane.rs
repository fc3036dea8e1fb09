use crate::geometry::{wrap_angle, Vec2};

const MIN_SEGMENT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Projection {
    pub s: f64,
    pub d: f64,
    pub distance: f64,
}

/// A single lane: centerline polyline plus the attributes traffic needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: String,
    pub centerline: Vec<Vec2>,
    pub width: f64,
    pub speed_limit: f64,
    pub successors: Vec<String>,
    cumulative: Vec<f64>,
    vertex_heading: Vec<f64>,
    vertex_curvature: Vec<f64>,
    bbox: (Vec2, Vec2),
}

impl Lane {
    /// Unvalidated constructor; [`crate::netmodel::RoadNetwork::new`] validates.
    pub fn new(
        id: impl Into<String>,
        centerline: Vec<Vec2>,
        width: f64,
        speed_limit: f64,
        successors: Vec<String>,
    ) -> Self {
        Self {
            id: id.into(),
            centerline,
            width,
            speed_limit,
            successors,
            cumulative: Vec::new(),
            vertex_heading: Vec::new(),
            vertex_curvature: Vec::new(),
            bbox: (Vec2::ZERO, Vec2::ZERO),
        }
    }

    /// Checks invariants and recomputes the arclength tables.
    /// On failure returns the offending field name and a message.
    pub(crate) fn rebuild(&mut self) -> Result<(), (&'static str, String)> {
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(("width", format!("must be > 0, got {}", self.width)));
        }
        if !(self.speed_limit.is_finite() && self.speed_limit > 0.0) {
            return Err((
                "speed_limit",
                format!("must be > 0, got {}", self.speed_limit),
            ));
        }
        if self.centerline.len() < 2 {
            return Err(("centerline", "needs at least 2 points".into()));
        }
        if let Some(i) = self.centerline.iter().position(|p| !p.is_finite()) {
            return Err(("centerline", format!("point {i} is not finite")));
        }
        let mut cumulative = Vec::with_capacity(self.centerline.len());
        cumulative.push(0.0);
        for (i, w) in self.centerline.windows(2).enumerate() {
            let len = w[0].distance(w[1]);
            if len <= MIN_SEGMENT {
                return Err(("centerline", format!("points {i} and {} coincide", i + 1)));
            }
            cumulative.push(cumulative[i] + len);
        }
        let n = self.centerline.len();
        let seg_heading: Vec<f64> = self
            .centerline
            .windows(2)
            .map(|w| (w[1] - w[0]).heading())
            .collect();
        let mut vertex_heading = Vec::with_capacity(n);
        let mut vertex_curvature = Vec::with_capacity(n);
        for i in 0..n {
            if i == 0 {
                vertex_heading.push(seg_heading[0]);
                vertex_curvature.push(0.0);
            } else if i == n - 1 {
                vertex_heading.push(seg_heading[n - 2]);
                vertex_curvature.push(0.0);
            } else {
                let turn = wrap_angle(seg_heading[i] - seg_heading[i - 1]);
                vertex_heading.push(wrap_angle(seg_heading[i - 1] + 0.5 * turn));
                let span = 0.5 * (cumulative[i + 1] - cumulative[i - 1]);
                vertex_curvature.push(turn / span);
            }
        }
        // End vertices inherit their neighbour's curvature so arcs stay smooth.
        if n > 2 {
            vertex_curvature[0] = vertex_curvature[1];
            vertex_curvature[n - 1] = vertex_curvature[n - 2];
        }
        let mut lo = self.centerline[0];
        let mut hi = self.centerline[0];
        for p in &self.centerline {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        self.cumulative = cumulative;
        self.vertex_heading = vertex_heading;
        self.vertex_curvature = vertex_curvature;
        self.bbox = (lo, hi);
        Ok(())
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    /// Cumulative arclength at each centerline vertex.
    pub fn arclengths(&self) -> &[f64] {
        &self.cumulative
    }

    fn segment_at(&self, s: f64) -> usize {
        let last = self.centerline.len() - 2;
        match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(last),
            Err(i) => i.saturating_sub(1).min(last),
        }
    }

    /// Point at arclength `s` shifted `d` to the left. Extrapolates linearly
    /// beyond either end.
    pub fn point_at(&self, s: f64, d: f64) -> Vec2 {
        let i = self.segment_at(s);
        let a = self.centerline[i];
        let dir = (self.centerline[i + 1] - a).normalized();
        a + dir * (s - self.cumulative[i]) + dir.perp() * d
    }

    /// Direction of the segment containing `s`.
    pub fn segment_heading_at(&self, s: f64) -> f64 {
        let i = self.segment_at(s);
        (self.centerline[i + 1] - self.centerline[i]).heading()
    }

    /// Heading interpolated between vertex tangents.
    pub fn heading_at(&self, s: f64) -> f64 {
        let i = self.segment_at(s);
        let t = ((s - self.cumulative[i]) / (self.cumulative[i + 1] - self.cumulative[i]))
            .clamp(0.0, 1.0);
        let h0 = self.vertex_heading[i];
        let h1 = self.vertex_heading[i + 1];
        wrap_angle(h0 + t * wrap_angle(h1 - h0))
    }

    /// Signed curvature (rad/m, positive turning left) interpolated along the lane.
    pub fn curvature_at(&self, s: f64) -> f64 {
        let i = self.segment_at(s);
        let t = ((s - self.cumulative[i]) / (self.cumulative[i + 1] - self.cumulative[i]))
            .clamp(0.0, 1.0);
        self.vertex_curvature[i] * (1.0 - t) + self.vertex_curvature[i + 1] * t
    }

    pub(crate) fn bbox_within(&self, p: Vec2, r: f64) -> bool {
        let (lo, hi) = self.bbox;
        p.x >= lo.x - r && p.x <= hi.x + r && p.y >= lo.y - r && p.y <= hi.y + r
    }

    /// Nearest-point projection onto the centerline.
    pub(crate) fn project(&self, p: Vec2) -> Projection {
        self.project_window(p, 0, self.centerline.len() - 1)
    }

    /// Projection restricted to segments `[first, last)`.
    pub(crate) fn project_window(&self, p: Vec2, first: usize, last: usize) -> Projection {
        let mut best = Projection {
            s: 0.0,
            d: 0.0,
            distance: f64::INFINITY,
        };
        for i in first..last {
            let a = self.centerline[i];
            let b = self.centerline[i + 1];
            let seg = b - a;
            let len = self.cumulative[i + 1] - self.cumulative[i];
            let t = ((p - a).dot(seg) / (len * len)).clamp(0.0, 1.0);
            let q = a + seg * t;
            let dist = p.distance(q);
            if dist < best.distance {
                let side = seg.cross(p - q);
                best = Projection {
                    s: self.cumulative[i] + t * len,
                    d: if side >= 0.0 { dist } else { -dist },
                    distance: dist,
                };
            }
        }
        best
    }

    /// Projection searching only segments near arclength `s_hint`.
    pub(crate) fn project_near(&self, p: Vec2, s_hint: f64, reach: f64) -> Projection {
        let first = self.segment_at(s_hint - reach);
        let last = (self.segment_at(s_hint + reach) + 1).min(self.centerline.len() - 1);
        self.project_window(p, first, last)
    }
}
