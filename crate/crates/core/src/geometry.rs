//! Planar geometry shared by the road model, the simulator and collision checks.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_heading(heading: f64) -> Self {
        let (s, c) = heading.sin_cos();
        Self { x: c, y: s }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Rotated by +90 degrees (points to the left of `self`).
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        Vec2::new(self.x / n, self.y / n)
    }

    pub fn heading(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r >= PI {
        r -= 2.0 * PI;
    }
    r
}

/// Shifts a polyline `offset` meters to its left (negative: right), using
/// mitred joins at interior vertices.
pub fn offset_polyline(points: &[Vec2], offset: f64) -> Vec<Vec2> {
    let n = points.len();
    let normals: Vec<Vec2> = points
        .windows(2)
        .map(|w| (w[1] - w[0]).normalized().perp())
        .collect();
    (0..n)
        .map(|i| {
            let normal = if i == 0 {
                normals[0]
            } else if i == n - 1 {
                normals[n - 2]
            } else {
                let m = normals[i - 1] + normals[i];
                let m = m.normalized();
                // Scale so both adjacent segments end up exactly `offset` away.
                m * (1.0 / m.dot(normals[i]).max(0.2))
            };
            points[i] + normal * offset
        })
        .collect()
}

/// Cuts `start_cut` meters off the beginning and `end_cut` off the end of a
/// polyline. Cuts are scaled down if they would leave less than `min_keep`.
pub fn trim_polyline(points: &[Vec2], start_cut: f64, end_cut: f64, min_keep: f64) -> Vec<Vec2> {
    let mut cum = vec![0.0];
    for w in points.windows(2) {
        cum.push(cum.last().unwrap() + w[0].distance(w[1]));
    }
    let total = *cum.last().unwrap();
    let (mut a, mut b) = (start_cut.max(0.0), end_cut.max(0.0));
    if total - a - b < min_keep {
        let room = (total - min_keep).max(0.0);
        let scale = if a + b > 0.0 { room / (a + b) } else { 0.0 };
        a *= scale;
        b *= scale;
    }
    let lo = a;
    let hi = total - b;
    let at = |s: f64| -> Vec2 {
        let i = match cum.iter().position(|&c| c >= s) {
            Some(0) => 1,
            Some(i) => i,
            None => cum.len() - 1,
        };
        let (c0, c1) = (cum[i - 1], cum[i]);
        let t = if c1 > c0 { (s - c0) / (c1 - c0) } else { 0.0 };
        points[i - 1] + (points[i] - points[i - 1]) * t
    };
    let mut out = vec![at(lo)];
    for (i, &c) in cum.iter().enumerate() {
        if c > lo + 1e-6 && c < hi - 1e-6 {
            out.push(points[i]);
        }
    }
    out.push(at(hi));
    out
}

/// A rectangle centred at `center`, long axis along `heading`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub center: Vec2,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedRect {
    pub fn new(center: Vec2, heading: f64, length: f64, width: f64) -> Self {
        Self {
            center,
            heading,
            half_length: 0.5 * length,
            half_width: 0.5 * width,
        }
    }

    pub fn axes(&self) -> [Vec2; 2] {
        let u = Vec2::from_heading(self.heading);
        [u, u.perp()]
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let [u, v] = self.axes();
        let a = u * self.half_length;
        let b = v * self.half_width;
        [
            self.center + a + b,
            self.center - a + b,
            self.center - a - b,
            self.center + a - b,
        ]
    }

    /// Radius of the circumscribed circle.
    pub fn bounding_radius(&self) -> f64 {
        self.half_length.hypot(self.half_width)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let [u, v] = self.axes();
        let r = p - self.center;
        r.dot(u).abs() <= self.half_length && r.dot(v).abs() <= self.half_width
    }

    fn project(&self, axis: Vec2) -> (f64, f64) {
        let [u, v] = self.axes();
        let c = self.center.dot(axis);
        let r = self.half_length * u.dot(axis).abs() + self.half_width * v.dot(axis).abs();
        (c - r, c + r)
    }

    /// Separating-axis test. Touching boundaries count as overlap.
    pub fn overlaps(&self, other: &OrientedRect) -> bool {
        let reach = self.bounding_radius() + other.bounding_radius();
        if self.center.distance(other.center) > reach {
            return false;
        }
        let axes = self.axes().into_iter().chain(other.axes());
        for axis in axes {
            let (a0, a1) = self.project(axis);
            let (b0, b1) = other.project(axis);
            if a1 < b0 || b1 < a0 {
                return false;
            }
        }
        true
    }

    /// Approximate centroid of the overlap region: mean of the corners of each
    /// rectangle that lie inside the other, falling back to the midpoint of
    /// the centres when no corner is contained (cross-shaped overlaps).
    pub fn overlap_centroid(&self, other: &OrientedRect) -> Vec2 {
        let mut sum = Vec2::ZERO;
        let mut n = 0usize;
        for c in self.corners() {
            if other.contains(c) {
                sum = sum + c;
                n += 1;
            }
        }
        for c in other.corners() {
            if self.contains(c) {
                sum = sum + c;
                n += 1;
            }
        }
        if n == 0 {
            (self.center + other.center) * 0.5
        } else {
            sum * (1.0 / n as f64)
        }
    }
}
