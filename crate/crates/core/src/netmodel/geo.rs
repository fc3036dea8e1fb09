//! Equirectangular projection about a reference coordinate.
//! Accurate to well under a meter for extents below ~10 km.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;

/// Mean Earth radius (IUGG), meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoOrigin {
    pub lat: f64,
    pub lon: f64,
}

impl GeoOrigin {
    pub fn project(&self, lat: f64, lon: f64) -> Vec2 {
        let k = EARTH_RADIUS_M.to_radians_factor();
        Vec2::new(
            (lon - self.lon) * k * self.lat.to_radians().cos(),
            (lat - self.lat) * k,
        )
    }

    /// Inverse of [`GeoOrigin::project`]; returns (lat, lon).
    pub fn unproject(&self, p: Vec2) -> (f64, f64) {
        let k = EARTH_RADIUS_M.to_radians_factor();
        (
            self.lat + p.y / k,
            self.lon + p.x / (k * self.lat.to_radians().cos()),
        )
    }
}

trait RadiansFactor {
    fn to_radians_factor(self) -> f64;
}

impl RadiansFactor for f64 {
    /// Meters per degree of arc at radius `self`.
    fn to_radians_factor(self) -> f64 {
        self * std::f64::consts::PI / 180.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn projection_round_trip(lat0 in -60.0f64..60.0, lon0 in -170.0f64..170.0,
                                 dlat in -0.045f64..0.045, dlon in -0.045f64..0.045) {
            let o = GeoOrigin { lat: lat0, lon: lon0 };
            let p = o.project(lat0 + dlat, lon0 + dlon);
            let (lat, lon) = o.unproject(p);
            prop_assert!((lat - (lat0 + dlat)).abs() < 1e-6);
            prop_assert!((lon - (lon0 + dlon)).abs() < 1e-6);
        }
    }

    #[test]
    fn one_degree_latitude() {
        let o = GeoOrigin {
            lat: 22.3,
            lon: 114.17,
        };
        let p = o.project(23.3, 114.17);
        assert!((p.y - 111_195.08).abs() < 0.1);
        assert_eq!(p.x, 0.0);
    }
}
