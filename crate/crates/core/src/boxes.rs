//! Oriented 3D boxes in the ego/world frame (x forward, y left, z up).

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Gravity-aligned box with yaw about +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    /// Geometric center, meters.
    pub center: [f64; 3],
    /// Length (along heading), width, height in meters. Strictly positive.
    pub dims: [f64; 3],
    /// Heading in radians, wrapped to `(-pi, pi]`.
    pub yaw: f64,
    /// Ground-plane velocity, m/s.
    pub velocity: [f64; 2],
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    // rem_euclid can round up to exactly 2*pi for tiny negative inputs.
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

impl Box3D {
    pub fn new(center: [f64; 3], dims: [f64; 3], yaw: f64) -> Self {
        Self {
            center,
            dims,
            yaw: wrap_angle(yaw),
            velocity: [0.0; 2],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.dims.iter().all(|&d| d > 0.0 && d.is_finite())
            && self.center.iter().all(|c| c.is_finite())
            && self.yaw > -PI
            && self.yaw <= PI
    }

    /// Footprint corners after scaling length and width by `scale` about the
    /// center. Order: (+l,+w), (+l,-w), (-l,-w), (-l,+w).
    pub fn footprint(&self, scale: f64) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = 0.5 * self.dims[0] * scale;
        let hw = 0.5 * self.dims[1] * scale;
        [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)].map(|(a, b)| {
            [
                self.center[0] + c * a - s * b,
                self.center[1] + s * a + c * b,
            ]
        })
    }

    /// The eight corners: bottom face then top face, each in footprint order.
    pub fn corners(&self) -> [[f64; 3]; 8] {
        let fp = self.footprint(1.0);
        let z0 = self.center[2] - 0.5 * self.dims[2];
        let z1 = self.center[2] + 0.5 * self.dims[2];
        let mut out = [[0.0; 3]; 8];
        for (k, p) in fp.iter().enumerate() {
            out[k] = [p[0], p[1], z0];
            out[k + 4] = [p[0], p[1], z1];
        }
        out
    }

    /// World point to box-local coordinates (heading-aligned, centered).
    pub fn to_local(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [c * dx + s * dy, -s * dx + c * dy, p[2] - self.center[2]]
    }

    pub fn to_world(&self, local: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [
            self.center[0] + c * local[0] - s * local[1],
            self.center[1] + s * local[0] + c * local[1],
            self.center[2] + local[2],
        ]
    }

    /// Point containment with every half-extent grown by `inflate` meters.
    pub fn contains(&self, p: [f64; 3], inflate: f64) -> bool {
        let l = self.to_local(p);
        (0..3).all(|k| l[k].abs() <= 0.5 * self.dims[k] + inflate)
    }

    /// `[x, y, z, l, w, h, yaw, vx, vy]`.
    pub fn to_array(&self) -> [f64; 9] {
        [
            self.center[0],
            self.center[1],
            self.center[2],
            self.dims[0],
            self.dims[1],
            self.dims[2],
            self.yaw,
            self.velocity[0],
            self.velocity[1],
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_keeps_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(0.0), 0.0);
    }

    #[test]
    fn local_world_round_trip() {
        let b = Box3D::new([1.0, -2.0, 0.5], [4.0, 2.0, 1.0], 0.7);
        let p = [3.0, 1.0, -1.0];
        let q = b.to_world(b.to_local(p));
        for k in 0..3 {
            assert!((p[k] - q[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn corners_are_contained() {
        let b = Box3D::new([0.0, 0.0, 0.0], [4.0, 2.0, 1.5], 1.1);
        for c in b.corners() {
            assert!(b.contains(c, 1e-9));
        }
        assert!(!b.contains([3.0, 3.0, 0.0], 0.0));
    }
}
