//! Signed solid angle subtended by an axis-aligned rectangle in the y = 0
//! plane, with analytic first and second derivatives in the field point.
//!
//! For a corner at in-plane offset (a, b) from the field point at height h,
//! the corner term is F = atan(ab / (h·R)) with R = √(a² + b² + h²); the
//! solid angle is the signed sum of the four corner terms. Each corner term
//! is itself harmonic, so every derivative below is exact.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::penning::PotentialSample;

/// Axis-aligned rectangle (x1, x2) × (z1, z2) in the y = 0 plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x1: f64,
    pub x2: f64,
    pub z1: f64,
    pub z2: f64,
}

impl Rect {
    pub fn new(x1: f64, x2: f64, z1: f64, z2: f64) -> Result<Self> {
        if !(x1 < x2 && z1 < z2) || ![x1, x2, z1, z2].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "rectangle requires x1 < x2 and z1 < z2, got ({x1}, {x2}) × ({z1}, {z2})"
            )));
        }
        Ok(Self { x1, x2, z1, z2 })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn depth(&self) -> f64 {
        self.z2 - self.z1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.depth()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.z1 + self.z2))
    }

    /// Closed-rectangle containment in the plane.
    pub fn contains(&self, x: f64, z: f64) -> bool {
        x >= self.x1 && x <= self.x2 && z >= self.z1 && z <= self.z2
    }

    /// True when the interiors intersect.
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x1 < other.x2 && other.x1 < self.x2 && self.z1 < other.z2 && other.z1 < self.z2
    }

    /// Splits into an nx × nz grid, row-major in z then x (index = iz·nx + ix).
    pub fn subdivide(&self, nx: usize, nz: usize) -> Vec<Rect> {
        let mut out = Vec::with_capacity(nx * nz);
        for iz in 0..nz {
            let z1 = lerp(self.z1, self.z2, iz, nz);
            let z2 = lerp(self.z1, self.z2, iz + 1, nz);
            for ix in 0..nx {
                let x1 = lerp(self.x1, self.x2, ix, nx);
                let x2 = lerp(self.x1, self.x2, ix + 1, nx);
                out.push(Rect { x1, x2, z1, z2 });
            }
        }
        out
    }
}

/// a + (b − a)·k/n, exact at both ends.
fn lerp(a: f64, b: f64, k: usize, n: usize) -> f64 {
    if k == n {
        b
    } else {
        a + (b - a) * (k as f64 / n as f64)
    }
}

/// Derivatives of one corner term with respect to (a, b, h).
struct CornerTerm {
    f: f64,
    fa: f64,
    fb: f64,
    fh: f64,
    faa: f64,
    fbb: f64,
    fab: f64,
    fah: f64,
    fbh: f64,
    fhh: f64,
}

fn corner_term(a: f64, b: f64, h: f64) -> CornerTerm {
    let a2 = a * a;
    let b2 = b * b;
    let h2 = h * h;
    let r2 = a2 + b2 + h2;
    let r = r2.sqrt();
    let r3 = r2 * r;
    let p = a2 + h2;
    let q = b2 + h2;
    let n = a2 + b2 + 2.0 * h2;

    let f = if h != 0.0 {
        (a * b / (h * r)).atan()
    } else {
        // In-plane limit; the caller guarantees the point is outside the
        // rectangle, where the half-plane limits cancel pairwise.
        0.0
    };
    let guard = |v: f64| if v.is_finite() { v } else { 0.0 };

    CornerTerm {
        f,
        fa: guard(b * h / (p * r)),
        fb: guard(a * h / (q * r)),
        fh: guard(-a * b * n / (p * q * r)),
        faa: guard(-a * b * h * (2.0 * r2 + p) / (p * p * r3)),
        fbb: guard(-a * b * h * (2.0 * r2 + q) / (q * q * r3)),
        fab: guard(h / r3),
        fah: guard(b / (p * r) * ((a2 - h2) / p - h2 / r2)),
        fbh: guard(a / (q * r) * ((b2 - h2) / q - h2 / r2)),
        fhh: guard(-a * b * h / (p * q * r) * (4.0 - 2.0 * n / p - 2.0 * n / q - n / r2)),
    }
}

/// Signed solid angle Ω(r) of `rect` seen from `r`, positive above the plane,
/// with gradient and Hessian with respect to r.
pub fn rectangle_solid_angle(rect: &Rect, r: &Vector3<f64>) -> Result<PotentialSample> {
    if r.y == 0.0 && rect.contains(r.x, r.z) {
        return Err(Error::OnPatch);
    }
    let corners = [
        (rect.x2, rect.z2, 1.0),
        (rect.x1, rect.z2, -1.0),
        (rect.x2, rect.z1, -1.0),
        (rect.x1, rect.z1, 1.0),
    ];
    let mut out = PotentialSample::zero();
    for (xc, zc, sign) in corners {
        let t = corner_term(xc - r.x, zc - r.z, r.y);
        out.value += sign * t.f;
        // a = xc − x and b = zc − z flip sign under differentiation in x, z.
        out.gradient += Vector3::new(-t.fa, t.fh, -t.fb) * sign;
        out.hessian += Matrix3::new(
            t.faa, -t.fah, t.fab, //
            -t.fah, t.fhh, -t.fbh, //
            t.fab, -t.fbh, t.fbb,
        ) * sign;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn unit() -> Rect {
        Rect::new(-1.0, 2.0, -0.5, 1.5).unwrap()
    }

    #[test]
    fn large_rectangle_subtends_hemisphere() {
        let big = Rect::new(-1e6, 1e6, -1e6, 1e6).unwrap();
        let s = rectangle_solid_angle(&big, &Vector3::new(0.1, 1e-3, -0.2)).unwrap();
        assert_relative_eq!(s.value, 2.0 * PI, max_relative = 1e-8);
        let below = rectangle_solid_angle(&big, &Vector3::new(0.1, -1e-3, -0.2)).unwrap();
        assert_relative_eq!(below.value, -2.0 * PI, max_relative = 1e-8);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let rect = unit();
        let h = 1e-5;
        for p in [
            Vector3::new(0.3, 0.7, 0.2),
            Vector3::new(-2.0, 0.4, 3.0),
            Vector3::new(1.0, 2.5, -0.5),
            Vector3::new(0.5, -0.8, 0.1),
        ] {
            let s = rectangle_solid_angle(&rect, &p).unwrap();
            for axis in 0..3 {
                let mut dp = Vector3::zeros();
                dp[axis] = h;
                let plus = rectangle_solid_angle(&rect, &(p + dp)).unwrap();
                let minus = rectangle_solid_angle(&rect, &(p - dp)).unwrap();
                let fd = (plus.value - minus.value) / (2.0 * h);
                assert_relative_eq!(s.gradient[axis], fd, epsilon = 1e-8, max_relative = 1e-6);
                let fd_row = (plus.gradient - minus.gradient) / (2.0 * h);
                for j in 0..3 {
                    assert_relative_eq!(s.hessian[(axis, j)], fd_row[j], epsilon = 1e-7, max_relative = 1e-5);
                }
            }
        }
    }

    #[test]
    fn hessian_is_traceless_and_symmetric() {
        let s = rectangle_solid_angle(&unit(), &Vector3::new(0.2, 0.3, 0.9)).unwrap();
        assert!(s.hessian.trace().abs() < 1e-12 * s.hessian.norm());
        assert_relative_eq!(s.hessian, s.hessian.transpose(), epsilon = 1e-14);
    }

    #[test]
    fn on_patch_rejected_but_plane_outside_allowed() {
        assert!(matches!(
            rectangle_solid_angle(&unit(), &Vector3::new(0.0, 0.0, 0.0)),
            Err(Error::OnPatch)
        ));
        let s = rectangle_solid_angle(&unit(), &Vector3::new(5.0, 0.0, 7.0)).unwrap();
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn subdivision_tiles_exactly() {
        let r = unit();
        let parts = r.subdivide(3, 4);
        assert_eq!(parts.len(), 12);
        let area: f64 = parts.iter().map(Rect::area).sum();
        assert_relative_eq!(area, r.area(), max_relative = 1e-14);
        assert_eq!(parts[11].x2, r.x2);
        assert_eq!(parts[11].z2, r.z2);
    }
}
