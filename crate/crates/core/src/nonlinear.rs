//! Circular-trajectory deformations.
//!
//! Instead of moving point `p` along a straight dictionary column, each
//! latent coordinate `t_j` rotates it by angle `t_j` about a per-point axis
//! `r_ij` through a per-point center `C_ij`:
//!
//! ```text
//!     p' = p + Σ_j (Rot(t_j r_ij) − I)(p − C_ij)
//! ```

use alloc::vec::Vec;

use crate::deform::{LatentDelta, NORMALIZE_EPS};
use crate::geometry::{Point, PointCloud};
use crate::{Error, Result};

/// Per-point rotation axes and centers, `k` of each per point.
#[derive(Clone, Debug, PartialEq)]
pub struct CircularDictionary {
    pub n: usize,
    pub k: usize,
    /// Axis for point `i`, column `j` at `i * k + j`. Unit length when
    /// normalized (unless the raw axis was degenerate).
    pub axes: Vec<Point>,
    pub centers: Vec<Point>,
}

impl CircularDictionary {
    fn check(&self, x: &PointCloud, v: &LatentDelta) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::dim("circular dictionary vs cloud", self.n, x.len()));
        }
        if v.k() != self.k {
            return Err(Error::dim("latent delta vs circular dictionary", self.k, v.k()));
        }
        Ok(())
    }
}

#[inline]
fn cross(a: &Point, b: &Point) -> Point {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

const SERIES_BELOW: f64 = 1e-2;

/// Coefficients of `R w = w + a φ×w + b φ×(φ×w)` and their derivatives
/// divided by θ: `(a, b, a'/θ, b'/θ)`.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64, f64) {
    let t2 = theta * theta;
    if theta < SERIES_BELOW {
        let t4 = t2 * t2;
        (
            1.0 - t2 / 6.0 + t4 / 120.0,
            0.5 - t2 / 24.0 + t4 / 720.0,
            -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0,
            -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0,
        )
    } else {
        let (s, c) = (libm::sin(theta), libm::cos(theta));
        let t3 = t2 * theta;
        (
            s / theta,
            (1.0 - c) / t2,
            (theta * c - s) / t3,
            (theta * s - 2.0 * (1.0 - c)) / (t3 * theta),
        )
    }
}

/// Rotates `w` by the axis-angle vector `phi`.
pub fn rotate(phi: Point, w: Point) -> Point {
    let theta = libm::sqrt(dot(&phi, &phi));
    let (a, b, _, _) = rodrigues_coefficients(theta);
    let c1 = cross(&phi, &w);
    let c2 = cross(&phi, &c1);
    [w[0] + a * c1[0] + b * c2[0], w[1] + a * c1[1] + b * c2[1], w[2] + a * c1[2] + b * c2[2]]
}

/// `∂(R(φ) w)/∂φ` as `J[row][col]`.
pub(crate) fn rotate_jacobian(phi: Point, w: Point) -> [[f64; 3]; 3] {
    let theta = libm::sqrt(dot(&phi, &phi));
    let (a, b, da, db) = rodrigues_coefficients(theta);
    let c1 = cross(&phi, &w);
    let c2 = cross(&phi, &c1);
    let pw = dot(&phi, &w);
    // -[w]x
    let neg_wx = [[0.0, w[2], -w[1]], [-w[2], 0.0, w[0]], [w[1], -w[0], 0.0]];
    let mut j = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let eye = if r == c { 1.0 } else { 0.0 };
            j[r][c] = c1[r] * da * phi[c]
                + a * neg_wx[r][c]
                + c2[r] * db * phi[c]
                + b * (pw * eye + phi[r] * w[c] - 2.0 * w[r] * phi[c]);
        }
    }
    j
}

/// Displacement of `p` for rotation angle `t` about axis `axis` through
/// `center`: `(Rot(t·axis) − I)(p − center)`.
pub fn circular_offset(axis: Point, center: Point, t: f64, p: Point) -> Point {
    let w = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
    let rw = rotate([axis[0] * t, axis[1] * t, axis[2] * t], w);
    [rw[0] - w[0], rw[1] - w[1], rw[2] - w[2]]
}

pub fn deform_circular(x: &PointCloud, cd: &CircularDictionary, v: &LatentDelta) -> Result<PointCloud> {
    cd.check(x, v)?;
    let k = cd.k;
    let mut out = Vec::with_capacity(x.len());
    for (i, p) in x.points().iter().enumerate() {
        let mut q = *p;
        for j in 0..k {
            let t = v.0[j];
            if t == 0.0 {
                continue;
            }
            let o = circular_offset(cd.axes[i * k + j], cd.centers[i * k + j], t, *p);
            for c in 0..3 {
                q[c] += o[c];
            }
        }
        out.push(q);
    }
    PointCloud::new(out)
}

/// Gradients of `Σ_i g_i · p'_i` with respect to axes, centers and `v`.
pub(crate) struct CircularGrads {
    pub axes: Vec<Point>,
    pub centers: Vec<Point>,
    pub v: Vec<f64>,
}

pub(crate) fn deform_circular_backward(x: &PointCloud, cd: &CircularDictionary, v: &LatentDelta, g: &[Point]) -> CircularGrads {
    let k = cd.k;
    let mut out = CircularGrads {
        axes: alloc::vec![[0.0; 3]; cd.axes.len()],
        centers: alloc::vec![[0.0; 3]; cd.centers.len()],
        v: alloc::vec![0.0; k],
    };
    for (i, p) in x.points().iter().enumerate() {
        let gi = g[i];
        if gi == [0.0; 3] {
            continue;
        }
        for j in 0..k {
            let idx = i * k + j;
            let t = v.0[j];
            let axis = cd.axes[idx];
            let c = cd.centers[idx];
            let w = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
            let phi = [axis[0] * t, axis[1] * t, axis[2] * t];
            let jac = rotate_jacobian(phi, w);
            let mut dphi = [0.0; 3];
            for col in 0..3 {
                dphi[col] = (0..3).map(|r| jac[r][col] * gi[r]).sum();
            }
            out.v[j] += dot(&dphi, &axis);
            for col in 0..3 {
                out.axes[idx][col] += t * dphi[col];
            }
            // (R - I)^T g with R^T = R(-phi); d center = -dw.
            let rt = rotate([-phi[0], -phi[1], -phi[2]], gi);
            for col in 0..3 {
                out.centers[idx][col] -= rt[col] - gi[col];
            }
        }
    }
    out
}

/// Normalizes an axis, passing degenerate ones through. Returns the norm.
pub(crate) fn normalize_axis(r: Point) -> (Point, f64) {
    let norm = libm::sqrt(dot(&r, &r));
    if norm < NORMALIZE_EPS {
        (r, norm)
    } else {
        ([r[0] / norm, r[1] / norm, r[2] / norm], norm)
    }
}

/// Chains a gradient on the normalized axis back to the raw axis.
pub(crate) fn normalize_axis_backward(unit: Point, norm: f64, d_unit: Point) -> Point {
    if norm < NORMALIZE_EPS {
        return d_unit;
    }
    let proj = dot(&unit, &d_unit);
    [
        (d_unit[0] - unit[0] * proj) / norm,
        (d_unit[1] - unit[1] * proj) / norm,
        (d_unit[2] - unit[2] * proj) / norm,
    ]
}
