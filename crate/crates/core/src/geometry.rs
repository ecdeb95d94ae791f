//! Point clouds, the Chamfer distance and its gradient, mirroring, and
//! area-weighted surface sampling of part boxes.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::handles::PartBox;
use crate::{Error, Result};

pub type Point = [f64; 3];

/// Ordered, nonempty list of finite 3D points. Flattening is point-major:
/// `x1 y1 z1 x2 y2 z2 ...`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct PointCloud {
    points: Vec<Point>,
}

impl TryFrom<Vec<Point>> for PointCloud {
    type Error = Error;
    fn try_from(points: Vec<Point>) -> Result<Self> {
        PointCloud::new(points)
    }
}

impl From<PointCloud> for Vec<Point> {
    fn from(pc: PointCloud) -> Self {
        pc.points
    }
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::input("point cloud must have at least one point"));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("point cloud"));
        }
        Ok(PointCloud { points })
    }

    pub(crate) fn new_unchecked(points: Vec<Point>) -> Self {
        debug_assert!(!points.is_empty());
        PointCloud { points }
    }

    /// Rebuilds a cloud from a point-major `3n` vector.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(Error::input("flattened cloud length must be a multiple of 3"));
        }
        PointCloud::new(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn translated(&self, t: Point) -> PointCloud {
        PointCloud::new_unchecked(
            self.points
                .iter()
                .map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
                .collect(),
        )
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }
}

#[inline]
pub(crate) fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Chamfer distance together with the nearest-neighbor assignments used to
/// compute it.
#[derive(Clone, Debug, PartialEq)]
pub struct ChamferResult {
    pub value: f64,
    /// For every point of `a`, the index of its nearest point in `b`.
    pub nn_ab: Vec<usize>,
    /// For every point of `b`, the index of its nearest point in `a`.
    pub nn_ba: Vec<usize>,
}

fn nearest(from: &[Point], to: &[Point]) -> (Vec<usize>, f64) {
    let mut idx = Vec::with_capacity(from.len());
    let mut total = 0.0;
    for p in from {
        let mut best = f64::INFINITY;
        let mut best_j = 0;
        for (j, q) in to.iter().enumerate() {
            let d = dist2(p, q);
            if d < best {
                best = d;
                best_j = j;
            }
        }
        idx.push(best_j);
        total += best;
    }
    (idx, total)
}

/// Mean-reduced, squared, symmetric Chamfer distance:
/// `(1/|a|) Σ_i min_j ‖a_i − b_j‖² + (1/|b|) Σ_j min_i ‖b_j − a_i‖²`.
/// Ties resolve to the lowest index.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> ChamferResult {
    let (nn_ab, sum_ab) = nearest(&a.points, &b.points);
    let (nn_ba, sum_ba) = nearest(&b.points, &a.points);
    ChamferResult {
        value: sum_ab / a.len() as f64 + sum_ba / b.len() as f64,
        nn_ab,
        nn_ba,
    }
}

/// Chamfer distance between raw point slices, returning the value and the
/// gradients with respect to both arguments (assignments held fixed).
pub(crate) fn chamfer_value_grads(a: &[Point], b: &[Point]) -> (f64, Vec<Point>, Vec<Point>) {
    let (nn_ab, sum_ab) = nearest(a, b);
    let (nn_ba, sum_ba) = nearest(b, a);
    let wa = 2.0 / a.len() as f64;
    let wb = 2.0 / b.len() as f64;
    let mut ga = vec![[0.0; 3]; a.len()];
    let mut gb = vec![[0.0; 3]; b.len()];
    for (i, &j) in nn_ab.iter().enumerate() {
        for c in 0..3 {
            let d = a[i][c] - b[j][c];
            ga[i][c] += wa * d;
            gb[j][c] -= wa * d;
        }
    }
    for (j, &i) in nn_ba.iter().enumerate() {
        for c in 0..3 {
            let d = b[j][c] - a[i][c];
            gb[j][c] += wb * d;
            ga[i][c] -= wb * d;
        }
    }
    (sum_ab / a.len() as f64 + sum_ba / b.len() as f64, ga, gb)
}

/// Gradient of [`chamfer`] with respect to the points of `a`, with
/// nearest-neighbor assignments held fixed.
pub fn chamfer_grad(a: &PointCloud, b: &PointCloud) -> Vec<Point> {
    chamfer_value_grads(&a.points, &b.points).1
}

/// Coordinate plane through the origin, named by the coordinate that is zero
/// on it (`Plane::X` is the plane `x = 0`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Plane {
    X,
    Y,
    Z,
}

impl Plane {
    pub fn normal_axis(self) -> usize {
        match self {
            Plane::X => 0,
            Plane::Y => 1,
            Plane::Z => 2,
        }
    }
}

/// Reflects every point across `plane`; order is preserved.
pub fn mirror(pc: &PointCloud, plane: Plane) -> PointCloud {
    PointCloud::new_unchecked(mirror_points(&pc.points, plane))
}

pub(crate) fn mirror_points(points: &[Point], plane: Plane) -> Vec<Point> {
    let a = plane.normal_axis();
    points
        .iter()
        .map(|p| {
            let mut q = *p;
            q[a] = -q[a];
            q
        })
        .collect()
}

/// A sample on the surface of one part box, in box-local coordinates
/// (each in `[-1, 1]`, with the face coordinate at exactly `±1`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSample {
    pub part: usize,
    pub local: Point,
}

/// Area-weighted surface sampling in box-local coordinates.
///
/// Face point counts follow the area proportions by largest remainder and
/// positions within a face are uniform, so the result is deterministic for a
/// fixed seed. Samples are ordered by part, then face.
pub fn sample_surface(parts: &[PartBox], n: usize, seed: u64) -> Result<Vec<SurfaceSample>> {
    if parts.is_empty() {
        return Err(Error::input("no parts to sample"));
    }
    if n < parts.len() {
        return Err(Error::input("point budget smaller than part count"));
    }
    // faces: (part, normal axis, sign, area)
    let mut faces: Vec<(usize, usize, f64, f64)> = Vec::with_capacity(parts.len() * 6);
    for (p, part) in parts.iter().enumerate() {
        let e = part.extents;
        if e.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::input("box extents must be finite and nonnegative"));
        }
        let part_area: f64 = (0..3).map(|a| 8.0 * e[(a + 1) % 3] * e[(a + 2) % 3]).sum();
        if !(part_area > 0.0) {
            return Err(Error::input("degenerate box with zero surface area"));
        }
        for a in 0..3 {
            let area = 4.0 * e[(a + 1) % 3] * e[(a + 2) % 3];
            for sign in [-1.0, 1.0] {
                faces.push((p, a, sign, area));
            }
        }
    }
    let total: f64 = faces.iter().map(|f| f.3).sum();
    let quotas: Vec<f64> = faces.iter().map(|f| f.3 / total * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| libm::floor(*q) as usize).collect();
    let mut remaining = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..faces.len()).collect();
    order.sort_by(|&i, &j| {
        let ri = quotas[i] - counts[i] as f64;
        let rj = quotas[j] - counts[j] as f64;
        rj.total_cmp(&ri).then(i.cmp(&j))
    });
    for &f in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if faces[f].3 > 0.0 {
            counts[f] += 1;
            remaining -= 1;
        }
    }

    let mut rng = crate::rng::stream(seed, 0x5a4d_504c);
    let mut out = Vec::with_capacity(n);
    for (f, &(part, axis, sign, _)) in faces.iter().enumerate() {
        for _ in 0..counts[f] {
            let mut local = [0.0; 3];
            local[axis] = sign;
            local[(axis + 1) % 3] = rng.gen_range(-1.0..=1.0);
            local[(axis + 2) % 3] = rng.gen_range(-1.0..=1.0);
            out.push(SurfaceSample { part, local });
        }
    }
    Ok(out)
}

/// Samples `n` points on the union of box surfaces; returns the cloud and the
/// owning part of every point.
pub fn sample_boxes(parts: &[PartBox], n: usize, seed: u64) -> Result<(PointCloud, Vec<usize>)> {
    let samples = sample_surface(parts, n, seed)?;
    let points = samples.iter().map(|s| parts[s.part].point_at(s.local)).collect();
    let owners = samples.iter().map(|s| s.part).collect();
    Ok((PointCloud::new(points)?, owners))
}
