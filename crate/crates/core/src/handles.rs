//! Part-box deformation handles.
//!
//! Every part box contributes six linear handles: a translation and a scale
//! along each of its local axes. Stacking their per-point effects gives the
//! handle basis `B_x` (`3n × m_x`) with the rest shape at `x = B_x z_0`.
//! Translation parameters are the box center's coordinate along the axis and
//! scale parameters are multiplicative factors about the center (rest value
//! 1, lower bound 0).
//!
//! User edits fix some parameters; [`project_edit`] picks the remaining ones
//! so the edited shape lands as close as possible to the learned linear
//! deformation space of the shape.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::deform::Dictionary;
use crate::geometry::{Point, PointCloud};
use crate::linalg::{self, lstsq_bounded_with_pinv, pinv, Matrix, Vector, DEFAULT_RCOND};
use crate::{Error, Result};

/// Oriented bounding box of one part, with the indices of the points it owns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartBox {
    pub center: Point,
    /// Orthonormal local axes.
    pub axes: [Point; 3],
    /// Half-lengths along the local axes.
    pub extents: [f64; 3],
    #[serde(default)]
    pub point_ids: Vec<usize>,
}

impl PartBox {
    /// Validates orthonormality (to 1e-8) and nonnegative finite extents.
    pub fn new(center: Point, axes: [Point; 3], extents: [f64; 3]) -> Result<Self> {
        if center.iter().chain(axes.iter().flatten()).chain(&extents).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("part box"));
        }
        for a in 0..3 {
            for b in 0..3 {
                let d = dot3(&axes[a], &axes[b]);
                let want = if a == b { 1.0 } else { 0.0 };
                if libm::fabs(d - want) > 1e-8 {
                    return Err(Error::input("part box axes are not orthonormal"));
                }
            }
        }
        if extents.iter().any(|e| *e < 0.0) {
            return Err(Error::input("part box extents must be nonnegative"));
        }
        Ok(PartBox {
            center,
            axes,
            extents,
            point_ids: Vec::new(),
        })
    }

    pub fn axis_aligned(center: Point, extents: [f64; 3]) -> Result<Self> {
        PartBox::new(
            center,
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            extents,
        )
    }

    pub fn with_points(mut self, ids: Vec<usize>) -> Self {
        self.point_ids = ids;
        self
    }

    /// Maps box-local coordinates in `[-1, 1]³` to world space.
    pub fn point_at(&self, local: Point) -> Point {
        let mut p = self.center;
        for a in 0..3 {
            let s = self.extents[a] * local[a];
            for c in 0..3 {
                p[c] += self.axes[a][c] * s;
            }
        }
        p
    }

    /// True when `p` lies inside the box inflated by `tol`.
    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        (0..3).all(|a| libm::fabs(dot3(&d, &self.axes[a])) <= self.extents[a] + tol)
    }
}

#[inline]
pub(crate) fn dot3(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandleKind {
    Translation,
    Scale,
}

/// One linear control: translation or scale of a part along a local axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handle {
    pub part: usize,
    pub kind: HandleKind,
    pub axis: usize,
}

/// The linear handle space of one shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandleSpace {
    /// `3n × m_x`, one column per handle.
    pub basis: Matrix,
    /// Rest parameters `z_0`; `basis · defaults` is the rest shape.
    pub defaults: Vector,
    pub handles: Vec<Handle>,
    /// Scale handles carry `Some(0.0)`.
    pub lower_bounds: Vec<Option<f64>>,
}

/// Builds the translation and scale columns of every part, in part order
/// and `[t0, t1, t2, s0, s1, s2]` order within a part.
pub fn build_handle_space(parts: &[PartBox], pc: &PointCloud) -> Result<HandleSpace> {
    let n = pc.len();
    let mut owner = vec![usize::MAX; n];
    for (p, part) in parts.iter().enumerate() {
        for &i in &part.point_ids {
            if i >= n {
                return Err(Error::input("part owns a point index past the cloud"));
            }
            if owner[i] != usize::MAX {
                return Err(Error::input("parts own overlapping points"));
            }
            owner[i] = p;
        }
    }
    if let Some(i) = owner.iter().position(|o| *o == usize::MAX) {
        return Err(Error::InvalidInput(alloc::format!("point {i} is not covered by any part")));
    }
    let m = parts.len() * 6;
    let mut basis = Matrix::zeros(3 * n, m);
    let mut defaults = Vec::with_capacity(m);
    let mut handles = Vec::with_capacity(m);
    let mut lower_bounds = Vec::with_capacity(m);
    for (p, part) in parts.iter().enumerate() {
        let base = 6 * p;
        for u in 0..3 {
            handles.push(Handle { part: p, kind: HandleKind::Translation, axis: u });
            defaults.push(dot3(&part.center, &part.axes[u]));
            lower_bounds.push(None);
        }
        for u in 0..3 {
            handles.push(Handle { part: p, kind: HandleKind::Scale, axis: u });
            defaults.push(1.0);
            lower_bounds.push(Some(0.0));
        }
        for &i in &part.point_ids {
            let q = pc.points()[i];
            let rel = [q[0] - part.center[0], q[1] - part.center[1], q[2] - part.center[2]];
            for u in 0..3 {
                let axis = part.axes[u];
                let along = dot3(&rel, &axis);
                for c in 0..3 {
                    basis.set(3 * i + c, base + u, axis[c]);
                    basis.set(3 * i + c, base + 3 + u, along * axis[c]);
                }
            }
        }
    }
    Ok(HandleSpace {
        basis,
        defaults: Vector::from_vec(defaults)?,
        handles,
        lower_bounds,
    })
}

impl HandleSpace {
    pub fn num_handles(&self) -> usize {
        self.handles.len()
    }

    pub fn num_points(&self) -> usize {
        self.basis.rows() / 3
    }

    /// The cloud `B_x z` for a full parameter vector.
    pub fn cloud_for(&self, z: &[f64]) -> Result<PointCloud> {
        PointCloud::from_flat(&self.basis.matvec(z)?)
    }

    pub fn rest_cloud(&self) -> Result<PointCloud> {
        self.cloud_for(&self.defaults)
    }

    pub fn basis_pinv(&self) -> Result<Matrix> {
        pinv(&self.basis, DEFAULT_RCOND)
    }
}

/// `B_x B_x† x`: the closest cloud describable by the handles.
pub fn project_to_handles(hs: &HandleSpace, pc: &PointCloud) -> Result<PointCloud> {
    project_to_handles_with(&hs.basis, &hs.basis_pinv()?, pc)
}

/// [`project_to_handles`] with a cached pseudoinverse.
pub fn project_to_handles_with(basis: &Matrix, basis_pinv: &Matrix, pc: &PointCloud) -> Result<PointCloud> {
    let flat = pc.flatten();
    if flat.len() != basis.rows() {
        return Err(Error::dim("cloud vs handle basis", basis.rows(), flat.len()));
    }
    let z = basis_pinv.matvec(&flat)?;
    PointCloud::from_flat(&basis.matvec(&z)?)
}

/// Handles fixed by the user and their prescribed values (aligned with
/// `selected`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub selected: Vec<usize>,
    pub values: Vec<f64>,
}

impl EditRequest {
    pub fn new(selected: Vec<usize>, values: Vec<f64>) -> Self {
        EditRequest { selected, values }
    }

    fn validate(&self, m: usize) -> Result<()> {
        if self.selected.len() != self.values.len() {
            return Err(Error::dim("edit values", self.selected.len(), self.values.len()));
        }
        let mut seen = vec![false; m];
        for &h in &self.selected {
            if h >= m {
                return Err(Error::InvalidInput(alloc::format!("handle {h} out of range (m = {m})")));
            }
            if seen[h] {
                return Err(Error::InvalidInput(alloc::format!("handle {h} selected twice")));
            }
            seen[h] = true;
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("edit values"));
        }
        Ok(())
    }
}

/// How `I − A_x A_x†` is represented.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ProjectorForm {
    /// Dense when `3n ≤ 4096`, factored otherwise.
    #[default]
    Auto,
    Dense,
    Factored,
}

const DENSE_PROJECTOR_LIMIT: usize = 4096;

/// The residual projector `I − A A†` onto the orthogonal complement of the
/// dictionary's column space.
#[derive(Clone, Debug)]
pub enum ResidualProjector {
    Dense(Matrix),
    Factored { a: Matrix, a_pinv: Matrix },
}

impl ResidualProjector {
    pub fn new(dict: &Dictionary, form: ProjectorForm) -> Result<Self> {
        let a = dict.matrix().clone();
        let a_pinv = pinv(&a, DEFAULT_RCOND)?;
        let dense = match form {
            ProjectorForm::Auto => a.rows() <= DENSE_PROJECTOR_LIMIT,
            ProjectorForm::Dense => true,
            ProjectorForm::Factored => false,
        };
        if dense {
            let aa = linalg::matmul(&a, &a_pinv)?;
            Ok(ResidualProjector::Dense(Matrix::identity(a.rows()).sub(&aa)?))
        } else {
            Ok(ResidualProjector::Factored { a, a_pinv })
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ResidualProjector::Dense(m) => m.rows(),
            ResidualProjector::Factored { a, .. } => a.rows(),
        }
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            ResidualProjector::Dense(m) => Ok(m.matvec(v)?.into_inner()),
            ResidualProjector::Factored { a, a_pinv } => {
                let coeff = a_pinv.matvec(v)?;
                let back = a.matvec(&coeff)?;
                Ok(v.iter().zip(back.iter()).map(|(x, y)| x - y).collect())
            }
        }
    }

    fn apply_columns(&self, m: &Matrix) -> Result<Matrix> {
        match self {
            ResidualProjector::Dense(r) => linalg::matmul(r, m),
            ResidualProjector::Factored { a, a_pinv } => {
                let coeff = linalg::matmul(a_pinv, m)?;
                m.sub(&linalg::matmul(a, &coeff)?)
            }
        }
    }
}

/// Operators for editing through a fixed set of selected handles:
/// `P_x = (I − A A†) B'_x`, its pseudoinverse, and `Q_x = −(I − A A†)`.
#[derive(Clone, Debug)]
pub struct EditOperators {
    selected: Vec<usize>,
    free: Vec<usize>,
    residual: Arc<ResidualProjector>,
    p: Matrix,
    p_pinv: Matrix,
}

/// Result of projecting an edit.
#[derive(Clone, Debug, PartialEq)]
pub struct EditProjection {
    /// Full parameter vector; selected entries equal the requested values.
    pub z_hat: Vector,
    pub cloud: PointCloud,
}

/// Precomputes the edit operators for `selected` with the default projector
/// form.
pub fn precompute_edit_operators(hs: &HandleSpace, dict: &Dictionary, selected: &[usize]) -> Result<EditOperators> {
    let residual = Arc::new(ResidualProjector::new(dict, ProjectorForm::Auto)?);
    EditOperators::build(hs, residual, selected)
}

impl EditOperators {
    /// Builds operators for a selection, sharing an existing residual
    /// projector of the shape's dictionary.
    pub fn build(hs: &HandleSpace, residual: Arc<ResidualProjector>, selected: &[usize]) -> Result<Self> {
        let m = hs.num_handles();
        if residual.dim() != hs.basis.rows() {
            return Err(Error::dim("dictionary rows vs handle basis", hs.basis.rows(), residual.dim()));
        }
        let mut is_sel = vec![false; m];
        for &h in selected {
            if h >= m || is_sel[h] {
                return Err(Error::InvalidInput(alloc::format!("invalid handle selection {h}")));
            }
            is_sel[h] = true;
        }
        let free: Vec<usize> = (0..m).filter(|&h| !is_sel[h]).collect();
        let b_free = hs.basis.select_columns(&free);
        let p = residual.apply_columns(&b_free)?;
        let p_pinv = pinv(&p, DEFAULT_RCOND)?;
        Ok(EditOperators {
            selected: selected.to_vec(),
            free,
            residual,
            p,
            p_pinv,
        })
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn p(&self) -> &Matrix {
        &self.p
    }

    pub fn p_pinv(&self) -> &Matrix {
        &self.p_pinv
    }

    /// `Q_x c = −(I − A A†) c`.
    pub fn apply_q(&self, c: &[f64]) -> Result<Vec<f64>> {
        Ok(self.residual.apply(c)?.into_iter().map(|v| -v).collect())
    }

    /// Projects an edit whose selected handles match this operator set.
    pub fn project(&self, hs: &HandleSpace, edit: &EditRequest) -> Result<EditProjection> {
        let m = hs.num_handles();
        edit.validate(m)?;
        let mut z = hs.defaults.to_vec();
        // Values for our selection, in our order.
        let mut sel_values = Vec::with_capacity(self.selected.len());
        for &h in &self.selected {
            let pos = edit
                .selected
                .iter()
                .position(|s| *s == h)
                .ok_or(Error::Usage("edit selection does not match precomputed operators"))?;
            sel_values.push(edit.values[pos]);
        }
        if edit.selected.len() != self.selected.len() {
            return Err(Error::Usage("edit selection does not match precomputed operators"));
        }
        if !self.free.is_empty() {
            let mut c = vec![0.0; hs.basis.rows()];
            for (&h, &value) in self.selected.iter().zip(&sel_values) {
                let delta = value - hs.defaults[h];
                if delta == 0.0 {
                    continue;
                }
                for (r, ci) in c.iter_mut().enumerate() {
                    *ci += hs.basis.get(r, h) * delta;
                }
            }
            let qc = self.apply_q(&c)?;
            let bounds: Vec<Option<f64>> = self
                .free
                .iter()
                .map(|&h| hs.lower_bounds[h].map(|l| l - hs.defaults[h]))
                .collect();
            let delta = lstsq_bounded_with_pinv(&self.p, &self.p_pinv, &qc, &bounds)?;
            for (k, &h) in self.free.iter().enumerate() {
                z[h] = hs.defaults[h] + delta[k];
                if let Some(l) = hs.lower_bounds[h] {
                    if z[h] < l {
                        z[h] = l;
                    }
                }
            }
        }
        for (&h, &value) in self.selected.iter().zip(&sel_values) {
            z[h] = value;
        }
        let cloud = hs.cloud_for(&z)?;
        Ok(EditProjection {
            z_hat: Vector::from_vec(z)?,
            cloud,
        })
    }
}

/// Projects a handle edit onto the learned deformation space of `x`.
///
/// Selected handles keep their requested values; the others minimize
/// `‖(I − A A†)(B'_x z' + c)‖²` with scale parameters kept nonnegative.
pub fn project_edit(hs: &HandleSpace, dict: &Dictionary, x: &PointCloud, edit: &EditRequest) -> Result<EditProjection> {
    if x.len() * 3 != hs.basis.rows() {
        return Err(Error::dim("cloud vs handle basis", hs.basis.rows(), x.len() * 3));
    }
    if dict.n() * 3 != hs.basis.rows() {
        return Err(Error::dim("dictionary vs handle basis", hs.basis.rows(), dict.n() * 3));
    }
    edit.validate(hs.num_handles())?;
    if edit.selected.len() == hs.num_handles() {
        return project_edit_with(hs, None, edit);
    }
    let residual = Arc::new(ResidualProjector::new(dict, ProjectorForm::Auto)?);
    project_edit_with(hs, Some(residual), edit)
}

/// [`project_edit`] with a prebuilt residual projector, which may be omitted
/// only when every handle is selected.
pub fn project_edit_with(hs: &HandleSpace, residual: Option<Arc<ResidualProjector>>, edit: &EditRequest) -> Result<EditProjection> {
    edit.validate(hs.num_handles())?;
    if edit.selected.len() == hs.num_handles() {
        let mut z = vec![0.0; hs.num_handles()];
        for (&h, &v) in edit.selected.iter().zip(&edit.values) {
            z[h] = v;
        }
        let cloud = hs.cloud_for(&z)?;
        return Ok(EditProjection {
            z_hat: Vector::from_vec(z)?,
            cloud,
        });
    }
    let residual = residual.ok_or(Error::Usage("a residual projector is needed unless every handle is selected"))?;
    if residual.dim() != hs.basis.rows() {
        return Err(Error::dim("residual projector vs handle basis", hs.basis.rows(), residual.dim()));
    }
    EditOperators::build(hs, residual, &edit.selected)?.project(hs, edit)
}

/// Value of the projection objective `‖(I − A A†)(B z − B z_0)‖²` for a full
/// parameter vector.
pub fn edit_objective(hs: &HandleSpace, residual: &ResidualProjector, z: &[f64]) -> Result<f64> {
    let dz: Vec<f64> = z.iter().zip(hs.defaults.iter()).map(|(a, b)| a - b).collect();
    let offset = hs.basis.matvec(&dz)?;
    let r = residual.apply(&offset)?;
    Ok(linalg::dot(&r, &r))
}
