use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainShape};
use crate::geometry::{chamfer_value_grads, mirror_points, Point};
use crate::linalg::{self, Matrix};
use crate::nets::{Gradients, Model};
use crate::{Error, Result};

/// Loss values for one pair (or a mean over a batch).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub fitting: f64,
    pub reflection: f64,
    /// Entry-wise l1 of the projected dictionary; reported, never optimized.
    pub sparsity_l1: f64,
    pub sparsity_l21: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.fitting, self.reflection, self.sparsity_l1, self.sparsity_l21, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    pub(crate) fn accumulate(&mut self, other: &LossBreakdown, weight: f64) {
        self.fitting += weight * other.fitting;
        self.reflection += weight * other.reflection;
        self.sparsity_l1 += weight * other.sparsity_l1;
        self.sparsity_l21 += weight * other.sparsity_l21;
        self.total += weight * other.total;
    }
}

/// `(1/k) Σ |m_ij|` of a projected dictionary `B† A` (`m × k`).
pub fn sparsity_l1(projected: &Matrix) -> f64 {
    let k = projected.cols() as f64;
    projected.data().iter().map(|v| v.abs()).sum::<f64>() / k
}

/// `(1/k) Σ_j ‖m_j‖₂` over the columns of a projected dictionary.
pub fn sparsity_l21(projected: &Matrix) -> f64 {
    column_norms(projected).iter().sum::<f64>() / projected.cols() as f64
}

fn column_norms(m: &Matrix) -> Vec<f64> {
    let mut sq = alloc::vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (s, v) in sq.iter_mut().zip(m.row(r)) {
            *s += v * v;
        }
    }
    sq.into_iter().map(libm::sqrt).collect()
}

/// Both sparsity terms of `B† A` and the gradient of the l2,1 term with
/// respect to `A` (zero columns contribute a zero subgradient).
pub(crate) fn sparsity_terms(basis_pinv: &Matrix, a: &Matrix) -> Result<(f64, f64, Matrix)> {
    let m = linalg::matmul(basis_pinv, a)?;
    let k = a.cols() as f64;
    let norms = column_norms(&m);
    let dm = Matrix::from_fn(m.rows(), m.cols(), |r, j| if norms[j] > 0.0 { m.get(r, j) / (norms[j] * k) } else { 0.0 });
    let da = linalg::matmul(&basis_pinv.transpose(), &dm)?;
    Ok((sparsity_l1(&m), sparsity_l21(&m), da))
}

fn to_points(flat: &[f64]) -> Vec<Point> {
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

fn add_into(dst: &mut [Point], src: &[Point]) {
    for (d, s) in dst.iter_mut().zip(src) {
        for c in 0..3 {
            d[c] += s[c];
        }
    }
}

/// Which terms [`pair_loss`] should evaluate.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Terms {
    pub fitting: bool,
    pub reflection: bool,
    pub sparsity: bool,
}

impl Terms {
    pub fn all() -> Self {
        Terms {
            fitting: true,
            reflection: true,
            sparsity: true,
        }
    }
}

/// Projects a flat cloud onto the handle space, `B (B† v)`.
fn handle_projection(basis: &Matrix, basis_pinv: &Matrix, v: &[f64]) -> Result<Vec<f64>> {
    let z = basis_pinv.matvec(v)?;
    Ok(basis.matvec(&z)?.into_inner())
}

pub(crate) fn pair_loss_terms(model: &Model, src: &TrainShape, tgt: &TrainShape, cfg: &TrainConfig, terms: Terms) -> Result<(LossBreakdown, Gradients)> {
    let graph = model.forward_pair(&src.cloud, &tgt.cloud)?;
    let deformed = graph.deformed().points();
    let n = deformed.len();
    let mut g_out = alloc::vec![[0.0; 3]; n];
    let mut out = LossBreakdown::default();

    if terms.fitting {
        if cfg.project_in_training {
            let h = src.handles.as_ref().ok_or(Error::Usage("projection in training needs handle spaces"))?;
            let flat: Vec<f64> = deformed.iter().flat_map(|p| p.iter().copied()).collect();
            let projected = to_points(&handle_projection(&h.basis, &h.basis_pinv, &flat)?);
            let (value, ga, _) = chamfer_value_grads(&projected, tgt.cloud.points());
            out.fitting = value;
            // B B† is symmetric, so the gradient goes through the same projector.
            let ga_flat: Vec<f64> = ga.iter().flat_map(|p| p.iter().copied()).collect();
            add_into(&mut g_out, &to_points(&handle_projection(&h.basis, &h.basis_pinv, &ga_flat)?));
        } else {
            let (value, ga, _) = chamfer_value_grads(deformed, tgt.cloud.points());
            out.fitting = value;
            add_into(&mut g_out, &ga);
        }
    }

    if terms.reflection {
        if let Some(plane) = cfg.reflection {
            let mirrored = mirror_points(deformed, plane);
            let (value, ga, gb) = chamfer_value_grads(deformed, &mirrored);
            out.reflection = value;
            add_into(&mut g_out, &ga);
            add_into(&mut g_out, &mirror_points(&gb, plane));
        }
    }

    let mut d_dict = None;
    if terms.sparsity {
        if let (Some(h), Some(dict)) = (src.handles.as_ref(), graph.dict().dictionary()) {
            let (l1, l21, da) = sparsity_terms(&h.basis_pinv, dict.matrix())?;
            out.sparsity_l1 = l1;
            out.sparsity_l21 = l21;
            if cfg.w_sparsity > 0.0 {
                d_dict = Some(da.scaled(cfg.w_sparsity));
            }
        } else if cfg.w_sparsity > 0.0 && graph.dict().dictionary().is_some() {
            return Err(Error::Usage("sparsity loss needs handle spaces"));
        }
    }

    out.total = out.fitting + out.reflection + cfg.w_sparsity * out.sparsity_l21;
    let grads = graph.backward(model, &g_out, d_dict.as_ref())?;
    Ok((out, grads))
}

/// The full objective `L_F + L_R + w·L_S21` for one ordered pair.
pub fn pair_loss(model: &Model, src: &TrainShape, tgt: &TrainShape, cfg: &TrainConfig) -> Result<(LossBreakdown, Gradients)> {
    let terms = Terms {
        sparsity: cfg.w_sparsity > 0.0 || src.handles.is_some(),
        ..Terms::all()
    };
    pair_loss_terms(model, src, tgt, cfg, terms)
}

/// `Ch(d(x→y), y)`, through the handle projection when configured.
pub fn loss_fitting(model: &Model, src: &TrainShape, tgt: &TrainShape, cfg: &TrainConfig) -> Result<(f64, Gradients)> {
    let terms = Terms {
        fitting: true,
        reflection: false,
        sparsity: false,
    };
    let (b, g) = pair_loss_terms(model, src, tgt, cfg, terms)?;
    Ok((b.fitting, g))
}

/// `Ch(d(x→y), R(d(x→y)))`.
pub fn loss_reflection(model: &Model, src: &TrainShape, tgt: &TrainShape, cfg: &TrainConfig) -> Result<(f64, Gradients)> {
    if cfg.reflection.is_none() {
        return Err(Error::Usage("no reflection plane configured"));
    }
    let terms = Terms {
        fitting: false,
        reflection: true,
        sparsity: false,
    };
    let (b, g) = pair_loss_terms(model, src, tgt, cfg, terms)?;
    Ok((b.reflection, g))
}

fn projected_dictionary(model: &Model, src: &TrainShape) -> Result<(Matrix, crate::nets::DictGraph)> {
    let h = src.handles.as_ref().ok_or(Error::Usage("sparsity loss needs handle spaces"))?;
    let graph = model.forward_dictionary(&src.cloud)?;
    let a = graph.dictionary().ok_or(Error::Usage("sparsity loss needs a linear dictionary"))?;
    Ok((linalg::matmul(&h.basis_pinv, a.matrix())?, graph))
}

/// `(1/k)‖B† F(x)‖₁`.
pub fn loss_sparsity_l1(model: &Model, src: &TrainShape) -> Result<f64> {
    Ok(sparsity_l1(&projected_dictionary(model, src)?.0))
}

/// `(1/k) Σ_j ‖(B† F(x))_j‖₂` and its parameter gradient.
pub fn loss_sparsity_l21(model: &Model, src: &TrainShape) -> Result<(f64, Gradients)> {
    let h = src.handles.as_ref().ok_or(Error::Usage("sparsity loss needs handle spaces"))?;
    let (_, graph) = projected_dictionary(model, src)?;
    let a = graph.dictionary().expect("checked above").matrix();
    let (_, l21, da) = sparsity_terms(&h.basis_pinv, a)?;
    Ok((l21, graph.backward(model, &da)?))
}
