//! Computations shared by the CLI and the service, so both produce the
//! same bytes for the same inputs.

use std::sync::Arc;

use lindeform_core::datagen::ProcShape;
use lindeform_core::deform::LatentDelta;
use lindeform_core::geometry::PointCloud;
use lindeform_core::handles::{project_edit_with, EditRequest, ProjectorForm, ResidualProjector};
use lindeform_core::linalg::Vector;
use lindeform_core::nets::{Model, Variant};

use crate::formats::{HandleEdit, ProjectResponse, TargetEdit};
use crate::{Error, Result};

/// `I − A A†` for the shape's predicted dictionary; `None` for models
/// without a linear dictionary.
pub fn residual_for(model: &Model, cloud: &PointCloud) -> Result<Option<Arc<ResidualProjector>>> {
    if model.variant() == Variant::Circular {
        return Ok(None);
    }
    let dict = model.predict_dictionary(cloud)?;
    Ok(Some(Arc::new(ResidualProjector::new(&dict, ProjectorForm::Auto)?)))
}

pub fn edit_request(edits: &[HandleEdit]) -> EditRequest {
    EditRequest::new(edits.iter().map(|e| e.handle).collect(), edits.iter().map(|e| e.value).collect())
}

/// Projects handle edits of `shape` onto its learned deformation space.
pub fn project(shape: &ProcShape, residual: Option<Arc<ResidualProjector>>, edits: &[HandleEdit]) -> Result<ProjectResponse> {
    let hs = &shape.handle_space;
    if residual.is_none() && edits.len() != hs.num_handles() {
        return Err(Error::Usage("projection needs a model with a linear dictionary".into()));
    }
    let mut seen = vec![false; hs.num_handles()];
    for e in edits {
        match seen.get_mut(e.handle) {
            None => return Err(Error::Usage(format!("handle {} out of range ({} handles)", e.handle, hs.num_handles()))),
            Some(true) => return Err(Error::Usage(format!("handle {} edited twice", e.handle))),
            Some(s) => *s = true,
        }
        if let Some(Some(lo)) = hs.lower_bounds.get(e.handle) {
            if e.value < *lo {
                return Err(Error::Usage(format!("handle {} = {} is below its bound {lo}", e.handle, e.value)));
            }
        }
    }
    let out = project_edit_with(hs, residual, &edit_request(edits))?;
    Ok(ProjectResponse {
        z_hat: out.z_hat.to_vec(),
        points: out.cloud.points().to_vec(),
    })
}

/// Applies the edit of `src` described by `edit` to `dst`.
pub fn transfer(model: &Model, src: &ProcShape, edit: &TargetEdit, dst: &PointCloud) -> Result<PointCloud> {
    match edit {
        TargetEdit::ZHat(z) => {
            let m = src.handle_space.num_handles();
            if z.len() != m {
                return Err(Error::Usage(format!("z_hat has {} entries, the shape has {m} handles", z.len())));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Usage("z_hat must be finite".into()));
            }
            let tgt = src.handle_space.cloud_for(z)?;
            Ok(model.transfer(&src.cloud, &tgt, dst)?)
        }
        TargetEdit::LatentDelta(v) => {
            if v.len() != model.k() {
                return Err(Error::Usage(format!("latent_delta has {} entries, k = {}", v.len(), model.k())));
            }
            let v = Vector::from_vec(v.clone()).map_err(|e| Error::Usage(e.to_string()))?;
            Ok(model.deform_by(dst, &LatentDelta(v))?)
        }
    }
}

/// Amplitudes `scale·(2i − (steps − 1))/(steps − 1)`: symmetric about zero
/// bit for bit, with an exact zero when `steps` is odd.
pub fn sweep(steps: usize, scale: f64) -> Vec<f64> {
    if steps == 1 {
        return vec![0.0];
    }
    let d = (steps - 1) as f64;
    (0..steps).map(|i| scale * (2.0 * i as f64 - d) / d).collect()
}

/// For each latent coordinate `j`, `x ⊕ α e_j` over the sweep.
pub fn element_frames(model: &Model, x: &PointCloud, steps: usize, scale: f64) -> Result<Vec<Vec<PointCloud>>> {
    let alphas = sweep(steps, scale);
    let mut out = Vec::with_capacity(model.k());
    for j in 0..model.k() {
        let mut frames = Vec::with_capacity(steps);
        for &a in &alphas {
            let mut v = vec![0.0; model.k()];
            v[j] = a;
            frames.push(model.deform_by(x, &LatentDelta(Vector::from_vec(v)?))?);
        }
        out.push(frames);
    }
    Ok(out)
}
