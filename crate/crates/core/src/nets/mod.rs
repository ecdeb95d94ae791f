//! Point-cloud networks: the shape encoder and the dictionary predictor.
//!
//! Both are PointNet-style: a shared per-point MLP, a max-pool over points,
//! and a head. Parameters are `f32`; activations and gradients are `f64`.
//! Backpropagation is written out layer by layer.

mod layers;
mod model;

pub use layers::{Linear, LinearGrad, Mlp};
pub use model::{DictGraph, Gradients, Model, ModelConfig, PairGraph, Variant, Widths};

/// Five-point central difference (step `step`) of `f` with respect to one
/// `f32` parameter, using the actually representable perturbed values.
/// `f` also returns a kink pattern; the flag reports whether it changed
/// anywhere on the stencil. The parameter is restored afterwards.
#[doc(hidden)]
pub fn central_difference(
    model: &mut Model,
    slot: usize,
    index: usize,
    step: f32,
    f: &dyn Fn(&Model) -> (f64, alloc::vec::Vec<usize>),
) -> (f64, bool) {
    let orig = model.tensors_mut()[slot][index];
    let (_, base) = f(model);
    let mut kink = false;
    let mut eval = |offset: f32| {
        let v = orig + offset;
        model.tensors_mut()[slot][index] = v;
        let (value, pattern) = f(model);
        kink |= pattern != base;
        (value, v as f64 - orig as f64)
    };
    let (f2, h2) = eval(2.0 * step);
    let (f1, h1) = eval(step);
    let (m1, k1) = eval(-step);
    let (m2, k2) = eval(-2.0 * step);
    model.tensors_mut()[slot][index] = orig;
    // The steps are symmetric up to f32 rounding; use the mean spacing.
    let h = (h1 - k1 + (h2 - k2) / 2.0) / 4.0;
    ((-f2 + 8.0 * f1 - 8.0 * m1 + m2) / (12.0 * h), kink)
}

/// Outcome of comparing analytic gradients with central differences.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, Default)]
pub struct GradientCheck {
    pub total: usize,
    pub agree: usize,
    /// Disagreeing parameters whose stencil crosses a kink.
    pub kinks: usize,
}

impl GradientCheck {
    pub fn agree_fraction(&self) -> f64 {
        self.agree as f64 / self.total as f64
    }

    /// Disagreements not explained by a kink.
    pub fn unexplained(&self) -> usize {
        self.total - self.agree - self.kinks
    }

    /// At least `frac` of the parameters agree, or every disagreement sits
    /// on a kink and at least `frac` of the kink-free parameters agree.
    pub fn passes(&self, frac: f64) -> bool {
        let smooth = self.total - self.kinks;
        self.agree_fraction() >= frac || (self.unexplained() == 0 && self.agree as f64 >= frac * smooth as f64)
    }
}

/// Compares every parameter gradient with [`central_difference`] at step
/// 1e-3; agreement means relative error below 1e-4 (or absolute below 1e-9).
#[doc(hidden)]
pub fn check_gradients(model: &Model, analytic: &Gradients, f: &dyn Fn(&Model) -> (f64, alloc::vec::Vec<usize>)) -> GradientCheck {
    let flat: alloc::vec::Vec<f64> = analytic.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let mut m = model.clone();
    let mut out = GradientCheck::default();
    let mut idx = 0;
    for slot in 0..model.tensors().len() {
        for p in 0..model.tensors()[slot].2.len() {
            let (fd, kink) = central_difference(&mut m, slot, p, 1e-3, f);
            let an = flat[idx];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            out.total += 1;
            if rel < 1e-4 || (fd - an).abs() < 1e-9 {
                out.agree += 1;
            } else if kink {
                out.kinks += 1;
            }
            idx += 1;
        }
    }
    out
}
