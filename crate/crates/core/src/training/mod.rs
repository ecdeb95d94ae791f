//! Losses, pair sampling, the optimizer and the training loop.

mod losses;

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::fmt;
use core::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::geometry::{Plane, PointCloud};
use crate::handles::HandleSpace;
use crate::linalg::Matrix;
use crate::nets::{Gradients, Model, ModelConfig, Variant, Widths};
use crate::rng::{mix, stream};
use crate::{Error, Result};

pub use losses::{loss_fitting, loss_reflection, loss_sparsity_l1, loss_sparsity_l21, pair_loss, sparsity_l1, sparsity_l21, LossBreakdown};

/// Handle basis of a training shape with its pseudoinverse, computed once.
#[derive(Clone, Debug)]
pub struct HandleCache {
    pub basis: Matrix,
    pub basis_pinv: Matrix,
}

impl HandleCache {
    pub fn new(hs: &HandleSpace) -> Result<Self> {
        Ok(HandleCache {
            basis: hs.basis.clone(),
            basis_pinv: hs.basis_pinv()?,
        })
    }
}

/// One training shape.
#[derive(Clone, Debug)]
pub struct TrainShape {
    pub cloud: PointCloud,
    pub handles: Option<HandleCache>,
}

impl TrainShape {
    pub fn new(cloud: PointCloud) -> Self {
        TrainShape { cloud, handles: None }
    }

    pub fn with_handles(cloud: PointCloud, hs: &HandleSpace) -> Result<Self> {
        Ok(TrainShape {
            cloud,
            handles: Some(HandleCache::new(hs)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n: usize,
    pub k: usize,
    pub variant: Variant,
    pub widths: Widths,
    pub normalize_rotation: bool,
    /// Weight of the column-wise l2,1 sparsity loss.
    pub w_sparsity: f64,
    /// Mirror plane for the reflection loss; `None` disables it.
    pub reflection: Option<Plane>,
    /// Fit the handle-space projection of the output instead of the raw output.
    pub project_in_training: bool,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Optimizer steps per epoch; defaults to `ceil(shapes / batch_pairs)`.
    pub steps_per_epoch: Option<usize>,
    pub batch_pairs: usize,
    pub seed: u64,
    pub self_pair_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n: 512,
            k: 32,
            variant: Variant::Standard,
            widths: Widths::default(),
            normalize_rotation: true,
            w_sparsity: 10.0,
            reflection: None,
            project_in_training: false,
            learning_rate: 1e-3,
            epochs: 10,
            steps_per_epoch: None,
            batch_pairs: 8,
            seed: 0,
            self_pair_prob: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            n: self.n,
            k: self.k,
            variant: self.variant,
            widths: self.widths.clone(),
            normalize_rotation: self.normalize_rotation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        if !(self.w_sparsity >= 0.0 && self.w_sparsity.is_finite()) {
            return Err(Error::input("w_sparsity must be finite and nonnegative"));
        }
        if self.variant == Variant::Circular && self.w_sparsity > 0.0 {
            return Err(Error::input("the sparsity loss applies to linear dictionaries only; set w_sparsity = 0"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::input("learning rate must be positive"));
        }
        if self.epochs == 0 || self.batch_pairs == 0 || self.steps_per_epoch == Some(0) {
            return Err(Error::input("epochs, batch size and steps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.self_pair_prob) {
            return Err(Error::input("self-pair probability must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Draws ordered pairs: a self-pair with probability `self_prob`, otherwise
/// a uniform pair of distinct shapes.
#[derive(Clone, Copy, Debug)]
pub struct PairSampler {
    count: usize,
    self_prob: f64,
}

impl PairSampler {
    pub fn new(count: usize, self_prob: f64) -> Result<Self> {
        if count < 2 {
            return Err(Error::input("training needs at least two shapes"));
        }
        Ok(PairSampler { count, self_prob })
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let i = rng.gen_range(0..self.count);
        if self.self_prob > 0.0 && rng.gen::<f64>() < self.self_prob {
            return (i, i);
        }
        let mut j = rng.gen_range(0..self.count - 1);
        if j >= i {
            j += 1;
        }
        (i, j)
    }
}

/// Adam with bias correction. Moments are kept in `f64`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &Model, lr: f64) -> Self {
        let shapes: Vec<Vec<f64>> = model.tensors().iter().map(|(_, _, t)| alloc::vec![0.0; t.len()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for (((p, g), m), v) in model.tensors_mut().into_iter().zip(grads.tensors()).zip(&mut self.m).zip(&mut self.v) {
            for q in 0..p.len() {
                m[q] = self.beta1 * m[q] + (1.0 - self.beta1) * g[q];
                v[q] = self.beta2 * v[q] + (1.0 - self.beta2) * g[q] * g[q];
                let update = self.lr * (m[q] / c1) / (libm::sqrt(v[q] / c2) + self.eps);
                p[q] = (p[q] as f64 - update) as f32;
            }
        }
    }
}

/// Progress passed to the training observer after every epoch.
pub struct EpochReport<'a> {
    pub epoch: usize,
    pub step: usize,
    pub model: &'a Model,
    /// Mean breakdown over the epoch's steps.
    pub mean: LossBreakdown,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean breakdown of every optimizer step.
    pub history: Vec<LossBreakdown>,
}

#[derive(Clone, Debug)]
pub enum TrainError {
    /// A non-finite loss or gradient; `last_good` holds the parameters
    /// before the failing step.
    Diverged {
        step: usize,
        last_good: Box<Model>,
        history: Vec<LossBreakdown>,
    },
    Core(Error),
}

impl From<Error> for TrainError {
    fn from(e: Error) -> Self {
        TrainError::Core(e)
    }
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Diverged { step, .. } => write!(f, "training diverged at step {step}"),
            TrainError::Core(e) => e.fmt(f),
        }
    }
}

const INIT_SALT: u64 = 0x696e6974;
const SAMPLER_SALT: u64 = 0x70616972;

pub fn train(data: &[TrainShape], cfg: &TrainConfig) -> core::result::Result<TrainOutcome, TrainError> {
    train_with(data, cfg, |_| ControlFlow::Continue(()))
}

/// Trains from a fresh initialization, calling `observer` after each epoch;
/// returning `Break` stops early.
pub fn train_with(
    data: &[TrainShape],
    cfg: &TrainConfig,
    observer: impl FnMut(&EpochReport<'_>) -> ControlFlow<()>,
) -> core::result::Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let model = Model::new(cfg.model_config(), mix(cfg.seed ^ INIT_SALT))?;
    continue_training(model, data, cfg, observer)
}

/// Runs `cfg.epochs` epochs starting from `model`.
pub fn continue_training(
    mut model: Model,
    data: &[TrainShape],
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochReport<'_>) -> ControlFlow<()>,
) -> core::result::Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if model.config() != &cfg.model_config() {
        return Err(Error::Usage("model does not match the training configuration").into());
    }
    for s in data {
        if s.cloud.len() != cfg.n {
            return Err(Error::dim("training cloud size", cfg.n, s.cloud.len()).into());
        }
        if (cfg.w_sparsity > 0.0 || cfg.project_in_training) && s.handles.is_none() {
            return Err(Error::input("sparsity and projection in training need handle spaces").into());
        }
    }
    let sampler = PairSampler::new(data.len(), cfg.self_pair_prob)?;
    let steps = cfg.steps_per_epoch.unwrap_or_else(|| data.len().div_ceil(cfg.batch_pairs).max(1));
    let mut rng = stream(cfg.seed, SAMPLER_SALT);
    let mut adam = Adam::new(&model, cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs * steps);
    let weight = 1.0 / cfg.batch_pairs as f64;
    for epoch in 0..cfg.epochs {
        let mut epoch_mean = LossBreakdown::default();
        for _ in 0..steps {
            let mut total = model.zero_gradients();
            let mut mean = LossBreakdown::default();
            for _ in 0..cfg.batch_pairs {
                let (i, j) = sampler.sample(&mut rng);
                let (b, g) = match pair_loss(&model, &data[i], &data[j], cfg) {
                    Ok(v) => v,
                    Err(e) if e.is_numerical() => return Err(diverged(model, history)),
                    Err(e) => return Err(e.into()),
                };
                if !b.is_finite() || !g.is_finite() {
                    return Err(diverged(model, history));
                }
                mean.accumulate(&b, weight);
                total.add_assign(&g);
            }
            total.scale(weight);
            let before = model.clone();
            adam.step(&mut model, &total);
            if !model.is_finite() {
                return Err(diverged(before, history));
            }
            epoch_mean.accumulate(&mean, 1.0 / steps as f64);
            history.push(mean);
        }
        let report = EpochReport {
            epoch,
            step: history.len(),
            model: &model,
            mean: epoch_mean,
        };
        if observer(&report).is_break() {
            break;
        }
    }
    Ok(TrainOutcome { model, history })
}

fn diverged(model: Model, history: Vec<LossBreakdown>) -> TrainError {
    TrainError::Diverged {
        step: history.len(),
        last_good: Box::new(model),
        history,
    }
}
