use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::layers::{LinearGrad, Mlp, MlpTrace};
use crate::deform::{self, Dictionary, LatentCode, LatentDelta};
use crate::geometry::{Point, PointCloud};
use crate::linalg::{Matrix, Vector};
use crate::nonlinear::{self, CircularDictionary};
use crate::rng::stream;
use crate::{Error, Result};

/// Network family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Separate encoder; `v = E(y) − E(x)`.
    #[default]
    Standard,
    /// Ablation: `v` is predicted from both pooled features at once, so the
    /// latent laws are not built in.
    Concat,
    /// Standard encoder with circular trajectories instead of a linear
    /// dictionary.
    Circular,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::Concat => "concat",
            Variant::Circular => "circular",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "standard" | "linear" => Some(Variant::Standard),
            "concat" => Some(Variant::Concat),
            "circular" => Some(Variant::Circular),
            _ => None,
        }
    }
}

/// Hidden layer widths. Point MLPs end in the pooled feature width; heads
/// list hidden widths only (the output size follows from `k`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widths {
    pub encoder_point: Vec<usize>,
    pub encoder_head: Vec<usize>,
    pub dict_point: Vec<usize>,
    pub dict_head: Vec<usize>,
}

impl Default for Widths {
    fn default() -> Self {
        Widths {
            encoder_point: vec![64, 64, 128],
            encoder_head: vec![128],
            dict_point: vec![64, 128],
            dict_head: vec![128],
        }
    }
}

impl Widths {
    /// Every width divided by `factor` (at least 4).
    pub fn scaled_down(&self, factor: usize) -> Widths {
        let f = |v: &Vec<usize>| v.iter().map(|w| (w / factor.max(1)).max(4)).collect();
        Widths {
            encoder_point: f(&self.encoder_point),
            encoder_head: f(&self.encoder_head),
            dict_point: f(&self.dict_point),
            dict_head: f(&self.dict_head),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n: usize,
    pub k: usize,
    pub variant: Variant,
    pub widths: Widths,
    /// Circular variant: rescale predicted rotation axes to unit length.
    pub normalize_rotation: bool,
}

impl ModelConfig {
    pub fn new(n: usize, k: usize, variant: Variant) -> Self {
        ModelConfig {
            n,
            k,
            variant,
            widths: Widths::default(),
            normalize_rotation: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 {
            return Err(Error::input("n and k must be positive"));
        }
        let w = &self.widths;
        if w.encoder_point.is_empty() || w.dict_point.is_empty() {
            return Err(Error::input("point MLPs need at least one layer"));
        }
        let all = [&w.encoder_point, &w.encoder_head, &w.dict_point, &w.dict_head];
        if all.iter().any(|v| v.iter().any(|x| *x == 0)) {
            return Err(Error::input("layer widths must be positive"));
        }
        Ok(())
    }

    fn dict_outputs(&self) -> usize {
        match self.variant {
            Variant::Circular => 6 * self.k,
            _ => 3 * self.k,
        }
    }
}

/// Encoder `E` and dictionary predictor `F`.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    encoder_point: Mlp,
    encoder_head: Mlp,
    dict_point: Mlp,
    dict_head: Mlp,
}

const MLP_NAMES: [&str; 4] = ["encoder_point", "encoder_head", "dict_point", "dict_head"];

/// Parameter gradients, laid out like the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    mlps: [Vec<LinearGrad>; 4],
}

impl Gradients {
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.mlps
            .iter()
            .flat_map(|m| m.iter().flat_map(|g| [g.weight.as_slice(), g.bias.as_slice()]))
            .collect()
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.mlps
            .iter_mut()
            .flat_map(|m| m.iter_mut().flat_map(|g| [&mut g.weight, &mut g.bias]))
            .collect()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Per-point MLP followed by a max-pool.
#[derive(Clone, Debug)]
struct Trunk {
    trace: MlpTrace,
    argmax: Vec<usize>,
}

fn trunk_forward(mlp: &Mlp, pts: &[f64], rows: usize) -> (Vec<f64>, Trunk) {
    let (feat, trace) = mlp.forward(pts, rows);
    let w = mlp.output_dim();
    let mut pooled = vec![f64::NEG_INFINITY; w];
    let mut argmax = vec![0; w];
    for r in 0..rows {
        for c in 0..w {
            let v = feat[r * w + c];
            if v > pooled[c] {
                pooled[c] = v;
                argmax[c] = r;
            }
        }
    }
    (pooled, Trunk { trace, argmax })
}

fn trunk_backward(mlp: &Mlp, t: &Trunk, d_pooled: &[f64], grads: &mut [LinearGrad], inject: Option<(usize, &[f64])>) {
    let w = mlp.output_dim();
    let mut d = vec![0.0; t.trace.rows * w];
    for (c, &r) in t.argmax.iter().enumerate() {
        d[r * w + c] += d_pooled[c];
    }
    mlp.backward(&t.trace, &d, grads, inject, false);
}

#[derive(Clone, Debug)]
struct EncodeGraph {
    trunk: Trunk,
    head: MlpTrace,
}

#[derive(Clone, Debug)]
enum DictKind {
    Linear { dict: Dictionary, norms: Vec<f64> },
    Circular { cd: CircularDictionary, axis_norms: Vec<f64> },
}

/// Forward record of the dictionary predictor on one shape.
#[derive(Clone, Debug)]
pub struct DictGraph {
    trunk: Trunk,
    head: MlpTrace,
    kind: DictKind,
}

#[derive(Clone, Debug)]
enum CodeGraph {
    Separate { src: EncodeGraph, tgt: EncodeGraph },
    Concat { src: Trunk, tgt: Trunk, head: MlpTrace },
}

/// Forward record of `d(x → y)`.
#[derive(Clone, Debug)]
pub struct PairGraph {
    src: PointCloud,
    codes: CodeGraph,
    delta: LatentDelta,
    dict: DictGraph,
    deformed: PointCloud,
}

impl Model {
    /// Xavier-initialized model; the same seed gives the same parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = stream(seed, 0x6e6574);
        let w = &config.widths;
        let mut dims = vec![3];
        dims.extend(&w.encoder_point);
        let encoder_point = Mlp::xavier(&dims, true, &mut rng);
        let pooled = encoder_point.output_dim();
        let head_in = if config.variant == Variant::Concat { 2 * pooled } else { pooled };
        let mut dims = vec![head_in];
        dims.extend(&w.encoder_head);
        dims.push(config.k);
        let encoder_head = Mlp::xavier(&dims, false, &mut rng);
        let mut dims = vec![3];
        dims.extend(&w.dict_point);
        let dict_point = Mlp::xavier(&dims, true, &mut rng);
        let mut dims = vec![w.dict_point[0] + dict_point.output_dim()];
        dims.extend(&w.dict_head);
        dims.push(config.dict_outputs());
        let dict_head = Mlp::xavier(&dims, false, &mut rng);
        Ok(Model {
            config,
            encoder_point,
            encoder_head,
            dict_point,
            dict_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    fn mlps(&self) -> [&Mlp; 4] {
        [&self.encoder_point, &self.encoder_head, &self.dict_point, &self.dict_head]
    }

    fn mlps_mut(&mut self) -> [&mut Mlp; 4] {
        [&mut self.encoder_point, &mut self.encoder_head, &mut self.dict_point, &mut self.dict_head]
    }

    pub fn zero_gradients(&self) -> Gradients {
        let [a, b, c, d] = self.mlps();
        Gradients {
            mlps: [a.zero_grads(), b.zero_grads(), c.zero_grads(), d.zero_grads()],
        }
    }

    /// Named parameter tensors with their shapes, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let mut out = Vec::new();
        for (name, mlp) in MLP_NAMES.iter().zip(self.mlps()) {
            for (l, layer) in mlp.layers.iter().enumerate() {
                out.push((format!("{name}.{l}.weight"), vec![layer.inputs, layer.outputs], layer.weight.as_slice()));
                out.push((format!("{name}.{l}.bias"), vec![layer.outputs], layer.bias.as_slice()));
            }
        }
        out
    }

    /// Mutable parameter tensors in the order of [`Model::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        self.mlps_mut()
            .into_iter()
            .flat_map(|m| m.layers.iter_mut().flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()]))
            .collect()
    }

    /// Overwrites a named tensor; the shape must match.
    pub fn set_tensor(&mut self, name: &str, shape: &[usize], data: &[f32]) -> Result<()> {
        let pos = self
            .tensors()
            .iter()
            .position(|(n, s, _)| n == name && s.as_slice() == shape)
            .ok_or_else(|| Error::InvalidInput(format!("unknown tensor {name} with shape {shape:?}")))?;
        let mut slots = self.tensors_mut();
        let dst = &mut slots[pos];
        if dst.len() != data.len() {
            return Err(Error::dim("tensor data", dst.len(), data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data"));
        }
        dst.copy_from_slice(data);
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.iter().all(|v| v.is_finite()))
    }

    fn check_cloud(&self, pc: &PointCloud) -> Result<()> {
        if pc.len() != self.config.n {
            return Err(Error::dim("cloud size vs model", self.config.n, pc.len()));
        }
        Ok(())
    }

    fn encode_graph(&self, pc: &PointCloud) -> (Vec<f64>, EncodeGraph) {
        let (pooled, trunk) = trunk_forward(&self.encoder_point, &pc.flatten(), pc.len());
        let (code, head) = self.encoder_head.forward(&pooled, 1);
        (code, EncodeGraph { trunk, head })
    }

    fn encode_backward(&self, g: &EncodeGraph, d_code: &[f64], grads: &mut Gradients) {
        let [ep, eh, _, _] = &mut grads.mlps;
        let d_pooled = self.encoder_head.backward(&g.head, d_code, eh, None, true).unwrap();
        trunk_backward(&self.encoder_point, &g.trunk, &d_pooled, ep, None);
    }

    /// `E(x)`. The concat variant has no standalone encoder.
    pub fn encode(&self, pc: &PointCloud) -> Result<LatentCode> {
        self.check_cloud(pc)?;
        if self.config.variant == Variant::Concat {
            return Err(Error::Usage("the concat variant has no standalone encoder"));
        }
        let (code, _) = self.encode_graph(pc);
        Ok(LatentCode(Vector::from_vec(code)?))
    }

    /// Runs the dictionary predictor and keeps what backpropagation needs.
    pub fn forward_dictionary(&self, pc: &PointCloud) -> Result<DictGraph> {
        self.check_cloud(pc)?;
        let n = pc.len();
        let k = self.config.k;
        let (pooled, trunk) = trunk_forward(&self.dict_point, &pc.flatten(), n);
        let local = trunk.trace.layer_output(0);
        let w0 = self.dict_point.layers[0].outputs;
        let wi = w0 + pooled.len();
        let mut head_in = Vec::with_capacity(n * wi);
        for i in 0..n {
            head_in.extend_from_slice(&local[i * w0..(i + 1) * w0]);
            head_in.extend_from_slice(&pooled);
        }
        let (raw, head) = self.dict_head.forward(&head_in, n);
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("predicted dictionary"));
        }
        let kind = match self.config.variant {
            Variant::Circular => {
                let mut axes = Vec::with_capacity(n * k);
                let mut axis_norms = Vec::with_capacity(n * k);
                let mut centers = Vec::with_capacity(n * k);
                for (i, p) in pc.points().iter().enumerate() {
                    for j in 0..k {
                        let o = i * 6 * k + 6 * j;
                        let r = [raw[o], raw[o + 1], raw[o + 2]];
                        if self.config.normalize_rotation {
                            let (u, norm) = nonlinear::normalize_axis(r);
                            axes.push(u);
                            axis_norms.push(norm);
                        } else {
                            axes.push(r);
                        }
                        centers.push([p[0] + raw[o + 3], p[1] + raw[o + 4], p[2] + raw[o + 5]]);
                    }
                }
                DictKind::Circular {
                    cd: CircularDictionary { n, k, axes, centers },
                    axis_norms,
                }
            }
            _ => {
                let m = Matrix::from_fn(3 * n, k, |r, j| raw[(r / 3) * 3 * k + 3 * j + r % 3]);
                let (dict, norms) = Dictionary::from_raw(m);
                DictKind::Linear { dict, norms }
            }
        };
        Ok(DictGraph { trunk, head, kind })
    }

    /// `F(x)`, columns normalized.
    pub fn predict_dictionary(&self, pc: &PointCloud) -> Result<Dictionary> {
        match self.forward_dictionary(pc)?.kind {
            DictKind::Linear { dict, .. } => Ok(dict),
            DictKind::Circular { .. } => Err(Error::Usage("the circular variant predicts trajectories, not a linear dictionary")),
        }
    }

    pub fn predict_circular(&self, pc: &PointCloud) -> Result<CircularDictionary> {
        match self.forward_dictionary(pc)?.kind {
            DictKind::Circular { cd, .. } => Ok(cd),
            DictKind::Linear { .. } => Err(Error::Usage("only the circular variant predicts trajectories")),
        }
    }

    fn codes(&self, x: &PointCloud, y: &PointCloud) -> Result<(LatentDelta, CodeGraph)> {
        self.check_cloud(x)?;
        self.check_cloud(y)?;
        if self.config.variant == Variant::Concat {
            let (ps, src) = trunk_forward(&self.encoder_point, &x.flatten(), x.len());
            let (pt, tgt) = trunk_forward(&self.encoder_point, &y.flatten(), y.len());
            let mut cat = ps;
            cat.extend(pt);
            let (v, head) = self.encoder_head.forward(&cat, 1);
            return Ok((LatentDelta(Vector::from_vec(v)?), CodeGraph::Concat { src, tgt, head }));
        }
        let (cs, src) = self.encode_graph(x);
        let (ct, tgt) = self.encode_graph(y);
        let v = deform::latent_delta(&LatentCode(Vector::from_vec(cs)?), &LatentCode(Vector::from_vec(ct)?))?;
        Ok((v, CodeGraph::Separate { src, tgt }))
    }

    /// Latent deformation from `x` to `y`.
    pub fn latent_delta(&self, x: &PointCloud, y: &PointCloud) -> Result<LatentDelta> {
        Ok(self.codes(x, y)?.0)
    }

    /// `x ⊕ v` with this model's dictionary of `x`.
    pub fn deform_by(&self, x: &PointCloud, v: &LatentDelta) -> Result<PointCloud> {
        match self.forward_dictionary(x)?.kind {
            DictKind::Linear { dict, .. } => deform::apply(x, &dict, v),
            DictKind::Circular { cd, .. } => nonlinear::deform_circular(x, &cd, v),
        }
    }

    /// `d(x → y)`.
    pub fn deform(&self, x: &PointCloud, y: &PointCloud) -> Result<PointCloud> {
        let v = self.latent_delta(x, y)?;
        self.deform_by(x, &v)
    }

    /// Applies the deformation that takes `src` to `src_edit` to `other`.
    pub fn transfer(&self, src: &PointCloud, src_edit: &PointCloud, other: &PointCloud) -> Result<PointCloud> {
        let v = self.latent_delta(src, src_edit)?;
        self.check_cloud(other)?;
        self.deform_by(other, &v)
    }

    /// Forward pass of `d(x → y)` keeping intermediate values.
    pub fn forward_pair(&self, x: &PointCloud, y: &PointCloud) -> Result<PairGraph> {
        let (delta, codes) = self.codes(x, y)?;
        let dict = self.forward_dictionary(x)?;
        let deformed = match &dict.kind {
            DictKind::Linear { dict, .. } => deform::apply(x, dict, &delta)?,
            DictKind::Circular { cd, .. } => nonlinear::deform_circular(x, cd, &delta)?,
        };
        Ok(PairGraph {
            src: x.clone(),
            codes,
            delta,
            dict,
            deformed,
        })
    }
}

fn trunk_pattern(mlp: &Mlp, t: &Trunk, out: &mut Vec<usize>) {
    mlp.relu_pattern(&t.trace, out);
    out.extend(&t.argmax);
}

impl DictGraph {
    /// ReLU states and max-pool winners; two forward passes with equal
    /// patterns lie on the same smooth piece of the network.
    #[doc(hidden)]
    pub fn kink_pattern(&self, model: &Model) -> Vec<usize> {
        let mut out = Vec::new();
        trunk_pattern(&model.dict_point, &self.trunk, &mut out);
        model.dict_head.relu_pattern(&self.head, &mut out);
        out
    }

    pub fn dictionary(&self) -> Option<&Dictionary> {
        match &self.kind {
            DictKind::Linear { dict, .. } => Some(dict),
            DictKind::Circular { .. } => None,
        }
    }

    pub fn circular(&self) -> Option<&CircularDictionary> {
        match &self.kind {
            DictKind::Circular { cd, .. } => Some(cd),
            DictKind::Linear { .. } => None,
        }
    }

    /// Gradients from `dL/dA` on the normalized linear dictionary.
    pub fn backward(&self, model: &Model, d_dict: &Matrix) -> Result<Gradients> {
        let mut grads = model.zero_gradients();
        self.backward_linear_into(model, d_dict, &mut grads)?;
        Ok(grads)
    }

    fn backward_linear_into(&self, model: &Model, d_dict: &Matrix, grads: &mut Gradients) -> Result<()> {
        let DictKind::Linear { dict, norms } = &self.kind else {
            return Err(Error::Usage("linear dictionary gradient on a circular model"));
        };
        let a = dict.matrix();
        if d_dict.rows() != a.rows() || d_dict.cols() != a.cols() {
            return Err(Error::dim("dictionary gradient", a.rows() * a.cols(), d_dict.rows() * d_dict.cols()));
        }
        let (rows, k) = (a.rows(), a.cols());
        let mut d_raw = vec![0.0; rows * k];
        for j in 0..k {
            let s = norms[j];
            let proj = if s < deform::NORMALIZE_EPS {
                0.0
            } else {
                (0..rows).map(|r| a.get(r, j) * d_dict.get(r, j)).sum::<f64>()
            };
            for r in 0..rows {
                let g = d_dict.get(r, j);
                let v = if s < deform::NORMALIZE_EPS { g } else { (g - a.get(r, j) * proj) / s };
                d_raw[(r / 3) * 3 * k + 3 * j + r % 3] = v;
            }
        }
        self.backward_raw(model, &d_raw, grads);
        Ok(())
    }

    fn backward_circular_into(&self, model: &Model, d_axes: &[Point], d_centers: &[Point], grads: &mut Gradients) {
        let DictKind::Circular { cd, axis_norms } = &self.kind else {
            unreachable!("circular gradient on a linear dictionary");
        };
        let k = cd.k;
        let mut d_raw = vec![0.0; cd.n * 6 * k];
        for idx in 0..cd.n * k {
            let d_axis = if model.config.normalize_rotation {
                nonlinear::normalize_axis_backward(cd.axes[idx], axis_norms[idx], d_axes[idx])
            } else {
                d_axes[idx]
            };
            let o = (idx / k) * 6 * k + 6 * (idx % k);
            d_raw[o..o + 3].copy_from_slice(&d_axis);
            d_raw[o + 3..o + 6].copy_from_slice(&d_centers[idx]);
        }
        self.backward_raw(model, &d_raw, grads);
    }

    fn backward_raw(&self, model: &Model, d_raw: &[f64], grads: &mut Gradients) {
        let [_, _, dp, dh] = &mut grads.mlps;
        let d_in = model.dict_head.backward(&self.head, d_raw, dh, None, true).unwrap();
        let n = self.head.rows;
        let w0 = model.dict_point.layers[0].outputs;
        let wp = model.dict_point.output_dim();
        let wi = w0 + wp;
        let mut d_local = vec![0.0; n * w0];
        let mut d_pooled = vec![0.0; wp];
        for i in 0..n {
            let row = &d_in[i * wi..(i + 1) * wi];
            d_local[i * w0..(i + 1) * w0].copy_from_slice(&row[..w0]);
            for (a, b) in d_pooled.iter_mut().zip(&row[w0..]) {
                *a += b;
            }
        }
        trunk_backward(&model.dict_point, &self.trunk, &d_pooled, dp, Some((0, &d_local)));
    }
}

impl PairGraph {
    #[doc(hidden)]
    pub fn kink_pattern(&self, model: &Model) -> Vec<usize> {
        let mut out = self.dict.kink_pattern(model);
        match &self.codes {
            CodeGraph::Separate { src, tgt } => {
                for g in [src, tgt] {
                    trunk_pattern(&model.encoder_point, &g.trunk, &mut out);
                    model.encoder_head.relu_pattern(&g.head, &mut out);
                }
            }
            CodeGraph::Concat { src, tgt, head } => {
                trunk_pattern(&model.encoder_point, src, &mut out);
                trunk_pattern(&model.encoder_point, tgt, &mut out);
                model.encoder_head.relu_pattern(head, &mut out);
            }
        }
        out
    }

    pub fn deformed(&self) -> &PointCloud {
        &self.deformed
    }

    pub fn delta(&self) -> &LatentDelta {
        &self.delta
    }

    pub fn dict(&self) -> &DictGraph {
        &self.dict
    }

    /// Backpropagates `dL/d(deformed)` plus an optional direct gradient on
    /// the normalized linear dictionary.
    pub fn backward(&self, model: &Model, d_deformed: &[Point], d_dict: Option<&Matrix>) -> Result<Gradients> {
        let n = self.src.len();
        if d_deformed.len() != n {
            return Err(Error::dim("deformed-cloud gradient", n, d_deformed.len()));
        }
        let mut grads = model.zero_gradients();
        let v = &self.delta.0;
        let dv: Vec<f64> = match &self.dict.kind {
            DictKind::Linear { dict, .. } => {
                let a = dict.matrix();
                let g: Vec<f64> = d_deformed.iter().flat_map(|p| p.iter().copied()).collect();
                let dv = a.tr_matvec(&g)?.into_inner();
                let mut da = match d_dict {
                    Some(m) => m.clone(),
                    None => Matrix::zeros(a.rows(), a.cols()),
                };
                for (r, gr) in g.iter().enumerate() {
                    if *gr == 0.0 {
                        continue;
                    }
                    for j in 0..a.cols() {
                        da.set(r, j, da.get(r, j) + gr * v[j]);
                    }
                }
                self.dict.backward_linear_into(model, &da, &mut grads)?;
                dv
            }
            DictKind::Circular { cd, .. } => {
                if d_dict.is_some() {
                    return Err(Error::Usage("dictionary gradient on a circular model"));
                }
                let cg = nonlinear::deform_circular_backward(&self.src, cd, &self.delta, d_deformed);
                self.dict.backward_circular_into(model, &cg.axes, &cg.centers, &mut grads);
                cg.v
            }
        };
        match &self.codes {
            CodeGraph::Separate { src, tgt } => {
                model.encode_backward(tgt, &dv, &mut grads);
                let neg: Vec<f64> = dv.iter().map(|x| -x).collect();
                model.encode_backward(src, &neg, &mut grads);
            }
            CodeGraph::Concat { src, tgt, head } => {
                let [ep, eh, _, _] = &mut grads.mlps;
                let d_cat = model.encoder_head.backward(head, &dv, eh, None, true).unwrap();
                let w = model.encoder_point.output_dim();
                trunk_backward(&model.encoder_point, src, &d_cat[..w], ep, None);
                trunk_backward(&model.encoder_point, tgt, &d_cat[w..], ep, None);
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng as _;

    fn small_config(variant: Variant) -> ModelConfig {
        ModelConfig {
            n: 16,
            k: 4,
            variant,
            widths: Widths {
                encoder_point: vec![8, 12],
                encoder_head: vec![10],
                dict_point: vec![8, 12],
                dict_head: vec![10],
            },
            normalize_rotation: true,
        }
    }

    fn cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = stream(seed, 77);
        PointCloud::new((0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect()).unwrap()
    }

    /// Scalar test objective: weighted sum of the deformed coordinates plus
    /// a weighted sum of dictionary entries.
    fn objective(model: &Model, x: &PointCloud, y: &PointCloud, g: &[Point], gd: Option<&Matrix>) -> f64 {
        let graph = model.forward_pair(x, y).unwrap();
        let mut s: f64 = graph.deformed().points().iter().zip(g).map(|(p, w)| p[0] * w[0] + p[1] * w[1] + p[2] * w[2]).sum();
        if let (Some(gd), Some(d)) = (gd, graph.dict().dictionary()) {
            s += gd.data().iter().zip(d.matrix().data()).map(|(a, b)| a * b).sum::<f64>();
        }
        s
    }

    fn check_gradients(variant: Variant) {
        let model = Model::new(small_config(variant), 5).unwrap();
        let x = cloud(1, 16);
        let y = cloud(2, 16);
        let mut rng = stream(6, 0);
        let g: Vec<Point> = (0..16).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let gd = (variant != Variant::Circular).then(|| Matrix::from_fn(48, 4, |_, _| rng.gen_range(-1.0..1.0)));
        let graph = model.forward_pair(&x, &y).unwrap();
        let grads = graph.backward(&model, &g, gd.as_ref()).unwrap();
        let check = crate::nets::check_gradients(&model, &grads, &|m: &Model| {
            let graph = m.forward_pair(&x, &y).unwrap();
            (objective(m, &x, &y, &g, gd.as_ref()), graph.kink_pattern(m))
        });
        assert_eq!(check.total, model.num_parameters());
        assert!(check.passes(0.99), "{variant:?}: {check:?}");
    }

    #[test]
    fn standard_gradients_match_central_differences() {
        check_gradients(Variant::Standard);
    }

    #[test]
    fn concat_gradients_match_central_differences() {
        check_gradients(Variant::Concat);
    }

    #[test]
    fn circular_gradients_match_central_differences() {
        check_gradients(Variant::Circular);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::new(small_config(Variant::Standard), 9).unwrap();
        let b = Model::new(small_config(Variant::Standard), 9).unwrap();
        let c = Model::new(small_config(Variant::Standard), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn self_deformation_is_identity() {
        let model = Model::new(small_config(Variant::Standard), 1).unwrap();
        let x = cloud(3, 16);
        assert_eq!(model.deform(&x, &x).unwrap(), x);
        let model = Model::new(small_config(Variant::Circular), 1).unwrap();
        assert_eq!(model.deform(&x, &x).unwrap(), x);
    }

    #[test]
    fn dictionary_columns_are_unit() {
        let model = Model::new(small_config(Variant::Standard), 2).unwrap();
        let d = model.predict_dictionary(&cloud(4, 16)).unwrap();
        assert_eq!((d.matrix().rows(), d.k()), (48, 4));
        for j in 0..4 {
            let n: f64 = d.column(j).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_cloud_size_and_variant_misuse_are_errors() {
        let model = Model::new(small_config(Variant::Standard), 2).unwrap();
        assert!(model.encode(&cloud(4, 15)).is_err());
        assert!(model.predict_circular(&cloud(4, 16)).is_err());
        let concat = Model::new(small_config(Variant::Concat), 2).unwrap();
        assert!(matches!(concat.encode(&cloud(4, 16)), Err(Error::Usage(_))));
        assert!(concat.deform(&cloud(4, 16), &cloud(5, 16)).is_ok());
    }

    #[test]
    fn set_tensor_round_trips_and_validates() {
        let a = Model::new(small_config(Variant::Standard), 2).unwrap();
        let mut b = Model::new(small_config(Variant::Standard), 3).unwrap();
        let tensors: Vec<(String, Vec<usize>, Vec<f32>)> = a.tensors().into_iter().map(|(n, s, t)| (n, s, t.to_vec())).collect();
        for (name, shape, data) in &tensors {
            b.set_tensor(name, shape, data).unwrap();
        }
        assert_eq!(a, b);
        assert!(b.set_tensor("encoder_head.0.weight", &[1, 1], &[0.0]).is_err());
        assert!(b.set_tensor("nope", &[1], &[0.0]).is_err());
    }
}
