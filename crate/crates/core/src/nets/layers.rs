use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::rng::Rng;

/// Fully connected layer. Parameters are stored in `f32`; every computation
/// promotes to `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `inputs × outputs`, so `y = x W + b`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Gradient buffers for one [`Linear`].
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearGrad {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        LinearGrad {
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }
}

impl Linear {
    /// Xavier-uniform weights, zero bias.
    pub(crate) fn xavier(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let limit = libm::sqrt(6.0 / (inputs + outputs) as f64);
        let weight = (0..inputs * outputs)
            .map(|_| rng.gen_range(-limit..limit) as f32)
            .collect();
        Linear {
            inputs,
            outputs,
            weight,
            bias: vec![0.0; outputs],
        }
    }

    fn weight_f64(&self) -> Vec<f64> {
        self.weight.iter().map(|w| *w as f64).collect()
    }

    /// `rows × inputs` to `rows × outputs`.
    pub(crate) fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), rows * self.inputs);
        let w = self.weight_f64();
        let (ni, no) = (self.inputs, self.outputs);
        let mut out = vec![0.0; rows * no];
        for r in 0..rows {
            let o = &mut out[r * no..(r + 1) * no];
            for (dst, b) in o.iter_mut().zip(&self.bias) {
                *dst = *b as f64;
            }
            for p in 0..ni {
                let xv = x[r * ni + p];
                if xv == 0.0 {
                    continue;
                }
                let wr = &w[p * no..(p + 1) * no];
                for (dst, wv) in o.iter_mut().zip(wr) {
                    *dst += xv * wv;
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients; returns `dL/dx` when asked.
    pub(crate) fn backward(&self, x: &[f64], rows: usize, dy: &[f64], grad: &mut LinearGrad, want_dx: bool) -> Option<Vec<f64>> {
        let (ni, no) = (self.inputs, self.outputs);
        for r in 0..rows {
            let d = &dy[r * no..(r + 1) * no];
            for (gb, dv) in grad.bias.iter_mut().zip(d) {
                *gb += dv;
            }
            for p in 0..ni {
                let xv = x[r * ni + p];
                if xv == 0.0 {
                    continue;
                }
                let gw = &mut grad.weight[p * no..(p + 1) * no];
                for (g, dv) in gw.iter_mut().zip(d) {
                    *g += xv * dv;
                }
            }
        }
        if !want_dx {
            return None;
        }
        let w = self.weight_f64();
        let mut dx = vec![0.0; rows * ni];
        for r in 0..rows {
            let d = &dy[r * no..(r + 1) * no];
            if d.iter().all(|v| *v == 0.0) {
                continue;
            }
            for p in 0..ni {
                dx[r * ni + p] = crate::linalg::dot(d, &w[p * no..(p + 1) * no]);
            }
        }
        Some(dx)
    }
}

/// Stack of linear layers with ReLU between them (and optionally after the
/// last one).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub relu_last: bool,
}

/// Activations saved by [`Mlp::forward`].
#[derive(Clone, Debug)]
pub(crate) struct MlpTrace {
    pub rows: usize,
    /// `inputs[l]` is the input to layer `l`.
    pub inputs: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl MlpTrace {
    /// Output of layer `l` after its activation.
    pub fn layer_output(&self, l: usize) -> &[f64] {
        if l + 1 < self.inputs.len() {
            &self.inputs[l + 1]
        } else {
            &self.output
        }
    }
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`.
    pub(crate) fn xavier(dims: &[usize], relu_last: bool, rng: &mut Rng) -> Self {
        let layers = dims.windows(2).map(|w| Linear::xavier(w[0], w[1], rng)).collect();
        Mlp { layers, relu_last }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    fn activates(&self, l: usize) -> bool {
        self.relu_last || l + 1 < self.layers.len()
    }

    pub(crate) fn forward(&self, x: &[f64], rows: usize) -> (Vec<f64>, MlpTrace) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&cur, rows);
            if self.activates(l) {
                for v in y.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            inputs.push(cur);
            cur = y;
        }
        let trace = MlpTrace {
            rows,
            inputs,
            output: cur.clone(),
        };
        (cur, trace)
    }

    /// Backpropagates `d_out`. `inject` adds an extra upstream gradient to
    /// the (post-activation) output of the given layer.
    pub(crate) fn backward(
        &self,
        trace: &MlpTrace,
        d_out: &[f64],
        grads: &mut [LinearGrad],
        inject: Option<(usize, &[f64])>,
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let rows = trace.rows;
        let mut d = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            if let Some((at, extra)) = inject {
                if at == l {
                    for (a, b) in d.iter_mut().zip(extra) {
                        *a += b;
                    }
                }
            }
            if self.activates(l) {
                for (dv, y) in d.iter_mut().zip(trace.layer_output(l)) {
                    if *y <= 0.0 {
                        *dv = 0.0;
                    }
                }
            }
            let need_dx = l > 0 || want_dx;
            match self.layers[l].backward(&trace.inputs[l], rows, &d, &mut grads[l], need_dx) {
                Some(dx) => d = dx,
                None => return None,
            }
        }
        Some(d)
    }

    /// Appends the on/off state of every ReLU in `trace`.
    pub(crate) fn relu_pattern(&self, trace: &MlpTrace, out: &mut Vec<usize>) {
        for l in 0..self.layers.len() {
            if self.activates(l) {
                out.extend(trace.layer_output(l).iter().map(|v| (*v > 0.0) as usize));
            }
        }
    }

    pub(crate) fn zero_grads(&self) -> Vec<LinearGrad> {
        self.layers.iter().map(|l| LinearGrad::zeros(l.inputs, l.outputs)).collect()
    }
}
