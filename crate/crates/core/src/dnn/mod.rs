//! Symmetrized ReLU network covariance model.
//!
//! A network `h` of depth `L` and width `W` maps `x in R^{2d}` to
//! `w_out . a_L + b_out`, where `a_0 = x` and
//! `a_l = relu(W_{l-1} a_{l-1} - b_l)` for `l = 1..=L`. The covariance
//! estimate is `K(s, t) = (h(s, t) + h(t, s)) / 2`.

mod arch;
mod checkpoint;
mod train;

pub use arch::{arch_from_theory, ArchRule, Regime};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{train, BatchScheme, Monitor, Optimizer, TrainConfig, TrainedNetwork};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FunctionalDataset;
use crate::error::{Error, Result};
use crate::field::{clip, CovarianceField};
use crate::numeric::{pairwise_sum, pairwise_sum_vecs};
use crate::rng::SeedSpec;

/// Subjects per gradient-accumulation chunk. Fixed so the reduction tree does
/// not depend on the thread count.
const CHUNK_SUBJECTS: usize = 8;

/// Dense network parameters in one flat buffer laid out as
/// `W_0, b_1, W_1, b_2, .., W_{L-1}, b_L, w_out, b_out` (matrices row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    depth: usize,
    width: usize,
    input_dim: usize,
    flat: Vec<f64>,
}

/// Offsets of one hidden layer inside the flat buffer.
#[derive(Debug, Clone, Copy)]
struct LayerSpan {
    weight: usize,
    bias: usize,
    fan_in: usize,
}

impl MlpParams {
    pub fn param_count(depth: usize, width: usize, input_dim: usize) -> usize {
        width * input_dim + (depth - 1) * width * width + depth * width + width + 1
    }

    pub fn zeros(depth: usize, width: usize, d: usize) -> Self {
        assert!(depth >= 1 && width >= 1 && d >= 1);
        let input_dim = 2 * d;
        Self {
            depth,
            width,
            input_dim,
            flat: vec![0.0; Self::param_count(depth, width, input_dim)],
        }
    }

    pub fn from_flat(depth: usize, width: usize, input_dim: usize, flat: Vec<f64>) -> Result<Self> {
        if depth == 0 || width == 0 || input_dim == 0 || input_dim % 2 != 0 {
            return Err(Error::InvalidInput("bad network dimensions".into()));
        }
        if flat.len() != Self::param_count(depth, width, input_dim) {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                Self::param_count(depth, width, input_dim),
                flat.len()
            )));
        }
        if flat.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        Ok(Self { depth, width, input_dim, flat })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn flat(&self) -> &[f64] {
        &self.flat
    }
    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }
    pub fn len(&self) -> usize {
        self.flat.len()
    }
    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    fn span(&self, l: usize) -> LayerSpan {
        let w = self.width;
        let first = w * self.input_dim + w;
        let (weight, fan_in) = if l == 0 {
            (0, self.input_dim)
        } else {
            (first + (l - 1) * (w * w + w), w)
        };
        LayerSpan { weight, bias: weight + w * fan_in, fan_in }
    }

    fn output_offset(&self) -> usize {
        self.flat.len() - self.width - 1
    }

    /// Hidden layer `l` weight matrix (`W x fan_in`, row-major) and bias.
    pub fn hidden_layer(&self, l: usize) -> (&[f64], &[f64]) {
        let sp = self.span(l);
        (
            &self.flat[sp.weight..sp.bias],
            &self.flat[sp.bias..sp.bias + self.width],
        )
    }

    pub fn hidden_layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let sp = self.span(l);
        let w = self.width;
        let (head, tail) = self.flat[sp.weight..sp.bias + w].split_at_mut(sp.bias - sp.weight);
        (head, tail)
    }

    pub fn output_layer(&self) -> (&[f64], f64) {
        let o = self.output_offset();
        (&self.flat[o..o + self.width], self.flat[o + self.width])
    }

    pub fn output_layer_mut(&mut self) -> (&mut [f64], &mut f64) {
        let w = self.width;
        let o = self.output_offset();
        let (head, tail) = self.flat[o..].split_at_mut(w);
        (head, &mut tail[0])
    }
}

/// Gaussian weights with variance `2 / fan_in`, zero biases.
pub fn init_params(depth: usize, width: usize, d: usize, seed: SeedSpec) -> MlpParams {
    let mut p = MlpParams::zeros(depth, width, d);
    let mut rng = seed.stream("mlp-init", 0);
    for l in 0..depth {
        let fan_in = p.span(l).fan_in;
        let sd = (2.0 / fan_in as f64).sqrt();
        let (weight, _) = p.hidden_layer_mut(l);
        for x in weight.iter_mut() {
            *x = sd * rng.standard_normal();
        }
    }
    let sd = (2.0 / width as f64).sqrt();
    let (out, _) = p.output_layer_mut();
    for x in out.iter_mut() {
        *x = sd * rng.standard_normal();
    }
    p
}

/// Reusable activation tape for forward and backward passes.
#[derive(Debug, Clone)]
pub struct Workspace {
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    pub fn new(params: &MlpParams) -> Self {
        Self {
            pre: vec![vec![0.0; params.width]; params.depth],
            act: vec![vec![0.0; params.width]; params.depth],
            delta: vec![0.0; params.width],
            delta_prev: vec![0.0; params.width],
        }
    }

    /// Pre-activations `W_{l-1} a_{l-1} - b_l` of the last forward pass.
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }
}

impl MlpParams {
    fn forward_tape(&self, x: &[f64], ws: &mut Workspace) -> f64 {
        debug_assert_eq!(x.len(), self.input_dim);
        let w = self.width;
        for l in 0..self.depth {
            let sp = self.span(l);
            let weight = &self.flat[sp.weight..sp.bias];
            let bias = &self.flat[sp.bias..sp.bias + w];
            let (before, rest) = ws.act.split_at_mut(l);
            let input: &[f64] = if l == 0 { x } else { &before[l - 1] };
            let pre = &mut ws.pre[l];
            let act = &mut rest[0];
            for r in 0..w {
                let row = &weight[r * sp.fan_in..(r + 1) * sp.fan_in];
                let z = row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() - bias[r];
                pre[r] = z;
                act[r] = z.max(0.0);
            }
        }
        let (out_w, out_b) = self.output_layer();
        out_w.iter().zip(&ws.act[self.depth - 1]).map(|(a, b)| a * b).sum::<f64>() + out_b
    }

    /// Adds `upstream * dh(x)/dtheta` to `grad`, using the tape left by the
    /// preceding `forward_tape(x)`. The ReLU subgradient at 0 is 0.
    fn backward(&self, x: &[f64], ws: &mut Workspace, upstream: f64, grad: &mut [f64]) {
        let w = self.width;
        let o = self.output_offset();
        let last = self.depth - 1;
        for r in 0..w {
            grad[o + r] += upstream * ws.act[last][r];
        }
        grad[o + w] += upstream;
        let out_w = &self.flat[o..o + w];
        for r in 0..w {
            ws.delta[r] = if ws.pre[last][r] > 0.0 { upstream * out_w[r] } else { 0.0 };
        }
        for l in (0..self.depth).rev() {
            let sp = self.span(l);
            let input: &[f64] = if l == 0 { x } else { &ws.act[l - 1] };
            for r in 0..w {
                let dr = ws.delta[r];
                if dr == 0.0 {
                    continue;
                }
                let g = &mut grad[sp.weight + r * sp.fan_in..sp.weight + (r + 1) * sp.fan_in];
                for (gi, xi) in g.iter_mut().zip(input) {
                    *gi += dr * xi;
                }
                grad[sp.bias + r] -= dr;
            }
            if l == 0 {
                break;
            }
            let weight = &self.flat[sp.weight..sp.bias];
            ws.delta_prev.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..w {
                let dr = ws.delta[r];
                if dr == 0.0 {
                    continue;
                }
                let row = &weight[r * w..(r + 1) * w];
                for (dp, wr) in ws.delta_prev.iter_mut().zip(row) {
                    *dp += dr * wr;
                }
            }
            for r in 0..w {
                ws.delta[r] = if ws.pre[l - 1][r] > 0.0 { ws.delta_prev[r] } else { 0.0 };
            }
        }
    }
}

pub fn forward(params: &MlpParams, x: &[f64]) -> f64 {
    let mut ws = Workspace::new(params);
    params.forward_tape(x, &mut ws)
}

/// Signs of every hidden pre-activation at `x` (`true` when active).
pub fn activation_pattern(params: &MlpParams, x: &[f64]) -> Vec<bool> {
    let mut ws = Workspace::new(params);
    params.forward_tape(x, &mut ws);
    ws.pre.iter().flatten().map(|z| *z > 0.0).collect()
}

fn concat_into(buf: &mut Vec<f64>, s: &[f64], t: &[f64]) {
    buf.clear();
    buf.extend_from_slice(s);
    buf.extend_from_slice(t);
}

/// `(h(s, t) + h(t, s)) / 2`.
pub fn sym_eval(params: &MlpParams, s: &[f64], t: &[f64]) -> f64 {
    let mut ws = Workspace::new(params);
    let mut x = Vec::with_capacity(params.input_dim);
    concat_into(&mut x, s, t);
    let a = params.forward_tape(&x, &mut ws);
    concat_into(&mut x, t, s);
    let b = params.forward_tape(&x, &mut ws);
    0.5 * (a + b)
}

/// Symmetrized network wrapped as a field, clipped to `bound` on evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpField {
    params: MlpParams,
    bound: f64,
}

impl MlpField {
    pub fn new(params: MlpParams, bound: f64) -> Self {
        assert!(bound > 0.0);
        Self { params, bound }
    }

    /// Unclipped wrapper, used to compare against the raw training loss.
    pub fn unclipped(params: MlpParams) -> Self {
        Self { params, bound: f64::INFINITY }
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }
}

impl CovarianceField for MlpField {
    fn dim(&self) -> usize {
        self.params.input_dim / 2
    }
    fn bound(&self) -> f64 {
        self.bound
    }
    fn eval(&self, s: &[f64], t: &[f64]) -> f64 {
        clip(sym_eval(&self.params, s, t), self.bound)
    }
}

/// One within-subject pair with its multiplicity in the loss.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PairTerm {
    pub subject: usize,
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Returns `(sum_p w_p r_p^2, sum_p w_p d(r_p^2)/dtheta)` over the given pairs,
/// `r = Y_a Y_b - K(T_a, T_b)`.
pub(crate) fn accumulate_pairs(
    params: &MlpParams,
    data: &FunctionalDataset,
    pairs: &[PairTerm],
    with_grad: bool,
) -> (f64, Vec<f64>) {
    let mut ws1 = Workspace::new(params);
    let mut ws2 = Workspace::new(params);
    let mut grad = if with_grad { vec![0.0; params.len()] } else { Vec::new() };
    let mut x1 = Vec::with_capacity(params.input_dim);
    let mut x2 = Vec::with_capacity(params.input_dim);
    let mut loss = 0.0;
    for p in pairs {
        let (ta, tb) = (data.location(p.subject, p.a), data.location(p.subject, p.b));
        let y = data.value(p.subject, p.a) * data.value(p.subject, p.b);
        concat_into(&mut x1, ta, tb);
        concat_into(&mut x2, tb, ta);
        let h1 = params.forward_tape(&x1, &mut ws1);
        let h2 = params.forward_tape(&x2, &mut ws2);
        let r = y - 0.5 * (h1 + h2);
        loss += p.weight * r * r;
        if with_grad {
            let up = -p.weight * r;
            params.backward(&x1, &mut ws1, up, &mut grad);
            params.backward(&x2, &mut ws2, up, &mut grad);
        }
    }
    (loss, grad)
}

/// Sums chunked pair terms with a fixed reduction tree.
pub(crate) fn reduce_chunks(
    params: &MlpParams,
    data: &FunctionalDataset,
    chunks: &[Vec<PairTerm>],
    with_grad: bool,
) -> (f64, Vec<f64>) {
    let parts: Vec<(f64, Vec<f64>)> = chunks
        .par_iter()
        .map(|c| accumulate_pairs(params, data, c, with_grad))
        .collect();
    let losses: Vec<f64> = parts.iter().map(|p| p.0).collect();
    let grads: Vec<Vec<f64>> = if with_grad {
        parts.into_iter().map(|p| p.1).collect()
    } else {
        Vec::new()
    };
    let grad = if with_grad {
        pairwise_sum_vecs(&grads, params.len())
    } else {
        Vec::new()
    };
    (pairwise_sum(&losses), grad)
}

/// All unordered pairs `j < k` with multiplicity 2, chunked by subject.
pub(crate) fn full_pair_chunks(data: &FunctionalDataset, subjects: &[usize]) -> Vec<Vec<PairTerm>> {
    let m = data.m();
    subjects
        .chunks(CHUNK_SUBJECTS)
        .map(|chunk| {
            let mut v = Vec::with_capacity(chunk.len() * m * (m - 1) / 2);
            for &i in chunk {
                for a in 0..m {
                    for b in (a + 1)..m {
                        v.push(PairTerm { subject: i, a, b, weight: 2.0 });
                    }
                }
            }
            v
        })
        .collect()
}

/// Full pairwise loss of the unclipped symmetrized network and its gradient
/// with respect to the flat parameter vector.
pub fn loss_and_gradient(params: &MlpParams, data: &FunctionalDataset) -> Result<(f64, Vec<f64>)> {
    check_data(params, data)?;
    let subjects: Vec<usize> = (0..data.n()).collect();
    let chunks = full_pair_chunks(data, &subjects);
    let (loss, mut grad) = reduce_chunks(params, data, &chunks, true);
    let scale = 1.0 / (data.n() * data.m() * (data.m() - 1)) as f64;
    let loss = loss * scale;
    grad.iter_mut().for_each(|g| *g *= scale);
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericalOverflow);
    }
    Ok((loss, grad))
}

/// Full pairwise loss only.
pub fn training_loss(params: &MlpParams, data: &FunctionalDataset) -> Result<f64> {
    check_data(params, data)?;
    let subjects: Vec<usize> = (0..data.n()).collect();
    let chunks = full_pair_chunks(data, &subjects);
    let (loss, _) = reduce_chunks(params, data, &chunks, false);
    let loss = loss / (data.n() * data.m() * (data.m() - 1)) as f64;
    if !loss.is_finite() {
        return Err(Error::NumericalOverflow);
    }
    Ok(loss)
}

fn check_data(params: &MlpParams, data: &FunctionalDataset) -> Result<()> {
    if data.m() < 2 {
        return Err(Error::TooFewMeasurements);
    }
    if 2 * data.d() != params.input_dim {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim / 2,
            found: data.d(),
        });
    }
    Ok(())
}

/// Human-readable parameter dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpExport {
    pub depth: usize,
    pub width: usize,
    pub input_dim: usize,
    pub bound: f64,
    pub hidden: Vec<LayerExport>,
    pub output: LayerExport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerExport {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl MlpField {
    pub fn export(&self) -> MlpExport {
        let p = &self.params;
        let hidden = (0..p.depth)
            .map(|l| {
                let (w, b) = p.hidden_layer(l);
                let fan_in = p.span(l).fan_in;
                LayerExport {
                    weight: w.chunks(fan_in).map(<[f64]>::to_vec).collect(),
                    bias: b.to_vec(),
                }
            })
            .collect();
        let (ow, ob) = p.output_layer();
        MlpExport {
            depth: p.depth,
            width: p.width,
            input_dim: p.input_dim,
            bound: self.bound,
            hidden,
            output: LayerExport { weight: vec![ow.to_vec()], bias: vec![ob] },
        }
    }
}
