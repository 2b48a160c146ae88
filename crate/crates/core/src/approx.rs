//! Recurrent function approximator with exact backpropagation through time.
//!
//! Per step: `x -> ReLU(W_in x + b_in) -> GRU -> W_out h + b_out`. The GRU
//! uses
//!
//! ```text
//! z  = sigmoid(Wz a + bz + Uz h + cz)
//! r  = sigmoid(Wr a + br + Ur h + cr)
//! n  = tanh(Wn a + bn + r * (Un h + cn))
//! h' = (1 - z) * h + z * n
//! ```
//!
//! so a saturated update gate turns the cell into a feed-forward gated layer.
//! All parameters live in one flat `f64` vector; [`Layout`] gives the slices.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::randomize::SeededRng;
use crate::{Error, Result};

pub const LOG_SD_MIN: f64 = -20.0;
pub const LOG_SD_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    Linear,
    /// Output holds `[mean; log_sd]` of a tanh-squashed Gaussian.
    SquashedGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input_dim: usize,
    pub fc_dim: usize,
    pub gru_hidden: usize,
    pub output_dim: usize,
    pub head: HeadKind,
}

impl NetworkShape {
    /// Input layer as wide as the recurrent layer.
    pub fn new(input_dim: usize, gru_hidden: usize, output_dim: usize, head: HeadKind) -> Self {
        Self { input_dim, fc_dim: gru_hidden, gru_hidden, output_dim, head }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.fc_dim == 0 || self.gru_hidden == 0 || self.output_dim == 0 {
            return Err(Error::InvalidParameter("network dimensions must be at least 1"));
        }
        if self.head == HeadKind::SquashedGaussian && !self.output_dim.is_multiple_of(2) {
            return Err(Error::InvalidParameter("squashed Gaussian head needs an even output width"));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// Offsets of every parameter block inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub w_in: usize,
    pub b_in: usize,
    pub w_x: usize,
    pub b_x: usize,
    pub w_h: usize,
    pub b_h: usize,
    pub w_out: usize,
    pub b_out: usize,
    pub total: usize,
}

impl Layout {
    fn new(s: &NetworkShape) -> Self {
        let h3 = 3 * s.gru_hidden;
        let w_in = 0;
        let b_in = w_in + s.fc_dim * s.input_dim;
        let w_x = b_in + s.fc_dim;
        let b_x = w_x + h3 * s.fc_dim;
        let w_h = b_x + h3;
        let b_h = w_h + h3 * s.gru_hidden;
        let w_out = b_h + h3;
        let b_out = w_out + s.output_dim * s.gru_hidden;
        let total = b_out + s.output_dim;
        Self { w_in, b_in, w_x, b_x, w_h, b_h, w_out, b_out, total }
    }
}

/// Flat parameter vector tagged with its shape. Every mutation bumps the
/// generation so traces recorded before it are rejected by `backward`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    shape: NetworkShape,
    values: Vec<f64>,
    #[serde(skip)]
    generation: u64,
}

impl NetworkParams {
    pub fn zeros(shape: NetworkShape) -> Result<Self> {
        shape.validate()?;
        Ok(Self { values: vec![0.0; shape.param_count()], shape, generation: 0 })
    }

    pub fn from_values(shape: NetworkShape, values: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if values.len() != shape.param_count() {
            return Err(Error::ShapeMismatch { expected: shape.param_count(), found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(Self { shape, values, generation: 0 })
    }

    /// Uniform `+-1/sqrt(fan_in)` weights everywhere, zero biases.
    pub fn init(shape: NetworkShape, rng: &mut SeededRng) -> Result<Self> {
        let mut p = Self::zeros(shape)?;
        let l = shape.layout();
        let blocks = [
            (l.w_in, l.b_in, shape.input_dim),
            (l.w_x, l.b_x, shape.fc_dim),
            (l.w_h, l.b_h, shape.gru_hidden),
            (l.w_out, l.b_out, shape.gru_hidden),
        ];
        for (start, end, fan_in) in blocks {
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            for w in &mut p.values[start..end] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(p)
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.values
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `self <- tau * online + (1 - tau) * self`.
    pub fn blend_from(&mut self, online: &NetworkParams, tau: f64) {
        for (t, o) in self.values_mut().iter_mut().zip(&online.values) {
            *t = tau * o + (1.0 - tau) * *t;
        }
    }

    pub fn forward(&self, inputs: &[f64], h0: &[f64]) -> Result<Trace> {
        forward(self, inputs, h0)
    }
}

/// Activations recorded by a forward pass over `T` steps.
#[derive(Debug, Clone)]
pub struct Trace {
    generation: u64,
    pub steps: usize,
    pub inputs: Vec<f64>,
    /// Post-ReLU input-layer activations, `T x fc`.
    pub fc: Vec<f64>,
    /// Hidden states `h_0..h_T`, `(T + 1) x H`.
    pub hidden: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
    /// `Un h + cn`, `T x H`.
    pub hn: Vec<f64>,
    /// Network outputs, `T x out`.
    pub outputs: Vec<f64>,
}

impl Trace {
    pub fn output(&self, t: usize) -> &[f64] {
        let d = self.outputs.len() / self.steps;
        &self.outputs[t * d..(t + 1) * d]
    }

    /// Hidden state after `t` steps (`t = 0` is `h0`).
    pub fn hidden_after(&self, t: usize) -> &[f64] {
        let h = self.hidden.len() / (self.steps + 1);
        &self.hidden[t * h..(t + 1) * h]
    }

    pub fn final_hidden(&self) -> &[f64] {
        self.hidden_after(self.steps)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Lane-wise partial sums so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    const L: usize = 8;
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; L];
    let mut ca = a.chunks_exact(L);
    let mut cb = b.chunks_exact(L);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..L {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `out = W v + b` with `W` row-major `out.len() x v.len()`.
#[inline]
fn affine(w: &[f64], b: &[f64], v: &[f64], out: &mut [f64]) {
    for ((o, row), bias) in out.iter_mut().zip(w.chunks_exact(v.len())).zip(b) {
        *o = bias + dot(row, v);
    }
}

/// `acc += W^T g`.
#[inline]
fn affine_transpose(w: &[f64], g: &[f64], acc: &mut [f64]) {
    for (row, gi) in w.chunks_exact(acc.len()).zip(g) {
        if *gi != 0.0 {
            for (a, wij) in acc.iter_mut().zip(row) {
                *a += gi * wij;
            }
        }
    }
}

/// `dW += g v^T`, `db += g`.
#[inline]
fn outer_acc(dw: &mut [f64], db: &mut [f64], g: &[f64], v: &[f64]) {
    for ((row, gi), b) in dw.chunks_exact_mut(v.len()).zip(g).zip(db.iter_mut()) {
        *b += gi;
        if *gi != 0.0 {
            for (d, vj) in row.iter_mut().zip(v) {
                *d += gi * vj;
            }
        }
    }
}

/// Run the network over `inputs` (`T x input_dim`, row-major) from `h0`.
pub fn forward(params: &NetworkParams, inputs: &[f64], h0: &[f64]) -> Result<Trace> {
    let s = params.shape;
    let (din, fc, hd, dout) = (s.input_dim, s.fc_dim, s.gru_hidden, s.output_dim);
    if inputs.is_empty() || !inputs.len().is_multiple_of(din) {
        return Err(Error::ShapeMismatch { expected: din, found: inputs.len() });
    }
    if h0.len() != hd {
        return Err(Error::ShapeMismatch { expected: hd, found: h0.len() });
    }
    let steps = inputs.len() / din;
    let l = s.layout();
    let v = &params.values;
    let (w_in, b_in) = (&v[l.w_in..l.b_in], &v[l.b_in..l.w_x]);
    let (w_x, b_x) = (&v[l.w_x..l.b_x], &v[l.b_x..l.w_h]);
    let (w_h, b_h) = (&v[l.w_h..l.b_h], &v[l.b_h..l.w_out]);
    let (w_out, b_out) = (&v[l.w_out..l.b_out], &v[l.b_out..l.total]);

    let mut trace = Trace {
        generation: params.generation,
        steps,
        inputs: inputs.to_vec(),
        fc: vec![0.0; steps * fc],
        hidden: vec![0.0; (steps + 1) * hd],
        z: vec![0.0; steps * hd],
        r: vec![0.0; steps * hd],
        n: vec![0.0; steps * hd],
        hn: vec![0.0; steps * hd],
        outputs: vec![0.0; steps * dout],
    };
    trace.hidden[..hd].copy_from_slice(h0);
    let mut gx = vec![0.0; 3 * hd];
    let mut gh = vec![0.0; 3 * hd];
    for t in 0..steps {
        let x = &inputs[t * din..(t + 1) * din];
        let a = &mut trace.fc[t * fc..(t + 1) * fc];
        affine(w_in, b_in, x, a);
        for ai in a.iter_mut() {
            *ai = ai.max(0.0);
        }
        affine(w_x, b_x, a, &mut gx);
        let (before, after) = trace.hidden.split_at_mut((t + 1) * hd);
        let h_prev = &before[t * hd..];
        let h_next = &mut after[..hd];
        affine(w_h, b_h, h_prev, &mut gh);
        let off = t * hd;
        for j in 0..hd {
            let z = sigmoid(gx[j] + gh[j]);
            let r = sigmoid(gx[hd + j] + gh[hd + j]);
            let hn = gh[2 * hd + j];
            let n = libm::tanh(gx[2 * hd + j] + r * hn);
            trace.z[off + j] = z;
            trace.r[off + j] = r;
            trace.hn[off + j] = hn;
            trace.n[off + j] = n;
            h_next[j] = (1.0 - z) * h_prev[j] + z * n;
        }
        affine(w_out, b_out, h_next, &mut trace.outputs[t * dout..(t + 1) * dout]);
    }
    Ok(trace)
}

/// Gradients requested from [`backward`].
pub struct Grads<'a> {
    /// Accumulated parameter gradient (`+=`), or `None` to skip weights.
    pub params: Option<&'a mut [f64]>,
    /// Accumulated input gradient (`+=`), `T x input_dim`.
    pub inputs: Option<&'a mut [f64]>,
    /// Accumulated gradient with respect to `h0`.
    pub h0: Option<&'a mut [f64]>,
}

impl<'a> Grads<'a> {
    pub fn params(g: &'a mut [f64]) -> Self {
        Self { params: Some(g), inputs: None, h0: None }
    }

    pub fn inputs(g: &'a mut [f64]) -> Self {
        Self { params: None, inputs: Some(g), h0: None }
    }
}

/// Backpropagation through time. `d_outputs` is `dL/d outputs`, `T x out`.
pub fn backward(params: &NetworkParams, trace: &Trace, d_outputs: &[f64], grads: Grads<'_>) -> Result<()> {
    if trace.generation != params.generation {
        return Err(Error::StaleCache);
    }
    let s = params.shape;
    let (din, fc, hd, dout) = (s.input_dim, s.fc_dim, s.gru_hidden, s.output_dim);
    let steps = trace.steps;
    if d_outputs.len() != steps * dout || trace.inputs.len() != steps * din || trace.fc.len() != steps * fc {
        return Err(Error::StaleCache);
    }
    let Grads { params: mut gp, inputs: mut gin, h0: gh0 } = grads;
    if let Some(g) = gp.as_deref() {
        if g.len() != params.values.len() {
            return Err(Error::ShapeMismatch { expected: params.values.len(), found: g.len() });
        }
    }
    if let Some(g) = gin.as_deref() {
        if g.len() != trace.inputs.len() {
            return Err(Error::ShapeMismatch { expected: trace.inputs.len(), found: g.len() });
        }
    }
    let l = s.layout();
    let v = &params.values;
    let w_in = &v[l.w_in..l.b_in];
    let w_x = &v[l.w_x..l.b_x];
    let w_h = &v[l.w_h..l.b_h];
    let w_out = &v[l.w_out..l.b_out];

    let mut dh = vec![0.0; hd];
    let mut dh_prev = vec![0.0; hd];
    let mut dgx = vec![0.0; 3 * hd];
    let mut dgh = vec![0.0; 3 * hd];
    let mut da = vec![0.0; fc];
    for t in (0..steps).rev() {
        let h_prev = &trace.hidden[t * hd..(t + 1) * hd];
        let h = &trace.hidden[(t + 1) * hd..(t + 2) * hd];
        let dy = &d_outputs[t * dout..(t + 1) * dout];
        affine_transpose(w_out, dy, &mut dh);
        if let Some(g) = gp.as_deref_mut() {
            let (head, tail) = g.split_at_mut(l.b_out);
            outer_acc(&mut head[l.w_out..], &mut tail[..dout], dy, h);
        }
        let off = t * hd;
        for j in 0..hd {
            let z = trace.z[off + j];
            let r = trace.r[off + j];
            let n = trace.n[off + j];
            let dn = dh[j] * z;
            let dz = dh[j] * (n - h_prev[j]);
            dh_prev[j] = dh[j] * (1.0 - z);
            let dn_pre = dn * (1.0 - n * n);
            let dr = dn_pre * trace.hn[off + j];
            let dz_pre = dz * z * (1.0 - z);
            let dr_pre = dr * r * (1.0 - r);
            dgx[j] = dz_pre;
            dgx[hd + j] = dr_pre;
            dgx[2 * hd + j] = dn_pre;
            dgh[j] = dz_pre;
            dgh[hd + j] = dr_pre;
            dgh[2 * hd + j] = dn_pre * r;
        }
        affine_transpose(w_h, &dgh, &mut dh_prev);
        let a = &trace.fc[t * fc..(t + 1) * fc];
        da.iter_mut().for_each(|d| *d = 0.0);
        affine_transpose(w_x, &dgx, &mut da);
        for (d, ai) in da.iter_mut().zip(a) {
            if *ai <= 0.0 {
                *d = 0.0;
            }
        }
        let x = &trace.inputs[t * din..(t + 1) * din];
        if let Some(g) = gp.as_deref_mut() {
            let (head, tail) = g.split_at_mut(l.b_h);
            outer_acc(&mut head[l.w_h..], &mut tail[..3 * hd], &dgh, h_prev);
            let (head2, tail2) = head.split_at_mut(l.b_x);
            outer_acc(&mut head2[l.w_x..], &mut tail2[..3 * hd], &dgx, a);
            let (head3, tail3) = head2.split_at_mut(l.b_in);
            outer_acc(&mut head3[l.w_in..], &mut tail3[..fc], &da, x);
        }
        if let Some(g) = gin.as_deref_mut() {
            affine_transpose(w_in, &da, &mut g[t * din..(t + 1) * din]);
        }
        core::mem::swap(&mut dh, &mut dh_prev);
    }
    if let Some(g) = gh0 {
        for (gi, d) in g.iter_mut().zip(&dh) {
            *gi += d;
        }
    }
    Ok(())
}

/// Adam optimizer state for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Updates rejected because of non-finite gradients.
    pub skipped: u64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, skipped: 0 }
    }
}

/// One bias-corrected Adam step. Returns `false` (and counts a skip) if any
/// gradient is non-finite; parameters are then left untouched.
pub fn adam_update(params: &mut [f64], grads: &[f64], opt: &mut AdamState) -> Result<bool> {
    if params.len() != grads.len() || opt.m.len() != params.len() {
        return Err(Error::ShapeMismatch { expected: params.len(), found: grads.len() });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        opt.skipped += 1;
        return Ok(false);
    }
    opt.step += 1;
    let t = opt.step as i32;
    let c1 = 1.0 - libm::pow(opt.beta1, t as f64);
    let c2 = 1.0 - libm::pow(opt.beta2, t as f64);
    let step = opt.lr / c1;
    for i in 0..params.len() {
        let g = grads[i];
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g;
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g * g;
        params[i] -= step * opt.m[i] / (libm::sqrt(opt.v[i] / c2) + opt.eps);
    }
    Ok(true)
}

/// Affine map from `[-1, 1]` onto an action box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionScale {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

impl ActionScale {
    pub fn from_bounds(dim: usize, lo: f64, hi: f64) -> Self {
        Self { scale: vec![0.5 * (hi - lo); dim], offset: vec![0.5 * (hi + lo); dim] }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    /// `sum(log scale)`, the density shift between box and normalized space.
    pub fn log_volume(&self) -> f64 {
        self.scale.iter().map(|s| libm::log(*s)).sum()
    }
}

/// One reparameterized draw from the squashed Gaussian head.
#[derive(Debug, Clone, PartialEq)]
pub struct SquashedSample {
    pub action: Vec<f64>,
    pub mean: Vec<f64>,
    /// Clamped log standard deviation.
    pub log_sd: Vec<f64>,
    pub noise: Vec<f64>,
    /// `mean + sd * noise`.
    pub pre_tanh: Vec<f64>,
    /// Log density of `tanh(pre_tanh)` on `[-1, 1]^d`.
    pub log_prob: f64,
    clamped: Vec<bool>,
}

const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_7;

/// `log(1 - tanh(u)^2)` without cancellation.
#[inline]
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let a = libm::fabs(u);
    2.0 * (core::f64::consts::LN_2 - a - libm::log1p(libm::exp(-2.0 * a)))
}

/// Split a raw head output into mean and clamped log-sd, then squash
/// `mean + sd * noise` into the action box.
pub fn squashed_gaussian(raw: &[f64], noise: &[f64], scale: &ActionScale) -> SquashedSample {
    squashed_gaussian_clamped(raw, noise, scale, LOG_SD_MAX)
}

/// [`squashed_gaussian`] with an explicit upper log-sd clamp.
pub fn squashed_gaussian_clamped(raw: &[f64], noise: &[f64], scale: &ActionScale, log_sd_max: f64) -> SquashedSample {
    let d = scale.dim();
    let mean = raw[..d].to_vec();
    let mut log_sd = Vec::with_capacity(d);
    let mut clamped = Vec::with_capacity(d);
    for &ls in &raw[d..2 * d] {
        clamped.push(!(LOG_SD_MIN..=log_sd_max).contains(&ls));
        log_sd.push(ls.clamp(LOG_SD_MIN, log_sd_max));
    }
    let mut pre_tanh = Vec::with_capacity(d);
    let mut action = Vec::with_capacity(d);
    let mut log_prob = 0.0;
    for j in 0..d {
        let u = mean[j] + libm::exp(log_sd[j]) * noise[j];
        pre_tanh.push(u);
        action.push(scale.scale[j] * libm::tanh(u) + scale.offset[j]);
        log_prob += -0.5 * noise[j] * noise[j] - log_sd[j] - HALF_LOG_TWO_PI - log_one_minus_tanh_sq(u);
    }
    SquashedSample { action, mean, log_sd, noise: noise.to_vec(), pre_tanh, log_prob, clamped }
}

/// Deterministic action `scale * tanh(mean) + offset`.
pub fn squashed_mean(raw: &[f64], scale: &ActionScale) -> Vec<f64> {
    (0..scale.dim()).map(|j| scale.scale[j] * libm::tanh(raw[j]) + scale.offset[j]).collect()
}

/// Gradient of `L(action, log_prob)` with respect to the raw head output,
/// given `dL/d action` and `dL/d log_prob`.
pub fn squashed_gaussian_backward(
    sample: &SquashedSample,
    scale: &ActionScale,
    d_action: &[f64],
    d_log_prob: f64,
) -> Vec<f64> {
    let d = scale.dim();
    let mut out = vec![0.0; 2 * d];
    for j in 0..d {
        let th = libm::tanh(sample.pre_tanh[j]);
        let du = d_action[j] * scale.scale[j] * (1.0 - th * th) + d_log_prob * 2.0 * th;
        out[j] = du;
        if !sample.clamped[j] {
            out[d + j] = du * libm::exp(sample.log_sd[j]) * sample.noise[j] - d_log_prob;
        }
    }
    out
}

/// Log density of a box action under the squashed Gaussian with the given
/// mean and log-sd, including the `log scale` of the final affine map.
pub fn squashed_log_density(mean: &[f64], log_sd: &[f64], action: &[f64], scale: &ActionScale) -> f64 {
    let mut lp = 0.0;
    for j in 0..scale.dim() {
        let y = ((action[j] - scale.offset[j]) / scale.scale[j]).clamp(-1.0 + 1e-15, 1.0 - 1e-15);
        let u = libm::atanh(y);
        let sd = libm::exp(log_sd[j]);
        let n = (u - mean[j]) / sd;
        lp += -0.5 * n * n - log_sd[j] - HALF_LOG_TWO_PI - log_one_minus_tanh_sq(u) - libm::log(scale.scale[j]);
    }
    lp
}
