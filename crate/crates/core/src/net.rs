//! Fully-connected network engine: Sigmoid hidden layers, linear output,
//! full-batch Adam on mean squared error, and gradients with respect to the
//! inputs.
//!
//! Inputs and outputs carry per-dimension affine normalization that is fitted
//! once from the pretraining data and frozen afterwards; `forward` takes and
//! returns physical units. Each `train_batch` call is one optimization run:
//! Adam moments start at zero and are not carried across calls, so a batch of
//! self-labeled rows leaves the parameters exactly untouched and a reloaded
//! checkpoint behaves identically to the original.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::par;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const ADAM_STEP: f64 = 1e-3;
/// Base step for the bulk pretraining optimizer (`fit`).
const FIT_STEP: f64 = 3e-3;
/// Rows per gradient-accumulation chunk. Chunks are summed in a fixed order,
/// so parallel and sequential builds produce bit-identical results.
const GRAD_CHUNK: usize = 64;

const WEIGHT_FILE_MAGIC: &str = "MYOCTL-NET v1";

/// Loss selector for input-gradient feedback.
///
/// `L0` is the plain error norm ‖y − t‖₂; `L1` adds α‖x_s‖₂ over the selected
/// input slice; `L2` adds α‖min(x_s, 0)‖₂, penalizing only negative
/// (contracting) entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    L0,
    L1,
    L2,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l0" => Ok(LossKind::L0),
            "l1" => Ok(LossKind::L1),
            "l2" => Ok(LossKind::L2),
            other => Err(Error::Config(format!("unknown loss kind '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::L0 => "l0",
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
        }
    }
}

/// Layered perceptron with frozen input/output normalization.
#[derive(Debug, Clone)]
pub struct Network {
    dims: Vec<usize>,
    /// Row-major `out × in` per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    in_shift: Vec<f64>,
    in_scale: Vec<f64>,
    out_shift: Vec<f64>,
    out_scale: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Network {
    /// Fresh network with uniform ±√(6/(fan_in+fan_out)) weights, zero biases
    /// and identity normalization.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "network needs at least input and output layers");
        assert!(dims.iter().all(|&d| d > 0), "zero-width layer");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Network {
            dims: dims.to_vec(),
            weights,
            biases,
            in_shift: vec![0.0; dims[0]],
            in_scale: vec![1.0; dims[0]],
            out_shift: vec![0.0; *dims.last().unwrap()],
            out_scale: vec![1.0; *dims.last().unwrap()],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Fit per-dimension zero-mean/unit-variance normalization from data.
    /// Dimensions with no spread keep unit scale.
    pub fn fit_normalization(&mut self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) {
        fn fit(rows: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
            let n = rows.len().max(1) as f64;
            let mut mean = vec![0.0; dim];
            for r in rows {
                for (m, v) in mean.iter_mut().zip(r) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= n;
            }
            let mut var = vec![0.0; dim];
            for r in rows {
                for ((v, m), x) in var.iter_mut().zip(&mean).zip(r) {
                    *v += (x - m) * (x - m);
                }
            }
            let scale = var
                .iter()
                .map(|v| {
                    let s = (v / n).sqrt();
                    if s > 1e-12 {
                        s
                    } else {
                        1.0
                    }
                })
                .collect();
            (mean, scale)
        }
        let (s, c) = fit(inputs, self.input_dim());
        self.in_shift = s;
        self.in_scale = c;
        let (s, c) = fit(targets, self.output_dim());
        self.out_shift = s;
        self.out_scale = c;
    }

    pub fn normalize_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.in_shift)
            .zip(&self.in_scale)
            .map(|((v, s), c)| (v - s) / c)
            .collect()
    }

    pub fn denormalize_output(&self, y_norm: &[f64]) -> Vec<f64> {
        y_norm
            .iter()
            .zip(&self.out_shift)
            .zip(&self.out_scale)
            .map(|((v, s), c)| v * c + s)
            .collect()
    }

    /// Forward pass in physical units.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim(), "forward: input dimension mismatch");
        let mut a = self.normalize_input(x);
        let last = self.dims.len() - 2;
        for l in 0..=last {
            a = self.layer_forward(l, &a, l < last);
        }
        self.denormalize_output(&a)
    }

    fn layer_forward(&self, l: usize, a: &[f64], hidden: bool) -> Vec<f64> {
        let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
        let w = &self.weights[l];
        let mut out = vec![0.0; n_out];
        for o in 0..n_out {
            let mut z = self.biases[l][o];
            let row = &w[o * n_in..(o + 1) * n_in];
            for (wi, ai) in row.iter().zip(a) {
                z += wi * ai;
            }
            out[o] = if hidden { sigmoid(z) } else { z };
        }
        out
    }

    /// Forward keeping all post-activation values (normalized space);
    /// `acts[0]` is the normalized input, `acts.last()` the normalized output.
    fn forward_trace(&self, x_norm: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.dims.len());
        acts.push(x_norm.to_vec());
        let last = self.dims.len() - 2;
        for l in 0..=last {
            let next = self.layer_forward(l, acts.last().unwrap(), l < last);
            acts.push(next);
        }
        acts
    }

    /// Full-batch Adam on MSE (normalized space) for `epochs` passes; returns
    /// the mean squared error after the final epoch. Optimizer state is local
    /// to this call.
    pub fn train_batch(
        &mut self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        epochs: usize,
    ) -> Result<f64> {
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.len(),
                got: targets.len(),
                context: "train_batch row counts",
            });
        }
        if inputs.is_empty() {
            return Err(Error::TooFewSamples { got: 0, need: 1 });
        }
        if epochs == 0 {
            return Err(Error::Config("train_batch: epochs must be >= 1".into()));
        }
        let x_norm: Vec<Vec<f64>> = inputs.iter().map(|x| self.normalize_input(x)).collect();
        let t_norm: Vec<Vec<f64>> = targets
            .iter()
            .map(|t| {
                assert_eq!(t.len(), self.output_dim(), "train_batch: target dimension");
                t.iter()
                    .zip(&self.out_shift)
                    .zip(&self.out_scale)
                    .map(|((v, s), c)| (v - s) / c)
                    .collect()
            })
            .collect();

        let mut m_w: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut v_w = m_w.clone();
        let mut m_b: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut v_b = m_b.clone();

        let mut loss = f64::NAN;
        for epoch in 0..epochs {
            let (grad, epoch_loss) = self.batch_gradient(&x_norm, &t_norm);
            loss = epoch_loss;
            if !loss.is_finite() {
                return Err(Error::DivergentTraining);
            }
            let t = (epoch + 1) as f64;
            let bc1 = 1.0 - ADAM_BETA1.powf(t);
            let bc2 = 1.0 - ADAM_BETA2.powf(t);
            for l in 0..self.weights.len() {
                adam_update(&mut self.weights[l], &grad.0[l], &mut m_w[l], &mut v_w[l], bc1, bc2, ADAM_STEP);
                adam_update(&mut self.biases[l], &grad.1[l], &mut m_b[l], &mut v_b[l], bc1, bc2, ADAM_STEP);
            }
        }
        Ok(loss)
    }

    /// Long-form training for pretraining datasets: sweeps fixed minibatches
    /// of `batch_size` rows each epoch with Adam state carried across all
    /// steps. Returns the full-batch MSE (normalized space) after the final
    /// epoch. `train_batch` remains the single-batch primitive used by online
    /// updates; this is the bulk optimizer.
    pub fn fit(
        &mut self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        epochs: usize,
        batch_size: usize,
    ) -> Result<f64> {
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.len(),
                got: targets.len(),
                context: "fit row counts",
            });
        }
        if inputs.is_empty() {
            return Err(Error::TooFewSamples { got: 0, need: 1 });
        }
        if epochs == 0 || batch_size == 0 {
            return Err(Error::Config("fit: epochs and batch_size must be >= 1".into()));
        }
        let x_norm: Vec<Vec<f64>> = inputs.iter().map(|x| self.normalize_input(x)).collect();
        let t_norm: Vec<Vec<f64>> = targets
            .iter()
            .map(|t| {
                t.iter()
                    .zip(&self.out_shift)
                    .zip(&self.out_scale)
                    .map(|((v, s), c)| (v - s) / c)
                    .collect()
            })
            .collect();
        let mut m_w: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut v_w = m_w.clone();
        let mut m_b: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut v_b = m_b.clone();
        let n = x_norm.len();
        let steps_per_epoch = n.div_ceil(batch_size);
        let total_steps = (epochs * steps_per_epoch).max(1);
        let mut step = 0usize;
        for _ in 0..epochs {
            let mut lo = 0;
            while lo < n {
                let hi = (lo + batch_size).min(n);
                let (grad, loss) = self.batch_gradient(&x_norm[lo..hi], &t_norm[lo..hi]);
                if !loss.is_finite() {
                    return Err(Error::DivergentTraining);
                }
                // Cosine decay from the bulk step down to 1% of it.
                let progress = step as f64 / total_steps as f64;
                let lr = FIT_STEP
                    * (0.01 + 0.99 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
                step += 1;
                let t = step as f64;
                let bc1 = 1.0 - ADAM_BETA1.powf(t);
                let bc2 = 1.0 - ADAM_BETA2.powf(t);
                for l in 0..self.weights.len() {
                    adam_update(&mut self.weights[l], &grad.0[l], &mut m_w[l], &mut v_w[l], bc1, bc2, lr);
                    adam_update(&mut self.biases[l], &grad.1[l], &mut m_b[l], &mut v_b[l], bc1, bc2, lr);
                }
                lo = hi;
            }
        }
        let (_, final_loss) = self.batch_gradient(&x_norm, &t_norm);
        Ok(final_loss)
    }

    /// Mean squared error of the current parameters on a batch (normalized
    /// space), without updating anything.
    pub fn batch_loss(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
        let n = inputs.len();
        let m = self.output_dim();
        let mut sum = 0.0;
        for (x, t) in inputs.iter().zip(targets) {
            let y = self.forward(x);
            for ((yi, ti), sc) in y.iter().zip(t.iter()).zip(&self.out_scale) {
                let d = (yi - ti) / sc;
                sum += d * d;
            }
        }
        sum / (n * m) as f64
    }

    /// Batch gradient (normalized space), accumulated over fixed-size chunks
    /// in index order.
    #[allow(clippy::type_complexity)]
    fn batch_gradient(
        &self,
        x_norm: &[Vec<f64>],
        t_norm: &[Vec<f64>],
    ) -> ((Vec<Vec<f64>>, Vec<Vec<f64>>), f64) {
        let n = x_norm.len();
        let n_chunks = n.div_ceil(GRAD_CHUNK);
        let partials = par::map_range(n_chunks, |c| {
            let lo = c * GRAD_CHUNK;
            let hi = (lo + GRAD_CHUNK).min(n);
            self.chunk_gradient(&x_norm[lo..hi], &t_norm[lo..hi])
        });
        let mut dw: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut db: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut loss_sum = 0.0;
        for (pw, pb, pl) in partials {
            for (acc, p) in dw.iter_mut().zip(&pw) {
                for (a, v) in acc.iter_mut().zip(p) {
                    *a += v;
                }
            }
            for (acc, p) in db.iter_mut().zip(&pb) {
                for (a, v) in acc.iter_mut().zip(p) {
                    *a += v;
                }
            }
            loss_sum += pl;
        }
        let scale = 1.0 / (n * self.output_dim()) as f64;
        for g in dw.iter_mut().flat_map(|v| v.iter_mut()) {
            *g *= scale;
        }
        for g in db.iter_mut().flat_map(|v| v.iter_mut()) {
            *g *= scale;
        }
        ((dw, db), loss_sum * scale)
    }

    #[allow(clippy::type_complexity)]
    fn chunk_gradient(
        &self,
        x_rows: &[Vec<f64>],
        t_rows: &[Vec<f64>],
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, f64) {
        let n_layers = self.weights.len();
        let mut dw: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut db: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut loss_sum = 0.0;
        for (x, t) in x_rows.iter().zip(t_rows) {
            let acts = self.forward_trace(x);
            let y = acts.last().unwrap();
            // d(sum of squared residuals)/dy = 2(y - t); the 1/(n·m) factor is
            // applied once by the caller.
            let mut delta: Vec<f64> = y
                .iter()
                .zip(t)
                .map(|(yi, ti)| {
                    let r = yi - ti;
                    loss_sum += r * r;
                    2.0 * r
                })
                .collect();
            for l in (0..n_layers).rev() {
                let a_prev = &acts[l];
                let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
                for o in 0..n_out {
                    let d = delta[o];
                    db[l][o] += d;
                    let row = &mut dw[l][o * n_in..(o + 1) * n_in];
                    for (g, a) in row.iter_mut().zip(a_prev) {
                        *g += d * a;
                    }
                }
                if l > 0 {
                    let mut prev = vec![0.0; n_in];
                    let w = &self.weights[l];
                    for o in 0..n_out {
                        let d = delta[o];
                        let row = &w[o * n_in..(o + 1) * n_in];
                        for (p, wi) in prev.iter_mut().zip(row) {
                            *p += d * wi;
                        }
                    }
                    // Hidden activation derivative: σ'(z) = a(1-a).
                    for (p, a) in prev.iter_mut().zip(a_prev) {
                        *p *= a * (1.0 - a);
                    }
                    delta = prev;
                }
            }
        }
        (dw, db, loss_sum)
    }

    /// Gradient of the selected loss with respect to the *physical* input,
    /// restricted to `slice`. The loss is evaluated on the physical output:
    /// `L0 = ‖y − target‖₂` plus the `LossKind` regularizer over the physical
    /// input slice. At exactly zero residual the norm subgradient is taken as
    /// zero. Parameters are untouched.
    pub fn input_gradient(
        &self,
        x: &[f64],
        target: &[f64],
        loss: LossKind,
        alpha: f64,
        slice: Range<usize>,
    ) -> Result<Vec<f64>> {
        assert_eq!(x.len(), self.input_dim(), "input_gradient: input dimension");
        assert_eq!(target.len(), self.output_dim(), "input_gradient: target dimension");
        if slice.end > self.input_dim() || slice.start > slice.end {
            return Err(Error::Config(format!(
                "input slice {slice:?} outside input dimension {}",
                self.input_dim()
            )));
        }
        let x_norm = self.normalize_input(x);
        let acts = self.forward_trace(&x_norm);
        let y = self.denormalize_output(acts.last().unwrap());

        // Prediction term: d‖y − t‖/dy = (y − t)/‖y − t‖, zero at the minimum.
        let mut resid: Vec<f64> = y.iter().zip(target).map(|(a, b)| a - b).collect();
        let rnorm = resid.iter().map(|r| r * r).sum::<f64>().sqrt();
        if rnorm > 0.0 {
            for r in &mut resid {
                *r /= rnorm;
            }
        } else {
            resid.iter_mut().for_each(|r| *r = 0.0);
        }
        // To normalized output: dy_i/dy_norm_i = out_scale_i.
        let mut delta: Vec<f64> = resid.iter().zip(&self.out_scale).map(|(d, s)| d * s).collect();

        // Backpropagate to the normalized input.
        for l in (0..self.weights.len()).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.weights[l];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                let row = &w[o * n_in..(o + 1) * n_in];
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += d * wi;
                }
            }
            if l > 0 {
                for (p, a) in prev.iter_mut().zip(&acts[l]) {
                    *p *= a * (1.0 - a);
                }
            }
            delta = prev;
        }
        // To physical input: dx_norm/dx = 1/in_scale.
        let mut grad: Vec<f64> = delta
            .iter()
            .zip(&self.in_scale)
            .map(|(d, s)| d / s)
            .collect();

        // Regularizer terms act directly on the physical slice.
        match loss {
            LossKind::L0 => {}
            LossKind::L1 => {
                let norm = x[slice.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for i in slice.clone() {
                        grad[i] += alpha * x[i] / norm;
                    }
                }
            }
            LossKind::L2 => {
                let norm = x[slice.clone()]
                    .iter()
                    .map(|v| if *v < 0.0 { v * v } else { 0.0 })
                    .sum::<f64>()
                    .sqrt();
                if norm > 0.0 {
                    for i in slice.clone() {
                        if x[i] < 0.0 {
                            grad[i] += alpha * x[i] / norm;
                        }
                    }
                }
            }
        }
        let out: Vec<f64> = grad[slice].to_vec();
        if out.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("input gradient"));
        }
        Ok(out)
    }

    /// Serialize to the documented text format. `role` tags what the weights
    /// are for (e.g. `jmm`, `olfc-type-b`).
    pub fn to_text(&self, role: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{WEIGHT_FILE_MAGIC} {role}");
        let _ = writeln!(s, "activation sigmoid");
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "dims {}", dims.join(" "));
        for l in 0..self.weights.len() {
            let _ = writeln!(s, "layer {l}");
            let n_in = self.dims[l];
            for o in 0..self.dims[l + 1] {
                let row: Vec<String> = self.weights[l][o * n_in..(o + 1) * n_in]
                    .iter()
                    .map(|v| v.to_string())
                    .collect();
                let _ = writeln!(s, "{}", row.join(" "));
            }
            let row: Vec<String> = self.biases[l].iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        for (tag, vals) in [
            ("norm-in-shift", &self.in_shift),
            ("norm-in-scale", &self.in_scale),
            ("norm-out-shift", &self.out_shift),
            ("norm-out-scale", &self.out_scale),
        ] {
            let row: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{tag} {}", row.join(" "));
        }
        s
    }

    /// Parse the text format; returns the network and its role tag.
    pub fn from_text(text: &str) -> Result<(Network, String)> {
        let bad = |msg: &str| Error::WeightFile(msg.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty file"))?;
        let role = header
            .strip_prefix(WEIGHT_FILE_MAGIC)
            .ok_or_else(|| bad("bad magic line"))?
            .trim()
            .to_string();
        let act = lines.next().ok_or_else(|| bad("missing activation line"))?;
        if act.trim() != "activation sigmoid" {
            return Err(bad("unsupported activation"));
        }
        let dims_line = lines.next().ok_or_else(|| bad("missing dims line"))?;
        let dims: Vec<usize> = dims_line
            .strip_prefix("dims")
            .ok_or_else(|| bad("missing dims line"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("bad dims entry")))
            .collect::<Result<_>>()?;
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(bad("invalid dims"));
        }
        let parse_floats = |line: &str, want: usize| -> Result<Vec<f64>> {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad("bad float")))
                .collect::<Result<_>>()?;
            if vals.len() != want {
                return Err(bad(&format!("expected {want} values, got {}", vals.len())));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(bad("non-finite value"));
            }
            Ok(vals)
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let tag = lines.next().ok_or_else(|| bad("missing layer header"))?;
            if tag.trim() != format!("layer {l}") {
                return Err(bad(&format!("expected 'layer {l}', got '{tag}'")));
            }
            let mut w = Vec::with_capacity(dims[l] * dims[l + 1]);
            for _ in 0..dims[l + 1] {
                let row = lines.next().ok_or_else(|| bad("missing weight row"))?;
                w.extend(parse_floats(row, dims[l])?);
            }
            let b = lines.next().ok_or_else(|| bad("missing bias row"))?;
            weights.push(w);
            biases.push(parse_floats(b, dims[l + 1])?);
        }
        let mut read_norm = |tag: &str, want: usize| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| bad("missing normalization line"))?;
            let rest = line
                .strip_prefix(tag)
                .ok_or_else(|| bad(&format!("expected '{tag}' line")))?;
            parse_floats(rest, want)
        };
        let n_in = dims[0];
        let n_out = *dims.last().unwrap();
        let in_shift = read_norm("norm-in-shift", n_in)?;
        let in_scale = read_norm("norm-in-scale", n_in)?;
        let out_shift = read_norm("norm-out-shift", n_out)?;
        let out_scale = read_norm("norm-out-scale", n_out)?;
        let net = Network { dims, weights, biases, in_shift, in_scale, out_shift, out_scale };
        Ok((net, role))
    }

    pub fn save(&self, path: impl AsRef<Path>, role: &str) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text(role))
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Network, String)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_text(&text)
    }
}

fn adam_update(
    params: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    bias_corr1: f64,
    bias_corr2: f64,
    lr: f64,
) {
    for i in 0..params.len() {
        let g = grad[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[i] / bias_corr1;
        let v_hat = v[i] / bias_corr2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_net(dims: &[usize], seed: u64) -> Network {
        Network::new(dims, &mut rng(seed))
    }

    #[test]
    fn zero_net_outputs_zero() {
        let mut net = random_net(&[3, 5, 4, 2], 1);
        for w in &mut net.weights {
            w.iter_mut().for_each(|v| *v = 0.0);
        }
        let y = net.forward(&[0.3, -1.2, 4.0]);
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn single_hidden_unit_matches_hand_computation() {
        let mut net = random_net(&[1, 1, 1], 2);
        net.weights[0] = vec![0.7];
        net.biases[0] = vec![-0.2];
        net.weights[1] = vec![1.3];
        net.biases[1] = vec![0.05];
        let x = 0.4;
        let y = net.forward(&[x]);
        let hand = 1.3 * sigmoid(0.7 * x - 0.2) + 0.05;
        assert_relative_eq!(y[0], hand, epsilon = 1e-12);
    }

    #[test]
    fn forward_is_deterministic() {
        let net = random_net(&[4, 40, 20, 20, 3], 3);
        let x = [0.1, -0.5, 2.0, 0.7];
        assert_eq!(net.forward(&x), net.forward(&x));
    }

    #[test]
    fn zero_residual_leaves_parameters_untouched() {
        let mut net = random_net(&[2, 8, 2], 4);
        let inputs: Vec<Vec<f64>> = vec![vec![0.2, -0.4], vec![1.0, 0.5], vec![-0.3, 0.9]];
        let targets: Vec<Vec<f64>> = inputs.iter().map(|x| net.forward(x)).collect();
        let before = net.clone();
        let loss = net.train_batch(&inputs, &targets, 3).unwrap();
        assert!(loss < 1e-28);
        assert_eq!(net.weights, before.weights);
        assert_eq!(net.biases, before.biases);
    }

    #[test]
    fn fits_scalar_linear_map() {
        let mut net = random_net(&[1, 40, 20, 20, 1], 5);
        let inputs: Vec<Vec<f64>> = (0..100).map(|i| vec![-1.0 + 2.0 * i as f64 / 99.0]).collect();
        let targets: Vec<Vec<f64>> = inputs.iter().map(|x| vec![2.0 * x[0]]).collect();
        net.fit_normalization(&inputs, &targets);
        let loss = net.train_batch(&inputs, &targets, 2000).unwrap();
        assert!(loss < 1e-3, "loss {loss}");
    }

    #[test]
    fn one_adam_step_matches_hand_formula() {
        // Single linear layer y = w·x + b, one sample.
        let mut net = random_net(&[1, 1], 6);
        net.weights[0] = vec![0.5];
        net.biases[0] = vec![0.1];
        let (x, t) = (1.5f64, 2.0f64);
        let y = 0.5 * x + 0.1;
        // MSE = (y-t)²; gradients: dw = 2(y-t)x, db = 2(y-t).
        let gw = 2.0 * (y - t) * x;
        let gb = 2.0 * (y - t);
        let adam = |g: f64| {
            let m = 0.1 * g;
            let v = 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9);
            let v_hat = v / (1.0 - 0.999);
            1e-3 * m_hat / (v_hat.sqrt() + 1e-8)
        };
        let expect_w = 0.5 - adam(gw);
        let expect_b = 0.1 - adam(gb);
        net.train_batch(&[vec![x]], &[vec![t]], 1).unwrap();
        assert_relative_eq!(net.weights[0][0], expect_w, epsilon = 1e-15);
        assert_relative_eq!(net.biases[0][0], expect_b, epsilon = 1e-15);
    }

    /// Central-difference oracle for the input gradient, physical units.
    fn fd_input_gradient(
        net: &Network,
        x: &[f64],
        target: &[f64],
        loss: LossKind,
        alpha: f64,
        slice: Range<usize>,
    ) -> Vec<f64> {
        let eval = |x: &[f64]| -> f64 {
            let y = net.forward(x);
            let l0 = y
                .iter()
                .zip(target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let reg = match loss {
                LossKind::L0 => 0.0,
                LossKind::L1 => {
                    alpha * x[slice.clone()].iter().map(|v| v * v).sum::<f64>().sqrt()
                }
                LossKind::L2 => {
                    alpha
                        * x[slice.clone()]
                            .iter()
                            .map(|v| if *v < 0.0 { v * v } else { 0.0 })
                            .sum::<f64>()
                            .sqrt()
                }
            };
            l0 + reg
        };
        slice
            .clone()
            .map(|i| {
                // Step h = 1e-5 on the normalized scale of dimension i.
                let h = 1e-5 * net.in_scale[i];
                let mut xp = x.to_vec();
                xp[i] += h;
                let mut xm = x.to_vec();
                xm[i] -= h;
                (eval(&xp) - eval(&xm)) / (2.0 * h)
            })
            .collect()
    }

    fn random_case(seed: u64) -> (Network, Vec<f64>, Vec<f64>) {
        let mut r = rng(seed);
        let mut net = random_net(&[6, 12, 8, 3], seed + 1000);
        // Non-trivial normalization to exercise the chain rule.
        net.in_shift = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
        net.in_scale = (0..6).map(|_| r.random_range(0.5..3.0)).collect();
        net.out_shift = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        net.out_scale = (0..3).map(|_| r.random_range(0.5..3.0)).collect();
        // Keep slice entries away from the L2 kink at zero.
        let x: Vec<f64> = (0..6)
            .map(|_| {
                let v: f64 = r.random_range(0.1..2.0);
                if r.random_range(0.0..1.0) < 0.5 {
                    -v
                } else {
                    v
                }
            })
            .collect();
        let target: Vec<f64> = (0..3).map(|_| r.random_range(-3.0..3.0)).collect();
        (net, x, target)
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        for kind in [LossKind::L0, LossKind::L1, LossKind::L2] {
            for seed in 0..20 {
                let (net, x, target) = random_case(seed);
                let slice = 2..6;
                let g = net
                    .input_gradient(&x, &target, kind, 0.0003, slice.clone())
                    .unwrap();
                let fd = fd_input_gradient(&net, &x, &target, kind, 0.0003, slice);
                let denom = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
                let err = g
                    .iter()
                    .zip(&fd)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
                    / denom;
                assert!(err < 1e-4, "kind {kind:?} seed {seed}: rel err {err}");
            }
        }
    }

    #[test]
    fn gradient_zero_at_exact_target() {
        let (net, x, _) = random_case(99);
        let target = net.forward(&x);
        let g = net.input_gradient(&x, &target, LossKind::L0, 0.0, 0..6).unwrap();
        assert!(g.iter().all(|v| *v == 0.0), "{g:?}");
    }

    #[test]
    fn l1_term_is_analytic_norm_gradient() {
        let (net, x, target) = random_case(7);
        let slice = 2..6;
        let g0 = net.input_gradient(&x, &target, LossKind::L0, 0.0003, slice.clone()).unwrap();
        let g1 = net.input_gradient(&x, &target, LossKind::L1, 0.0003, slice.clone()).unwrap();
        let norm = x[slice.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
        for (i, idx) in slice.enumerate() {
            let expect = 0.0003 * x[idx] / norm;
            assert_relative_eq!(g1[i] - g0[i], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn l2_ignores_lengthening_entries() {
        let (net, mut x, target) = random_case(8);
        // All slice entries positive: L2 reduces to L0.
        for v in &mut x[2..6] {
            *v = v.abs();
        }
        let g0 = net.input_gradient(&x, &target, LossKind::L0, 0.0003, 2..6).unwrap();
        let g2 = net.input_gradient(&x, &target, LossKind::L2, 0.0003, 2..6).unwrap();
        assert_eq!(g0, g2);
    }

    #[test]
    fn training_is_reproducible_bitwise() {
        let build = || {
            let mut net = random_net(&[3, 16, 8, 2], 42);
            let mut r = rng(43);
            let inputs: Vec<Vec<f64>> =
                (0..200).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
            let targets: Vec<Vec<f64>> = inputs
                .iter()
                .map(|x| vec![x[0] * x[1], (x[2] as f64).sin()])
                .collect();
            net.fit_normalization(&inputs, &targets);
            net.train_batch(&inputs, &targets, 50).unwrap();
            net
        };
        let a = build();
        let b = build();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.biases, b.biases);
    }

    #[test]
    fn normalization_round_trip() {
        let (net, x, _) = random_case(11);
        let back = {
            let n = net.normalize_input(&x);
            n.iter()
                .zip(&net.in_shift)
                .zip(&net.in_scale)
                .map(|((v, s), c)| v * c + s)
                .collect::<Vec<f64>>()
        };
        for (a, b) in back.iter().zip(&x) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn weight_file_round_trip_bitwise() {
        let (net, x, _) = random_case(12);
        let text = net.to_text("test-role");
        let (loaded, role) = Network::from_text(&text).unwrap();
        assert_eq!(role, "test-role");
        assert_eq!(net.forward(&x), loaded.forward(&x));
        assert_eq!(net.weights, loaded.weights);
    }

    #[test]
    fn weight_file_rejects_garbage() {
        assert!(Network::from_text("not a weight file").is_err());
        let (net, _, _) = random_case(13);
        let text = net.to_text("x");
        let truncated = &text[..text.len() / 2];
        assert!(Network::from_text(truncated).is_err());
        let poisoned = text.replace("dims 6 12 8 3", "dims 6 12 9 3");
        assert!(Network::from_text(&poisoned).is_err());
    }

    #[test]
    fn divergent_training_is_reported() {
        // A target whose squared residual overflows yields a non-finite loss.
        let mut net = random_net(&[1, 4, 1], 14);
        let res = net.train_batch(&[vec![0.5]], &[vec![1e200]], 2);
        assert!(matches!(res, Err(Error::DivergentTraining)), "{res:?}");
    }
}
