//! Online-learning feedback control: transition networks, their pretraining
//! from the geometric model, online updates from observed transitions, and
//! the feedback computation of the target muscle-length change.
//!
//! Two network shapes cover the same job:
//!
//! - Type A maps (θ_cur, θ_ref) → Δl and is evaluated directly.
//! - Type B maps (θ_cur, Δl) → θ and is inverted at control time: starting
//!   from the geometric-model guess Δl_geo = h_geo(θ_ref) − h_geo(θ_cur),
//!   the Δl input is refined by gradient descent through the network with a
//!   line search over the step size, keeping the candidate with the lowest
//!   loss. Because the zero step is always a candidate, the kept loss never
//!   increases.
//!
//! Online learning keeps a bounded buffer of observed transitions (admitted
//! only while ‖Δl_cmd‖₂ < C_length) and trains in small batches made of
//! buffer samples, constraint rows pinning "no length change ⇒ no motion",
//! and anchor rows self-labeled by the current network so behavior far from
//! fresh data stays put.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ArmModel;
use crate::net::{LossKind, Network};
use crate::vecs::{JointVector, MuscleVector};

/// One observed (or synthesized) motion: from pose, to pose, and the target
/// muscle-length change that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    pub theta_from: JointVector,
    pub theta_to: JointVector,
    pub delta_l: MuscleVector,
}

/// Controller flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerKind {
    TypeA,
    TypeB,
}

impl ControllerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "type-a" | "a" => Ok(ControllerKind::TypeA),
            "type-b" | "b" => Ok(ControllerKind::TypeB),
            other => Err(Error::Config(format!("unknown controller kind '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::TypeA => "type-a",
            ControllerKind::TypeB => "type-b",
        }
    }

    fn weight_role(&self) -> &'static str {
        match self {
            ControllerKind::TypeA => "olfc-type-a",
            ControllerKind::TypeB => "olfc-type-b",
        }
    }
}

/// Protocol constants. Defaults are the published values; everything is
/// overridable through configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlfcConstants {
    /// Admission threshold on ‖Δl_cmd‖₂ (mm).
    pub c_length_mm: f64,
    /// Buffer size at which online learning starts.
    pub n_thre: usize,
    /// Buffer samples per online batch.
    pub n_data: usize,
    /// Constraint rows per online batch.
    pub n_limit: usize,
    /// Anchor rows per online batch.
    pub n_const: usize,
    /// Epochs per online update.
    pub n_epoch: usize,
    /// Line-search upper bound on the input-gradient step (mm).
    pub gamma_max_mm: f64,
    /// Number of line-search divisions of [0, γ_max].
    pub n_batch: usize,
    /// Outer refinement iterations of the Δl input.
    pub n_update: usize,
    /// Weight of the length-change penalty in L1/L2.
    pub alpha: f64,
    /// FIFO cap on the transition buffer.
    pub buffer_cap: usize,
}

impl Default for OlfcConstants {
    fn default() -> Self {
        OlfcConstants {
            c_length_mm: 100.0,
            n_thre: 10,
            n_data: 10,
            n_limit: 5,
            n_const: 5,
            n_epoch: 3,
            gamma_max_mm: 10.0,
            n_batch: 10,
            n_update: 10,
            alpha: 0.0003,
            buffer_cap: 1000,
        }
    }
}

/// Feedback controller: network, transition buffer, constants, and the joint
/// limits used when sampling random poses for constraint/anchor rows.
#[derive(Debug, Clone)]
pub struct OlfcController {
    pub kind: ControllerKind,
    pub network: Network,
    pub buffer: VecDeque<TransitionSample>,
    pub constants: OlfcConstants,
    limits: Vec<(f64, f64)>,
}

/// Loss of a feedback candidate: `L0 = ‖θ_pred − θ_ref‖₂`,
/// `L1 = L0 + α‖Δl‖₂`, `L2 = L0 + α‖min(Δl, 0)‖₂`.
pub fn evaluate_loss(
    kind: LossKind,
    theta_pred: &JointVector,
    theta_ref: &JointVector,
    delta_l: &MuscleVector,
    alpha: f64,
) -> f64 {
    let l0 = theta_pred.sub(theta_ref).norm();
    match kind {
        LossKind::L0 => l0,
        LossKind::L1 => l0 + alpha * delta_l.norm(),
        LossKind::L2 => {
            let contracting = delta_l
                .iter()
                .map(|v| if *v < 0.0 { v * v } else { 0.0 })
                .sum::<f64>()
                .sqrt();
            l0 + alpha * contracting
        }
    }
}

/// Add independent uniform [a, b] noise to each muscle entry of a length
/// change (the published disturbance model for the noise experiments).
pub fn apply_noise<R: Rng + ?Sized>(
    delta_l: &MuscleVector,
    bounds: (f64, f64),
    rng: &mut R,
) -> MuscleVector {
    let (a, b) = bounds;
    if b <= a {
        return delta_l.clone();
    }
    MuscleVector(delta_l.iter().map(|v| v + rng.random_range(a..b)).collect())
}

/// Generate pretraining transitions from the geometric model: θ uniform in
/// the limits, θ' = clamp(θ + Δθ) with Δθ ~ N(0, s_dtheta²) per joint, and
/// Δl = h_geo(θ') − h_geo(θ).
pub fn gen_pretrain_data<R: Rng + ?Sized>(
    model: &ArmModel,
    n: usize,
    s_dtheta: f64,
    rng: &mut R,
) -> Vec<TransitionSample> {
    assert!(n >= 1, "need at least one sample");
    assert!(s_dtheta > 0.0, "s_dtheta must be positive");
    let normal = Normal::new(0.0, s_dtheta).expect("valid normal");
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let theta_from = model.sample_pose(rng);
        let raw: Vec<f64> = theta_from.iter().map(|t| t + normal.sample(rng)).collect();
        let theta_to = model.clamp(&JointVector(raw));
        let delta_l = model
            .muscle_lengths(&theta_to)
            .sub(&model.muscle_lengths(&theta_from));
        out.push(TransitionSample { theta_from, theta_to, delta_l });
    }
    out
}

fn sample_rows(kind: ControllerKind, samples: &[&TransitionSample]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut inputs = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len());
    for s in samples {
        match kind {
            ControllerKind::TypeA => {
                let mut x = Vec::with_capacity(s.theta_from.len() * 2);
                x.extend_from_slice(&s.theta_from);
                x.extend_from_slice(&s.theta_to);
                inputs.push(x);
                targets.push(s.delta_l.0.clone());
            }
            ControllerKind::TypeB => {
                let mut x = Vec::with_capacity(s.theta_from.len() + s.delta_l.len());
                x.extend_from_slice(&s.theta_from);
                x.extend_from_slice(&s.delta_l);
                inputs.push(x);
                targets.push(s.theta_to.0.clone());
            }
        }
    }
    (inputs, targets)
}

/// Pretraining report.
#[derive(Debug, Clone, Copy)]
pub struct PretrainReport {
    /// Held-out per-component RMS: mm for Type A (Δl), rad for Type B (θ).
    pub held_out_rms: f64,
    pub samples: usize,
}

const PRETRAIN_HELD_OUT_FRACTION: f64 = 0.1;
const TYPE_A_MAX_RMS_MM: f64 = 3.0;
const TYPE_B_MAX_RMS_RAD: f64 = 0.05;

/// Train a fresh controller of the given kind on pretraining transitions.
/// Hidden widths are (40, 20, 20); input/output normalization is fitted from
/// the data and frozen. Fails if the held-out RMS misses the quality gate
/// (3 mm for Type A, 0.05 rad for Type B).
pub fn pretrain<R: Rng + ?Sized>(
    kind: ControllerKind,
    model: &ArmModel,
    data: &[TransitionSample],
    epochs: usize,
    constants: OlfcConstants,
    rng: &mut R,
) -> Result<(OlfcController, PretrainReport)> {
    if data.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    let nj = model.joint_count();
    let nm = model.muscle_count();
    let dims = match kind {
        ControllerKind::TypeA => vec![2 * nj, 40, 20, 20, nm],
        ControllerKind::TypeB => vec![nj + nm, 40, 20, 20, nj],
    };
    let refs: Vec<&TransitionSample> = data.iter().collect();
    let (inputs, targets) = sample_rows(kind, &refs);
    let held = ((data.len() as f64 * PRETRAIN_HELD_OUT_FRACTION) as usize).max(1);
    let split = data.len() - held;
    if split == 0 {
        return Err(Error::TooFewSamples { got: data.len(), need: 2 });
    }
    let mut network = Network::new(&dims, rng);
    network.fit_normalization(&inputs[..split], &targets[..split]);
    network.fit(&inputs[..split], &targets[..split], epochs, 128)?;

    let mut sq = 0.0;
    let out_dim = targets[0].len();
    for (x, t) in inputs[split..].iter().zip(&targets[split..]) {
        let y = network.forward(x);
        for (yi, ti) in y.iter().zip(t) {
            sq += (yi - ti) * (yi - ti);
        }
    }
    let held_out_rms = (sq / (held * out_dim) as f64).sqrt();
    let (limit, unit) = match kind {
        ControllerKind::TypeA => (TYPE_A_MAX_RMS_MM, "mm"),
        ControllerKind::TypeB => (TYPE_B_MAX_RMS_RAD, "rad"),
    };
    if held_out_rms > limit {
        return Err(Error::Underfit { got: held_out_rms, limit, unit });
    }
    Ok((
        OlfcController {
            kind,
            network,
            buffer: VecDeque::new(),
            constants,
            limits: model.limits(),
        },
        PretrainReport { held_out_rms, samples: data.len() },
    ))
}

impl OlfcController {
    pub fn joint_count(&self) -> usize {
        self.limits.len()
    }

    pub fn muscle_count(&self) -> usize {
        match self.kind {
            ControllerKind::TypeA => self.network.output_dim(),
            ControllerKind::TypeB => self.network.input_dim() - self.joint_count(),
        }
    }

    /// Offer an observed transition to the buffer. Admitted only while
    /// ‖l_ref_to − l_ref_from‖₂ is strictly below C_length.
    pub fn record_transition(
        &mut self,
        theta_from: &JointVector,
        theta_to: &JointVector,
        l_ref_from: &MuscleVector,
        l_ref_to: &MuscleVector,
    ) -> bool {
        let delta_l = l_ref_to.sub(l_ref_from);
        if !(theta_from.is_finite() && theta_to.is_finite() && delta_l.is_finite()) {
            return false;
        }
        if delta_l.norm() >= self.constants.c_length_mm {
            return false;
        }
        self.buffer.push_back(TransitionSample {
            theta_from: theta_from.clone(),
            theta_to: theta_to.clone(),
            delta_l,
        });
        while self.buffer.len() > self.constants.buffer_cap {
            self.buffer.pop_front();
        }
        true
    }

    /// True once the buffer has reached the online-learning threshold.
    pub fn ready_for_update(&self) -> bool {
        self.buffer.len() >= self.constants.n_thre
    }

    fn sample_pose_within_limits<R: Rng + ?Sized>(&self, rng: &mut R) -> JointVector {
        JointVector(
            self.limits
                .iter()
                .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..hi) } else { lo })
                .collect(),
        )
    }

    /// Uniform sample in the ball ‖Δl‖₂ ≤ C_length.
    fn sample_delta_ball<R: Rng + ?Sized>(&self, rng: &mut R) -> MuscleVector {
        let nm = self.muscle_count();
        let normal = Normal::new(0.0, 1.0).expect("valid normal");
        let mut v: Vec<f64> = (0..nm).map(|_| normal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let radius =
            self.constants.c_length_mm * rng.random_range(0.0f64..1.0).powf(1.0 / nm as f64);
        for x in &mut v {
            *x *= radius / norm;
        }
        MuscleVector(v)
    }

    /// Assemble one online-learning batch: N_data buffer samples (uniform,
    /// without replacement when the buffer suffices), N_limit constraint rows
    /// (Δl = 0 keeps the pose), and N_const anchor rows labeled by the
    /// current network.
    pub fn build_online_batch<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        if self.buffer.len() < self.constants.n_thre {
            return Err(Error::BufferTooSmall {
                got: self.buffer.len(),
                need: self.constants.n_thre,
            });
        }
        let c = &self.constants;
        let nm = self.muscle_count();

        let picked: Vec<&TransitionSample> = if self.buffer.len() >= c.n_data {
            rand::seq::index::sample(rng, self.buffer.len(), c.n_data)
                .into_iter()
                .map(|i| &self.buffer[i])
                .collect()
        } else {
            (0..c.n_data)
                .map(|_| &self.buffer[rng.random_range(0..self.buffer.len())])
                .collect()
        };
        let (mut inputs, mut targets) = sample_rows(self.kind, &picked);

        for _ in 0..c.n_limit {
            let pose = self.sample_pose_within_limits(rng);
            match self.kind {
                ControllerKind::TypeA => {
                    let mut x = Vec::with_capacity(pose.len() * 2);
                    x.extend_from_slice(&pose);
                    x.extend_from_slice(&pose);
                    inputs.push(x);
                    targets.push(vec![0.0; nm]);
                }
                ControllerKind::TypeB => {
                    let mut x = Vec::with_capacity(pose.len() + nm);
                    x.extend_from_slice(&pose);
                    x.extend(std::iter::repeat_n(0.0, nm));
                    inputs.push(x);
                    targets.push(pose.0.clone());
                }
            }
        }

        for _ in 0..c.n_const {
            match self.kind {
                ControllerKind::TypeA => {
                    let a = self.sample_pose_within_limits(rng);
                    let b = self.sample_pose_within_limits(rng);
                    let mut x = Vec::with_capacity(a.len() * 2);
                    x.extend_from_slice(&a);
                    x.extend_from_slice(&b);
                    let y = self.network.forward(&x);
                    inputs.push(x);
                    targets.push(y);
                }
                ControllerKind::TypeB => {
                    let pose = self.sample_pose_within_limits(rng);
                    let dl = self.sample_delta_ball(rng);
                    let mut x = Vec::with_capacity(pose.len() + dl.len());
                    x.extend_from_slice(&pose);
                    x.extend_from_slice(&dl);
                    let y = self.network.forward(&x);
                    inputs.push(x);
                    targets.push(y);
                }
            }
        }
        Ok((inputs, targets))
    }

    /// One online-learning step: build a batch and train on it for N_epoch
    /// full-batch passes. Returns the training loss.
    pub fn online_update<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<f64> {
        let (inputs, targets) = self.build_online_batch(rng)?;
        self.network.train_batch(&inputs, &targets, self.constants.n_epoch)
    }

    /// Predicted pose of a Type B network for (θ_cur, Δl).
    pub fn predict_pose(&self, theta_cur: &JointVector, delta_l: &MuscleVector) -> JointVector {
        assert_eq!(self.kind, ControllerKind::TypeB, "predict_pose is a Type B operation");
        let mut x = Vec::with_capacity(theta_cur.len() + delta_l.len());
        x.extend_from_slice(theta_cur);
        x.extend_from_slice(delta_l);
        JointVector(self.network.forward(&x))
    }

    /// Feedback computation of the target muscle-length change.
    ///
    /// Type A evaluates its network directly. Type B starts from the
    /// geometric-model change and runs N_update rounds of input-gradient
    /// descent, each picking the best of the candidates
    /// `Δl − γ_k·g, γ_k = k·γ_max/N_batch, k = 0…N_batch` by re-evaluating
    /// the loss through the network.
    pub fn compute_delta_l(
        &self,
        theta_cur: &JointVector,
        theta_ref: &JointVector,
        loss: LossKind,
        model: &ArmModel,
    ) -> Result<MuscleVector> {
        match self.kind {
            ControllerKind::TypeA => {
                let mut x = Vec::with_capacity(theta_cur.len() * 2);
                x.extend_from_slice(theta_cur);
                x.extend_from_slice(theta_ref);
                Ok(MuscleVector(self.network.forward(&x)))
            }
            ControllerKind::TypeB => {
                let c = &self.constants;
                let nj = self.joint_count();
                let nm = self.muscle_count();
                let mut delta = model
                    .muscle_lengths(theta_ref)
                    .sub(&model.muscle_lengths(theta_cur));
                let mut x = vec![0.0; nj + nm];
                x[..nj].copy_from_slice(theta_cur);
                for _ in 0..c.n_update {
                    x[nj..].copy_from_slice(&delta);
                    let grad = self.network.input_gradient(
                        &x,
                        theta_ref,
                        loss,
                        c.alpha,
                        nj..nj + nm,
                    )?;
                    let mut best = delta.clone();
                    let mut best_loss = f64::INFINITY;
                    for k in 0..=c.n_batch {
                        let gamma = c.gamma_max_mm * k as f64 / c.n_batch as f64;
                        let cand = MuscleVector(
                            delta.iter().zip(&grad).map(|(d, g)| d - gamma * g).collect(),
                        );
                        let pred = self.predict_pose(theta_cur, &cand);
                        let loss_val = evaluate_loss(loss, &pred, theta_ref, &cand, c.alpha);
                        if loss_val < best_loss {
                            best_loss = loss_val;
                            best = cand;
                        }
                    }
                    delta = best;
                }
                Ok(delta)
            }
        }
    }

    /// Write the controller to a directory: `network.net`, `buffer.csv`, and
    /// `constants.toml`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        self.network.save(dir.join("network.net"), self.kind.weight_role())?;

        let nj = self.joint_count();
        let nm = self.muscle_count();
        let mut csv = String::new();
        let mut header = Vec::new();
        for i in 0..nj {
            header.push(format!("theta_from_{i}"));
        }
        for i in 0..nj {
            header.push(format!("theta_to_{i}"));
        }
        for i in 0..nm {
            header.push(format!("delta_l_{i}"));
        }
        csv.push_str(&header.join(","));
        csv.push('\n');
        for s in &self.buffer {
            let row: Vec<String> = s
                .theta_from
                .iter()
                .chain(s.theta_to.iter())
                .chain(s.delta_l.iter())
                .map(|v| v.to_string())
                .collect();
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        let buf_path = dir.join("buffer.csv");
        std::fs::write(&buf_path, csv)
            .map_err(|e| Error::io(buf_path.display().to_string(), e))?;

        let meta = ControllerMeta {
            kind: self.kind,
            constants: self.constants.clone(),
            limits_rad: self.limits.clone(),
        };
        let toml_path = dir.join("constants.toml");
        std::fs::write(&toml_path, toml::to_string(&meta).expect("serializable meta"))
            .map_err(|e| Error::io(toml_path.display().to_string(), e))?;
        Ok(())
    }

    /// Reload a checkpoint written by [`OlfcController::save`]. The restored
    /// controller reproduces the original's behavior bitwise.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join("constants.toml");
        let meta_text = std::fs::read_to_string(&meta_path)
            .map_err(|e| Error::io(meta_path.display().to_string(), e))?;
        let meta: ControllerMeta =
            toml::from_str(&meta_text).map_err(|e| Error::Config(e.to_string()))?;

        let (network, role) = Network::load(dir.join("network.net"))?;
        if role != meta.kind.weight_role() {
            return Err(Error::WeightFile(format!(
                "expected role '{}', found '{role}'",
                meta.kind.weight_role()
            )));
        }

        let nj = meta.limits_rad.len();
        let nm = match meta.kind {
            ControllerKind::TypeA => network.output_dim(),
            ControllerKind::TypeB => network.input_dim() - nj,
        };
        let buf_path = dir.join("buffer.csv");
        let buf_text = std::fs::read_to_string(&buf_path)
            .map_err(|e| Error::io(buf_path.display().to_string(), e))?;
        let mut buffer = VecDeque::new();
        for line in buf_text.lines().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|t| t.parse::<f64>().map_err(|_| Error::Config("bad buffer row".into())))
                .collect::<Result<_>>()?;
            if vals.len() != 2 * nj + nm {
                return Err(Error::Config("buffer row width mismatch".into()));
            }
            buffer.push_back(TransitionSample {
                theta_from: JointVector(vals[..nj].to_vec()),
                theta_to: JointVector(vals[nj..2 * nj].to_vec()),
                delta_l: MuscleVector(vals[2 * nj..].to_vec()),
            });
        }
        Ok(OlfcController {
            kind: meta.kind,
            network,
            buffer,
            constants: meta.constants,
            limits: meta.limits_rad,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ControllerMeta {
    kind: ControllerKind,
    constants: OlfcConstants,
    limits_rad: Vec<(f64, f64)>,
}
