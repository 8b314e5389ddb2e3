//! Joint-muscle mapping h(θ, f) → l and the basic feedback control built on
//! it.
//!
//! The mapping answers "which target muscle lengths realize joint angles θ at
//! muscle tensions f". The learned variant is trained on data generated from
//! the geometric model (l = h_geo(θ) − f/k); the analytic variant evaluates
//! that formula directly and serves as the ideal-model reference in tests and
//! scenarios.
//!
//! Basic feedback control is the hysteresis-blind baseline: the length
//! correction Δl = h(θ_ref, f_cur) − h(θ_cur, f_cur), applied repeatedly as
//! l_ref ← l_ref + Δl after a first open-loop realization l_ref = h(θ_ref,
//! f_const) with f_const = 30 N.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::ArmModel;
use crate::net::Network;
use crate::plant::PlantState;
use crate::vecs::{JointVector, MuscleVector};

/// Constant tension used for the initial open-loop realization (N).
pub const F_CONST_N: f64 = 30.0;

/// Tension range covered by the training data (N).
pub const TRAIN_TENSION_LO: f64 = 10.0;
pub const TRAIN_TENSION_HI: f64 = 60.0;

const HELD_OUT_FRACTION: f64 = 0.1;
const MAX_HELD_OUT_RMS_MM: f64 = 5.0;
const WEIGHT_ROLE: &str = "jmm";

/// Joint-muscle mapping.
#[derive(Debug, Clone)]
pub enum Jmm {
    /// Network trained on geometric-model data (optionally refined with
    /// plant rollouts); input (θ, f), output l.
    Learned(Network),
    /// The generating formula itself: l = h_geo(θ) − f/k.
    Analytic { model: ArmModel, stiffness: f64 },
}

impl Jmm {
    /// Ideal mapping backed by the geometric model.
    pub fn analytic(model: &ArmModel, stiffness: f64) -> Self {
        Jmm::Analytic { model: model.clone(), stiffness }
    }

    /// Target muscle lengths realizing `theta` at tensions `f`.
    pub fn lengths(&self, theta: &JointVector, tensions: &MuscleVector) -> MuscleVector {
        match self {
            Jmm::Learned(net) => {
                let mut x = Vec::with_capacity(theta.len() + tensions.len());
                x.extend_from_slice(theta);
                x.extend_from_slice(tensions);
                MuscleVector(net.forward(&x))
            }
            Jmm::Analytic { model, stiffness } => {
                let l = model.muscle_lengths(theta);
                MuscleVector(
                    l.iter().zip(tensions.iter()).map(|(li, fi)| li - fi / stiffness).collect(),
                )
            }
        }
    }

    /// Basic feedback correction: Δl = h(θ_ref, f_cur) − h(θ_cur, f_cur).
    pub fn bfc_delta(
        &self,
        theta_ref: &JointVector,
        theta_cur: &JointVector,
        f_cur: &MuscleVector,
    ) -> MuscleVector {
        let to = self.lengths(theta_ref, f_cur);
        let from = self.lengths(theta_cur, f_cur);
        to.sub(&from)
    }

    /// Open-loop command for a target pose: l_ref = h(θ_ref, f_const·1).
    pub fn initial_realization(&self, theta_ref: &JointVector) -> MuscleVector {
        let n = match self {
            Jmm::Learned(net) => net.input_dim() - theta_ref.len(),
            Jmm::Analytic { model, .. } => model.muscle_count(),
        };
        let f = MuscleVector(vec![F_CONST_N; n]);
        self.lengths(theta_ref, &f)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        match self {
            Jmm::Learned(net) => net.save(path, WEIGHT_ROLE),
            Jmm::Analytic { .. } => Err(Error::Config(
                "analytic joint-muscle mapping has no weights to save".into(),
            )),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (net, role) = Network::load(path)?;
        if role != WEIGHT_ROLE {
            return Err(Error::WeightFile(format!(
                "expected role '{WEIGHT_ROLE}', found '{role}'"
            )));
        }
        Ok(Jmm::Learned(net))
    }
}

/// Training report for a learned mapping.
#[derive(Debug, Clone, Copy)]
pub struct JmmReport {
    /// Per-component RMS error on the held-out split (mm).
    pub held_out_rms_mm: f64,
    pub samples: usize,
    pub refined: bool,
}

/// Train h(θ, f) → l on geometric-model data: θ uniform within limits, f
/// uniform in [10, 60] N per muscle, l = h_geo(θ) − f/k with k taken from the
/// plant. With `refine_with_plant`, tuples (θ_cur, f_cur, l_ref) harvested
/// from seeded rollouts of `plant` are added and training continues on the
/// combined set.
pub fn train_jmm<R: Rng + ?Sized>(
    model: &ArmModel,
    n: usize,
    refine_with_plant: bool,
    plant: &PlantState,
    epochs: usize,
    rng: &mut R,
) -> Result<(Jmm, JmmReport)> {
    if n < 1000 {
        return Err(Error::TooFewSamples { got: n, need: 1000 });
    }
    let k = plant.situation.muscle_stiffness;
    let nj = model.joint_count();
    let nm = model.muscle_count();

    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let theta = model.sample_pose(rng);
        let f: Vec<f64> =
            (0..nm).map(|_| rng.random_range(TRAIN_TENSION_LO..TRAIN_TENSION_HI)).collect();
        let l = model.muscle_lengths(&theta);
        let target: Vec<f64> = l.iter().zip(&f).map(|(li, fi)| li - fi / k).collect();
        let mut x = Vec::with_capacity(nj + nm);
        x.extend_from_slice(&theta);
        x.extend_from_slice(&f);
        inputs.push(x);
        targets.push(target);
    }

    let held = ((n as f64 * HELD_OUT_FRACTION) as usize).max(1);
    let split = n - held;
    let mut net = Network::new(&[nj + nm, 80, 60, 40, nm], rng);
    net.fit_normalization(&inputs[..split], &targets[..split]);
    net.fit(&inputs[..split], &targets[..split], epochs, 128)?;

    let mut refined = false;
    if refine_with_plant {
        let mut state = plant.clone();
        let n_roll = 200;
        let mut roll_in = Vec::with_capacity(n_roll);
        let mut roll_out = Vec::with_capacity(n_roll);
        for _ in 0..n_roll {
            let theta = model.sample_pose(rng);
            let f: Vec<f64> =
                (0..nm).map(|_| rng.random_range(TRAIN_TENSION_LO..TRAIN_TENSION_HI)).collect();
            let l = model.muscle_lengths(&theta);
            let cmd =
                MuscleVector(l.iter().zip(&f).map(|(li, fi)| li - fi / k).collect());
            state = state.command(model, &cmd)?;
            let mut x = Vec::with_capacity(nj + nm);
            x.extend_from_slice(&state.theta);
            x.extend_from_slice(&state.tensions);
            roll_in.push(x);
            roll_out.push(state.last_command.0.clone());
        }
        let mut combined_in = inputs[..split].to_vec();
        combined_in.extend(roll_in);
        let mut combined_out = targets[..split].to_vec();
        combined_out.extend(roll_out);
        net.fit(&combined_in, &combined_out, epochs / 3 + 1, 128)?;
        refined = true;
    }

    let mut sq_sum = 0.0;
    for (x, t) in inputs[split..].iter().zip(&targets[split..]) {
        let y = net.forward(x);
        for (yi, ti) in y.iter().zip(t) {
            sq_sum += (yi - ti) * (yi - ti);
        }
    }
    let held_out_rms_mm = (sq_sum / (held * nm) as f64).sqrt();
    if held_out_rms_mm > MAX_HELD_OUT_RMS_MM {
        return Err(Error::Underfit {
            got: held_out_rms_mm,
            limit: MAX_HELD_OUT_RMS_MM,
            unit: "mm",
        });
    }
    Ok((
        Jmm::Learned(net),
        JmmReport { held_out_rms_mm, samples: n, refined },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;
    use crate::plant::SituationConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arm() -> ArmModel {
        fixture::default_arm()
    }

    #[test]
    fn analytic_matches_generating_formula() {
        let m = arm();
        let h = Jmm::analytic(&m, 2.0);
        let theta = JointVector::from_degrees(&[10.0, -30.0, 20.0, -50.0, 15.0]);
        let f = MuscleVector(vec![24.0; 10]);
        let l = h.lengths(&theta, &f);
        let geo = m.muscle_lengths(&theta);
        for (a, b) in l.iter().zip(geo.iter()) {
            assert_eq!(*a, b - 12.0);
        }
    }

    #[test]
    fn bfc_delta_zero_at_equal_poses() {
        let m = arm();
        let h = Jmm::analytic(&m, 2.0);
        let theta = JointVector::from_degrees(&[10.0, -30.0, 20.0, -50.0, 15.0]);
        let f = MuscleVector(vec![30.0; 10]);
        let d = h.bfc_delta(&theta, &theta, &f);
        assert!(d.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn bfc_delta_antisymmetric_bitwise() {
        let m = arm();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = {
            // Random learned mapping is enough to check the identity.
            let mut net = Network::new(&[15, 40, 20, 20, 10], &mut rng);
            let x: Vec<Vec<f64>> = (0..32)
                .map(|_| (0..15).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let t: Vec<Vec<f64>> = (0..32)
                .map(|_| (0..10).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            net.fit_normalization(&x, &t);
            Jmm::Learned(net)
        };
        let a = JointVector::from_degrees(&[10.0, -30.0, 20.0, -50.0, 15.0]);
        let b = JointVector::from_degrees(&[40.0, -10.0, -20.0, -80.0, 45.0]);
        let f = MuscleVector(vec![28.0; 10]);
        let ab = net.bfc_delta(&a, &b, &f);
        let ba = net.bfc_delta(&b, &a, &f);
        for (x, y) in ab.iter().zip(ba.iter()) {
            assert_eq!(*x, -y);
        }
    }

    #[test]
    fn analytic_bfc_delta_ignores_tension() {
        let m = arm();
        let h = Jmm::analytic(&m, 2.0);
        let a = JointVector::from_degrees(&[10.0, -30.0, 20.0, -50.0, 15.0]);
        let b = JointVector::from_degrees(&[30.0, -20.0, 0.0, -70.0, 30.0]);
        let low = h.bfc_delta(&a, &b, &MuscleVector(vec![12.0; 10]));
        let high = h.bfc_delta(&a, &b, &MuscleVector(vec![55.0; 10]));
        let geo = m.muscle_lengths(&a).sub(&m.muscle_lengths(&b));
        for ((x, y), g) in low.iter().zip(high.iter()).zip(geo.iter()) {
            assert!((x - y).abs() < 1e-9);
            assert!((x - g).abs() < 1e-9);
        }
    }

    #[test]
    fn toy_flexion_signs() {
        let m = ArmModel::toy_1dof();
        let h = Jmm::analytic(&m, 2.0);
        let cur = JointVector::from_slice(&[0.2]);
        let flexed = JointVector::from_slice(&[0.8]);
        let d = h.bfc_delta(&flexed, &cur, &MuscleVector(vec![30.0; 2]));
        let geo = m.muscle_lengths(&flexed).sub(&m.muscle_lengths(&cur));
        // One muscle shortens, the antagonist lengthens, matching the
        // geometric length difference sign for sign.
        assert!(d[0] * d[1] < 0.0, "{d:?}");
        for (x, g) in d.iter().zip(geo.iter()) {
            assert_eq!(x.signum(), g.signum());
        }
    }

    #[test]
    fn initial_realization_deterministic() {
        let m = arm();
        let h = Jmm::analytic(&m, 2.0);
        let theta = JointVector::from_degrees(&[30.0, -30.0, 30.0, -60.0, 30.0]);
        assert_eq!(h.initial_realization(&theta).0, h.initial_realization(&theta).0);
    }

    #[test]
    fn too_few_samples_rejected() {
        let m = arm();
        let plant = PlantState::new(&m, SituationConfig::defaults_for(&m)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let res = train_jmm(&m, 999, false, &plant, 10, &mut rng);
        assert!(matches!(res, Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn trained_mapping_matches_formula_at_f_const() {
        let m = arm();
        let plant = PlantState::new(&m, SituationConfig::defaults_for(&m)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (h, report) = train_jmm(&m, 12000, false, &plant, 600, &mut rng).unwrap();
        assert!(report.held_out_rms_mm <= 5.0);
        let f = MuscleVector(vec![F_CONST_N; 10]);
        let mut worst = 0.0f64;
        for _ in 0..5 {
            let theta = m.sample_pose(&mut rng);
            let got = h.lengths(&theta, &f);
            let want = m.muscle_lengths(&theta);
            for (g, w) in got.iter().zip(want.iter()) {
                worst = worst.max((g - (w - F_CONST_N / 2.0)).abs());
            }
        }
        assert!(worst < 2.0, "worst-case deviation {worst} mm");
    }

    #[test]
    fn refinement_on_frictionless_plant_changes_little() {
        let m = arm();
        let plant = PlantState::new(&m, SituationConfig::frictionless_for(&m)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (_, base) = train_jmm(&m, 2000, false, &plant, 300, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (_, refined) = train_jmm(&m, 2000, true, &plant, 300, &mut rng).unwrap();
        assert!(
            (base.held_out_rms_mm - refined.held_out_rms_mm).abs() < 1.0,
            "base {} vs refined {}",
            base.held_out_rms_mm,
            refined.held_out_rms_mm
        );
    }
}
