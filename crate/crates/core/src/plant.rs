//! Deterministic quasi-static plant: the stand-in for the physical robot.
//!
//! A command is a vector of target muscle lengths. The plant settles to the
//! joint angles minimizing the total potential
//!
//! ```text
//! E(θ) = Σ_i (k/2)·s_i(θ)²  +  U_gravity(θ)      s_i = max(0, l_geo,i(θ) − l_ref,i)
//! ```
//!
//! by fixed-step gradient descent from the *previous* pose, stopping as soon
//! as every joint's residual generalized force falls inside its Coulomb
//! friction band. Stopping at the edge of the stick band — rather than at the
//! exact minimum — is the single mechanism behind the hysteresis: where the
//! plant stops depends on the direction it came from. With zero friction the
//! settle runs to the minimum and the hysteresis vanishes.
//!
//! Units: lengths mm, tensions N, torques and energies N·mm, masses kg,
//! angles rad. Friction is configured in N·m per joint and converted
//! internally.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::ArmModel;
use crate::vecs::{JointVector, MuscleVector};

const GRAVITY_M_S2: f64 = 9.81;
/// Descent step in rad per (N·mm) of generalized force.
const SETTLE_STEP: f64 = 4e-5;
/// Largest per-joint angle change in one descent step (rad).
const SETTLE_ARC_CAP: f64 = 0.05;
const SETTLE_MAX_STEPS: usize = 2000;
/// Convergence slack on top of the friction band (N·mm); with zero friction
/// this is the force tolerance of the minimum itself.
const SETTLE_FORCE_EPS: f64 = 1.0;
/// Finite-difference step for ∂E/∂θ (rad).
const SETTLE_FD_H: f64 = 1e-5;
const MAX_CONSECUTIVE_INCREASES: usize = 10;
/// Settled angles are reported on this grid (rad). The quantum is far below
/// every physical tolerance; it exists so that periodic command sequences
/// reach exact limit cycles instead of carrying femto-scale residue forever.
const THETA_QUANTUM: f64 = 1e-9;

/// Environment of the plant: load, posture, actuation constants.
#[derive(Debug, Clone, PartialEq)]
pub struct SituationConfig {
    /// Mass carried at the end-effector (kg).
    pub payload_kg: f64,
    /// Trunk pitch (rad): the gravity vector is rotated by this angle about
    /// the base y-axis.
    pub trunk_pitch: f64,
    /// Muscle stiffness k (N/mm).
    pub muscle_stiffness: f64,
    /// Coulomb friction per joint (N·m).
    pub joint_friction: Vec<f64>,
    /// Smallest tension reported for a taut muscle (N).
    pub min_tension: f64,
}

impl SituationConfig {
    /// Defaults for a model: k = 2 N/mm, min tension 2 N, friction 0.5 N·m on
    /// the first three (shoulder) joints and 0.3 N·m on the rest for the
    /// 5-joint arm; 0.3 N·m everywhere for reduced models.
    pub fn defaults_for(model: &ArmModel) -> Self {
        let nj = model.joint_count();
        let joint_friction = if nj == 5 {
            vec![0.5, 0.5, 0.5, 0.3, 0.3]
        } else {
            vec![0.3; nj]
        };
        SituationConfig {
            payload_kg: 0.0,
            trunk_pitch: 0.0,
            muscle_stiffness: 2.0,
            joint_friction,
            min_tension: 2.0,
        }
    }

    /// Same defaults with friction removed (ideal plant).
    pub fn frictionless_for(model: &ArmModel) -> Self {
        let mut s = Self::defaults_for(model);
        s.joint_friction = vec![0.0; model.joint_count()];
        s
    }

    pub fn validate(&self, model: &ArmModel) -> Result<()> {
        if !(self.muscle_stiffness > 0.0) {
            return Err(Error::Config("muscle_stiffness must be > 0".into()));
        }
        if self.payload_kg < 0.0 {
            return Err(Error::Config("payload_kg must be >= 0".into()));
        }
        if self.min_tension < 0.0 {
            return Err(Error::Config("min_tension must be >= 0".into()));
        }
        if self.joint_friction.len() != model.joint_count() {
            return Err(Error::DimensionMismatch {
                expected: model.joint_count(),
                got: self.joint_friction.len(),
                context: "joint_friction",
            });
        }
        if self.joint_friction.iter().any(|&t| t < 0.0) {
            return Err(Error::Config("joint_friction must be >= 0".into()));
        }
        Ok(())
    }

    /// Unit gravity direction in the base frame.
    pub fn gravity_dir(&self) -> Vector3<f64> {
        let (s, c) = self.trunk_pitch.sin_cos();
        // Ry(trunk_pitch) · (0, 0, -1)
        Vector3::new(-s, 0.0, -c)
    }
}

/// Quasi-static plant state. A value type: `command` returns the settled
/// successor, so trajectories are pure functions of the initial state and
/// the command sequence.
#[derive(Debug, Clone)]
pub struct PlantState {
    pub theta: JointVector,
    pub tensions: MuscleVector,
    pub last_command: MuscleVector,
    pub situation: SituationConfig,
}

/// Per-settle diagnostics.
#[derive(Debug, Clone)]
pub struct SettleReport {
    /// Energy after each accepted step (starting value first).
    pub energies: Vec<f64>,
    pub iterations: usize,
    /// True when the friction stick condition stopped the descent (as opposed
    /// to the iteration cap).
    pub stuck: bool,
}

fn total_energy(model: &ArmModel, theta: &[f64], l_ref: &[f64], sit: &SituationConfig) -> f64 {
    let (lengths, masses, ee) = model.fk_summary(theta);
    let k = sit.muscle_stiffness;
    let mut e = 0.0;
    for (l, r) in lengths.iter().zip(l_ref) {
        let s = (l - r).max(0.0);
        e += 0.5 * k * s * s;
    }
    let g_dir = sit.gravity_dir();
    for (m, p) in &masses {
        e -= m * GRAVITY_M_S2 * g_dir.dot(p);
    }
    if sit.payload_kg > 0.0 {
        e -= sit.payload_kg * GRAVITY_M_S2 * g_dir.dot(&ee);
    }
    e
}

fn energy_gradient(
    model: &ArmModel,
    theta: &[f64],
    l_ref: &[f64],
    sit: &SituationConfig,
    out: &mut [f64],
) {
    let mut t = theta.to_vec();
    for j in 0..theta.len() {
        let base = t[j];
        t[j] = base + SETTLE_FD_H;
        let plus = total_energy(model, &t, l_ref, sit);
        t[j] = base - SETTLE_FD_H;
        let minus = total_energy(model, &t, l_ref, sit);
        t[j] = base;
        out[j] = (plus - minus) / (2.0 * SETTLE_FD_H);
    }
}

impl PlantState {
    /// Fresh plant at the (clamped) zero pose, pre-tensioned at 30 N.
    pub fn new(model: &ArmModel, situation: SituationConfig) -> Result<Self> {
        situation.validate(model)?;
        let theta = model.clamp(&JointVector::zeros(model.joint_count()));
        let rest = model.muscle_lengths(&theta);
        let k = situation.muscle_stiffness;
        let l_ref = MuscleVector(rest.iter().map(|l| l - 30.0 / k).collect());
        let tensions = compute_tensions(&rest, &l_ref, &situation);
        Ok(PlantState { theta, tensions, last_command: l_ref, situation })
    }

    /// Replace the situation. The pose is untouched; reported tensions are
    /// recomputed for the new stiffness, and the next command settles under
    /// the new gravity and payload terms.
    pub fn configure(&self, model: &ArmModel, situation: SituationConfig) -> Result<PlantState> {
        situation.validate(model)?;
        let lengths = MuscleVector(model.muscle_lengths_raw(&self.theta));
        let tensions = compute_tensions(&lengths, &self.last_command, &situation);
        Ok(PlantState {
            theta: self.theta.clone(),
            tensions,
            last_command: self.last_command.clone(),
            situation,
        })
    }

    /// Send target muscle lengths and settle. Commands are clamped into
    /// [50%, 200%] of the zero-pose rest lengths.
    pub fn command(&self, model: &ArmModel, l_ref: &MuscleVector) -> Result<PlantState> {
        self.command_traced(model, l_ref).map(|(s, _)| s)
    }

    /// `command` with settle diagnostics.
    pub fn command_traced(
        &self,
        model: &ArmModel,
        l_ref: &MuscleVector,
    ) -> Result<(PlantState, SettleReport)> {
        if l_ref.len() != model.muscle_count() {
            return Err(Error::DimensionMismatch {
                expected: model.muscle_count(),
                got: l_ref.len(),
                context: "command l_ref",
            });
        }
        if !l_ref.is_finite() {
            return Err(Error::NonFinite("command l_ref"));
        }
        let rest = model.muscle_lengths_raw(&vec![0.0; model.joint_count()]);
        let mut cmd = vec![0.0; l_ref.len()];
        let mut clamped = false;
        for (i, (&r, rest_i)) in l_ref.iter().zip(&rest).enumerate() {
            cmd[i] = r.clamp(0.5 * rest_i, 2.0 * rest_i);
            clamped |= cmd[i] != r;
        }
        if clamped {
            log::warn!("command outside [50%, 200%] of rest lengths, clamped");
        }

        let sit = &self.situation;
        let nj = model.joint_count();
        let tau_nmm: Vec<f64> = sit.joint_friction.iter().map(|t| t * 1000.0).collect();
        let limits = model.limits();

        // Residual force with limit constraints projected out: a joint pinned
        // at a limit by the gradient exerts no drive. Returns the largest
        // excess over the friction band.
        let over_band = |theta: &[f64], grad: &[f64]| -> f64 {
            let mut worst = f64::NEG_INFINITY;
            for j in 0..nj {
                let mut r = grad[j];
                let at_lo = theta[j] <= limits[j].0 + 1e-12;
                let at_hi = theta[j] >= limits[j].1 - 1e-12;
                if (at_lo && r > 0.0) || (at_hi && r < 0.0) {
                    r = 0.0;
                }
                worst = worst.max(r.abs() - tau_nmm[j]);
            }
            worst
        };

        let mut theta = self.theta.0.clone();
        let mut energy = total_energy(model, &theta, &cmd, sit);
        if !energy.is_finite() {
            return Err(Error::DivergentSettle { steps: 0 });
        }
        let mut grad = vec![0.0; nj];
        energy_gradient(model, &theta, &cmd, sit, &mut grad);
        let mut eta = SETTLE_STEP;
        let mut consecutive_increases = 0usize;
        let mut energies = vec![energy];
        let mut stuck = over_band(&theta, &grad) <= SETTLE_FORCE_EPS;
        let mut iterations = 0;

        while !stuck && iterations < SETTLE_MAX_STEPS {
            iterations += 1;
            // Descent step, arc-capped and halved while the energy would rise.
            let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            let mut step_scale = eta.min(SETTLE_ARC_CAP / gmax);
            let cand = loop {
                let mut cand = vec![0.0; nj];
                for j in 0..nj {
                    cand[j] = (theta[j] - step_scale * grad[j]).clamp(limits[j].0, limits[j].1);
                }
                let cand_energy = total_energy(model, &cand, &cmd, sit);
                if cand_energy <= energy {
                    consecutive_increases = 0;
                    break (cand, cand_energy);
                }
                consecutive_increases += 1;
                if consecutive_increases >= MAX_CONSECUTIVE_INCREASES {
                    return Err(Error::DivergentSettle { steps: iterations });
                }
                step_scale *= 0.5;
                eta *= 0.5;
            };
            let (cand, cand_energy) = cand;
            let mut cand_grad = vec![0.0; nj];
            energy_gradient(model, &cand, &cmd, sit, &mut cand_grad);
            if over_band(&cand, &cand_grad) <= SETTLE_FORCE_EPS {
                // The step crossed into the stick region: bisect along the
                // segment for the earliest point inside the band, so the stop
                // position does not depend on the step discretization.
                let start = theta.clone();
                let mut lo = 0.0f64;
                let mut hi = 1.0f64;
                let mut probe = vec![0.0; nj];
                let mut probe_grad = vec![0.0; nj];
                for _ in 0..30 {
                    let mid = 0.5 * (lo + hi);
                    for j in 0..nj {
                        probe[j] = start[j] + mid * (cand[j] - start[j]);
                    }
                    energy_gradient(model, &probe, &cmd, sit, &mut probe_grad);
                    if over_band(&probe, &probe_grad) <= SETTLE_FORCE_EPS {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let mut stop = vec![0.0; nj];
                for j in 0..nj {
                    stop[j] = start[j] + hi * (cand[j] - start[j]);
                }
                let stop_energy = total_energy(model, &stop, &cmd, sit);
                if stop_energy <= energy {
                    theta = stop;
                    energy = stop_energy;
                } else {
                    theta = cand;
                    energy = cand_energy;
                }
                energies.push(energy);
                stuck = true;
            } else {
                theta = cand;
                energy = cand_energy;
                grad = cand_grad;
                energies.push(energy);
            }
        }

        // Snap to the reporting grid (tensions follow from the snapped pose).
        for (j, t) in theta.iter_mut().enumerate() {
            *t = ((*t / THETA_QUANTUM).round() * THETA_QUANTUM)
                .clamp(limits[j].0, limits[j].1);
        }
        let theta = JointVector(theta);
        let lengths = MuscleVector(model.muscle_lengths_raw(&theta));
        let cmd = MuscleVector(cmd);
        let tensions = compute_tensions(&lengths, &cmd, sit);
        let state = PlantState {
            theta,
            tensions,
            last_command: cmd,
            situation: self.situation.clone(),
        };
        Ok((state, SettleReport { energies, iterations, stuck }))
    }
}

fn compute_tensions(
    lengths: &MuscleVector,
    l_ref: &MuscleVector,
    sit: &SituationConfig,
) -> MuscleVector {
    let k = sit.muscle_stiffness;
    MuscleVector(
        lengths
            .iter()
            .zip(l_ref.iter())
            .map(|(l, r)| {
                let s = l - r;
                if s > 0.0 {
                    (k * s).max(sit.min_tension)
                } else {
                    0.0
                }
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;
    use approx::assert_relative_eq;

    fn arm() -> ArmModel {
        fixture::default_arm()
    }

    /// Independent energy oracle, written against the public geometry API
    /// only.
    fn oracle_energy(
        model: &ArmModel,
        theta: &JointVector,
        l_ref: &[f64],
        sit: &SituationConfig,
    ) -> f64 {
        let lengths = model.muscle_lengths(theta);
        let mut e = 0.0;
        for (l, r) in lengths.iter().zip(l_ref) {
            let s = (l - r).max(0.0);
            e += 0.5 * sit.muscle_stiffness * s * s;
        }
        let frames = model.link_frames(&theta.0);
        let g = sit.gravity_dir();
        for mp in &model.masses {
            let p = frames[mp.link] * nalgebra::Point3::from(mp.pos);
            e -= mp.mass_kg * 9.81 * g.dot(&p.coords);
        }
        let ee = model.end_effector(theta);
        e -= sit.payload_kg * 9.81 * g.dot(&ee);
        e
    }

    fn oracle_residual_force(
        model: &ArmModel,
        theta: &JointVector,
        l_ref: &[f64],
        sit: &SituationConfig,
    ) -> Vec<f64> {
        let h = 1e-6;
        (0..model.joint_count())
            .map(|j| {
                let mut tp = theta.clone();
                tp.0[j] += h;
                let mut tm = theta.clone();
                tm.0[j] -= h;
                (oracle_energy(model, &tp, l_ref, sit) - oracle_energy(model, &tm, l_ref, sit))
                    / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn uniform_pretension_holds_pose_and_30n() {
        let m = arm();
        let sit = SituationConfig::defaults_for(&m);
        let state = PlantState::new(&m, sit.clone()).unwrap();
        let rest = m.muscle_lengths(&state.theta);
        let k = sit.muscle_stiffness;
        let l_ref = MuscleVector(rest.iter().map(|l| l - 30.0 / k).collect());
        let next = state.command(&m, &l_ref).unwrap();
        // Pose stays inside the friction deadband.
        for (a, b) in next.theta.iter().zip(state.theta.iter()) {
            assert!((a - b).abs() < 2.0f64.to_radians(), "moved {}", (a - b).abs());
        }
        // Every taut tension close to 30 N.
        for f in next.tensions.iter() {
            assert!((f - 30.0).abs() < 3.0, "tension {f}");
        }
        // Independent oracle: the settled state is inside the stick band.
        let forces = oracle_residual_force(&m, &next.theta, &l_ref.0, &sit);
        for (j, f) in forces.iter().enumerate() {
            let tau = sit.joint_friction[j] * 1000.0;
            assert!(f.abs() <= tau + 2.0, "joint {j} residual {f} exceeds band {tau}");
        }
    }

    #[test]
    fn command_is_deterministic() {
        let m = arm();
        let state = PlantState::new(&m, SituationConfig::defaults_for(&m)).unwrap();
        let theta_cmd = JointVector::from_degrees(&[20.0, -40.0, 10.0, -50.0, 20.0]);
        let l_ref =
            MuscleVector(m.muscle_lengths(&theta_cmd).iter().map(|l| l - 15.0).collect());
        let a = state.command(&m, &l_ref).unwrap();
        let b = state.command(&m, &l_ref).unwrap();
        assert_eq!(a.theta.0, b.theta.0);
        assert_eq!(a.tensions.0, b.tensions.0);
    }

    /// Analytic-model command for a pose: l_ref = h_geo(θ) − f_const/k.
    fn pose_command(m: &ArmModel, theta: &JointVector, k: f64) -> MuscleVector {
        MuscleVector(m.muscle_lengths(theta).iter().map(|l| l - 30.0 / k).collect())
    }

    fn ep_sweep_cmds(m: &ArmModel, k: f64, steps: usize) -> Vec<MuscleVector> {
        let mut cmds = Vec::new();
        for i in 1..=steps {
            let ep = -90.0 * i as f64 / steps as f64;
            cmds.push(pose_command(m, &JointVector::from_degrees(&[0.0, 0.0, 0.0, ep, 0.0]), k));
        }
        for i in 1..=steps {
            let ep = -90.0 + 90.0 * i as f64 / steps as f64;
            cmds.push(pose_command(m, &JointVector::from_degrees(&[0.0, 0.0, 0.0, ep, 0.0]), k));
        }
        cmds
    }

    /// Run `reps` sweep cycles and return the E-p trajectory per cycle.
    /// Priming cycles run first until the plant state recurs exactly, so the
    /// recorded cycles sit on the limit cycle.
    fn run_sweeps(m: &ArmModel, sit: SituationConfig, reps: usize) -> Vec<Vec<f64>> {
        let k = sit.muscle_stiffness;
        let cmds = ep_sweep_cmds(m, k, 40);
        let mut state = PlantState::new(m, sit).unwrap();
        for _ in 0..12 {
            let before = state.theta.0.clone();
            for c in &cmds {
                state = state.command(m, c).unwrap();
            }
            if state.theta.0 == before {
                break;
            }
        }
        let mut cycles = Vec::new();
        for _ in 0..reps {
            let mut traj = Vec::new();
            for c in &cmds {
                state = state.command(m, c).unwrap();
                traj.push(state.theta[3]);
            }
            cycles.push(traj);
        }
        cycles
    }

    #[test]
    fn hysteresis_loop_reproducible_and_open() {
        let m = arm();
        let cycles = run_sweeps(&m, SituationConfig::defaults_for(&m), 10);
        for c in &cycles[1..] {
            assert_eq!(c, &cycles[0], "repeated sweeps must be bit-identical");
        }
        // Mid-sweep gap: command -45° is step 19 on the way down and step 59
        // on the way back up (0-indexed).
        let gap = (cycles[0][19] - cycles[0][59]).abs();
        assert!(gap > 1.0f64.to_radians(), "loading/unloading gap {} deg", gap.to_degrees());
    }

    #[test]
    fn hysteresis_vanishes_without_friction() {
        let m = arm();
        let cycles = run_sweeps(&m, SituationConfig::frictionless_for(&m), 2);
        let gap = (cycles[0][19] - cycles[0][59]).abs();
        assert!(gap < 0.06f64.to_radians(), "frictionless gap {} deg", gap.to_degrees());
    }

    #[test]
    fn loop_area_grows_with_friction() {
        let m = arm();
        let mut areas = Vec::new();
        for tau in [0.1, 0.5, 1.0] {
            let mut sit = SituationConfig::defaults_for(&m);
            sit.joint_friction = vec![tau; 5];
            let cycles = run_sweeps(&m, sit, 1);
            let traj = &cycles[0];
            // Signed area between the loading and unloading branches over the
            // command ramp.
            let mut area = 0.0;
            for i in 0..40 {
                let down = traj[i];
                let up = traj[79 - i];
                area += (down - up).abs() * (90.0f64.to_radians() / 40.0);
            }
            areas.push(area);
        }
        assert!(areas[0] > 0.0);
        assert!(areas[1] > areas[0], "areas {areas:?}");
        assert!(areas[2] > areas[1], "areas {areas:?}");
    }

    #[test]
    fn frictionless_settle_is_approach_independent() {
        let mut m = arm();
        m.masses.clear(); // no gravity
        let sit = SituationConfig::frictionless_for(&m);
        let k = sit.muscle_stiffness;
        let target =
            pose_command(&m, &JointVector::from_degrees(&[10.0, -20.0, 5.0, -45.0, 10.0]), k);
        let from_above =
            pose_command(&m, &JointVector::from_degrees(&[18.0, -12.0, 13.0, -37.0, 18.0]), k);
        let from_below =
            pose_command(&m, &JointVector::from_degrees(&[2.0, -28.0, -3.0, -53.0, 2.0]), k);
        let s0 = PlantState::new(&m, sit).unwrap();
        let a = s0.command(&m, &from_above).unwrap().command(&m, &target).unwrap();
        let b = s0.command(&m, &from_below).unwrap().command(&m, &target).unwrap();
        for (x, y) in a.theta.iter().zip(b.theta.iter()) {
            assert!((x - y).abs() < 1e-3, "approach-dependent: {}", (x - y).abs());
        }
    }

    #[test]
    fn energy_never_increases_across_accepted_steps() {
        let m = arm();
        let state = PlantState::new(&m, SituationConfig::defaults_for(&m)).unwrap();
        let l_ref =
            pose_command(&m, &JointVector::from_degrees(&[25.0, -45.0, 20.0, -70.0, 25.0]), 2.0);
        let (_, report) = state.command_traced(&m, &l_ref).unwrap();
        for w in report.energies.windows(2) {
            assert!(w[1] <= w[0], "energy increased: {} -> {}", w[0], w[1]);
        }
        assert!(report.stuck, "settle should reach the stick band");
    }

    #[test]
    fn cocontraction_raises_tension_without_motion() {
        let m = arm();
        let sit = SituationConfig::defaults_for(&m);
        let state = PlantState::new(&m, sit.clone()).unwrap();
        let base_cmd = pose_command(&m, &state.theta.clone(), sit.muscle_stiffness);
        let settled = state.command(&m, &base_cmd).unwrap();
        // Shorten both elbow-pitch muscles (indices 6, 7) by 5 mm.
        let mut co = settled.last_command.clone();
        co[6] -= 5.0;
        co[7] -= 5.0;
        let after = settled.command(&m, &co).unwrap();
        assert!(after.tensions[6] > settled.tensions[6] + 5.0);
        assert!(after.tensions[7] > settled.tensions[7] + 5.0);
        for (a, b) in after.theta.iter().zip(settled.theta.iter()) {
            assert!((a - b).abs() < 2.0f64.to_radians(), "moved {} deg", (a - b).to_degrees());
        }
    }

    #[test]
    fn payload_sags_and_raises_tension() {
        let m = arm();
        let sit = SituationConfig::defaults_for(&m);
        let state = PlantState::new(&m, sit.clone()).unwrap();
        let cmd =
            pose_command(&m, &JointVector::from_degrees(&[20.0, -50.0, 10.0, -60.0, 10.0]), 2.0);
        let unloaded = state.command(&m, &cmd).unwrap();
        let mut heavy = sit.clone();
        heavy.payload_kg = 3.6;
        let loaded = unloaded.configure(&m, heavy).unwrap().command(&m, &cmd).unwrap();
        let g = sit.gravity_dir();
        let drop =
            g.dot(&m.end_effector(&loaded.theta)) - g.dot(&m.end_effector(&unloaded.theta));
        assert!(drop > 0.0, "end-effector should sag along gravity, got {drop}");
        let sum = |v: &MuscleVector| v.iter().sum::<f64>();
        assert!(sum(&loaded.tensions) > sum(&unloaded.tensions));
    }

    #[test]
    fn trunk_pitch_rotates_gravity() {
        let m = arm();
        let mut sit = SituationConfig::defaults_for(&m);
        sit.trunk_pitch = 45.0f64.to_radians();
        let g = sit.gravity_dir();
        let s = 45.0f64.to_radians().sin();
        assert_relative_eq!(g.x, -s, epsilon = 1e-12);
        assert_relative_eq!(g.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(g.z, -s, epsilon = 1e-12);
        assert_relative_eq!(g.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_configure_is_noop() {
        let m = arm();
        let sit = SituationConfig::defaults_for(&m);
        let state = PlantState::new(&m, sit.clone()).unwrap();
        let same = state.configure(&m, sit).unwrap();
        assert_eq!(state.theta.0, same.theta.0);
        assert_eq!(state.tensions.0, same.tensions.0);
        assert_eq!(state.last_command.0, same.last_command.0);
    }

    #[test]
    fn absurd_stiffness_diverges() {
        let m = ArmModel::toy_1dof();
        let mut sit = SituationConfig::defaults_for(&m);
        sit.muscle_stiffness = 1e9;
        let state = PlantState::new(&m, sit).unwrap();
        // Unbalanced shortening forces a move the descent cannot stabilize
        // at this stiffness: the step halver gives up after 10 rejections.
        let rest = m.muscle_lengths(&state.theta);
        let l_ref = MuscleVector::from_slice(&[rest[0] - 30.0, rest[1] - 5.0]);
        match state.command(&m, &l_ref) {
            Err(Error::DivergentSettle { .. }) => {}
            other => panic!("expected DivergentSettle, got {other:?}"),
        }
    }

    #[test]
    fn invariants_hold_after_commands() {
        let m = arm();
        let sit = SituationConfig::defaults_for(&m);
        let mut state = PlantState::new(&m, sit).unwrap();
        let poses = [
            [10.0, -20.0, 30.0, -40.0, 50.0],
            [80.0, -100.0, -40.0, -110.0, -20.0],
            [0.0, 30.0, 60.0, -5.0, 80.0],
        ];
        for p in poses {
            let cmd = pose_command(&m, &JointVector::from_degrees(&p), 2.0);
            state = state.command(&m, &cmd).unwrap();
            assert!(state.tensions.iter().all(|&f| f >= 0.0));
            for (t, j) in state.theta.iter().zip(&m.joints) {
                assert!(*t >= j.limit_lo - 1e-12 && *t <= j.limit_hi + 1e-12);
            }
        }
    }

    #[test]
    fn command_clamps_out_of_band_lengths() {
        let m = arm();
        let state = PlantState::new(&m, SituationConfig::defaults_for(&m)).unwrap();
        let rest = m.muscle_lengths(&state.theta);
        let mut l_ref = MuscleVector(rest.0.clone());
        l_ref[0] = rest[0] * 4.0;
        l_ref[1] = rest[1] * 0.1;
        let next = state.command(&m, &l_ref).unwrap();
        assert_relative_eq!(next.last_command[0], rest[0] * 2.0, max_relative = 1e-12);
        assert_relative_eq!(next.last_command[1], rest[1] * 0.5, max_relative = 1e-12);
    }
}
