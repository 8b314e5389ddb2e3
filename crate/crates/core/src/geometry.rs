//! Geometric arm model: serial joint chain with straight-line muscle routing.
//!
//! The model maps joint angles to muscle lengths by placing every routing
//! point in the world frame through forward kinematics and summing segment
//! distances. Routing is piecewise-linear through the listed points only;
//! there is no wrapping geometry, no wire elasticity and no hysteresis here —
//! those live in the plant.
//!
//! Link numbering: link 0 is the base, link `i` is the frame after joint `i`
//! (1-based). Routing points, mass points and the end-effector each name the
//! link that carries them.

use nalgebra::{DMatrix, DVector, Isometry3, Point3, Translation3, Unit, UnitQuaternion, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::vecs::{JointVector, MuscleVector};

/// One revolute joint: offset from the parent frame, rotation axis, limits.
#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    /// Offset of the joint origin in the parent link frame (mm).
    pub origin: Vector3<f64>,
    pub axis: Unit<Vector3<f64>>,
    /// Lower limit (rad).
    pub limit_lo: f64,
    /// Upper limit (rad).
    pub limit_hi: f64,
}

/// A point fixed to a link (mm, link-local coordinates).
#[derive(Debug, Clone)]
pub struct LinkPoint {
    pub link: usize,
    pub pos: Vector3<f64>,
}

/// Ordered straight-line routing: start point, relay points, end point.
#[derive(Debug, Clone)]
pub struct Muscle {
    pub name: String,
    pub points: Vec<LinkPoint>,
}

/// Point mass used for the gravity term.
#[derive(Debug, Clone)]
pub struct MassPoint {
    pub link: usize,
    pub pos: Vector3<f64>,
    pub mass_kg: f64,
}

/// Immutable arm description. All operations are pure functions of
/// `(&self, theta)`, so a model can be shared freely across workers.
#[derive(Debug, Clone)]
pub struct ArmModel {
    pub name: String,
    pub joints: Vec<Joint>,
    pub muscles: Vec<Muscle>,
    pub masses: Vec<MassPoint>,
    pub end_effector: LinkPoint,
}

/// Result of a damped-least-squares inverse solve.
#[derive(Debug, Clone)]
pub struct IkSolution {
    pub theta: JointVector,
    /// Final residual norm (mm).
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

const IK_DAMPING: f64 = 1e-3;
const IK_MAX_ITERATIONS: usize = 200;
const IK_LENGTH_TOLERANCE_MM: f64 = 1e-4;

impl ArmModel {
    pub fn new(
        name: impl Into<String>,
        joints: Vec<Joint>,
        muscles: Vec<Muscle>,
        masses: Vec<MassPoint>,
        end_effector: LinkPoint,
    ) -> Result<Self> {
        let model = ArmModel { name: name.into(), joints, muscles, masses, end_effector };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::Fixture("model needs at least one joint".into()));
        }
        if self.muscles.is_empty() {
            return Err(Error::Fixture("model needs at least one muscle".into()));
        }
        for j in &self.joints {
            if !(j.limit_lo < j.limit_hi) {
                return Err(Error::Fixture(format!(
                    "joint {}: limit_lo {} must be < limit_hi {}",
                    j.name, j.limit_lo, j.limit_hi
                )));
            }
        }
        let n_links = self.joints.len();
        let check_link = |link: usize, what: &str| -> Result<()> {
            if link > n_links {
                return Err(Error::Fixture(format!(
                    "{what}: link index {link} out of range (max {n_links})"
                )));
            }
            Ok(())
        };
        for m in &self.muscles {
            if m.points.len() < 2 {
                return Err(Error::Fixture(format!(
                    "muscle {}: needs at least 2 routing points",
                    m.name
                )));
            }
            for p in &m.points {
                check_link(p.link, &m.name)?;
            }
        }
        for mp in &self.masses {
            check_link(mp.link, "mass point")?;
            if mp.mass_kg < 0.0 {
                return Err(Error::Fixture("mass must be non-negative".into()));
            }
        }
        check_link(self.end_effector.link, "end effector")?;
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn muscle_count(&self) -> usize {
        self.muscles.len()
    }

    /// (lo, hi) per joint, radians.
    pub fn limits(&self) -> Vec<(f64, f64)> {
        self.joints.iter().map(|j| (j.limit_lo, j.limit_hi)).collect()
    }

    /// Clamp a pose into the joint limits.
    pub fn clamp(&self, theta: &JointVector) -> JointVector {
        JointVector(
            theta
                .iter()
                .zip(&self.joints)
                .map(|(&t, j)| t.clamp(j.limit_lo, j.limit_hi))
                .collect(),
        )
    }

    fn clamp_warn(&self, theta: &JointVector, op: &str) -> JointVector {
        let clamped = self.clamp(theta);
        if theta
            .iter()
            .zip(clamped.iter())
            .any(|(a, b)| (a - b).abs() > 1e-12)
        {
            log::warn!("{op}: pose outside joint limits, clamped");
        }
        clamped
    }

    fn check_dim(&self, got: usize, context: &'static str) -> Result<()> {
        if got != self.joint_count() {
            return Err(Error::DimensionMismatch { expected: self.joint_count(), got, context });
        }
        Ok(())
    }

    /// World frames of every link: index 0 is the base (identity), index i
    /// the frame after joint i.
    pub fn link_frames(&self, theta: &[f64]) -> Vec<Isometry3<f64>> {
        debug_assert_eq!(theta.len(), self.joints.len());
        let mut frames = Vec::with_capacity(self.joints.len() + 1);
        frames.push(Isometry3::identity());
        for (j, &t) in self.joints.iter().zip(theta) {
            let local = Isometry3::from_parts(
                Translation3::from(j.origin),
                UnitQuaternion::from_axis_angle(&j.axis, t),
            );
            let prev = frames.last().unwrap();
            frames.push(prev * local);
        }
        frames
    }

    /// Muscle lengths without clamping (internal; the plant settle and finite
    /// differences evaluate slightly outside the limits on purpose).
    pub(crate) fn muscle_lengths_raw(&self, theta: &[f64]) -> Vec<f64> {
        let frames = self.link_frames(theta);
        self.muscles
            .iter()
            .map(|m| {
                let mut total = 0.0;
                let mut prev = (frames[m.points[0].link] * Point3::from(m.points[0].pos)).coords;
                for p in &m.points[1..] {
                    let cur = (frames[p.link] * Point3::from(p.pos)).coords;
                    total += (cur - prev).norm();
                    prev = cur;
                }
                total
            })
            .collect()
    }

    /// Muscle lengths (mm) at a pose. Poses outside the limits are clamped
    /// with a warning.
    pub fn muscle_lengths(&self, theta: &JointVector) -> MuscleVector {
        let theta = self.clamp_warn(theta, "muscle_lengths");
        MuscleVector(self.muscle_lengths_raw(&theta))
    }

    pub(crate) fn end_effector_raw(&self, theta: &[f64]) -> Vector3<f64> {
        let frames = self.link_frames(theta);
        (frames[self.end_effector.link] * Point3::from(self.end_effector.pos)).coords
    }

    /// World position of the end-effector point (mm).
    pub fn end_effector(&self, theta: &JointVector) -> Vector3<f64> {
        let theta = self.clamp_warn(theta, "end_effector");
        self.end_effector_raw(&theta)
    }

    /// One forward-kinematics pass producing everything the plant's energy
    /// needs: muscle lengths, world mass points and the end-effector.
    pub(crate) fn fk_summary(
        &self,
        theta: &[f64],
    ) -> (Vec<f64>, Vec<(f64, Vector3<f64>)>, Vector3<f64>) {
        let frames = self.link_frames(theta);
        let lengths = self
            .muscles
            .iter()
            .map(|m| {
                let mut total = 0.0;
                let mut prev = (frames[m.points[0].link] * Point3::from(m.points[0].pos)).coords;
                for p in &m.points[1..] {
                    let cur = (frames[p.link] * Point3::from(p.pos)).coords;
                    total += (cur - prev).norm();
                    prev = cur;
                }
                total
            })
            .collect();
        let masses = self
            .masses
            .iter()
            .map(|mp| (mp.mass_kg, (frames[mp.link] * Point3::from(mp.pos)).coords))
            .collect();
        let ee = (frames[self.end_effector.link] * Point3::from(self.end_effector.pos)).coords;
        (lengths, masses, ee)
    }

    /// Muscle Jacobian ∂l/∂θ (mm per rad) by central finite differences,
    /// `muscle_count × joint_count`.
    pub fn muscle_jacobian(&self, theta: &JointVector) -> DMatrix<f64> {
        self.muscle_jacobian_h(theta, 1e-6)
    }

    /// Central-difference Jacobian at an explicit step size (rad).
    pub fn muscle_jacobian_h(&self, theta: &JointVector, h: f64) -> DMatrix<f64> {
        let nj = self.joint_count();
        let nm = self.muscle_count();
        let mut jac = DMatrix::zeros(nm, nj);
        let mut t = theta.0.clone();
        for j in 0..nj {
            let base = t[j];
            t[j] = base + h;
            let plus = self.muscle_lengths_raw(&t);
            t[j] = base - h;
            let minus = self.muscle_lengths_raw(&t);
            t[j] = base;
            for i in 0..nm {
                jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        jac
    }

    /// Muscle-space inverse: find θ minimizing `‖muscle_lengths(θ) − target‖₂`
    /// by damped least squares from `theta_init`. Always returns the best
    /// iterate; `converged` reports whether the residual tolerance was met.
    pub fn joints_from_lengths(
        &self,
        lengths: &MuscleVector,
        theta_init: &JointVector,
    ) -> Result<IkSolution> {
        self.check_dim(theta_init.len(), "joints_from_lengths theta_init")?;
        if lengths.len() != self.muscle_count() {
            return Err(Error::DimensionMismatch {
                expected: self.muscle_count(),
                got: lengths.len(),
                context: "joints_from_lengths target",
            });
        }
        let residual_of = |theta: &JointVector| -> DVector<f64> {
            let l = self.muscle_lengths_raw(theta);
            DVector::from_iterator(l.len(), l.iter().zip(lengths.iter()).map(|(a, b)| b - a))
        };
        self.dls_solve(theta_init, residual_of, |t| self.muscle_jacobian(t))
    }

    /// End-effector position inverse: find θ placing the end-effector at
    /// `target` (mm, world frame) by damped least squares from `theta_init`.
    pub fn ik_end_effector(
        &self,
        target: &Vector3<f64>,
        theta_init: &JointVector,
    ) -> Result<IkSolution> {
        self.check_dim(theta_init.len(), "ik_end_effector theta_init")?;
        let residual_of = |theta: &JointVector| -> DVector<f64> {
            let p = self.end_effector_raw(theta);
            DVector::from_iterator(3, (target - p).iter().copied())
        };
        let jac_of = |theta: &JointVector| -> DMatrix<f64> {
            let nj = self.joint_count();
            let h = 1e-6;
            let mut jac = DMatrix::zeros(3, nj);
            let mut t = theta.0.clone();
            for j in 0..nj {
                let base = t[j];
                t[j] = base + h;
                let plus = self.end_effector_raw(&t);
                t[j] = base - h;
                let minus = self.end_effector_raw(&t);
                t[j] = base;
                let col = (plus - minus) / (2.0 * h);
                for i in 0..3 {
                    jac[(i, j)] = col[i];
                }
            }
            jac
        };
        self.dls_solve(theta_init, residual_of, jac_of)
    }

    fn dls_solve(
        &self,
        theta_init: &JointVector,
        residual_of: impl Fn(&JointVector) -> DVector<f64>,
        jac_of: impl Fn(&JointVector) -> DMatrix<f64>,
    ) -> Result<IkSolution> {
        let nj = self.joint_count();
        let mut theta = self.clamp(theta_init);
        let mut residual = residual_of(&theta).norm();
        let mut lambda = IK_DAMPING;
        for iteration in 0..IK_MAX_ITERATIONS {
            if residual < IK_LENGTH_TOLERANCE_MM {
                return Ok(IkSolution { theta, residual, converged: true, iterations: iteration });
            }
            let r = residual_of(&theta);
            let jac = jac_of(&theta);
            let jt = jac.transpose();
            let rhs = &jt * r;
            // Levenberg step: raise the damping until the step improves the
            // residual, relax it again after an accepted step.
            let mut accepted = false;
            while lambda < 1e12 {
                let normal = &jt * &jac + DMatrix::identity(nj, nj) * lambda;
                let Some(ch) = normal.cholesky() else {
                    lambda *= 10.0;
                    continue;
                };
                let step = ch.solve(&rhs);
                if step.norm() < 1e-12 {
                    break;
                }
                let mut candidate = theta.clone();
                for j in 0..nj {
                    candidate.0[j] += step[j];
                }
                candidate = self.clamp(&candidate);
                let cand_residual = residual_of(&candidate).norm();
                if cand_residual < residual {
                    theta = candidate;
                    residual = cand_residual;
                    lambda = (lambda / 10.0).max(IK_DAMPING);
                    accepted = true;
                    break;
                }
                lambda *= 10.0;
            }
            if !accepted {
                break;
            }
        }
        Ok(IkSolution {
            theta,
            residual,
            converged: residual < IK_LENGTH_TOLERANCE_MM,
            iterations: IK_MAX_ITERATIONS,
        })
    }

    /// Uniform pose within the joint limits. A zero-width interval yields the
    /// constant value.
    pub fn sample_pose<R: Rng + ?Sized>(&self, rng: &mut R) -> JointVector {
        JointVector(
            self.joints
                .iter()
                .map(|j| {
                    if j.limit_hi > j.limit_lo {
                        rng.random_range(j.limit_lo..j.limit_hi)
                    } else {
                        j.limit_lo
                    }
                })
                .collect(),
        )
    }
}

fn joint(name: &str, origin: [f64; 3], axis: [f64; 3], lo_deg: f64, hi_deg: f64) -> Joint {
    Joint {
        name: name.into(),
        origin: Vector3::from(origin),
        axis: Unit::new_normalize(Vector3::from(axis)),
        limit_lo: lo_deg.to_radians(),
        limit_hi: hi_deg.to_radians(),
    }
}

fn pt(link: usize, pos: [f64; 3]) -> LinkPoint {
    LinkPoint { link, pos: Vector3::from(pos) }
}

fn muscle(name: &str, points: Vec<LinkPoint>) -> Muscle {
    Muscle { name: name.into(), points }
}

impl ArmModel {
    /// Reduced single-joint model: one pitch-like joint about +x with an
    /// antagonistic muscle pair. Used by oracle tests.
    pub fn toy_1dof() -> Self {
        ArmModel::new(
            "toy1",
            vec![joint("J1", [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], -100.0, 100.0)],
            vec![
                muscle("flex", vec![pt(0, [0.0, 45.0, 25.0]), pt(1, [0.0, 40.0, -110.0])]),
                muscle("ext", vec![pt(0, [0.0, -45.0, 25.0]), pt(1, [0.0, -40.0, -110.0])]),
            ],
            vec![MassPoint { link: 1, pos: Vector3::new(0.0, 0.0, -75.0), mass_kg: 0.8 }],
            pt(1, [0.0, 0.0, -150.0]),
        )
        .expect("toy_1dof fixture is valid")
    }

    /// Reduced two-joint model (roll + pitch) with four quadrant muscles.
    pub fn toy_2dof() -> Self {
        let mut muscles = Vec::new();
        for (i, az_deg) in [45.0f64, 135.0, 225.0, 315.0].iter().enumerate() {
            let az = az_deg.to_radians();
            muscles.push(muscle(
                &format!("m{}", i + 1),
                vec![
                    pt(0, [50.0 * az.cos(), 50.0 * az.sin(), 30.0]),
                    pt(2, [40.0 * az.cos(), 40.0 * az.sin(), -110.0]),
                ],
            ));
        }
        ArmModel::new(
            "toy2",
            vec![
                joint("J1", [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], -80.0, 80.0),
                joint("J2", [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], -80.0, 80.0),
            ],
            muscles,
            vec![MassPoint { link: 2, pos: Vector3::new(0.0, 0.0, -80.0), mass_kg: 0.8 }],
            pt(2, [0.0, 0.0, -160.0]),
        )
        .expect("toy_2dof fixture is valid")
    }
}
