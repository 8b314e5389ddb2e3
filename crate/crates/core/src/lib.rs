//! Quasi-static simulation and online-learning feedback control for a
//! tendon-driven arm.
//!
//! The crate has six parts:
//!
//! - [`geometry`]: human-designed arm model mapping joint angles to muscle
//!   lengths through straight-line routing, with forward kinematics and
//!   damped-least-squares inverses.
//! - [`plant`]: deterministic quasi-static stand-in for the physical robot.
//!   Commands are target muscle lengths; the plant settles into an elastic
//!   equilibrium with a Coulomb-friction stick band, which makes the joint
//!   response hysteretic and reproducible.
//! - [`net`]: small fully-connected network engine (Sigmoid hidden layers,
//!   Adam, MSE) with gradients with respect to the inputs.
//! - [`jmm`]: joint-muscle mapping `h(θ, f) → l` and the basic feedback
//!   control built on it.
//! - [`olfc`]: transition networks (Type A and Type B), their pretraining
//!   from the geometric model, online learning from observed transitions,
//!   and feedback by gradient descent through the length-change input.
//! - [`harness`]: scenario runner, configuration and CSV export.

pub mod error;
pub mod fixture;
pub mod geometry;
pub mod harness;
pub mod jmm;
pub mod net;
pub mod olfc;
pub mod par;
pub mod plant;
pub mod vecs;

pub use error::{Error, Result};
pub use vecs::{JointVector, MuscleVector};
