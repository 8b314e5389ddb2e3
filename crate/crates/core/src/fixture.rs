//! Arm model fixture files.
//!
//! Fixtures are TOML with joints (origin, axis, limits), muscle routing
//! points, point masses and the end-effector; the full schema is documented
//! at the top of `fixtures/arm5.toml`, which also defines the default arm.

use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ArmModel, Joint, LinkPoint, MassPoint, Muscle};

const DEFAULT_ARM_TOML: &str = include_str!("../fixtures/arm5.toml");

#[derive(Debug, Serialize, Deserialize)]
struct FixtureFile {
    name: String,
    joints: Vec<JointSpec>,
    muscles: Vec<MuscleSpec>,
    #[serde(default)]
    masses: Vec<MassSpec>,
    end_effector: PointSpec,
}

#[derive(Debug, Serialize, Deserialize)]
struct JointSpec {
    name: String,
    origin_mm: [f64; 3],
    axis: [f64; 3],
    limits_deg: [f64; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct MuscleSpec {
    name: String,
    points: Vec<PointSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PointSpec {
    link: usize,
    pos_mm: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct MassSpec {
    link: usize,
    pos_mm: [f64; 3],
    mass_kg: f64,
}

/// Parse a fixture from TOML text.
pub fn parse(text: &str) -> Result<ArmModel> {
    let file: FixtureFile =
        toml::from_str(text).map_err(|e| Error::Fixture(e.to_string()))?;
    let joints = file
        .joints
        .iter()
        .map(|j| {
            let axis = Vector3::from(j.axis);
            if axis.norm() < 1e-9 {
                return Err(Error::Fixture(format!("joint {}: zero axis", j.name)));
            }
            Ok(Joint {
                name: j.name.clone(),
                origin: Vector3::from(j.origin_mm),
                axis: Unit::new_normalize(axis),
                limit_lo: j.limits_deg[0].to_radians(),
                limit_hi: j.limits_deg[1].to_radians(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let muscles = file
        .muscles
        .iter()
        .map(|m| Muscle {
            name: m.name.clone(),
            points: m
                .points
                .iter()
                .map(|p| LinkPoint { link: p.link, pos: Vector3::from(p.pos_mm) })
                .collect(),
        })
        .collect();
    let masses = file
        .masses
        .iter()
        .map(|mp| MassPoint {
            link: mp.link,
            pos: Vector3::from(mp.pos_mm),
            mass_kg: mp.mass_kg,
        })
        .collect();
    let ee = LinkPoint {
        link: file.end_effector.link,
        pos: Vector3::from(file.end_effector.pos_mm),
    };
    ArmModel::new(file.name, joints, muscles, masses, ee)
}

/// Load a fixture file from disk.
pub fn load(path: impl AsRef<Path>) -> Result<ArmModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    parse(&text)
}

/// Serialize a model back to fixture TOML.
pub fn to_toml(model: &ArmModel) -> String {
    let file = FixtureFile {
        name: model.name.clone(),
        joints: model
            .joints
            .iter()
            .map(|j| JointSpec {
                name: j.name.clone(),
                origin_mm: [j.origin.x, j.origin.y, j.origin.z],
                axis: [j.axis.x, j.axis.y, j.axis.z],
                limits_deg: [j.limit_lo.to_degrees(), j.limit_hi.to_degrees()],
            })
            .collect(),
        muscles: model
            .muscles
            .iter()
            .map(|m| MuscleSpec {
                name: m.name.clone(),
                points: m
                    .points
                    .iter()
                    .map(|p| PointSpec { link: p.link, pos_mm: [p.pos.x, p.pos.y, p.pos.z] })
                    .collect(),
            })
            .collect(),
        masses: model
            .masses
            .iter()
            .map(|mp| MassSpec {
                link: mp.link,
                pos_mm: [mp.pos.x, mp.pos.y, mp.pos.z],
                mass_kg: mp.mass_kg,
            })
            .collect(),
        end_effector: PointSpec {
            link: model.end_effector.link,
            pos_mm: [
                model.end_effector.pos.x,
                model.end_effector.pos.y,
                model.end_effector.pos.z,
            ],
        },
    };
    toml::to_string(&file).expect("fixture serialization cannot fail")
}

/// The built-in default arm (5 joints, 10 muscles), parsed once from the
/// embedded `fixtures/arm5.toml`.
pub fn default_arm() -> ArmModel {
    static MODEL: OnceLock<ArmModel> = OnceLock::new();
    MODEL
        .get_or_init(|| parse(DEFAULT_ARM_TOML).expect("embedded default fixture is valid"))
        .clone()
}
