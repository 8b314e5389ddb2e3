//! Joint-space and muscle-space vectors.
//!
//! The default arm has 5 joints and 10 muscles, but the reduced test
//! configurations (1 joint / 2 muscles, 2 joints / 4 muscles) use the same
//! types, so both are thin wrappers over `Vec<f64>` with the dimension
//! checked against the model at the boundaries.
//!
//! Units: joint angles are radians everywhere inside the library; degrees
//! appear only at CLI/CSV boundaries. Muscle entries are millimetres for
//! lengths and length deltas, newtons for tensions.

use std::ops::{Deref, Index, IndexMut};

/// Joint angles in radians, ordered (S-r, S-p, S-y, E-p, E-y) for the
/// default arm.
#[derive(Debug, Clone, PartialEq)]
pub struct JointVector(pub Vec<f64>);

/// Per-muscle scalars: lengths (mm), length deltas (mm) or tensions (N)
/// depending on context.
#[derive(Debug, Clone, PartialEq)]
pub struct MuscleVector(pub Vec<f64>);

macro_rules! vec_newtype_impl {
    ($name:ident) => {
        impl $name {
            pub fn zeros(n: usize) -> Self {
                Self(vec![0.0; n])
            }

            pub fn from_slice(v: &[f64]) -> Self {
                Self(v.to_vec())
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn iter(&self) -> std::slice::Iter<'_, f64> {
                self.0.iter()
            }

            /// Euclidean norm.
            pub fn norm(&self) -> f64 {
                self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
            }

            /// Infinity norm.
            pub fn norm_inf(&self) -> f64 {
                self.0.iter().fold(0.0f64, |m, x| m.max(x.abs()))
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|x| x.is_finite())
            }

            /// Elementwise `self - other`.
            pub fn sub(&self, other: &Self) -> Self {
                debug_assert_eq!(self.len(), other.len());
                Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
            }

            /// Elementwise `self + other`.
            pub fn add(&self, other: &Self) -> Self {
                debug_assert_eq!(self.len(), other.len());
                Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
            }

            /// In-place `self += other`.
            pub fn add_assign(&mut self, other: &Self) {
                debug_assert_eq!(self.len(), other.len());
                for (a, b) in self.0.iter_mut().zip(&other.0) {
                    *a += b;
                }
            }

            pub fn scale(&self, s: f64) -> Self {
                Self(self.0.iter().map(|x| x * s).collect())
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl Index<usize> for $name {
            type Output = f64;
            fn index(&self, i: usize) -> &f64 {
                &self.0[i]
            }
        }

        impl IndexMut<usize> for $name {
            fn index_mut(&mut self, i: usize) -> &mut f64 {
                &mut self.0[i]
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }
    };
}

vec_newtype_impl!(JointVector);
vec_newtype_impl!(MuscleVector);

impl JointVector {
    /// Per-entry conversion to degrees.
    pub fn to_degrees(&self) -> Vec<f64> {
        self.0.iter().map(|x| x.to_degrees()).collect()
    }

    /// Build from degree values.
    pub fn from_degrees(deg: &[f64]) -> Self {
        Self(deg.iter().map(|x| x.to_radians()).collect())
    }
}
