//! Rigid transforms and the pinhole camera shared by data generation, the
//! scale-uncertainty analysis and the metrics.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

const ORTHO_TOL: f64 = 1e-9;

/// `p ↦ R·p + T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = if axis.norm() == 0.0 || angle == 0.0 {
            Matrix3::identity()
        } else {
            *Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).matrix()
        };
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

pub fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if ortho > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
        return Err(LabError::Contract(format!(
            "not a rotation: |RᵀR − I| = {ortho:e}, det = {det}"
        )));
    }
    Ok(())
}

/// Pinhole camera with focal length in pixels and the principal point at
/// the image-plane origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    focal: f64,
}

impl PinholeCamera {
    pub fn new(focal: f64) -> Result<Self> {
        if !(focal > 0.0) || !focal.is_finite() {
            return Err(LabError::Config(format!("focal length must be positive, got {focal}")));
        }
        Ok(PinholeCamera { focal })
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    /// `(f·X/Z, f·Y/Z)`; fails for `Z <= 0`.
    pub fn project(&self, p: &Vector3<f64>) -> Result<(f64, f64)> {
        if !(p.z > 0.0) {
            return Err(LabError::BehindCamera(p.z));
        }
        Ok((self.focal * p.x / p.z, self.focal * p.y / p.z))
    }

    /// Camera-frame point at `depth` along the ray through `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(u * depth / self.focal, v * depth / self.focal, depth)
    }
}
