use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// `p ↦ s·R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    /// `Σ ‖target − (s·R·source + t)‖²`.
    pub fn residual(&self, source: &[Vector3<f64>], target: &[Vector3<f64>]) -> f64 {
        source
            .iter()
            .zip(target)
            .map(|(s, t)| (t - self.apply(s)).norm_squared())
            .sum()
    }
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// Closed-form least-squares similarity (or rigid, without scale) taking
/// `source` onto `target`.
pub fn umeyama(source: &[Vector3<f64>], target: &[Vector3<f64>], with_scale: bool) -> Result<SimilarityTransform> {
    if source.len() != target.len() {
        return Err(LabError::Shape(format!(
            "{} source vs {} target points",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(LabError::DegenerateGeometry("Umeyama needs at least 3 points".into()));
    }
    let n = source.len() as f64;
    let mu_s = centroid(source);
    let mu_t = centroid(target);
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let (ds, dt) = (s - mu_s, t - mu_t);
        cov += dt * ds.transpose();
        var_s += ds.norm_squared();
    }
    cov /= n;
    var_s /= n;

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let d = svd.singular_values;
    let mut sorted = [d[0], d[1], d[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[0] > 0.0) || sorted[1] <= 1e-12 * sorted[0] {
        return Err(LabError::DegenerateGeometry(
            "cross-covariance has rank < 2 (collinear or coincident points)".into(),
        ));
    }
    let mut sign = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        // Flip the direction of the smallest singular value.
        let k = (0..3).min_by(|&a, &b| d[a].total_cmp(&d[b])).expect("3 values");
        sign[(k, k)] = -1.0;
    }
    let rotation = u * sign * v_t;
    let scale = if with_scale {
        (Matrix3::from_diagonal(&d) * sign).trace() / var_s
    } else {
        1.0
    };
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation: mu_t - scale * (rotation * mu_s),
    })
}
