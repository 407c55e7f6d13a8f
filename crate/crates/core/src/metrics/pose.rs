use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Angular errors for one image pair. `trans_deg` is `None` when either
/// translation has zero norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairError {
    pub rot_deg: f64,
    pub trans_deg: Option<f64>,
}

impl PairError {
    /// Error used for AUC: `max(rot, trans)`, with an undefined translation
    /// counted as a complete miss (180°).
    pub fn combined(&self) -> f64 {
        self.rot_deg.max(self.trans_deg.unwrap_or(180.0))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseErrors {
    pub pairs: Vec<PairError>,
}

impl PoseErrors {
    pub fn undefined_translations(&self) -> usize {
        self.pairs.iter().filter(|p| p.trans_deg.is_none()).count()
    }

    /// One `pair,rot_deg,trans_deg` row per pair; undefined translations are
    /// left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair,rot_deg,trans_deg\n");
        for (i, p) in self.pairs.iter().enumerate() {
            let t = p.trans_deg.map(|t| t.to_string()).unwrap_or_default();
            out.push_str(&format!("{i},{},{t}\n", p.rot_deg));
        }
        out
    }
}

fn angle_deg(cos: f64) -> f64 {
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Rotation angle of `R` in degrees via `atan2(sin, cos)`; unlike
/// `acos((tr − 1)/2)` this keeps full precision near zero.
pub fn rotation_angle_deg(r: &Matrix3<f64>) -> f64 {
    let axis = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = 0.5 * axis.norm();
    let cos = 0.5 * (r.trace() - 1.0);
    sin.atan2(cos).to_degrees()
}

pub fn relative_pose_errors(
    r_pred: &Matrix3<f64>,
    t_pred: &Vector3<f64>,
    r_gt: &Matrix3<f64>,
    t_gt: &Vector3<f64>,
) -> PairError {
    let rot_deg = rotation_angle_deg(&(r_pred.transpose() * r_gt));
    let (np, ng) = (t_pred.norm(), t_gt.norm());
    let trans_deg = (np > 0.0 && ng > 0.0).then(|| angle_deg(t_pred.dot(t_gt) / (np * ng)));
    PairError { rot_deg, trans_deg }
}

/// Normalized area under the cumulative-recall curve on `[0, τ]`, percent.
///
/// Recall is a step function of the per-pair error, so the area is exact:
/// `(1/n) Σᵢ max(0, τ − eᵢ) / τ`.
pub fn pose_auc(errors: &PoseErrors, thresholds: &[f64]) -> Result<BTreeMap<String, f64>> {
    if errors.pairs.is_empty() {
        return Err(LabError::Contract("pose AUC over zero pairs".into()));
    }
    let combined: Vec<f64> = errors.pairs.iter().map(PairError::combined).collect();
    let n = combined.len() as f64;
    thresholds
        .iter()
        .map(|&tau| {
            if !(tau > 0.0) {
                return Err(LabError::Config(format!("AUC threshold must be positive, got {tau}")));
            }
            let area: f64 = combined.iter().map(|e| (tau - e).max(0.0)).sum();
            Ok((format!("{tau}"), 100.0 * area / (n * tau)))
        })
        .collect()
}

/// Recall of rotation and translation angle below `τ` (strict), percent.
/// Pairs without a defined translation are left out of RTA.
pub fn rra_rta(errors: &PoseErrors, tau: f64) -> Result<(f64, f64)> {
    if !(tau > 0.0) {
        return Err(LabError::Config(format!("recall threshold must be positive, got {tau}")));
    }
    let pct = |hits: usize, n: usize| if n == 0 { 0.0 } else { 100.0 * hits as f64 / n as f64 };
    let rra = errors.pairs.iter().filter(|p| p.rot_deg < tau).count();
    let defined: Vec<f64> = errors.pairs.iter().filter_map(|p| p.trans_deg).collect();
    let rta = defined.iter().filter(|&&t| t < tau).count();
    Ok((pct(rra, errors.pairs.len()), pct(rta, defined.len())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSummary {
    pub auc: BTreeMap<String, f64>,
    pub rra5: f64,
    pub rta5: f64,
    pub pairs: usize,
    pub undefined_translations: usize,
}

impl PoseSummary {
    pub fn from_errors(errors: &PoseErrors) -> Result<Self> {
        let (rra5, rta5) = rra_rta(errors, 5.0)?;
        Ok(PoseSummary {
            auc: pose_auc(errors, &[5.0, 10.0, 20.0])?,
            rra5,
            rta5,
            pairs: errors.pairs.len(),
            undefined_translations: errors.undefined_translations(),
        })
    }
}
