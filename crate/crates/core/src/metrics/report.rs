use serde::{Deserialize, Serialize};

use super::cloud::CloudEval;
use super::depth::DepthEval;
use super::pose::PoseSummary;
use super::profile::ErrorProfile;
use crate::stats::mean;

/// Accuracy, completeness and normal consistency averaged over scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudSummary {
    pub acc: f64,
    pub comp: f64,
    pub nc: f64,
    pub scenes: usize,
}

impl CloudSummary {
    pub fn from_evals(evals: &[CloudEval]) -> Option<Self> {
        let avg = |f: fn(&CloudEval) -> f64| mean(&evals.iter().map(f).collect::<Vec<_>>());
        Some(CloudSummary {
            acc: avg(|e| e.acc_mean)?,
            comp: avg(|e| e.comp_mean)?,
            nc: avg(|e| e.nc_mean)?,
            scenes: evals.len(),
        })
    }
}

/// Reference versus non-reference view errors averaged over scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub reference_reprojection_px: f64,
    pub non_reference_reprojection_px: f64,
    pub reference_euclidean: f64,
    pub non_reference_euclidean: f64,
    /// Recorded observation, not a check.
    pub non_reference_worse: bool,
    pub scenes: usize,
}

impl ProfileSummary {
    /// Needs every profile to contain at least one non-reference view.
    pub fn from_profiles(profiles: &[ErrorProfile]) -> Option<Self> {
        if profiles.iter().any(|p| p.views.len() < 2) {
            return None;
        }
        let avg = |f: fn(&ErrorProfile) -> f64| mean(&profiles.iter().map(f).collect::<Vec<_>>());
        let r = avg(|p| p.reference_reprojection_px)?;
        let n = avg(|p| p.non_reference_reprojection_px)?;
        Some(ProfileSummary {
            reference_reprojection_px: r,
            non_reference_reprojection_px: n,
            reference_euclidean: avg(|p| p.reference_euclidean)?,
            non_reference_euclidean: avg(|p| p.non_reference_euclidean)?,
            non_reference_worse: n >= r,
            scenes: profiles.len(),
        })
    }
}

/// Everything `eval` measures for one checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Single-view depth on held-out monocular scenes.
    pub depth: DepthEval,
    /// Unit-confidence mean squared pointmap error on held-out multi-view
    /// scenes.
    pub pointmap_mse: f64,
    pub pose: Option<PoseSummary>,
    pub cloud: Option<CloudSummary>,
    pub profile: Option<ProfileSummary>,
    pub mean_token_norm: f64,
    /// How the per-pair AUC error is formed.
    pub auc_error: String,
}

impl MetricsReport {
    pub const AUC_ERROR: &'static str = "max(rot_deg, trans_deg)";

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}
