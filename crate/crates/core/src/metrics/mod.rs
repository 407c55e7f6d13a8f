//! Evaluation: monocular depth, relative pose, aligned point clouds and
//! per-view error profiles.

mod cloud;
mod depth;
mod pose;
mod profile;
mod report;
mod umeyama;

pub use cloud::{cloud_acc_comp_nc, estimate_normals, nearest_neighbors, CloudEval, NORMAL_NEIGHBORS};
pub use depth::{depth_rel_delta1, DepthAlignment, DepthEval};
pub use pose::{pose_auc, relative_pose_errors, rotation_angle_deg, rra_rta, PairError, PoseErrors, PoseSummary};
pub use profile::{view_error_profile, ErrorProfile, ViewError};
pub use report::{CloudSummary, MetricsReport, ProfileSummary};
pub use umeyama::{umeyama, SimilarityTransform};
