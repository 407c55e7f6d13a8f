use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::{PinholeCamera, RigidTransform};
use crate::stats::{mean, median};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewError {
    pub view: usize,
    pub is_reference: bool,
    /// Mean pixel distance between projected prediction and ground truth.
    pub reprojection_px: f64,
    /// Mean 3D distance after global scale alignment.
    pub euclidean: f64,
    /// Points excluded because either projection fell behind the camera.
    pub behind_camera: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorProfile {
    pub scale: f64,
    pub views: Vec<ViewError>,
    pub reference_reprojection_px: f64,
    pub reference_euclidean: f64,
    /// NaN when there is only the reference view.
    pub non_reference_reprojection_px: f64,
    pub non_reference_euclidean: f64,
}

/// Per-view reprojection and Euclidean error of predicted pointmaps.
///
/// `pred[v]` and `gt[v]` hold view `v`'s points in the reference frame;
/// `poses[v]` maps reference-frame points into camera `v`. A single scale
/// `median(‖gt‖ / ‖pred‖)` over all points aligns the prediction first.
pub fn view_error_profile(
    pred: &[Vec<Vector3<f64>>],
    gt: &[Vec<Vector3<f64>>],
    poses: &[RigidTransform],
    cam: &PinholeCamera,
) -> Result<ErrorProfile> {
    if pred.is_empty() || pred.len() != gt.len() || gt.len() != poses.len() {
        return Err(LabError::Shape(format!(
            "{} predicted views, {} gt views, {} poses",
            pred.len(),
            gt.len(),
            poses.len()
        )));
    }
    let mut ratios = Vec::new();
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() {
            return Err(LabError::Shape("per-view point counts differ".into()));
        }
        ratios.extend(p.iter().zip(g).filter(|(p, _)| p.norm() > 0.0).map(|(p, g)| g.norm() / p.norm()));
    }
    let scale = median(&ratios).ok_or_else(|| LabError::DegenerateGeometry("all predicted points at the origin".into()))?;

    let mut views = Vec::with_capacity(pred.len());
    for (v, ((p, g), pose)) in pred.iter().zip(gt).zip(poses).enumerate() {
        let mut reproj = Vec::with_capacity(p.len());
        let mut eucl = Vec::with_capacity(p.len());
        let mut behind = 0;
        for (pp, gg) in p.iter().zip(g) {
            let sp = scale * pp;
            eucl.push((sp - gg).norm());
            match (cam.project(&pose.apply(&sp)), cam.project(&pose.apply(gg))) {
                (Ok((u0, v0)), Ok((u1, v1))) => reproj.push(((u0 - u1).powi(2) + (v0 - v1).powi(2)).sqrt()),
                _ => behind += 1,
            }
        }
        views.push(ViewError {
            view: v,
            is_reference: v == 0,
            reprojection_px: mean(&reproj).unwrap_or(f64::NAN),
            euclidean: mean(&eucl).unwrap_or(0.0),
            behind_camera: behind,
        });
    }
    let rest = &views[1..];
    let avg = |f: fn(&ViewError) -> f64| mean(&rest.iter().map(f).collect::<Vec<_>>()).unwrap_or(f64::NAN);
    Ok(ErrorProfile {
        scale,
        reference_reprojection_px: views[0].reprojection_px,
        reference_euclidean: views[0].euclidean,
        non_reference_reprojection_px: avg(|v| v.reprojection_px),
        non_reference_euclidean: avg(|v| v.euclidean),
        views,
    })
}
