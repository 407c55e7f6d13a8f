use nalgebra::Vector3;
use renormlab_tensor::{Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{patch_center, pointmap_targets, Dataset, Pool, ViewSample};
use crate::error::{LabError, Result};
use crate::metrics::{
    cloud_acc_comp_nc, depth_rel_delta1, relative_pose_errors, umeyama, view_error_profile, CloudSummary, DepthAlignment,
    DepthEval, MetricsReport, PoseErrors, PoseSummary, ProfileSummary,
};
use crate::model::{encode_trace_on, forward, stack_images, token_norm_stats, HeadOutputs, ModelState};
use crate::stats::mean;

/// Views per held-out multi-view scene used for evaluation.
pub const EVAL_VIEWS: usize = 4;

/// Token norms after each encoder block, averaged over the probe images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub block_mean_norms: Vec<f64>,
    pub block_max_norms: Vec<f64>,
    /// Mean norm of the encoder output tokens.
    pub mean_norm: f64,
    pub max_norm: f64,
}

/// Monocular images of `ds` used as a fixed probe set.
pub fn probe_images(ds: &Dataset, count: usize) -> Vec<&Tensor> {
    ds.groups_in(Pool::Mono).take(count).map(|g| &g.views[0].image).collect()
}

pub fn drift_report(state: &ModelState, probes: &[&Tensor]) -> Result<DriftReport> {
    if probes.is_empty() {
        return Err(LabError::Contract("empty probe set".into()));
    }
    let blocks = state.config.encoder.num_blocks;
    let mut means = vec![Vec::new(); blocks];
    let mut maxes = vec![0.0f64; blocks];
    for img in probes {
        let mut tape = Tape::new();
        let b = state.bind(&mut tape, false)?;
        for (i, v) in encode_trace_on(&mut tape, &b, &state.config, img)?.into_iter().enumerate() {
            let s = token_norm_stats(tape.value(v));
            means[i].push(s.mean_norm);
            maxes[i] = maxes[i].max(s.max_norm);
        }
    }
    let block_mean_norms: Vec<f64> = means.iter().map(|m| mean(m).unwrap_or(0.0)).collect();
    Ok(DriftReport {
        mean_norm: *block_mean_norms.last().unwrap_or(&0.0),
        max_norm: *maxes.last().unwrap_or(&0.0),
        block_mean_norms,
        block_max_norms: maxes,
    })
}

fn rows(t: &Tensor, view: usize) -> Vec<Vector3<f64>> {
    let per: usize = t.shape()[1..].iter().product();
    t.data()[view * per..(view + 1) * per]
        .chunks(3)
        .map(|r| Vector3::new(r[0], r[1], r[2]))
        .collect()
}

/// Maps the views of one scene (reference first) to head outputs.
pub type Predictor<'a> = dyn Fn(&[&ViewSample]) -> Result<HeadOutputs> + 'a;

/// Predictor backed by the model.
pub fn model_predictor(state: &ModelState) -> impl Fn(&[&ViewSample]) -> Result<HeadOutputs> + '_ {
    move |views| {
        let imgs: Vec<&Tensor> = views.iter().map(|v| &v.image).collect();
        Ok(forward(&stack_images(&imgs)?, state)?.1)
    }
}

pub fn eval_depth(state: &ModelState, ds: &Dataset) -> Result<DepthEval> {
    eval_depth_with(&model_predictor(state), ds)
}

pub fn eval_multiview(state: &ModelState, ds: &Dataset) -> Result<MultiViewEval> {
    eval_multiview_with(&model_predictor(state), ds)
}

/// Single-view depth: rel and δ₁ per held-out monocular image after median
/// scaling, averaged over images.
pub fn eval_depth_with(run: &Predictor<'_>, ds: &Dataset) -> Result<DepthEval> {
    let (mut rel, mut d1) = (Vec::new(), Vec::new());
    for g in ds.groups_in(Pool::Mono) {
        let v = &g.views[0];
        let h = run(&[v])?;
        let gt = v.depth_gt.data();
        let pred = h.self_depth.data();
        let mask = vec![true; gt.len()];
        // Without a positive prediction there is no scale to recover; the
        // image is scored as predicted, so every pixel fails δ₁.
        let e = match depth_rel_delta1(pred, gt, &mask, DepthAlignment::MedianScale) {
            Err(LabError::DegenerateSupervision(_)) => depth_rel_delta1(pred, gt, &mask, DepthAlignment::None)?,
            r => r?,
        };
        rel.push(e.rel);
        d1.push(e.delta1);
    }
    Ok(DepthEval {
        rel: mean(&rel).ok_or_else(|| LabError::Contract("no monocular held-out images".into()))?,
        delta1: mean(&d1).unwrap_or(0.0),
    })
}

/// Multi-view measurements on held-out scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewEval {
    pub pointmap_mse: f64,
    pub pose: Option<PoseSummary>,
    pub cloud: Option<CloudSummary>,
    pub profile: Option<ProfileSummary>,
}

pub fn eval_multiview_with(run: &Predictor<'_>, ds: &Dataset) -> Result<MultiViewEval> {
    let (p, s) = (ds.config.patch_size, ds.config.image_size);
    let mut sq = Vec::new();
    let mut pose_pairs = Vec::new();
    let mut clouds = Vec::new();
    let mut profiles = Vec::new();
    for g in ds.groups.iter().filter(|g| g.pool != Pool::Mono) {
        let views: Vec<&ViewSample> = g.views.iter().take(EVAL_VIEWS).collect();
        let h = run(&views)?;
        let targets = pointmap_targets(&views, p, s)?;
        let ref_scale = views[0].depth_gt.data().iter().sum::<f64>() / views[0].depth_gt.numel() as f64;
        let mut pred_all = Vec::new();
        let mut gt_all = Vec::new();
        let mut pred_views = Vec::new();
        let mut gt_views = Vec::new();
        for (i, t) in targets.iter().enumerate() {
            let pred = rows(&h.pointmap, i);
            let gt: Vec<Vector3<f64>> = t.data().chunks(3).map(|r| Vector3::new(r[0], r[1], r[2])).collect();
            sq.extend(pred.iter().zip(&gt).map(|(a, b)| (a - b).norm_squared()));
            pred_all.extend(pred.iter().copied());
            gt_all.extend(gt.iter().copied());
            pred_views.push(pred.iter().map(|q| q * ref_scale).collect::<Vec<_>>());
            gt_views.push(gt.iter().map(|q| q * ref_scale).collect::<Vec<_>>());
            if i > 0 {
                // Camera-frame points from the view's own depth head, aligned
                // to its reference-frame pointmap, give camera i → reference.
                let g = ds.config.grid();
                let depth = &h.self_depth.data()[i * g * g..(i + 1) * g * g];
                let own: Vec<Vector3<f64>> = (0..g * g)
                    .map(|k| {
                        let (u, v) = patch_center(k / g, k % g, p, s);
                        views[i].cam.unproject(u, v, depth[k])
                    })
                    .collect();
                let gt_rel = views[0].pose.compose(&views[i].pose.inverse());
                match umeyama(&own, &pred, true) {
                    Ok(sim) => pose_pairs.push(relative_pose_errors(
                        &sim.rotation,
                        &sim.translation,
                        &gt_rel.rotation,
                        &gt_rel.translation,
                    )),
                    Err(_) => pose_pairs.push(crate::metrics::PairError {
                        rot_deg: 180.0,
                        trans_deg: None,
                    }),
                }
            }
        }
        if let Ok(c) = cloud_acc_comp_nc(&pred_all, &gt_all, true) {
            clouds.push(c);
        }
        let poses: Vec<_> = views.iter().map(|v| v.pose.compose(&views[0].pose.inverse())).collect();
        if let Ok(pr) = view_error_profile(&pred_views, &gt_views, &poses, &views[0].cam) {
            profiles.push(pr);
        }
    }
    let errors = PoseErrors { pairs: pose_pairs };
    Ok(MultiViewEval {
        pointmap_mse: mean(&sq).ok_or_else(|| LabError::Contract("no multi-view held-out scenes".into()))?,
        pose: (!errors.pairs.is_empty()).then(|| PoseSummary::from_errors(&errors)).transpose()?,
        cloud: CloudSummary::from_evals(&clouds),
        profile: ProfileSummary::from_profiles(&profiles),
    })
}

pub fn evaluate(state: &ModelState, heldout: &Dataset, probe_count: usize) -> Result<MetricsReport> {
    let depth = eval_depth(state, heldout)?;
    let mv = eval_multiview(state, heldout)?;
    let drift = drift_report(state, &probe_images(heldout, probe_count))?;
    Ok(MetricsReport {
        depth,
        pointmap_mse: mv.pointmap_mse,
        pose: mv.pose,
        cloud: mv.cloud,
        profile: mv.profile,
        mean_token_norm: drift.mean_norm,
        auc_error: MetricsReport::AUC_ERROR.into(),
    })
}
