use std::collections::BTreeMap;

use renormlab_tensor::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::{mean_normalized, pointmap_targets, Dataset, Draw};
use crate::error::{LabError, Result};
use crate::losses::{
    align_teacher_depth, distill_loss, image_confidence, pointmap_loss, total_objective, LossConfig, ShiftEstimate,
    SupervisionTarget,
};
use crate::model::{decode_on, encode_on, HeadVars, ModelState};

/// Confidence channel paired with each head.
pub const POINT_CONF: usize = 0;
pub const DEPTH_CONF: usize = 1;

/// Where the depth head's target comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthSource {
    /// Ground truth divided by its mean (pretraining).
    GroundTruth,
    /// Teacher depth with its recorded shift removed, divided by its mean.
    Teacher,
}

/// Per-image loss sums over a batch (not yet divided by the image count).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSums {
    pub distill: f64,
    pub pointmap: f64,
    pub images: usize,
}

impl LossSums {
    pub fn add(&mut self, other: &LossSums) {
        self.distill += other.distill;
        self.pointmap += other.pointmap;
        self.images += other.images;
    }
}

pub fn draw_images(draws: &[Draw]) -> usize {
    draws.iter().map(|d| d.views.len()).sum()
}

/// Runs the model on one draw and returns its contribution
/// `(1/n_total)·Σ_views (distill + pointmap)` plus the raw sums.
pub fn draw_objective(
    tape: &mut Tape,
    state: &ModelState,
    bound: &crate::model::Bound,
    ds: &Dataset,
    draw: &Draw,
    depth_source: DepthSource,
    loss: &LossConfig,
    n_total: usize,
) -> Result<(Var, LossSums)> {
    let views = ds.views_of(draw)?;
    let cfg = &state.config;
    let mut tokens = Vec::with_capacity(views.len());
    for v in &views {
        tokens.push(encode_on(tape, bound, cfg, &v.image)?);
    }
    let heads: HeadVars = decode_on(tape, bound, cfg, &tokens)?;
    let pm_targets = if draw.is_multiview() {
        Some(pointmap_targets(&views, ds.config.patch_size, ds.config.image_size)?)
    } else {
        None
    };
    let mut terms = Vec::with_capacity(views.len());
    let mut sums = LossSums {
        images: views.len(),
        ..LossSums::default()
    };
    for (i, v) in views.iter().enumerate() {
        let mask = vec![true; v.depth_gt.numel()];
        let depth_target = match depth_source {
            DepthSource::GroundTruth => mean_normalized(&v.depth_gt),
            DepthSource::Teacher => align_teacher_depth(&v.teacher_depth, &mask, ShiftEstimate::Known(v.teacher_affine.1))?,
        };
        let flat = depth_target.reshape(&[depth_target.numel()])?;
        let target = SupervisionTarget::new(flat, pm_targets.as_ref().map(|t| t[i].clone()), draw.is_multiview(), mask.clone())?;
        let raw_d = heads.conf_channel(tape, i, DEPTH_CONF)?;
        let beta_d = image_confidence(tape, raw_d, &mask, loss)?;
        let d = distill_loss(tape, heads.depth[i], &target, beta_d, loss)?;
        let raw_p = heads.conf_channel(tape, i, POINT_CONF)?;
        let beta_p = image_confidence(tape, raw_p, &mask, loss)?;
        let p = pointmap_loss(tape, heads.point[i], &target, beta_p, loss)?;
        sums.distill += tape.value(d).item()?;
        sums.pointmap += tape.value(p).item()?;
        terms.push((d, p));
    }
    Ok((total_objective(tape, &terms, n_total)?, sums))
}

/// Objective gradients for `draws`, each draw on its own tape, scaled so
/// that summing over every micro-batch of an optimizer step gives the
/// gradient of the mean over `n_total` images.
pub fn batch_gradients(
    state: &ModelState,
    ds: &Dataset,
    draws: &[Draw],
    depth_source: DepthSource,
    loss: &LossConfig,
    n_total: usize,
    grads: &mut BTreeMap<String, Tensor>,
) -> Result<(f64, LossSums)> {
    let mut objective = 0.0;
    let mut sums = LossSums::default();
    for draw in draws {
        let mut tape = Tape::new();
        let bound = state.bind(&mut tape, true)?;
        let (obj, s) = draw_objective(&mut tape, state, &bound, ds, draw, depth_source, loss, n_total)?;
        let value = tape.value(obj).item()?;
        if !value.is_finite() {
            return Err(LabError::Diverged(format!("non-finite objective on group {}", draw.group)));
        }
        objective += value;
        sums.add(&s);
        let g = tape.backward(obj)?;
        for (name, &var) in &bound.trainable {
            let gv = g.get_or_zeros(var);
            match grads.get_mut(name) {
                Some(acc) => *acc = acc.add(&gv)?,
                None => {
                    grads.insert(name.clone(), gv);
                }
            }
        }
    }
    Ok((objective, sums))
}
