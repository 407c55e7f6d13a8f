//! Uncertainty-weighted distillation and pointmap losses.
//!
//! Per image `i`:
//!
//! ```text
//! L_distill  = mean_valid( β_D·(D − D̂)² − λ·log β_D )
//! L_pointmap = 1_mv(i) · mean_valid( β_P·‖P − P_gt‖² − λ·log β_P )
//! L          = (1/N) Σ_i (L_distill + L_pointmap)
//! ```

use renormlab_tensor::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::stats::median;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceLink {
    /// `β = exp(raw)`
    #[default]
    Exp,
    /// `β = 1 + exp(raw)`
    OnePlusExp,
}

/// Whether β is a per-pixel map or a single scalar per image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceGranularity {
    #[default]
    PerPixel,
    PerImage,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_reg: f64,
    pub confidence_link: ConfidenceLink,
    pub granularity: ConfidenceGranularity,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_reg: 0.2,
            confidence_link: ConfidenceLink::Exp,
            granularity: ConfidenceGranularity::PerPixel,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_reg > 0.0) {
            return Err(LabError::Config(format!(
                "lambda_reg must be positive, got {}",
                self.lambda_reg
            )));
        }
        Ok(())
    }
}

/// Supervision for one image.
#[derive(Clone, Debug)]
pub struct SupervisionTarget {
    /// Aligned depth target on the patch grid.
    pub teacher_depth: Tensor,
    /// `[patches × 3]`, required for multi-view images.
    pub gt_pointmap: Option<Tensor>,
    pub is_multiview: bool,
    pub valid_mask: Vec<bool>,
}

impl SupervisionTarget {
    pub fn new(
        teacher_depth: Tensor,
        gt_pointmap: Option<Tensor>,
        is_multiview: bool,
        valid_mask: Vec<bool>,
    ) -> Result<Self> {
        if valid_mask.len() != teacher_depth.numel() {
            return Err(LabError::Shape(format!(
                "mask has {} entries, depth target has {}",
                valid_mask.len(),
                teacher_depth.numel()
            )));
        }
        if let Some(p) = &gt_pointmap {
            if p.shape() != [valid_mask.len(), 3] {
                return Err(LabError::Shape(format!(
                    "gt pointmap {:?} does not match {} patches",
                    p.shape(),
                    valid_mask.len()
                )));
            }
        }
        if is_multiview && gt_pointmap.is_none() {
            return Err(LabError::Contract("multi-view target without gt pointmap".into()));
        }
        Ok(SupervisionTarget {
            teacher_depth,
            gt_pointmap,
            is_multiview,
            valid_mask,
        })
    }

    /// Every element valid.
    pub fn dense(teacher_depth: Tensor, gt_pointmap: Option<Tensor>, is_multiview: bool) -> Result<Self> {
        let n = teacher_depth.numel();
        Self::new(teacher_depth, gt_pointmap, is_multiview, vec![true; n])
    }

    pub fn valid_indices(&self) -> Vec<usize> {
        valid_indices(&self.valid_mask)
    }
}

fn valid_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

/// Maps unconstrained raw confidences to strictly positive β.
pub fn confidence_from_raw(tape: &mut Tape, raw: Var, cfg: &LossConfig) -> Result<Var> {
    let e = tape.exp(raw)?;
    Ok(match cfg.confidence_link {
        ConfidenceLink::Exp => e,
        ConfidenceLink::OnePlusExp => tape.add_scalar(e, 1.0)?,
    })
}

/// β for one image honoring `cfg.granularity`: the per-pixel map, or the
/// link applied to the mean raw confidence over valid pixels.
pub fn image_confidence(tape: &mut Tape, raw: Var, mask: &[bool], cfg: &LossConfig) -> Result<Var> {
    match cfg.granularity {
        ConfidenceGranularity::PerPixel => confidence_from_raw(tape, raw, cfg),
        ConfidenceGranularity::PerImage => {
            let idx = valid_indices(mask);
            if idx.is_empty() {
                return Err(LabError::DegenerateSupervision("empty valid mask".into()));
            }
            let picked = tape.gather(raw, &idx)?;
            let m = tape.mean(picked)?;
            confidence_from_raw(tape, m, cfg)
        }
    }
}

/// `mean(β·e − λ log β)` over the valid elements, where `e` holds the
/// per-element squared errors already restricted to `idx`.
fn weighted_mean(tape: &mut Tape, sq_err: Var, beta: Var, idx: &[usize], lambda: f64) -> Result<Var> {
    if tape.value(beta).numel() == 1 {
        let b = tape.reshape(beta, &[])?;
        let mean_err = tape.mean(sq_err)?;
        let weighted = tape.scale_by(mean_err, b)?;
        let lb = tape.log(b)?;
        let reg = tape.scale(lb, lambda)?;
        return Ok(tape.sub(weighted, reg)?);
    }
    let b = tape.gather(beta, idx)?;
    let weighted = tape.mul(b, sq_err)?;
    let lb = tape.log(b)?;
    let reg = tape.scale(lb, lambda)?;
    let per = tape.sub(weighted, reg)?;
    Ok(tape.mean(per)?)
}

fn check_beta(tape: &Tape, beta: Var, n: usize) -> Result<()> {
    let m = tape.value(beta).numel();
    if m != 1 && m != n {
        return Err(LabError::Shape(format!(
            "β has {m} entries, expected 1 or {n}"
        )));
    }
    Ok(())
}

/// Monocular distillation loss against `target.teacher_depth`.
pub fn distill_loss(
    tape: &mut Tape,
    pred_depth: Var,
    target: &SupervisionTarget,
    beta: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    let n = target.valid_mask.len();
    if tape.value(pred_depth).numel() != n {
        return Err(LabError::Shape(format!(
            "prediction has {} entries, target has {n}",
            tape.value(pred_depth).numel()
        )));
    }
    check_beta(tape, beta, n)?;
    let idx = target.valid_indices();
    if idx.is_empty() {
        return Err(LabError::DegenerateSupervision("empty valid mask".into()));
    }
    let d = tape.gather(pred_depth, &idx)?;
    let t: Vec<f64> = idx.iter().map(|&i| target.teacher_depth.data()[i]).collect();
    let t = tape.constant(Tensor::new(&[idx.len()], t)?);
    let diff = tape.sub(d, t)?;
    let sq = tape.square(diff)?;
    weighted_mean(tape, sq, beta, &idx, cfg.lambda_reg)
}

/// Pointmap regression loss; exactly zero for monocular images.
pub fn pointmap_loss(
    tape: &mut Tape,
    pred: Var,
    target: &SupervisionTarget,
    beta: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    if !target.is_multiview {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let gt = target
        .gt_pointmap
        .as_ref()
        .ok_or_else(|| LabError::Contract("multi-view target without gt pointmap".into()))?;
    let n = target.valid_mask.len();
    if tape.shape(pred) != [n, 3] {
        return Err(LabError::Shape(format!(
            "pointmap prediction {:?}, expected [{n}, 3]",
            tape.shape(pred)
        )));
    }
    check_beta(tape, beta, n)?;
    let idx = target.valid_indices();
    if idx.is_empty() {
        return Err(LabError::DegenerateSupervision("empty valid mask".into()));
    }
    let flat: Vec<usize> = idx.iter().flat_map(|&i| [3 * i, 3 * i + 1, 3 * i + 2]).collect();
    let p = tape.gather(pred, &flat)?;
    let g: Vec<f64> = flat.iter().map(|&j| gt.data()[j]).collect();
    let g = tape.constant(Tensor::new(&[flat.len()], g)?);
    let diff = tape.sub(p, g)?;
    let sq = tape.square(diff)?;
    let sq = tape.reshape(sq, &[idx.len(), 3])?;
    let ones = tape.constant(Tensor::ones(&[3, 1]));
    let per_point = tape.matmul(sq, ones)?;
    let per_point = tape.reshape(per_point, &[idx.len()])?;
    weighted_mean(tape, per_point, beta, &idx, cfg.lambda_reg)
}

/// `(1/n) Σ_i (distill_i + pointmap_i)`.
///
/// `n` is normally `terms.len()`; a larger `n` lets one tape carry a slice
/// of a batch whose image count is `n`.
pub fn total_objective(tape: &mut Tape, terms: &[(Var, Var)], n: usize) -> Result<Var> {
    if n == 0 {
        return Err(LabError::Contract("total objective over zero images".into()));
    }
    if terms.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let mut parts = Vec::with_capacity(terms.len() * 2);
    for &(d, p) in terms {
        parts.push(tape.reshape(d, &[1])?);
        parts.push(tape.reshape(p, &[1])?);
    }
    let all = tape.concat(&parts, 0)?;
    let s = tape.sum(all)?;
    Ok(tape.scale(s, 1.0 / n as f64)?)
}

/// How to estimate the additive offset of an affine-invariant depth map.
#[derive(Clone, Copy, Debug)]
pub enum ShiftEstimate<'a> {
    /// Treat the input as already shift-free.
    None,
    /// Known generative offset (exact inversion).
    Known(f64),
    /// `median(teacher − reference)` over valid elements.
    MedianAgainst(&'a Tensor),
}

/// Removes the additive shift, then divides by the mean valid magnitude,
/// giving a shift-free, unit-mean-scale depth target.
pub fn align_teacher_depth(teacher: &Tensor, mask: &[bool], shift: ShiftEstimate<'_>) -> Result<Tensor> {
    if mask.len() != teacher.numel() {
        return Err(LabError::Shape(format!(
            "mask has {} entries, teacher has {}",
            mask.len(),
            teacher.numel()
        )));
    }
    let idx = valid_indices(mask);
    if idx.is_empty() {
        return Err(LabError::DegenerateSupervision("empty valid mask".into()));
    }
    let vals: Vec<f64> = idx.iter().map(|&i| teacher.data()[i]).collect();
    if vals.iter().all(|&v| v == vals[0]) {
        return Err(LabError::DegenerateSupervision(
            "constant teacher depth carries no affine-invariant structure".into(),
        ));
    }
    let offset = match shift {
        ShiftEstimate::None => 0.0,
        ShiftEstimate::Known(b) => b,
        ShiftEstimate::MedianAgainst(reference) => {
            if reference.numel() != teacher.numel() {
                return Err(LabError::Shape("reference depth does not match teacher".into()));
            }
            let diffs: Vec<f64> = idx.iter().map(|&i| teacher.data()[i] - reference.data()[i]).collect();
            median(&diffs).expect("non-empty")
        }
    };
    let shifted = teacher.map(|v| v - offset);
    let scale = idx.iter().map(|&i| shifted.data()[i].abs()).sum::<f64>() / idx.len() as f64;
    if !(scale > 0.0) {
        return Err(LabError::DegenerateSupervision("zero mean depth after shift removal".into()));
    }
    Ok(shifted.scale(1.0 / scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::LabTapeFunction;
    use renormlab_tensor::{grad_check, ScalarFunction};

    fn cfg() -> LossConfig {
        LossConfig::default()
    }

    fn distill_value(pred: &[f64], teacher: &[f64], beta: &[f64], mask: Vec<bool>) -> Result<f64> {
        let mut t = Tape::new();
        let n = pred.len();
        let p = t.constant(Tensor::new(&[n], pred.to_vec()).unwrap());
        let b = t.constant(Tensor::new(&[beta.len()], beta.to_vec()).unwrap());
        let target = SupervisionTarget::new(Tensor::new(&[n], teacher.to_vec()).unwrap(), None, false, mask)?;
        let l = distill_loss(&mut t, p, &target, b, &cfg())?;
        Ok(t.value(l).item()?)
    }

    #[test]
    fn confidence_links_at_zero() {
        let mut t = Tape::new();
        let raw = t.constant(Tensor::zeros(&[3]));
        let b = confidence_from_raw(&mut t, raw, &cfg()).unwrap();
        assert_eq!(t.value(b).data(), &[1.0; 3]);
        let c = LossConfig {
            confidence_link: ConfidenceLink::OnePlusExp,
            ..cfg()
        };
        let b = confidence_from_raw(&mut t, raw, &c).unwrap();
        assert_eq!(t.value(b).data(), &[2.0; 3]);
    }

    #[test]
    fn exp_link_gradient_equals_beta() {
        let raw = Tensor::new(&[4], vec![-1.0, 0.0, 0.5, 1.2]).unwrap();
        let f = LabTapeFunction(|t: &mut Tape, v| {
            let b = confidence_from_raw(t, v, &LossConfig::default())?;
            Ok(t.sum(b)?)
        });
        assert!(grad_check(&f, &raw, 1e-5).unwrap() < 1e-6);
        let grad = f.gradient(&raw).unwrap();
        for (g, r) in grad.data().iter().zip(raw.data()) {
            assert!((g - r.exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn distill_hand_values() {
        assert_eq!(distill_value(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 1.0], vec![true; 2]).unwrap(), 0.0);
        assert_eq!(distill_value(&[2.0, 3.0], &[1.0, 2.0], &[1.0, 1.0], vec![true; 2]).unwrap(), 1.0);
        assert!(matches!(
            distill_value(&[2.0, 3.0], &[1.0, 2.0], &[1.0, 1.0], vec![false; 2]),
            Err(LabError::DegenerateSupervision(_))
        ));
    }

    #[test]
    fn distill_ignores_masked_values() {
        let mask = vec![true, false, true];
        let a = distill_value(&[1.0, 9.0, 2.0], &[1.5, -3.0, 2.5], &[0.7, 5.0, 1.3], mask.clone()).unwrap();
        let b = distill_value(&[1.0, -4.0, 2.0], &[1.5, 100.0, 2.5], &[0.7, 0.01, 1.3], mask).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn per_image_beta_matches_uniform_map() {
        let scalar = distill_value(&[1.0, 2.0, 4.0], &[1.5, 2.5, 3.0], &[0.8], vec![true; 3]).unwrap();
        let map = distill_value(&[1.0, 2.0, 4.0], &[1.5, 2.5, 3.0], &[0.8; 3], vec![true; 3]).unwrap();
        assert!((scalar - map).abs() < 1e-15);
    }

    #[test]
    fn pointmap_gate_and_hand_value() {
        let mut t = Tape::new();
        let gt = Tensor::from_rows(&[&[0.0, 0.0, 1.0], &[1.0, 1.0, 2.0]]).unwrap();
        let pred = t.constant(Tensor::from_rows(&[&[1.0, 0.0, 1.0], &[1.0, 1.0, 2.0]]).unwrap());
        let beta = t.constant(Tensor::ones(&[2]));

        let mono = SupervisionTarget::dense(Tensor::ones(&[2]), None, false).unwrap();
        let z = pointmap_loss(&mut t, pred, &mono, beta, &cfg()).unwrap();
        assert_eq!(t.value(z).item().unwrap(), 0.0);

        let exact = t.constant(gt.clone());
        let mv = SupervisionTarget::dense(Tensor::ones(&[2]), Some(gt.clone()), true).unwrap();
        let z = pointmap_loss(&mut t, exact, &mv, beta, &cfg()).unwrap();
        assert_eq!(t.value(z).item().unwrap(), 0.0);

        // One point off by (1, 0, 0), masked down to that point alone.
        let single = SupervisionTarget::new(Tensor::ones(&[2]), Some(gt), true, vec![true, false]).unwrap();
        let l = pointmap_loss(&mut t, pred, &single, beta, &cfg()).unwrap();
        assert_eq!(t.value(l).item().unwrap(), 1.0);
    }

    #[test]
    fn multiview_target_requires_gt() {
        assert!(matches!(
            SupervisionTarget::dense(Tensor::ones(&[2]), None, true),
            Err(LabError::Contract(_))
        ));
    }

    #[test]
    fn total_objective_cases() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::scalar(0.7));
        let b = t.constant(Tensor::scalar(0.2));
        let c = t.constant(Tensor::scalar(-0.4));
        let z = t.constant(Tensor::scalar(0.0));
        let one = total_objective(&mut t, &[(a, b)], 1).unwrap();
        assert!((t.value(one).item().unwrap() - 0.9).abs() < 1e-15);
        let zero = total_objective(&mut t, &[(z, z), (z, z)], 2).unwrap();
        assert_eq!(t.value(zero).item().unwrap(), 0.0);
        let batch = [(a, b), (c, z)];
        let once = total_objective(&mut t, &batch, 2).unwrap();
        let twice = total_objective(&mut t, &[batch[0], batch[1], batch[0], batch[1]], 4).unwrap();
        assert!((t.value(once).item().unwrap() - t.value(twice).item().unwrap()).abs() < 1e-15);
        let swapped = total_objective(&mut t, &[batch[1], batch[0]], 2).unwrap();
        assert!((t.value(once).item().unwrap() - t.value(swapped).item().unwrap()).abs() < 1e-15);
        assert!(total_objective(&mut t, &[], 0).is_err());
    }

    #[test]
    fn alignment_fixed_point_and_inversion() {
        let d = Tensor::new(&[4], vec![0.5, 1.5, 0.8, 1.2]).unwrap();
        let out = align_teacher_depth(&d, &[true; 4], ShiftEstimate::None).unwrap();
        assert!(out.max_abs_diff(&d).unwrap() < 1e-12);

        let gt = Tensor::new(&[5], vec![1.0, 2.5, 3.0, 7.5, 4.0]).unwrap();
        let (a, b) = (1.7, -0.25);
        let teacher = gt.map(|g| a * g + b);
        let aligned = align_teacher_depth(&teacher, &[true; 5], ShiftEstimate::Known(b)).unwrap();
        let expected = gt.scale(1.0 / (gt.sum() / 5.0));
        assert!(aligned.max_abs_diff(&expected).unwrap() < 1e-9);

        // Scale-matched reference: the median estimator recovers the shift.
        let shifted = gt.map(|g| g + 0.4);
        let aligned = align_teacher_depth(&shifted, &[true; 5], ShiftEstimate::MedianAgainst(&gt)).unwrap();
        assert!(aligned.max_abs_diff(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn alignment_degenerate_inputs() {
        let c = Tensor::full(&[3], 2.0);
        assert!(matches!(
            align_teacher_depth(&c, &[true; 3], ShiftEstimate::None),
            Err(LabError::DegenerateSupervision(_))
        ));
        let d = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        assert!(align_teacher_depth(&d, &[false; 2], ShiftEstimate::None).is_err());
        let sym = Tensor::new(&[2], vec![-1.0, 1.0]).unwrap();
        assert!(align_teacher_depth(&sym, &[true; 2], ShiftEstimate::Known(0.0)).is_ok());
    }
}
