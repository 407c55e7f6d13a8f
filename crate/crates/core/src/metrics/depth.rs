use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::stats::median;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthAlignment {
    None,
    /// `s = median(gt / pred)`.
    #[default]
    MedianScale,
    /// `s = Σ pred·gt / Σ pred²`.
    LeastSquaresScale,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthEval {
    pub rel: f64,
    /// Percentage of pixels with `max(d/d*, d*/d) < 1.25`.
    pub delta1: f64,
}

/// Absolute relative error and δ₁ over the masked pixels.
///
/// Non-positive predictions after alignment count as δ₁ failures and still
/// contribute `|d − d*| / d*` to `rel`.
pub fn depth_rel_delta1(pred: &[f64], gt: &[f64], mask: &[bool], alignment: DepthAlignment) -> Result<DepthEval> {
    if pred.len() != gt.len() || mask.len() != gt.len() {
        return Err(LabError::Shape(format!(
            "pred {}, gt {}, mask {}",
            pred.len(),
            gt.len(),
            mask.len()
        )));
    }
    let idx: Vec<usize> = (0..gt.len()).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return Err(LabError::DegenerateSupervision("empty depth mask".into()));
    }
    if let Some(&i) = idx.iter().find(|&&i| !(gt[i] > 0.0)) {
        return Err(LabError::Contract(format!("ground-truth depth {} at {i} is not positive", gt[i])));
    }
    let scale = match alignment {
        DepthAlignment::None => 1.0,
        DepthAlignment::MedianScale => {
            let ratios: Vec<f64> = idx.iter().filter(|&&i| pred[i] > 0.0).map(|&i| gt[i] / pred[i]).collect();
            median(&ratios).ok_or_else(|| LabError::DegenerateSupervision("no positive predictions to align".into()))?
        }
        DepthAlignment::LeastSquaresScale => {
            let num: f64 = idx.iter().map(|&i| pred[i] * gt[i]).sum();
            let den: f64 = idx.iter().map(|&i| pred[i] * pred[i]).sum();
            if den == 0.0 {
                return Err(LabError::DegenerateSupervision("all-zero prediction".into()));
            }
            num / den
        }
    };
    let mut rel = 0.0;
    let mut hits = 0usize;
    for &i in &idx {
        let d = scale * pred[i];
        rel += (d - gt[i]).abs() / gt[i];
        if d > 0.0 && (d / gt[i]).max(gt[i] / d) < 1.25 {
            hits += 1;
        }
    }
    let n = idx.len() as f64;
    Ok(DepthEval {
        rel: rel / n,
        delta1: 100.0 * hits as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        let gt = [2.0, 3.0, 5.0];
        let e = depth_rel_delta1(&gt, &gt, &[true; 3], DepthAlignment::None).unwrap();
        assert_eq!((e.rel, e.delta1), (0.0, 100.0));
        let doubled: Vec<f64> = gt.iter().map(|g| 2.0 * g).collect();
        let e = depth_rel_delta1(&doubled, &gt, &[true; 3], DepthAlignment::MedianScale).unwrap();
        assert_eq!((e.rel, e.delta1), (0.0, 100.0));
        let e = depth_rel_delta1(&[1.0, 2.0], &[2.0, 2.0], &[true; 2], DepthAlignment::None).unwrap();
        assert_eq!((e.rel, e.delta1), (0.25, 50.0));
    }

    #[test]
    fn negative_prediction_fails_delta1() {
        let e = depth_rel_delta1(&[-1.0, 2.0], &[2.0, 2.0], &[true; 2], DepthAlignment::None).unwrap();
        assert_eq!(e.delta1, 50.0);
        assert_eq!(e.rel, 0.75);
    }

    #[test]
    fn empty_mask_is_an_error() {
        assert!(depth_rel_delta1(&[1.0], &[1.0], &[false], DepthAlignment::None).is_err());
    }
}
