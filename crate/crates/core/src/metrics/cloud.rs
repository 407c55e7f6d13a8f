use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use super::umeyama::{umeyama, SimilarityTransform};
use crate::error::{LabError, Result};
use crate::stats::{mean, median};

/// Neighbourhood size for PCA normals.
pub const NORMAL_NEIGHBORS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudEval {
    pub acc_mean: f64,
    pub acc_median: f64,
    pub comp_mean: f64,
    pub comp_median: f64,
    pub nc_mean: f64,
    pub nc_median: f64,
    /// Points whose neighbourhood was too degenerate for a normal.
    pub excluded_normals: usize,
    pub alignment: Option<SimilarityTransform>,
}

/// Index of and distance to the nearest point in `cloud` for every query;
/// ties go to the lowest index.
pub fn nearest_neighbors(queries: &[Vector3<f64>], cloud: &[Vector3<f64>]) -> Vec<(usize, f64)> {
    queries
        .iter()
        .map(|q| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in cloud.iter().enumerate() {
                let d = (q - c).norm_squared();
                if d < best.1 {
                    best = (j, d);
                }
            }
            (best.0, best.1.sqrt())
        })
        .collect()
}

/// Unit normals by PCA over the `k` nearest points (the point itself
/// included). `None` where the neighbourhood has rank < 2.
pub fn estimate_normals(points: &[Vector3<f64>], k: usize) -> Vec<Option<Vector3<f64>>> {
    let k = k.min(points.len());
    points
        .iter()
        .map(|p| {
            let mut order: Vec<(f64, usize)> = points
                .iter()
                .enumerate()
                .map(|(j, q)| ((p - q).norm_squared(), j))
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let nbrs: Vec<Vector3<f64>> = order[..k].iter().map(|&(_, j)| points[j]).collect();
            let c = nbrs.iter().sum::<Vector3<f64>>() / k as f64;
            let mut cov = Matrix3::zeros();
            for q in &nbrs {
                let d = q - c;
                cov += d * d.transpose();
            }
            let eig = SymmetricEigen::new(cov);
            let mut idx = [0, 1, 2];
            idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let (l0, l1) = (eig.eigenvalues[idx[0]], eig.eigenvalues[idx[1]]);
            if !(l0 > 0.0) || l1 <= 1e-12 * l0 {
                return None;
            }
            Some(eig.eigenvectors.column(idx[2]).normalize())
        })
        .collect()
}

fn directional_nc(
    nn: &[(usize, f64)],
    from: &[Option<Vector3<f64>>],
    to: &[Option<Vector3<f64>>],
) -> Vec<f64> {
    nn.iter()
        .enumerate()
        .filter_map(|(i, &(j, _))| Some(from[i]?.dot(&to[j]?).abs()))
        .collect()
}

/// Accuracy (pred → gt), completeness (gt → pred) and normal consistency.
///
/// With `pre_align`, `pred` is first mapped onto `gt` by a Umeyama
/// similarity, which requires the two clouds to be in correspondence.
pub fn cloud_acc_comp_nc(pred: &[Vector3<f64>], gt: &[Vector3<f64>], pre_align: bool) -> Result<CloudEval> {
    if pred.len() < 3 || gt.len() < 3 {
        return Err(LabError::DegenerateGeometry("clouds need at least 3 points".into()));
    }
    let (pred, alignment) = if pre_align {
        let t = umeyama(pred, gt, true)?;
        (pred.iter().map(|p| t.apply(p)).collect::<Vec<_>>(), Some(t))
    } else {
        (pred.to_vec(), None)
    };
    let to_gt = nearest_neighbors(&pred, gt);
    let to_pred = nearest_neighbors(gt, &pred);
    let acc: Vec<f64> = to_gt.iter().map(|&(_, d)| d).collect();
    let comp: Vec<f64> = to_pred.iter().map(|&(_, d)| d).collect();

    let n_pred = estimate_normals(&pred, NORMAL_NEIGHBORS);
    let n_gt = estimate_normals(gt, NORMAL_NEIGHBORS);
    let excluded = n_pred.iter().chain(&n_gt).filter(|n| n.is_none()).count();
    let nc_a = directional_nc(&to_gt, &n_pred, &n_gt);
    let nc_b = directional_nc(&to_pred, &n_gt, &n_pred);
    let both = |f: fn(&[f64]) -> Option<f64>| match (f(&nc_a), f(&nc_b)) {
        (Some(a), Some(b)) => 0.5 * (a + b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => f64::NAN,
    };
    Ok(CloudEval {
        acc_mean: mean(&acc).expect("non-empty"),
        acc_median: median(&acc).expect("non-empty"),
        comp_mean: mean(&comp).expect("non-empty"),
        comp_median: median(&comp).expect("non-empty"),
        nc_mean: both(mean),
        nc_median: both(median),
        excluded_normals: excluded,
        alignment,
    })
}
