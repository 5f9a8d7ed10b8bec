use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::percentile_nearest_rank;
use crate::error::{Error, Result};
use crate::spatial::KdTree;
use crate::voxelize::boundary_voxels;
use crate::{BinaryImage3D, Vec3};

/// `2|A∩B| / (|A| + |B|)`; two empty images score 1.0.
pub fn dice(a: &BinaryImage3D, b: &BinaryImage3D) -> Result<f64> {
    let (na, nb, both) = counts(a, b)?;
    Ok(dice_from_counts(na, nb, both))
}

fn dice_from_counts(na: usize, nb: usize, both: usize) -> f64 {
    if na + nb == 0 {
        1.0
    } else {
        2.0 * both as f64 / (na + nb) as f64
    }
}

fn counts(a: &BinaryImage3D, b: &BinaryImage3D) -> Result<(usize, usize, usize)> {
    a.grid().ensure_same(b.grid())?;
    let mut n = (0, 0, 0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        n.0 += x as usize;
        n.1 += y as usize;
        n.2 += (x && y) as usize;
    }
    Ok(n)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HausdorffReport {
    /// 95th percentile of distances from boundary of `a` to boundary of `b` (mm).
    pub forward: f64,
    /// Same from `b` to `a`.
    pub backward: f64,
    pub hd95: f64,
}

/// Physical centres (mm) of the six-connected boundary voxels.
pub fn boundary_points(img: &BinaryImage3D) -> Vec<Vec3> {
    let g = img.grid();
    boundary_voxels(img)
        .into_iter()
        .map(|[i, j, k]| g.position(i, j, k))
        .collect()
}

fn directed_p95(from: &[Vec3], to: &KdTree) -> f64 {
    let d: Vec<f64> = from
        .par_iter()
        .map(|p| to.nearest(p).map(|(_, d2)| d2.sqrt()).unwrap_or(f64::INFINITY))
        .collect();
    percentile_nearest_rank(&d, 95.0).unwrap_or(0.0)
}

/// Symmetric 95th-percentile Hausdorff distance between image boundaries.
pub fn hd95(a: &BinaryImage3D, b: &BinaryImage3D) -> Result<HausdorffReport> {
    if a.grid().spacing != b.grid().spacing {
        return Err(Error::GridMismatch {
            left: Box::new(*a.grid()),
            right: Box::new(*b.grid()),
        });
    }
    let pa = boundary_points(a);
    let pb = boundary_points(b);
    if pa.is_empty() || pb.is_empty() {
        return Err(Error::UndefinedMetric("HD95 of an empty image".into()));
    }
    let forward = directed_p95(&pa, &KdTree::new(pb.clone()));
    let backward = directed_p95(&pb, &KdTree::new(pa));
    Ok(HausdorffReport {
        forward,
        backward,
        hd95: forward.max(backward),
    })
}

/// Dice, HD95 and the voxel counts behind them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub dice: f64,
    /// `None` when either image is empty (metric undefined).
    pub hd95: Option<f64>,
    pub directed_hd95_forward: Option<f64>,
    pub directed_hd95_backward: Option<f64>,
    pub count_a: usize,
    pub count_b: usize,
    pub count_intersection: usize,
    /// Both images empty: Dice reported as 1.0 by convention.
    pub both_empty: bool,
    pub spacing: [f64; 3],
}

/// Full report. An empty input yields Dice but no HD95 (see
/// [`AccuracyReport::hd95`]); call [`hd95`] directly for the error.
pub fn accuracy_report(a: &BinaryImage3D, b: &BinaryImage3D) -> Result<AccuracyReport> {
    let (na, nb, both) = counts(a, b)?;
    let hd = match hd95(a, b) {
        Ok(h) => Some(h),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(AccuracyReport {
        dice: dice_from_counts(na, nb, both),
        hd95: hd.map(|h| h.hd95),
        directed_hd95_forward: hd.map(|h| h.forward),
        directed_hd95_backward: hd.map(|h| h.backward),
        count_a: na,
        count_b: nb,
        count_intersection: both,
        both_empty: na + nb == 0,
        spacing: a.grid().spacing,
    })
}
