//! Pushing template mesh nodes through a displacement field.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{FEMesh, PointCloud, TriangleMesh};
use crate::metrics::scaled_jacobian;
use crate::spatial::KdTree;
use crate::{DisplacementField, Vec3};

/// Trilinear field value at `p` (mm). Points outside the grid read the
/// value at the nearest in-grid position.
pub fn sample_field(d: &DisplacementField, p: &Vec3) -> Vec3 {
    d.sample_clamped(p)
}

/// Parts held fixed during morphing, with a linear ramp of width
/// `blend_band` (mm) around them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorphMask {
    pub excluded_parts: BTreeSet<String>,
    pub blend_band: f64,
}

impl Default for MorphMask {
    fn default() -> Self {
        MorphMask {
            excluded_parts: BTreeSet::new(),
            blend_band: 30.0,
        }
    }
}

impl MorphMask {
    pub fn validate(&self) -> Result<()> {
        if !(self.blend_band >= 0.0 && self.blend_band.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "blend_band must be finite and >= 0, got {}",
                self.blend_band
            )));
        }
        Ok(())
    }
}

/// Meshes that [`morph_mesh`] can move.
pub trait Morphable: PointCloud {
    /// Identifier of each point, in `points()` order.
    fn point_ids(&self) -> Vec<u64>;
    /// Which points belong to one of `parts`, in `points()` order.
    fn points_in_parts(&self, parts: &BTreeSet<String>) -> Vec<bool>;
}

impl Morphable for TriangleMesh {
    fn point_ids(&self) -> Vec<u64> {
        (0..self.vertices().len() as u64).collect()
    }

    /// Surface meshes carry no part labels.
    fn points_in_parts(&self, _parts: &BTreeSet<String>) -> Vec<bool> {
        vec![false; self.vertices().len()]
    }
}

impl Morphable for FEMesh {
    fn point_ids(&self) -> Vec<u64> {
        self.nodes().keys().copied().collect()
    }

    fn points_in_parts(&self, parts: &BTreeSet<String>) -> Vec<bool> {
        let members: HashSet<u64> = self
            .elements()
            .iter()
            .filter(|e| parts.contains(&e.part))
            .flat_map(|e| e.nodes.iter().copied())
            .collect();
        self.nodes().keys().map(|id| members.contains(id)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MorphOutcome<M> {
    pub mesh: M,
    /// Ids of moved points that lay outside the field grid (sampled clamped).
    pub outside_nodes: Vec<u64>,
}

/// Move every point by `w(p) * D(p)`. Excluded-part points have `w = 0`,
/// points farther than the blend band from any of them have `w = 1`, and
/// `w` grows linearly with distance in between.
pub fn morph_mesh<M: Morphable>(mesh: &M, d: &DisplacementField, mask: &MorphMask) -> Result<MorphOutcome<M>> {
    mask.validate()?;
    let points = mesh.points();
    let excluded = mesh.points_in_parts(&mask.excluded_parts);
    let anchors: Vec<Vec3> = points
        .iter()
        .zip(&excluded)
        .filter(|(_, &e)| e)
        .map(|(p, _)| *p)
        .collect();
    let tree = (!anchors.is_empty()).then(|| KdTree::new(anchors));

    let weights: Vec<f64> = points
        .par_iter()
        .zip(excluded.par_iter())
        .map(|(p, &ex)| {
            if ex {
                return 0.0;
            }
            match &tree {
                Some(t) if mask.blend_band > 0.0 => {
                    let (_, d2) = t.nearest(p).expect("non-empty tree");
                    (d2.sqrt() / mask.blend_band).min(1.0)
                }
                _ => 1.0,
            }
        })
        .collect();

    let grid = d.grid();
    let ids = mesh.point_ids();
    let outside_nodes: Vec<u64> = points
        .iter()
        .zip(&weights)
        .zip(&ids)
        .filter(|((p, &w), _)| w > 0.0 && !grid.contains(p))
        .map(|(_, &id)| id)
        .collect();
    if !outside_nodes.is_empty() {
        let shown: Vec<String> = outside_nodes.iter().take(20).map(u64::to_string).collect();
        log::warn!(
            "{} nodes lie outside the displacement grid and use clamped sampling: {}{}",
            outside_nodes.len(),
            shown.join(", "),
            if outside_nodes.len() > 20 { ", ..." } else { "" }
        );
    }

    let displaced: Vec<Vec3> = points
        .par_iter()
        .zip(weights.par_iter())
        .map(|(p, &w)| if w == 0.0 { *p } else { p + sample_field(d, p) * w })
        .collect();
    Ok(MorphOutcome {
        mesh: mesh.map_points(|i, _| displaced[i]),
        outside_nodes,
    })
}

/// Element quality and node motion of a morph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub elements_scored: usize,
    pub min_jacobian_before: Option<f64>,
    pub mean_jacobian_before: Option<f64>,
    pub min_jacobian_after: Option<f64>,
    pub mean_jacobian_after: Option<f64>,
    pub max_node_displacement: f64,
    pub threshold: f64,
    /// Elements at or above `threshold` before and below it after.
    pub elements_dropped_below: usize,
    pub elements_below_after: usize,
}

pub const DEFAULT_JACOBIAN_THRESHOLD: f64 = 0.1;

pub fn morph_report(before: &FEMesh, after: &FEMesh, threshold: f64) -> Result<QualityReport> {
    if !before.same_topology(after) {
        return Err(Error::ConnectivityMismatch(
            "meshes differ in node ids, element ids, kinds, parts or connectivity".into(),
        ));
    }
    let jb = scaled_jacobian(before);
    let ja = scaled_jacobian(after);
    let max_node_displacement = before
        .nodes()
        .values()
        .zip(after.nodes().values())
        .map(|(a, b)| (b - a).norm())
        .fold(0.0, f64::max);
    let elements_dropped_below = jb
        .values
        .iter()
        .zip(&ja.values)
        .filter(|(b, a)| b.1 >= threshold && a.1 < threshold)
        .count();
    Ok(QualityReport {
        elements_scored: ja.values.len(),
        min_jacobian_before: jb.min,
        mean_jacobian_before: jb.mean,
        min_jacobian_after: ja.min,
        mean_jacobian_after: ja.mean,
        max_node_displacement,
        threshold,
        elements_dropped_below,
        elements_below_after: ja.count_below(threshold),
    })
}

impl fmt::Display for QualityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6}"));
        writeln!(f, "elements_scored: {}", self.elements_scored)?;
        writeln!(f, "min_jacobian_before: {}", opt(self.min_jacobian_before))?;
        writeln!(f, "mean_jacobian_before: {}", opt(self.mean_jacobian_before))?;
        writeln!(f, "min_jacobian_after: {}", opt(self.min_jacobian_after))?;
        writeln!(f, "mean_jacobian_after: {}", opt(self.mean_jacobian_after))?;
        writeln!(f, "max_node_displacement_mm: {:.6}", self.max_node_displacement)?;
        writeln!(f, "threshold: {}", self.threshold)?;
        writeln!(f, "elements_dropped_below: {}", self.elements_dropped_below)?;
        writeln!(f, "elements_below_after: {}", self.elements_below_after)
    }
}
