use serde::{Deserialize, Serialize};

use crate::mesh::{ElementKind, FEMesh};
use crate::Vec3;

/// Neighbours of each hex corner, ordered so the three edges form a
/// right-handed frame for the standard node numbering.
const HEX_CORNERS: [[usize; 4]; 8] = [
    [0, 1, 3, 4],
    [1, 2, 0, 5],
    [2, 3, 1, 6],
    [3, 0, 2, 7],
    [4, 7, 5, 0],
    [5, 4, 6, 1],
    [6, 5, 7, 2],
    [7, 6, 4, 3],
];

fn scaled_det(e1: Vec3, e2: Vec3, e3: Vec3) -> f64 {
    let lengths = e1.norm() * e2.norm() * e3.norm();
    if lengths == 0.0 {
        return 0.0;
    }
    e1.dot(&e2.cross(&e3)) / lengths
}

/// Scaled Jacobian at each of the eight corners of a hex.
pub fn hex8_corner_jacobians(p: &[Vec3; 8]) -> [f64; 8] {
    HEX_CORNERS.map(|[c, a, b, d]| scaled_det(p[a] - p[c], p[b] - p[c], p[d] - p[c]))
}

/// `6 V / (|e1| |e2| |e3|)` with edges taken from node 0.
pub fn tet4_jacobian(p: &[Vec3; 4]) -> f64 {
    scaled_det(p[1] - p[0], p[2] - p[0], p[3] - p[0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianReport {
    /// `(element id, scaled Jacobian)` for every solid element, in mesh order.
    pub values: Vec<(u64, f64)>,
    /// `None` if the mesh has no solid elements.
    pub min: Option<f64>,
    pub mean: Option<f64>,
    /// Shell elements that were not scored.
    pub skipped: usize,
}

impl JacobianReport {
    pub fn count_below(&self, threshold: f64) -> usize {
        self.values.iter().filter(|(_, v)| *v < threshold).count()
    }
}

/// Corner-based scaled Jacobian of every hex8 and tet4 element. Hex values
/// are the minimum over the eight corners.
pub fn scaled_jacobian(mesh: &FEMesh) -> JacobianReport {
    let mut values = Vec::new();
    let mut skipped = 0;
    for e in mesh.elements() {
        let p = mesh.element_points(e);
        let v = match e.kind {
            ElementKind::Hex8 => {
                let c = hex8_corner_jacobians(&[p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]]);
                c.into_iter().fold(f64::INFINITY, f64::min)
            }
            ElementKind::Tet4 => tet4_jacobian(&[p[0], p[1], p[2], p[3]]),
            ElementKind::Tri3 | ElementKind::Quad4 => {
                skipped += 1;
                continue;
            }
        };
        values.push((e.id, v));
    }
    if skipped > 0 {
        log::info!("scaled Jacobian: skipped {skipped} shell elements");
    }
    let min = values.iter().map(|v| v.1).reduce(f64::min);
    let mean = (!values.is_empty()).then(|| values.iter().map(|v| v.1).sum::<f64>() / values.len() as f64);
    JacobianReport {
        values,
        min,
        mean,
        skipped,
    }
}
