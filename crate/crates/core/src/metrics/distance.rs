use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::spatial::TriangleBvh;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceSample {
    pub vertex_id: usize,
    pub distance_mm: f64,
}

/// For every vertex of `morphed`, the distance to the closest point on any
/// triangle of `target`.
pub fn distance_map(morphed: &TriangleMesh, target: &TriangleMesh) -> Result<Vec<DistanceSample>> {
    if target.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if morphed.vertices().is_empty() {
        return Err(Error::EmptyMesh);
    }
    let bvh = TriangleBvh::new(target);
    Ok(morphed
        .vertices()
        .par_iter()
        .enumerate()
        .map(|(vertex_id, p)| DistanceSample {
            vertex_id,
            distance_mm: bvh.closest(p).map(|(d2, _)| d2.sqrt()).unwrap_or(f64::INFINITY),
        })
        .collect())
}

/// CSV with header `vertex_id,distance_mm`.
pub fn write_distance_csv(samples: &[DistanceSample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for s in samples {
        w.serialize(s).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes::cuboid;
    use crate::Vec3;

    #[test]
    fn identical_meshes_are_zero() {
        let c = cuboid(Vec3::zeros(), Vec3::repeat(2.0));
        assert!(distance_map(&c, &c).unwrap().iter().all(|s| s.distance_mm == 0.0));
    }

    #[test]
    fn point_over_triangle_interior() {
        let tri = TriangleMesh::new(
            vec![Vec3::zeros(), Vec3::new(4.0, 0.0, 0.0), Vec3::new(0.0, 4.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let probe = TriangleMesh::new(
            vec![
                Vec3::new(1.0, 1.0, 2.5),
                Vec3::new(1.0, 1.0, -0.5),
                Vec3::new(0.5, 0.5, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let d: Vec<f64> = distance_map(&probe, &tri)
            .unwrap()
            .iter()
            .map(|s| s.distance_mm)
            .collect();
        assert_eq!(d, vec![2.5, 0.5, 0.0]);
    }

    #[test]
    fn inflated_cube_face_interiors() {
        // A subdivided unit cube against the cube grown by 1 mm on every face:
        // vertices on face interiors sit exactly 1 mm inside the target.
        let inner = subdivided_unit_cube(4);
        let outer = cuboid(Vec3::repeat(-1.0), Vec3::repeat(2.0));
        let d = distance_map(&inner, &outer).unwrap();
        for (v, s) in inner.vertices().iter().zip(&d) {
            let on_face_interior = (0..3).filter(|&a| v[a] == 0.0 || v[a] == 1.0).count() == 1;
            if on_face_interior {
                assert!((s.distance_mm - 1.0).abs() < 1e-12, "{v:?} -> {}", s.distance_mm);
            }
        }
    }

    fn subdivided_unit_cube(n: usize) -> TriangleMesh {
        // Surface grid of the unit cube with n x n quads per face.
        let mut verts = Vec::new();
        let mut index = std::collections::HashMap::new();
        let mut tris = Vec::new();
        let mut vid = |p: [usize; 3], verts: &mut Vec<Vec3>| {
            *index.entry(p).or_insert_with(|| {
                verts.push(Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64) / n as f64);
                verts.len() - 1
            })
        };
        for axis in 0..3 {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            for side in [0, n] {
                for a in 0..n {
                    for b in 0..n {
                        let corner = |da: usize, db: usize| {
                            let mut p = [0; 3];
                            p[axis] = side;
                            p[u] = a + da;
                            p[v] = b + db;
                            p
                        };
                        let q = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)].map(|p| vid(p, &mut verts));
                        tris.push([q[0], q[1], q[2]]);
                        tris.push([q[0], q[2], q[3]]);
                    }
                }
            }
        }
        TriangleMesh::new(verts, tris).unwrap()
    }
}
