//! Closed primitive surfaces and structured hex blocks, for fixtures,
//! benchmarks and synthetic pipeline runs.

use std::collections::{BTreeMap, HashMap};

use super::{Element, ElementKind, FEMesh, TriangleMesh};
use crate::Vec3;

/// Axis-aligned box with outward-facing triangles.
pub fn cuboid(min: Vec3, max: Vec3) -> TriangleMesh {
    let corner = |i: usize| {
        Vec3::new(
            if i & 1 == 0 { min.x } else { max.x },
            if i & 2 == 0 { min.y } else { max.y },
            if i & 4 == 0 { min.z } else { max.z },
        )
    };
    let quads = [
        [0, 2, 3, 1],
        [4, 5, 7, 6],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 4, 6, 2],
        [1, 3, 7, 5],
    ];
    let tris = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    TriangleMesh::new((0..8).map(corner).collect(), tris).expect("valid cuboid")
}

/// Geodesic sphere: an icosahedron subdivided `level` times, vertices
/// projected onto the sphere. `20 * 4^level` triangles.
pub fn icosphere(center: Vec3, radius: f64, level: u32) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vec3>| {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let verts = verts.into_iter().map(|v| center + v * radius).collect();
    TriangleMesh::new(verts, faces).expect("valid icosphere")
}

/// Icosphere scaled per axis.
pub fn ellipsoid(center: Vec3, radii: Vec3, level: u32) -> TriangleMesh {
    let unit = icosphere(Vec3::zeros(), 1.0, level);
    let verts = unit
        .vertices()
        .iter()
        .map(|v| center + v.component_mul(&radii))
        .collect();
    TriangleMesh::new(verts, unit.triangles().to_vec()).expect("valid ellipsoid")
}

/// Structured block of `n[0] x n[1] x n[2]` hex8 elements spanning
/// `[min, max]`, node and element ids starting at 1, all in one part.
pub fn hex_block(min: Vec3, max: Vec3, n: [usize; 3], part: &str) -> FEMesh {
    let node_id = |i: usize, j: usize, k: usize| (1 + i + (n[0] + 1) * (j + (n[1] + 1) * k)) as u64;
    let mut nodes = BTreeMap::new();
    for k in 0..=n[2] {
        for j in 0..=n[1] {
            for i in 0..=n[0] {
                let f = Vec3::new(i as f64 / n[0] as f64, j as f64 / n[1] as f64, k as f64 / n[2] as f64);
                nodes.insert(node_id(i, j, k), min + (max - min).component_mul(&f));
            }
        }
    }
    let mut elements = Vec::new();
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                elements.push(Element {
                    id: elements.len() as u64 + 1,
                    kind: ElementKind::Hex8,
                    part: part.to_string(),
                    nodes: vec![
                        node_id(i, j, k),
                        node_id(i + 1, j, k),
                        node_id(i + 1, j + 1, k),
                        node_id(i, j + 1, k),
                        node_id(i, j, k + 1),
                        node_id(i + 1, j, k + 1),
                        node_id(i + 1, j + 1, k + 1),
                        node_id(i, j + 1, k + 1),
                    ],
                });
            }
        }
    }
    FEMesh::new(nodes, elements).expect("valid hex block")
}
