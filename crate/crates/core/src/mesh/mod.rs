//! Surface and volume mesh types, their file formats, and rigid motions.

mod femesh;
mod rigid;
pub mod shapes;
mod stl;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

pub use femesh::{read_femesh, write_femesh, FEMESH_COORD_DIGITS};
pub use rigid::{apply_rigid, fit_rigid, RigidTransform};
pub use stl::{read_stl, write_stl, StlFormat};

/// Axis-aligned bounding box in mm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut bb = Aabb { min: first, max: first };
        for p in it {
            bb.min = bb.min.inf(p);
            bb.max = bb.max.sup(p);
        }
        Some(bb)
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }
}

/// Closed (or open) triangulated surface.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if !triangles.is_empty() && vertices.len() < 3 {
            return Err(Error::InvalidMesh(format!(
                "{} vertices cannot support a triangle",
                vertices.len()
            )));
        }
        for (i, t) in triangles.iter().enumerate() {
            if let Some(&bad) = t.iter().find(|&&v| v >= vertices.len()) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {i} references vertex {bad}, mesh has {}",
                    vertices.len()
                )));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::InvalidMesh(format!("triangle {i} repeats a vertex: {t:?}")));
            }
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }
        Ok(TriangleMesh { vertices, triangles })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[i];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(&self.vertices)
    }

    /// Number of undirected edges not shared by exactly two triangles.
    pub fn boundary_edge_count(&self) -> usize {
        let mut counts: BTreeMap<(usize, usize), u32> = BTreeMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        counts.values().filter(|&&c| c != 2).count()
    }

    /// Signed enclosed volume (positive for outward-facing winding).
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let (a, b, c) = (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Hex8,
    Tet4,
    Tri3,
    Quad4,
}

impl ElementKind {
    pub fn arity(self) -> usize {
        match self {
            ElementKind::Hex8 => 8,
            ElementKind::Tet4 => 4,
            ElementKind::Tri3 => 3,
            ElementKind::Quad4 => 4,
        }
    }

    pub fn is_solid(self) -> bool {
        matches!(self, ElementKind::Hex8 | ElementKind::Tet4)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::Hex8 => "hex8",
            ElementKind::Tet4 => "tet4",
            ElementKind::Tri3 => "tri3",
            ElementKind::Quad4 => "quad4",
        }
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ElementKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hex8" => Ok(ElementKind::Hex8),
            "tet4" => Ok(ElementKind::Tet4),
            "tri3" => Ok(ElementKind::Tri3),
            "quad4" => Ok(ElementKind::Quad4),
            other => Err(format!("unknown element kind '{other}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    pub id: u64,
    pub kind: ElementKind,
    pub part: String,
    pub nodes: Vec<u64>,
}

/// Volumetric finite-element mesh keyed by node id.
#[derive(Clone, Debug, PartialEq)]
pub struct FEMesh {
    nodes: BTreeMap<u64, Vec3>,
    elements: Vec<Element>,
}

impl FEMesh {
    pub fn new(nodes: BTreeMap<u64, Vec3>, elements: Vec<Element>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(elements.len());
        for e in &elements {
            if !seen.insert(e.id) {
                return Err(Error::InvalidMesh(format!("duplicate element id {}", e.id)));
            }
            if e.nodes.len() != e.kind.arity() {
                return Err(Error::InvalidMesh(format!(
                    "element {} of kind {} has {} nodes, expected {}",
                    e.id,
                    e.kind,
                    e.nodes.len(),
                    e.kind.arity()
                )));
            }
            if e.part.is_empty() || e.part.chars().any(char::is_whitespace) {
                return Err(Error::InvalidMesh(format!(
                    "element {} has an empty or whitespace-containing part label",
                    e.id
                )));
            }
            if let Some(&node) = e.nodes.iter().find(|n| !nodes.contains_key(n)) {
                return Err(Error::DanglingNode { element: e.id, node });
            }
        }
        if let Some((id, _)) = nodes.iter().find(|(_, p)| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("node {id} is not finite")));
        }
        Ok(FEMesh { nodes, elements })
    }

    pub fn nodes(&self) -> &BTreeMap<u64, Vec3> {
        &self.nodes
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn node(&self, id: u64) -> Option<Vec3> {
        self.nodes.get(&id).copied()
    }

    /// Corner coordinates of an element, in connectivity order.
    pub fn element_points(&self, e: &Element) -> Vec<Vec3> {
        e.nodes.iter().map(|n| self.nodes[n]).collect()
    }

    /// True when both meshes share node ids, element ids, kinds, parts and connectivity.
    pub fn same_topology(&self, other: &FEMesh) -> bool {
        self.elements == other.elements && self.nodes.keys().eq(other.nodes.keys())
    }
}

/// Anything whose geometry is a set of points that can be moved without
/// touching connectivity.
pub trait PointCloud: Sized {
    fn points(&self) -> Vec<Vec3>;

    /// Rebuild with each point replaced by `f(index, point)`, indices in
    /// `points()` order.
    fn map_points(&self, f: impl Fn(usize, &Vec3) -> Vec3) -> Self;
}

impl PointCloud for TriangleMesh {
    fn points(&self) -> Vec<Vec3> {
        self.vertices.clone()
    }

    fn map_points(&self, f: impl Fn(usize, &Vec3) -> Vec3) -> Self {
        TriangleMesh {
            vertices: self.vertices.iter().enumerate().map(|(i, p)| f(i, p)).collect(),
            triangles: self.triangles.clone(),
        }
    }
}

impl PointCloud for FEMesh {
    fn points(&self) -> Vec<Vec3> {
        self.nodes.values().copied().collect()
    }

    fn map_points(&self, f: impl Fn(usize, &Vec3) -> Vec3) -> Self {
        FEMesh {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(i, (&id, p))| (id, f(i, p)))
                .collect(),
            elements: self.elements.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_index() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(TriangleMesh::new(v, vec![[0, 1, 3]]).is_err());
    }

    #[test]
    fn rejects_repeated_vertex() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(TriangleMesh::new(v, vec![[0, 1, 1]]).is_err());
    }

    #[test]
    fn rejects_wrong_arity() {
        let nodes = (1..=4).map(|i| (i, Vec3::repeat(i as f64))).collect();
        let e = Element {
            id: 1,
            kind: ElementKind::Hex8,
            part: "p".into(),
            nodes: vec![1, 2, 3, 4],
        };
        assert!(matches!(FEMesh::new(nodes, vec![e]), Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn dangling_node_names_element() {
        let nodes = (1..=3).map(|i| (i, Vec3::repeat(i as f64))).collect();
        let e = Element {
            id: 7,
            kind: ElementKind::Tri3,
            part: "p".into(),
            nodes: vec![1, 2, 99],
        };
        match FEMesh::new(nodes, vec![e]) {
            Err(Error::DanglingNode { element, node }) => {
                assert_eq!((element, node), (7, 99));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
