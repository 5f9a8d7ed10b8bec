//! Solid voxelization of closed surfaces by axis-parallel ray parity.
//!
//! Three families of rays, one per axis, pass through the voxel centres.
//! Each ray records where it crosses the surface; a voxel centre is inside
//! along that axis when an odd number of crossings lies below it. A voxel is
//! occupied when at least two of the three axes agree.
//!
//! Edge functions are evaluated with a canonical endpoint order so that two
//! triangles sharing an edge always disagree in sign: a ray crosses exactly
//! one of them unless it hits the edge exactly. Exact hits on edges or
//! vertices are resolved by nudging the ray by `1e-6 * spacing` in a
//! direction drawn from a seeded generator and casting it again.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Volume};
use crate::mesh::{Aabb, TriangleMesh};
use crate::{BinaryImage3D, Vec3};

const JITTER: f64 = 1e-6;
const MAX_RECASTS: u32 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelizeParams {
    /// Voxel size per axis (mm).
    pub spacing: [f64; 3],
    /// Empty voxels added around the mesh bounds on every side.
    pub padding: usize,
    /// Seed for tie-breaking ray jitter.
    pub seed: u64,
}

impl Default for VoxelizeParams {
    fn default() -> Self {
        VoxelizeParams {
            spacing: [2.0; 3],
            padding: 4,
            seed: 0,
        }
    }
}

impl Volume<bool> {
    /// Number of occupied voxels.
    pub fn count(&self) -> usize {
        self.data().iter().filter(|&&b| b).count()
    }
}

/// Voxelize onto a grid covering the mesh bounds plus padding.
pub fn voxelize(mesh: &TriangleMesh, params: &VoxelizeParams) -> Result<BinaryImage3D> {
    let bounds = check_solid(mesh)?;
    let grid = Grid::covering(&bounds, params.spacing, params.padding)?;
    voxelize_on_grid(mesh, &grid, params.seed)
}

fn check_solid(mesh: &TriangleMesh) -> Result<Aabb> {
    let bounds = mesh.bounds().filter(|_| !mesh.is_empty()).ok_or(Error::EmptyMesh)?;
    let open = mesh.boundary_edge_count();
    if open > 0 {
        return Err(Error::OpenSurface { boundary_edges: open });
    }
    let e = bounds.extent();
    let scale = e.x.max(e.y).max(e.z);
    if e.min() <= 0.0 || mesh.signed_volume().abs() <= 1e-12 * scale.powi(3) {
        return Err(Error::DegenerateVolume);
    }
    Ok(bounds)
}

/// Voxelize a closed mesh onto an existing grid (shared-grid workflows).
pub fn voxelize_on_grid(mesh: &TriangleMesh, grid: &Grid, seed: u64) -> Result<BinaryImage3D> {
    check_solid(mesh)?;
    let mut votes = vec![0u8; grid.len()];
    for axis in 0..3 {
        let caster = AxisCaster::new(mesh, grid, axis, seed);
        let (u, v) = caster.plane;
        let rays: Vec<Vec<usize>> = (0..grid.dims[u] * grid.dims[v])
            .into_par_iter()
            .map(|ray| caster.inside_along_ray(ray % grid.dims[u], ray / grid.dims[u]))
            .collect();
        for (ray, inside) in rays.into_iter().enumerate() {
            let (iu, iv) = (ray % grid.dims[u], ray / grid.dims[u]);
            for ia in inside {
                let mut c = [0usize; 3];
                c[axis] = ia;
                c[u] = iu;
                c[v] = iv;
                votes[grid.index(c[0], c[1], c[2])] += 1;
            }
        }
    }
    Volume::new(*grid, votes.into_iter().map(|n| n >= 2).collect())
}

struct AxisCaster<'a> {
    grid: &'a Grid,
    axis: usize,
    plane: (usize, usize),
    tris: Vec<[Vec3; 3]>,
    /// Triangles whose projected `u` range touches each row of rays.
    rows: Vec<Vec<u32>>,
    seed: u64,
}

enum Cast {
    Crossings(Vec<f64>),
    Tie,
}

/// `orient(p, q, r)` with `(p, q)` put in canonical order, so swapping the
/// edge endpoints flips the sign exactly.
#[inline]
fn edge_fn(p: (f64, f64), q: (f64, f64), r: (f64, f64)) -> f64 {
    let (a, b, sign) = if p <= q { (p, q, 1.0) } else { (q, p, -1.0) };
    sign * ((b.0 - a.0) * (r.1 - a.1) - (b.1 - a.1) * (r.0 - a.0))
}

impl<'a> AxisCaster<'a> {
    fn new(mesh: &TriangleMesh, grid: &'a Grid, axis: usize, seed: u64) -> Self {
        let plane = ((axis + 1) % 3, (axis + 2) % 3);
        let (u, _) = plane;
        let tris: Vec<[Vec3; 3]> = (0..mesh.triangles().len()).map(|i| mesh.triangle(i)).collect();
        let mut rows = vec![Vec::new(); grid.dims[u]];
        // Jitter never exceeds one spacing, so a one-row margin is enough.
        for (t, tri) in tris.iter().enumerate() {
            let lo = tri.iter().map(|p| p[u]).fold(f64::INFINITY, f64::min);
            let hi = tri.iter().map(|p| p[u]).fold(f64::NEG_INFINITY, f64::max);
            let first = ((lo - grid.origin[u]) / grid.spacing[u]).floor() - 1.0;
            let last = ((hi - grid.origin[u]) / grid.spacing[u]).ceil() + 1.0;
            let first = first.max(0.0) as usize;
            let last = last.min((grid.dims[u] - 1) as f64);
            if last < 0.0 || first >= grid.dims[u] {
                continue;
            }
            for row in rows.iter_mut().take(last as usize + 1).skip(first) {
                row.push(t as u32);
            }
        }
        AxisCaster {
            grid,
            axis,
            plane,
            tris,
            rows,
            seed,
        }
    }

    fn cast(&self, row: usize, pu: f64, pv: f64) -> Cast {
        let (u, v) = self.plane;
        let r = (pu, pv);
        let mut hits = Vec::new();
        for &t in &self.rows[row] {
            let [a, b, c] = &self.tris[t as usize];
            let (a2, b2, c2) = ((a[u], a[v]), (b[u], b[v]), (c[u], c[v]));
            if r.1 < a2.1.min(b2.1).min(c2.1) || r.1 > a2.1.max(b2.1).max(c2.1) {
                continue;
            }
            if r.0 < a2.0.min(b2.0).min(c2.0) || r.0 > a2.0.max(b2.0).max(c2.0) {
                continue;
            }
            let area = edge_fn(a2, b2, c2);
            if area == 0.0 {
                // Face parallel to the ray: neighbours carry the crossing.
                continue;
            }
            let (wa, wb, wc) = (edge_fn(b2, c2, r), edge_fn(c2, a2, r), edge_fn(a2, b2, r));
            let w = [wa, wb, wc];
            let has_pos = w.iter().any(|&x| x > 0.0);
            let has_neg = w.iter().any(|&x| x < 0.0);
            if !w.contains(&0.0) {
                if !(has_pos && has_neg) {
                    hits.push((wa * a[self.axis] + wb * b[self.axis] + wc * c[self.axis]) / (wa + wb + wc));
                }
            } else if !(has_pos && has_neg) {
                // On an edge or vertex of the projected triangle.
                return Cast::Tie;
            }
        }
        hits.sort_by(f64::total_cmp);
        Cast::Crossings(hits)
    }

    /// Indices along the ray axis whose centres have odd crossing parity.
    fn inside_along_ray(&self, iu: usize, iv: usize) -> Vec<usize> {
        let (u, v) = self.plane;
        let g = self.grid;
        let pu = g.origin[u] + iu as f64 * g.spacing[u];
        let pv = g.origin[v] + iv as f64 * g.spacing[v];
        let mut crossings = None;
        let mut rng: Option<ChaCha8Rng> = None;
        let (mut ju, mut jv) = (pu, pv);
        for _ in 0..=MAX_RECASTS {
            match self.cast(iu, ju, jv) {
                Cast::Crossings(c) => {
                    crossings = Some(c);
                    break;
                }
                Cast::Tie => {
                    let rng = rng.get_or_insert_with(|| {
                        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
                        r.set_stream(((self.axis * g.dims[u] + iu) * g.dims[v] + iv) as u64);
                        r
                    });
                    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                    ju = pu + JITTER * g.spacing[u] * angle.cos();
                    jv = pv + JITTER * g.spacing[v] * angle.sin();
                }
            }
        }
        let Some(crossings) = crossings else {
            log::warn!(
                "ray ({iu}, {iv}) along axis {} kept grazing the surface; treated as outside",
                self.axis
            );
            return Vec::new();
        };
        let mut inside = Vec::new();
        let mut below = 0;
        for ia in 0..g.dims[self.axis] {
            let centre = g.origin[self.axis] + ia as f64 * g.spacing[self.axis];
            while below < crossings.len() && crossings[below] < centre {
                below += 1;
            }
            if below % 2 == 1 {
                inside.push(ia);
            }
        }
        inside
    }
}

/// Occupied voxels with at least one six-neighbour that is empty or
/// outside the image, in storage order.
pub fn boundary_voxels(img: &BinaryImage3D) -> Vec<[usize; 3]> {
    let g = img.grid();
    let [nx, ny, nz] = g.dims;
    let occupied = |i: usize, j: usize, k: usize| img.get(i, j, k);
    (0..g.len())
        .filter(|&idx| img.data()[idx])
        .map(|idx| g.coords(idx))
        .filter(|&[i, j, k]| {
            i == 0
                || j == 0
                || k == 0
                || i + 1 == nx
                || j + 1 == ny
                || k + 1 == nz
                || !occupied(i - 1, j, k)
                || !occupied(i + 1, j, k)
                || !occupied(i, j - 1, k)
                || !occupied(i, j + 1, k)
                || !occupied(i, j, k - 1)
                || !occupied(i, j, k + 1)
        })
        .collect()
}

/// Voxelwise OR of two images on the same grid.
pub fn image_union(a: &BinaryImage3D, b: &BinaryImage3D) -> Result<BinaryImage3D> {
    a.zip_map(b, |x, y| x || y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;

    /// Winding number via summed signed solid angles (Van Oosterom and Strackee).
    fn winding_number(mesh: &TriangleMesh, p: &Vec3) -> f64 {
        let mut total = 0.0;
        for t in 0..mesh.triangles().len() {
            let [a, b, c] = mesh.triangle(t);
            let (a, b, c) = (a - p, b - p, c - p);
            let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
            let num = a.dot(&b.cross(&c));
            let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
            total += 2.0 * num.atan2(den);
        }
        total / (4.0 * std::f64::consts::PI)
    }

    fn block(grid: Grid, lo: [usize; 3], hi: [usize; 3]) -> BinaryImage3D {
        Volume::from_fn(grid, |i, j, k| {
            (lo[0]..hi[0]).contains(&i) && (lo[1]..hi[1]).contains(&j) && (lo[2]..hi[2]).contains(&k)
        })
    }

    #[test]
    fn unit_cube_matches_solid_angle_oracle() {
        let cube = shapes::cuboid(Vec3::zeros(), Vec3::repeat(1.0));
        let img = voxelize(
            &cube,
            &VoxelizeParams {
                spacing: [0.25; 3],
                padding: 1,
                seed: 0,
            },
        )
        .unwrap();
        let g = *img.grid();
        let mut expected = 0;
        for idx in 0..g.len() {
            let [i, j, k] = g.coords(idx);
            let inside = winding_number(&cube, &g.position(i, j, k)) > 0.5;
            assert_eq!(inside, img.data()[idx], "voxel {:?}", [i, j, k]);
            expected += inside as usize;
        }
        assert_eq!(img.count(), expected);
        assert_eq!(expected, 64);
    }

    #[test]
    fn sphere_matches_solid_angle_oracle_on_coarse_grid() {
        let s = shapes::icosphere(Vec3::new(0.3, -0.2, 0.1), 5.0, 2);
        let img = voxelize(
            &s,
            &VoxelizeParams {
                spacing: [1.0; 3],
                padding: 1,
                seed: 0,
            },
        )
        .unwrap();
        let g = *img.grid();
        for idx in 0..g.len() {
            let [i, j, k] = g.coords(idx);
            let inside = winding_number(&s, &g.position(i, j, k)) > 0.5;
            assert_eq!(inside, img.data()[idx]);
        }
    }

    #[test]
    fn grazing_rays_are_resolved() {
        // Voxel centres sit exactly on cube faces, edges and corners.
        let cube = shapes::cuboid(Vec3::zeros(), Vec3::repeat(2.0));
        let grid = Grid::new([5, 5, 5], [0.5; 3], [0.0; 3]).unwrap();
        let a = voxelize_on_grid(&cube, &grid, 0).unwrap();
        let b = voxelize_on_grid(&cube, &grid, 0).unwrap();
        assert_eq!(a, b);
        // Strict interior (3x3x3 centres) must be inside regardless of jitter.
        for i in 1..4 {
            for j in 1..4 {
                for k in 1..4 {
                    assert!(a.get(i, j, k));
                }
            }
        }
    }

    #[test]
    fn open_triangle_rejected() {
        let m = TriangleMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(
            voxelize(&m, &VoxelizeParams::default()),
            Err(Error::OpenSurface { boundary_edges: 3 })
        ));
    }

    #[test]
    fn flat_closed_surface_is_degenerate() {
        // Two coincident triangles with opposite winding: closed, zero volume.
        let m = TriangleMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2], [0, 2, 1]]).unwrap();
        assert!(matches!(
            voxelize(&m, &VoxelizeParams::default()),
            Err(Error::DegenerateVolume)
        ));
    }

    #[test]
    fn sphere_volume_within_two_percent() {
        let s = shapes::icosphere(Vec3::zeros(), 10.0, 5);
        let img = voxelize(
            &s,
            &VoxelizeParams {
                spacing: [0.5; 3],
                padding: 2,
                seed: 0,
            },
        )
        .unwrap();
        let vol = img.count() as f64 * 0.125;
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 1000.0;
        assert!((vol - exact).abs() / exact < 0.02, "{vol} vs {exact}");
    }

    #[test]
    fn translation_by_whole_voxels_shifts_pattern() {
        let s = shapes::icosphere(Vec3::new(0.1, 0.2, 0.3), 4.0, 3);
        let params = VoxelizeParams {
            spacing: [0.5; 3],
            padding: 2,
            seed: 0,
        };
        let a = voxelize(&s, &params).unwrap();
        let shift = Vec3::new(3.0 * 0.5, -2.0 * 0.5, 5.0 * 0.5);
        let moved = crate::mesh::apply_rigid(&s, &crate::mesh::RigidTransform::translation(shift));
        let b = voxelize(&moved, &params).unwrap();
        assert_eq!(a.grid().dims, b.grid().dims);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn nested_spheres_are_monotone() {
        let grid = Grid::new([30, 30, 30], [0.5; 3], [-7.25; 3]).unwrap();
        let mut last = 0;
        for r in [2.0, 3.0, 4.5, 6.0] {
            let n = voxelize_on_grid(&shapes::icosphere(Vec3::zeros(), r, 3), &grid, 0)
                .unwrap()
                .count();
            assert!(n >= last);
            last = n;
        }
    }

    #[test]
    fn boundary_of_block_and_singletons() {
        let g = Grid::new([9, 9, 9], [1.0; 3], [0.0; 3]).unwrap();
        assert!(boundary_voxels(&Volume::filled(g, false)).is_empty());
        let single = block(g, [4, 4, 4], [5, 5, 5]);
        assert_eq!(boundary_voxels(&single), vec![[4, 4, 4]]);
        let solid = block(g, [2, 2, 2], [7, 7, 7]);
        let b = boundary_voxels(&solid);
        assert_eq!(b.len(), 98);
        assert!(b.iter().all(|&[i, j, k]| solid.get(i, j, k)));
        assert!(!b.contains(&[4, 4, 4]));
    }

    #[test]
    fn union_cases() {
        let g = Grid::new([10, 10, 10], [1.0; 3], [0.0; 3]).unwrap();
        let a = block(g, [0, 0, 0], [2, 2, 2]);
        let b = block(g, [5, 5, 5], [8, 8, 8]);
        assert_eq!(image_union(&a, &Volume::filled(g, false)).unwrap(), a);
        assert_eq!(image_union(&a, &a).unwrap(), a);
        assert_eq!(image_union(&a, &b).unwrap().count(), 35);
        let other = Volume::filled(Grid::new([10, 10, 9], [1.0; 3], [0.0; 3]).unwrap(), false);
        assert!(matches!(image_union(&a, &other), Err(Error::GridMismatch { .. })));
    }
}
