//! Regular voxel grids and the dense volumes stored on them.
//!
//! Voxel `(i, j, k)` has its centre at `origin + (i, j, k) * spacing` (mm).
//! Data is stored x-fastest: `index = i + nx * (j + ny * k)`.

use std::fmt;
use std::ops::{Add, Mul};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Aabb;
use crate::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [nx, ny, nz] = self.dims;
        let [sx, sy, sz] = self.spacing;
        let [ox, oy, oz] = self.origin;
        write!(f, "[{nx}x{ny}x{nz} @ ({sx}, {sy}, {sz}) mm, origin ({ox}, {oy}, {oz})]")
    }
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidParameter(format!("grid dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "grid spacing must be > 0, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidParameter("grid origin is not finite".into()));
        }
        Ok(Grid { dims, spacing, origin })
    }

    /// Grid whose physical extent (voxel faces, not centres) covers `bounds`
    /// grown by `padding` voxels on every side.
    pub fn covering(bounds: &Aabb, spacing: [f64; 3], padding: usize) -> Result<Self> {
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter(format!("spacing must be > 0, got {spacing:?}")));
        }
        let mut dims = [0; 3];
        let mut origin = [0.0; 3];
        for a in 0..3 {
            let cells = (bounds.extent()[a] / spacing[a]).ceil().max(1.0) as usize;
            dims[a] = cells + 2 * padding;
            origin[a] = bounds.min[a] - padding as f64 * spacing[a] + 0.5 * spacing[a];
        }
        Grid::new(dims, spacing, origin)
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        Vec3::new(
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        )
    }

    /// Continuous voxel index of a physical point.
    #[inline]
    pub fn continuous_index(&self, p: &Vec3) -> Vec3 {
        Vec3::new(
            (p.x - self.origin[0]) / self.spacing[0],
            (p.y - self.origin[1]) / self.spacing[1],
            (p.z - self.origin[2]) / self.spacing[2],
        )
    }

    pub fn spacing_vec(&self) -> Vec3 {
        Vec3::from(self.spacing)
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// True when the point lies within the span of voxel centres.
    pub fn contains(&self, p: &Vec3) -> bool {
        let c = self.continuous_index(p);
        (0..3).all(|a| c[a] >= 0.0 && c[a] <= (self.dims[a] - 1) as f64)
    }

    /// Grid of 2x2x2 block means: half the resolution, same physical span.
    pub fn halved(&self) -> Grid {
        let mut g = *self;
        for a in 0..3 {
            g.dims[a] = self.dims[a].div_ceil(2);
            g.spacing[a] = 2.0 * self.spacing[a];
            g.origin[a] = self.origin[a] + 0.5 * self.spacing[a];
        }
        g
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: Box::new(*self),
                right: Box::new(*other),
            })
        }
    }
}

/// Voxel payload that can be blended linearly.
pub trait FieldValue: Copy + Send + Sync + Add<Output = Self> + Mul<f64, Output = Self> {
    fn zero() -> Self;
}

impl FieldValue for f64 {
    fn zero() -> Self {
        0.0
    }
}

impl FieldValue for Vec3 {
    fn zero() -> Self {
        Vec3::zeros()
    }
}

/// Dense per-voxel data on a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    grid: Grid,
    data: Vec<T>,
}

impl<T: Copy + Send + Sync> Volume<T> {
    pub fn new(grid: Grid, data: Vec<T>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "volume data has {} values, grid {grid} needs {}",
                data.len(),
                grid.len()
            )));
        }
        Ok(Volume { grid, data })
    }

    pub fn filled(grid: Grid, value: T) -> Self {
        Volume {
            grid,
            data: vec![value; grid.len()],
        }
    }

    /// Build voxel-by-voxel; evaluation order is irrelevant to the result.
    pub fn from_fn(grid: Grid, f: impl Fn(usize, usize, usize) -> T + Sync) -> Self {
        let [nx, ny, _] = grid.dims;
        let mut data = Vec::with_capacity(grid.len());
        (0..grid.len())
            .into_par_iter()
            .with_min_len(nx * ny)
            .map(|idx| {
                let [i, j, k] = grid.coords(idx);
                f(i, j, k)
            })
            .collect_into_vec(&mut data);
        Volume { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.grid.index(i, j, k)]
    }

    pub fn map<U: Copy + Send + Sync>(&self, f: impl Fn(T) -> U + Sync) -> Volume<U> {
        Volume {
            grid: self.grid,
            data: self.data.par_iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map<U: Copy + Send + Sync, V: Copy + Send + Sync>(
        &self,
        other: &Volume<U>,
        f: impl Fn(T, U) -> V + Sync,
    ) -> Result<Volume<V>> {
        self.grid.ensure_same(&other.grid)?;
        Ok(Volume {
            grid: self.grid,
            data: self
                .data
                .par_iter()
                .zip(other.data.par_iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

/// Corner indices and weights for trilinear interpolation along one axis,
/// with the position clamped into `[0, n-1]`.
#[inline]
fn clamped_axis(c: f64, n: usize) -> (usize, usize, f64) {
    let max = (n - 1) as f64;
    let c = if c.is_nan() { 0.0 } else { c.clamp(0.0, max) };
    let i0 = (c.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, c - i0 as f64)
}

impl<T: FieldValue> Volume<T> {
    /// Trilinear sample at a continuous voxel index; positions outside the
    /// grid are clamped onto its border.
    #[inline]
    pub fn sample_index_clamped(&self, c: &Vec3) -> T {
        let [nx, ny, nz] = self.grid.dims;
        let (x0, x1, fx) = clamped_axis(c.x, nx);
        let (y0, y1, fy) = clamped_axis(c.y, ny);
        let (z0, z1, fz) = clamped_axis(c.z, nz);
        let g = &self.grid;
        let d = &self.data;
        let lerp = |a: T, b: T, t: f64| a * (1.0 - t) + b * t;
        let c00 = lerp(d[g.index(x0, y0, z0)], d[g.index(x1, y0, z0)], fx);
        let c10 = lerp(d[g.index(x0, y1, z0)], d[g.index(x1, y1, z0)], fx);
        let c01 = lerp(d[g.index(x0, y0, z1)], d[g.index(x1, y0, z1)], fx);
        let c11 = lerp(d[g.index(x0, y1, z1)], d[g.index(x1, y1, z1)], fx);
        lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
    }

    /// Trilinear sample at a physical point, clamped to the grid.
    #[inline]
    pub fn sample_clamped(&self, p: &Vec3) -> T {
        self.sample_index_clamped(&self.grid.continuous_index(p))
    }

    /// Trilinear sample where every corner outside the grid reads as zero.
    pub fn sample_index_zero(&self, c: &Vec3) -> T {
        let [nx, ny, nz] = self.grid.dims;
        if !(c.x > -1.0 && c.y > -1.0 && c.z > -1.0 && c.x < nx as f64 && c.y < ny as f64 && c.z < nz as f64) {
            return T::zero();
        }
        let base = [c.x.floor(), c.y.floor(), c.z.floor()];
        let frac = [c.x - base[0], c.y - base[1], c.z - base[2]];
        let mut acc = T::zero();
        for corner in 0..8 {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            let mut inside = true;
            for a in 0..3 {
                let bit = (corner >> a) & 1;
                let pos = base[a] as i64 + bit as i64;
                if pos < 0 || pos >= self.grid.dims[a] as i64 {
                    inside = false;
                    break;
                }
                idx[a] = pos as usize;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if inside && w != 0.0 {
                acc = acc + self.data[self.grid.index(idx[0], idx[1], idx[2])] * w;
            }
        }
        acc
    }

    /// Resample onto another grid by clamped trilinear interpolation.
    pub fn resample(&self, target: &Grid) -> Volume<T> {
        Volume::from_fn(*target, |i, j, k| self.sample_clamped(&target.position(i, j, k)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Grid {
        Grid::new([n, n + 1, n + 2], [0.5, 1.0, 2.0], [-1.0, 2.0, 3.0]).unwrap()
    }

    #[test]
    fn index_round_trip() {
        let g = grid(4);
        for idx in 0..g.len() {
            let [i, j, k] = g.coords(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new([0, 1, 1], [1.0; 3], [0.0; 3]).is_err());
        assert!(Grid::new([1, 1, 1], [1.0, 0.0, 1.0], [0.0; 3]).is_err());
    }

    #[test]
    fn covering_grid_has_centres_off_the_bounds() {
        let bb = Aabb {
            min: Vec3::zeros(),
            max: Vec3::repeat(1.0),
        };
        let g = Grid::covering(&bb, [0.25; 3], 1).unwrap();
        assert_eq!(g.dims, [6, 6, 6]);
        assert_eq!(g.origin, [-0.125; 3]);
    }

    #[test]
    fn linear_function_reproduced() {
        let g = grid(5);
        let f = |p: Vec3| 0.3 * p.x - 1.2 * p.y + 2.0 * p.z + 0.7;
        let v = Volume::from_fn(g, |i, j, k| f(g.position(i, j, k)));
        let p = Vec3::new(0.3, 3.7, 6.1);
        assert!((v.sample_clamped(&p) - f(p)).abs() < 1e-12);
        assert!((v.sample_index_zero(&g.continuous_index(&p)) - f(p)).abs() < 1e-12);
    }

    #[test]
    fn zero_padding_outside() {
        let g = Grid::new([3, 3, 3], [1.0; 3], [0.0; 3]).unwrap();
        let v = Volume::filled(g, 1.0);
        assert_eq!(v.sample_index_zero(&Vec3::new(-0.5, 1.0, 1.0)), 0.5);
        assert_eq!(v.sample_index_zero(&Vec3::new(5.0, 1.0, 1.0)), 0.0);
        assert_eq!(v.sample_index_clamped(&Vec3::new(-5.0, 1.0, 1.0)), 1.0);
    }

    #[test]
    fn halved_grid_keeps_span_centre() {
        let g = Grid::new([4, 5, 1], [1.0; 3], [0.0; 3]).unwrap();
        let h = g.halved();
        assert_eq!(h.dims, [2, 3, 1]);
        assert_eq!(h.origin, [0.5; 3]);
        assert_eq!(h.spacing, [2.0; 3]);
    }
}
