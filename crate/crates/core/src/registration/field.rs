//! Voxelwise building blocks: smoothing, gradients, field composition,
//! exponentiation, inversion and image warping.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{FieldValue, Grid, Volume};
use crate::metrics::percentile_nearest_rank;
use crate::{BinaryImage3D, DisplacementField, ScalarImage3D, Vec3};

/// Normalized 1-D Gaussian taps for offsets `-r..=r` voxels.
pub fn gaussian_kernel(sigma: f64, spacing: f64) -> Vec<f64> {
    let radius = (3.0 * sigma / spacing).ceil() as usize;
    let raw: Vec<f64> = (-(radius as i64)..=radius as i64)
        .map(|k| {
            let x = k as f64 * spacing;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / sum).collect()
}

/// Separable Gaussian blur with `sigma` in mm and clamped borders.
/// `sigma == 0` returns the input unchanged.
pub fn gaussian_smooth<T: FieldValue>(vol: &Volume<T>, sigma: f64) -> Volume<T> {
    if sigma <= 0.0 {
        return vol.clone();
    }
    let mut out = vol.clone();
    for axis in 0..3 {
        let kernel = gaussian_kernel(sigma, vol.grid().spacing[axis]);
        if kernel.len() > 1 {
            out = convolve_axis(&out, &kernel, axis);
        }
    }
    out
}

fn convolve_axis<T: FieldValue>(vol: &Volume<T>, kernel: &[f64], axis: usize) -> Volume<T> {
    let g = *vol.grid();
    let n = g.dims[axis] as i64;
    let radius = (kernel.len() / 2) as i64;
    let stride = match axis {
        0 => 1,
        1 => g.dims[0],
        _ => g.dims[0] * g.dims[1],
    } as i64;
    let data = vol.data();
    Volume::from_fn(g, |i, j, k| {
        let pos = [i, j, k][axis] as i64;
        let base = g.index(i, j, k) as i64 - pos * stride;
        let mut acc = T::zero();
        for (t, w) in kernel.iter().enumerate() {
            let q = (pos + t as i64 - radius).clamp(0, n - 1);
            acc = acc + data[(base + q * stride) as usize] * *w;
        }
        acc
    })
}

/// Image gradient in mm⁻¹: central differences inside, one-sided at borders.
pub fn gradient(img: &ScalarImage3D) -> Volume<Vec3> {
    let g = *img.grid();
    Volume::from_fn(g, |i, j, k| {
        let idx = [i, j, k];
        let mut out = Vec3::zeros();
        for a in 0..3 {
            let n = g.dims[a];
            if n < 2 {
                continue;
            }
            let lo = idx[a].saturating_sub(1);
            let hi = (idx[a] + 1).min(n - 1);
            let mut l = idx;
            l[a] = lo;
            let mut h = idx;
            h[a] = hi;
            out[a] = (img.get(h[0], h[1], h[2]) - img.get(l[0], l[1], l[2])) / ((hi - lo) as f64 * g.spacing[a]);
        }
        out
    })
}

/// `result(x) = inner(x) + outer(x + inner(x))`.
pub fn compose_fields(outer: &DisplacementField, inner: &DisplacementField) -> Result<DisplacementField> {
    outer.grid().ensure_same(inner.grid())?;
    let g = *inner.grid();
    Ok(Volume::from_fn(g, |i, j, k| {
        let u = inner.get(i, j, k);
        u + outer.sample_clamped(&(g.position(i, j, k) + u))
    }))
}

/// Largest vector magnitude in a field.
pub fn max_norm(field: &DisplacementField) -> f64 {
    field.data().iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Scaling and squaring: `exp(v)` via `N` self-compositions of `v / 2^N`,
/// with `N` the smallest integer bringing `max|v| / 2^N` under half a voxel.
pub fn exp_field(velocity: &DisplacementField) -> DisplacementField {
    let limit = 0.5 * velocity.grid().min_spacing();
    let mut max = max_norm(velocity);
    let mut n = 0;
    while max > limit {
        max /= 2.0;
        n += 1;
    }
    let scale = 0.5f64.powi(n);
    let mut phi = velocity.map(|v| v * scale);
    for _ in 0..n {
        phi = compose_fields(&phi, &phi).expect("same grid");
    }
    phi
}

/// Pull-back warp `out(x) = img(x + d(x))`, zero outside the image.
pub fn warp_scalar(img: &ScalarImage3D, d: &DisplacementField) -> Result<ScalarImage3D> {
    img.grid().ensure_same(d.grid())?;
    let g = *d.grid();
    Ok(Volume::from_fn(g, |i, j, k| {
        let p = g.position(i, j, k) + d.get(i, j, k);
        img.sample_index_zero(&g.continuous_index(&p))
    }))
}

/// Pull-back warp of a binary image, re-thresholded at 0.5.
pub fn warp_binary(img: &BinaryImage3D, d: &DisplacementField) -> Result<BinaryImage3D> {
    let scalar = img.map(|b| if b { 1.0 } else { 0.0 });
    Ok(warp_scalar(&scalar, d)?.map(|v| v >= 0.5))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionStats {
    pub iterations: usize,
    pub converged: bool,
    /// Largest fixed-point update at the last iteration (mm).
    pub last_update: f64,
    /// `|inv(x) + d(x + inv(x))|` statistics over all voxels (mm).
    pub residual_max: f64,
    pub residual_p95: f64,
    pub residual_mean: f64,
    pub worst_voxel: [usize; 3],
    /// Set when the residual grew for three consecutive iterations.
    pub warning: Option<String>,
}

#[derive(Clone, Debug)]
pub struct InverseField {
    pub field: DisplacementField,
    pub stats: InversionStats,
}

/// Per-voxel inverse consistency residual `|inv(x) + d(x + inv(x))|` (mm).
pub fn inverse_residual(d: &DisplacementField, inv: &DisplacementField) -> Result<Volume<f64>> {
    d.grid().ensure_same(inv.grid())?;
    let g = *d.grid();
    Ok(Volume::from_fn(g, |i, j, k| {
        let w = inv.get(i, j, k);
        (w + d.sample_clamped(&(g.position(i, j, k) + w))).norm()
    }))
}

fn residual_stats(res: &Volume<f64>) -> (f64, f64, f64, [usize; 3]) {
    let data = res.data();
    let (worst, max) = data
        .iter()
        .enumerate()
        .fold((0, 0.0), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    let p95 = percentile_nearest_rank(data, 95.0).unwrap_or(0.0);
    (max, p95, mean, res.grid().coords(worst))
}

/// Fixed-point inversion `inv <- -d(x + inv(x))`, stopping when the largest
/// update drops below `tol` voxels or after `iterations` sweeps.
pub fn invert_field(d: &DisplacementField, iterations: usize, tol: f64) -> InverseField {
    let g: Grid = *d.grid();
    let tol_mm = tol * g.min_spacing();
    let mut inv = Volume::filled(g, Vec3::zeros());
    let mut last_update = 0.0;
    let mut converged = false;
    let mut done = 0;
    let mut prev_max = f64::INFINITY;
    let mut growth = 0;
    let mut warning = None;
    for it in 1..=iterations {
        let next = Volume::from_fn(g, |i, j, k| {
            -d.sample_clamped(&(g.position(i, j, k) + inv.get(i, j, k)))
        });
        last_update = next
            .data()
            .par_iter()
            .zip(inv.data().par_iter())
            .map(|(a, b)| (a - b).norm())
            .reduce(|| 0.0, f64::max);
        inv = next;
        done = it;
        if last_update < tol_mm {
            converged = true;
            break;
        }
        // The next update equals the current residual, so its growth is the
        // divergence signal.
        if last_update > prev_max {
            growth += 1;
        } else {
            growth = 0;
        }
        prev_max = last_update;
        if growth >= 3 {
            let res = inverse_residual(d, &inv).expect("same grid");
            let (_, _, _, worst) = residual_stats(&res);
            let msg = format!("fixed-point inversion diverging; worst residual at voxel {worst:?}");
            log::warn!("{msg}");
            warning = Some(msg);
            break;
        }
    }
    let res = inverse_residual(d, &inv).expect("same grid");
    let (residual_max, residual_p95, residual_mean, worst_voxel) = residual_stats(&res);
    InverseField {
        field: inv,
        stats: InversionStats {
            iterations: done,
            converged,
            last_update,
            residual_max,
            residual_p95,
            residual_mean,
            worst_voxel,
            warning,
        },
    }
}

/// 2x2x2 block mean; partial blocks at odd borders average what exists.
pub fn downsample_mean(img: &ScalarImage3D) -> ScalarImage3D {
    let g = *img.grid();
    let h = g.halved();
    Volume::from_fn(h, |i, j, k| {
        let mut sum = 0.0;
        let mut n = 0;
        for dk in 0..2 {
            for dj in 0..2 {
                for di in 0..2 {
                    let (x, y, z) = (2 * i + di, 2 * j + dj, 2 * k + dk);
                    if x < g.dims[0] && y < g.dims[1] && z < g.dims[2] {
                        sum += img.get(x, y, z);
                        n += 1;
                    }
                }
            }
        }
        sum / n as f64
    })
}

/// Binary pyramid step: 2x2x2 block mean thresholded at 0.5.
pub fn downsample_binary(img: &BinaryImage3D) -> BinaryImage3D {
    downsample_mean(&img.map(|b| if b { 1.0 } else { 0.0 })).map(|v| v >= 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn grid(n: usize, s: f64) -> Grid {
        Grid::new([n; 3], [s; 3], [0.0; 3]).unwrap()
    }

    fn smooth_random_field(g: Grid, amplitude: f64, seed: u64) -> DisplacementField {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<Vec3> = (0..g.len())
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let smooth = gaussian_smooth(&Volume::new(g, noise).unwrap(), 3.0 * g.spacing[0]);
        let m = max_norm(&smooth);
        smooth.map(|v| v * (amplitude / m))
    }

    #[test]
    fn zero_sigma_is_identity() {
        let g = grid(6, 1.0);
        let v = Volume::from_fn(g, |i, j, k| (i * 7 + j * 3 + k) as f64);
        assert_eq!(gaussian_smooth(&v, 0.0), v);
    }

    #[test]
    fn constant_image_unchanged() {
        let v = Volume::filled(grid(9, 0.7), 3.25);
        let s = gaussian_smooth(&v, 1.9);
        assert!(s.data().iter().all(|x| (x - 3.25).abs() < 1e-12));
    }

    #[test]
    fn impulse_centre_is_product_of_centre_weights() {
        let spacing = 0.5;
        let sigma = 2.0 * spacing;
        let g = grid(21, spacing);
        let mut v = Volume::filled(g, 0.0);
        let c = g.index(10, 10, 10);
        v.data_mut()[c] = 1.0;
        // Independent 1-D weight: radius ceil(3σ/h) = 6 taps each side.
        let norm: f64 = (-6i32..=6)
            .map(|k| (-(k as f64 * spacing).powi(2) / (2.0 * sigma * sigma)).exp())
            .sum();
        let w0 = 1.0 / norm;
        let s = gaussian_smooth(&v, sigma);
        assert!((s.data()[c] - w0.powi(3)).abs() < 1e-14);
    }

    #[test]
    fn compose_with_zero_and_constants() {
        let g = grid(10, 1.0);
        let d = smooth_random_field(g, 1.5, 7);
        let zero = Volume::filled(g, Vec3::zeros());
        assert_eq!(compose_fields(&zero, &d).unwrap(), d);
        assert_eq!(compose_fields(&d, &zero).unwrap(), d);
        let a = Volume::filled(g, Vec3::new(0.5, -0.25, 1.0));
        let b = Volume::filled(g, Vec3::new(1.0, 0.75, -0.5));
        let c = compose_fields(&a, &b).unwrap();
        assert!((c.get(5, 5, 5) - Vec3::new(1.5, 0.5, 0.5)).norm() < 1e-12);
    }

    #[test]
    fn exp_of_zero_and_constant() {
        let g = grid(16, 1.0);
        let zero = Volume::filled(g, Vec3::zeros());
        assert_eq!(exp_field(&zero), zero);
        let c = Vec3::new(2.3, -1.1, 0.4);
        let e = exp_field(&Volume::filled(g, c));
        assert!((e.get(8, 8, 8) - c).norm() <= 1e-6 * c.norm());
    }

    #[test]
    fn exp_of_negated_velocity_is_inverse() {
        let g = grid(24, 1.0);
        let v = smooth_random_field(g, 2.0, 11);
        let fwd = exp_field(&v);
        let back = exp_field(&v.map(|x| -x));
        let round = compose_fields(&back, &fwd).unwrap();
        for k in 4..20 {
            for j in 4..20 {
                for i in 4..20 {
                    assert!(round.get(i, j, k).norm() < 0.05, "residual at {:?}", (i, j, k));
                }
            }
        }
    }

    #[test]
    fn warp_pulls_back() {
        // 1-D profile check: constant +1 voxel field shifts content by -1.
        let g = Grid::new([10, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let img = Volume::from_fn(g, |i, _, _| (4..7).contains(&i));
        let d = Volume::filled(g, Vec3::new(1.0, 0.0, 0.0));
        let w = warp_binary(&img, &d).unwrap();
        let on: Vec<usize> = (0..10).filter(|&i| w.get(i, 0, 0)).collect();
        assert_eq!(on, vec![3, 4, 5]);
        assert_eq!(warp_binary(&img, &Volume::filled(g, Vec3::zeros())).unwrap(), img);
    }

    #[test]
    fn invert_zero_and_constant() {
        let g = grid(12, 1.0);
        let inv = invert_field(&Volume::filled(g, Vec3::zeros()), 20, 0.01);
        assert!(inv.field.data().iter().all(|v| *v == Vec3::zeros()));
        assert!(inv.stats.converged);
        let c = Vec3::new(0.7, -0.3, 0.2);
        let inv = invert_field(&Volume::filled(g, c), 20, 0.01);
        assert!(inv.field.data().iter().all(|v| (v + c).norm() < 1e-12));
    }

    #[test]
    fn residual_metadata_recomputable() {
        let g = grid(16, 1.0);
        let d = smooth_random_field(g, 1.5, 5);
        let inv = invert_field(&d, 30, 1e-3);
        let res = inverse_residual(&d, &inv.field).unwrap();
        let max = res.data().iter().copied().fold(0.0, f64::max);
        assert_eq!(max, inv.stats.residual_max);
        assert_eq!(
            percentile_nearest_rank(res.data(), 95.0).unwrap(),
            inv.stats.residual_p95
        );
        assert!(inv.stats.residual_p95 < 0.1);
    }

    #[test]
    fn downsample_odd_dims() {
        let g = Grid::new([3, 2, 1], [1.0; 3], [0.0; 3]).unwrap();
        let v = Volume::new(g, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let d = downsample_mean(&v);
        assert_eq!(d.grid().dims, [2, 1, 1]);
        assert_eq!(d.data(), &[3.0, 4.5]);
        let b = downsample_binary(&v.map(|x| x > 2.5));
        assert_eq!(b.data(), &[true, true]);
    }
}
