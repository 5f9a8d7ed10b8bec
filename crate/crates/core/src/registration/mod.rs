//! Diffeomorphic demons registration of binary images.
//!
//! Convention: the displacement field `D` lives on the fixed grid and
//! `x + D(x)` lands in moving-image space, so `moving(x + D(x)) ≈ fixed(x)`.

mod field;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Volume;
use crate::{BinaryImage3D, DisplacementField, ScalarImage3D, Vec3};

pub use field::{
    compose_fields, downsample_binary, downsample_mean, exp_field, gaussian_kernel, gaussian_smooth, gradient,
    inverse_residual, invert_field, max_norm, warp_binary, warp_scalar, InverseField, InversionStats,
};

/// Window (iterations) over which relative MSE improvement is measured.
const CONVERGENCE_WINDOW: usize = 5;
const DENOMINATOR_GUARD: f64 = 1e-12;

/// Demons settings. Sigmas are in mm at full resolution and keep their size
/// in voxels on coarser pyramid levels; `max_step` is in voxels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemonsParams {
    pub pyramid_levels: usize,
    /// Iteration caps, coarsest level first.
    pub iterations_per_level: Vec<usize>,
    pub sigma_fluid: f64,
    pub sigma_diffusion: f64,
    pub sigma_presmooth: f64,
    pub max_step: f64,
    pub convergence_tol: f64,
    pub alpha: f64,
}

impl DemonsParams {
    /// Conventional settings scaled to an isotropic voxel size (mm).
    pub fn for_spacing(spacing: f64) -> Self {
        DemonsParams {
            pyramid_levels: 3,
            iterations_per_level: vec![100, 50, 25],
            sigma_fluid: 1.0 * spacing,
            sigma_diffusion: 1.5 * spacing,
            sigma_presmooth: 1.5 * spacing,
            max_step: 1.25,
            convergence_tol: 1e-4,
            alpha: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.pyramid_levels < 1 {
            return bad("pyramid_levels must be >= 1".into());
        }
        if self.iterations_per_level.len() != self.pyramid_levels {
            return bad(format!(
                "iterations_per_level has {} entries for {} levels",
                self.iterations_per_level.len(),
                self.pyramid_levels
            ));
        }
        for (name, s) in [
            ("sigma_fluid", self.sigma_fluid),
            ("sigma_diffusion", self.sigma_diffusion),
            ("sigma_presmooth", self.sigma_presmooth),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("{name} must be >= 0, got {s}"));
            }
        }
        if !(self.max_step > 0.0 && self.max_step.is_finite()) {
            return bad(format!("max_step must be > 0, got {}", self.max_step));
        }
        if self.convergence_tol.is_nan() || self.convergence_tol < 0.0 || !(self.alpha >= 0.0 && self.alpha.is_finite())
        {
            return bad("convergence_tol and alpha must be >= 0".into());
        }
        Ok(())
    }
}

impl Default for DemonsParams {
    fn default() -> Self {
        DemonsParams::for_spacing(1.0)
    }
}

/// One demons force evaluation.
///
/// `u = (f - m) ∇f / (|∇f|² + α² (f - m)² / h²)` where `h²` is the mean
/// squared voxel size, so that `α = 1` caps the raw step at half a voxel.
/// Zero where the denominator vanishes; each vector is clamped to
/// `max_step` voxels.
pub fn demons_step(
    fixed: &ScalarImage3D,
    warped_moving: &ScalarImage3D,
    alpha: f64,
    max_step: f64,
) -> Result<DisplacementField> {
    fixed.grid().ensure_same(warped_moving.grid())?;
    let grad = gradient(fixed);
    Ok(demons_force(fixed, warped_moving, &grad, alpha, max_step))
}

fn demons_force(
    fixed: &ScalarImage3D,
    warped: &ScalarImage3D,
    grad: &Volume<Vec3>,
    alpha: f64,
    max_step: f64,
) -> DisplacementField {
    let g = *fixed.grid();
    let mean_sq_spacing = g.spacing.iter().map(|s| s * s).sum::<f64>() / 3.0;
    let norm = alpha * alpha / mean_sq_spacing;
    let cap = max_step * g.min_spacing();
    Volume::from_fn(g, |i, j, k| {
        let idx = g.index(i, j, k);
        let diff = fixed.data()[idx] - warped.data()[idx];
        let gf = grad.data()[idx];
        let denom = gf.norm_squared() + norm * diff * diff;
        if denom < DENOMINATOR_GUARD {
            return Vec3::zeros();
        }
        let u = gf * (diff / denom);
        let len = u.norm();
        if len > cap {
            u * (cap / len)
        } else {
            u
        }
    })
}

/// Mean squared difference, summed sequentially in storage order.
pub fn mse(a: &ScalarImage3D, b: &ScalarImage3D) -> f64 {
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    sum / a.data().len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub iterations: usize,
    pub converged: bool,
    pub initial_mse: f64,
    pub final_mse: f64,
    /// True when the field from the coarser level was dropped because the
    /// zero field matched better at this resolution.
    pub reset_to_identity: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub params: DemonsParams,
    /// MSE of the pre-smoothed images under the zero field.
    pub initial_mse: f64,
    pub final_mse: f64,
    /// Levels in run order, coarsest first.
    pub levels: Vec<LevelReport>,
}

fn to_scalar(img: &BinaryImage3D) -> ScalarImage3D {
    img.map(|b| if b { 1.0 } else { 0.0 })
}

struct LevelRun {
    field: DisplacementField,
    report: LevelReport,
}

fn run_level(
    fixed: &ScalarImage3D,
    moving: &ScalarImage3D,
    start: DisplacementField,
    iterations: usize,
    level: usize,
    scale: f64,
    params: &DemonsParams,
) -> Result<LevelRun> {
    let grad = gradient(fixed);
    let zero = Volume::filled(*fixed.grid(), Vec3::zeros());
    let identity_mse = mse(fixed, &warp_scalar(moving, &zero)?);
    let mut field = start;
    let mut warped = warp_scalar(moving, &field)?;
    let mut current = mse(fixed, &warped);
    let reset = current > identity_mse;
    if reset {
        field = zero;
        warped = warp_scalar(moving, &field)?;
        current = identity_mse;
    }
    let initial_mse = current;
    let mut best = (current, field.clone());
    let mut history = vec![current];
    let mut converged = false;
    let mut done = 0;
    for _ in 0..iterations {
        let force = demons_force(fixed, &warped, &grad, params.alpha, params.max_step);
        let velocity = gaussian_smooth(&force, params.sigma_fluid * scale);
        let update = exp_field(&velocity);
        field = compose_fields(&field, &update)?;
        field = gaussian_smooth(&field, params.sigma_diffusion * scale);
        warped = warp_scalar(moving, &field)?;
        current = mse(fixed, &warped);
        history.push(current);
        done += 1;
        if current < best.0 {
            best = (current, field.clone());
        }
        if history.len() > CONVERGENCE_WINDOW {
            let before = history[history.len() - 1 - CONVERGENCE_WINDOW];
            let gain = if before > 0.0 { (before - current) / before } else { 0.0 };
            if gain < params.convergence_tol {
                converged = true;
                break;
            }
        }
    }
    let g = fixed.grid();
    Ok(LevelRun {
        field: best.1,
        report: LevelReport {
            level,
            dims: g.dims,
            spacing: g.spacing,
            iterations: done,
            converged,
            initial_mse,
            final_mse: best.0,
            reset_to_identity: reset,
        },
    })
}

/// Multi-resolution diffeomorphic demons. Returns a field on the fixed grid.
///
/// Both images are converted to 0/1 intensities and pre-smoothed, the moving
/// image is resampled onto the fixed grid if the grids differ, and a
/// factor-2 mean pyramid is built. Each level keeps the lowest-MSE field it
/// visits, so registration energy never increases from level start to end.
pub fn register_demons(
    fixed: &BinaryImage3D,
    moving: &BinaryImage3D,
    params: &DemonsParams,
) -> Result<(DisplacementField, RegistrationReport)> {
    params.validate()?;
    if fixed.grid().spacing != moving.grid().spacing {
        return Err(Error::GridMismatch {
            left: Box::new(*fixed.grid()),
            right: Box::new(*moving.grid()),
        });
    }
    if fixed.count() == 0 || moving.count() == 0 {
        return Err(Error::InvalidParameter(
            "registration needs two non-empty images".into(),
        ));
    }
    let fgrid = *fixed.grid();
    let mut moving_s = to_scalar(moving);
    if moving.grid() != fixed.grid() {
        moving_s = Volume::from_fn(fgrid, |i, j, k| {
            moving_s.sample_index_zero(&moving_s.grid().continuous_index(&fgrid.position(i, j, k)))
        });
    }
    let mut fixed_pyr = vec![gaussian_smooth(&to_scalar(fixed), params.sigma_presmooth)];
    let mut moving_pyr = vec![gaussian_smooth(&moving_s, params.sigma_presmooth)];
    for _ in 1..params.pyramid_levels {
        fixed_pyr.push(downsample_mean(fixed_pyr.last().unwrap()));
        moving_pyr.push(downsample_mean(moving_pyr.last().unwrap()));
    }

    let zero_full = Volume::filled(fgrid, Vec3::zeros());
    let initial_mse = mse(&fixed_pyr[0], &warp_scalar(&moving_pyr[0], &zero_full)?);

    let mut field: Option<DisplacementField> = None;
    let mut levels = Vec::with_capacity(params.pyramid_levels);
    for (run, level) in (0..params.pyramid_levels).rev().enumerate() {
        let f = &fixed_pyr[level];
        let m = &moving_pyr[level];
        let start = match field.take() {
            None => Volume::filled(*f.grid(), Vec3::zeros()),
            Some(coarse) => coarse.resample(f.grid()),
        };
        let scale = (1usize << level) as f64;
        let out = run_level(f, m, start, params.iterations_per_level[run], level, scale, params)?;
        log::debug!(
            "level {level}: {} iterations, mse {:.6e} -> {:.6e}",
            out.report.iterations,
            out.report.initial_mse,
            out.report.final_mse
        );
        levels.push(out.report);
        field = Some(out.field);
    }
    let field = field.expect("at least one level");
    let final_mse = levels.last().map(|l| l.final_mse).unwrap_or(initial_mse);
    Ok((
        field,
        RegistrationReport {
            params: params.clone(),
            initial_mse,
            final_mse,
            levels,
        },
    ))
}
