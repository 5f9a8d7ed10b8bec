//! Morphing accuracy: overlap, boundary distance, surface distance and
//! element quality.

mod distance;
mod jacobian;
mod overlap;

pub use distance::{distance_map, write_distance_csv, DistanceSample};
pub use jacobian::{hex8_corner_jacobians, scaled_jacobian, tet4_jacobian, JacobianReport};
pub use overlap::{accuracy_report, boundary_points, dice, hd95, AccuracyReport, HausdorffReport};

/// Nearest-rank percentile: the `ceil(p/100 * n)`-th smallest value.
///
/// The rank is computed as `ceil(p * n / 100)` so that integer `p` and `n`
/// give an exact rank.
pub fn percentile_nearest_rank(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (p * sorted.len() as f64 / 100.0).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}
