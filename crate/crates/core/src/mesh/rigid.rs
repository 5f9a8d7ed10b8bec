use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::error::{Error, Result};
use crate::Vec3;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Proper rigid motion `p -> R p + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let gram_err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(gram_err <= ORTHONORMAL_TOL && (det - 1.0).abs() <= ORTHONORMAL_TOL) {
            return Err(Error::InvalidParameter(format!(
                "rotation is not proper orthonormal (|RᵀR - I| = {gram_err:e}, det = {det})"
            )));
        }
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidParameter("translation is not finite".into()));
        }
        Ok(RigidTransform { rotation, translation })
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn translation(t: Vec3) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Result<Self> {
        let axis = nalgebra::Unit::try_new(axis, 1e-300)
            .ok_or_else(|| Error::InvalidParameter("rotation axis is zero".into()))?;
        let r = nalgebra::Rotation3::from_axis_angle(&axis, angle);
        RigidTransform::new(*r.matrix(), translation)
    }

    pub fn rotation_matrix(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation_vector(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self` applied after `first`.
    pub fn after(&self, first: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }
}

pub fn apply_rigid<M: PointCloud>(mesh: &M, t: &RigidTransform) -> M {
    mesh.map_points(|_, p| t.apply(p))
}

/// Spread of a centred point set: eigenvalues of its scatter matrix, descending.
fn spread(points: &[Vec3], centroid: &Vec3) -> [f64; 3] {
    let scatter = points
        .iter()
        .map(|p| {
            let d = p - centroid;
            d * d.transpose()
        })
        .fold(Matrix3::zeros(), |a, b| a + b);
    let mut ev: Vec<f64> = SymmetricEigen::new(scatter).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    [ev[0], ev[1], ev[2]]
}

fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().sum::<Vec3>() / points.len() as f64
}

/// Least-squares rigid transform taking `source[i]` onto `target[i]`
/// (Kabsch/Umeyama without scale, reflections excluded).
pub fn fit_rigid(source: &[Vec3], target: &[Vec3]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::DegenerateConfiguration(format!(
            "landmark counts differ: {} source vs {} target",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::DegenerateConfiguration(format!(
            "need at least 3 landmark pairs, got {}",
            source.len()
        )));
    }
    if source.iter().chain(target).any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::DegenerateConfiguration("non-finite landmark".into()));
    }
    let cs = centroid(source);
    let ct = centroid(target);
    for (name, pts, c) in [("source", source, &cs), ("target", target, &ct)] {
        let [l1, l2, _] = spread(pts, c);
        if l1 <= 0.0 || l2 <= 1e-12 * l1 {
            return Err(Error::DegenerateConfiguration(format!(
                "{name} landmarks are coincident or collinear"
            )));
        }
    }

    let h = source
        .iter()
        .zip(target)
        .map(|(s, g)| (s - cs) * (g - ct).transpose())
        .fold(Matrix3::zeros(), |a, b| a + b);
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd u");
    let v = svd.v_t.expect("svd v").transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();
    let translation = ct - rotation * cs;
    RigidTransform::new(rotation, translation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::TriangleMesh;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn landmarks() -> Vec<Vec3> {
        vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(10.0, 0.0, 1.0),
            Vec3::new(0.0, 12.0, -2.0),
            Vec3::new(3.0, 4.0, 9.0),
            Vec3::new(-5.0, 2.0, 1.0),
        ]
    }

    #[test]
    fn z_rotation_of_x_axis() {
        let t = RigidTransform::from_axis_angle(Vec3::z(), FRAC_PI_2, Vec3::zeros()).unwrap();
        let p = t.apply(&Vec3::x());
        assert!((p - Vec3::y()).norm() < 1e-12);
    }

    #[test]
    fn translation_shifts_x() {
        let m = TriangleMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]).unwrap();
        let moved = apply_rigid(&m, &RigidTransform::translation(Vec3::new(10.0, 0.0, 0.0)));
        for (a, b) in moved.vertices().iter().zip(m.vertices()) {
            assert_eq!(a.x, b.x + 10.0);
            assert_eq!((a.y, a.z), (b.y, b.z));
        }
        assert_eq!(moved.triangles(), m.triangles());
        assert_eq!(apply_rigid(&m, &RigidTransform::identity()), m);
    }

    #[test]
    fn identical_sets_give_identity() {
        let l = landmarks();
        let t = fit_rigid(&l, &l).unwrap();
        assert!((t.rotation_matrix() - Matrix3::identity()).abs().max() < 1e-9);
        assert!(t.translation_vector().norm() < 1e-9);
    }

    #[test]
    fn pure_translation_recovered() {
        let l = landmarks();
        let shifted: Vec<_> = l.iter().map(|p| p + Vec3::repeat(5.0)).collect();
        let t = fit_rigid(&l, &shifted).unwrap();
        assert!((t.rotation_matrix() - Matrix3::identity()).abs().max() < 1e-9);
        assert!((t.translation_vector() - Vec3::repeat(5.0)).norm() < 1e-9);
    }

    #[test]
    fn thirty_degree_rotation_recovered() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(30);
        let src: Vec<Vec3> = (0..10)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-50.0..50.0),
                    rng.gen_range(-50.0..50.0),
                    rng.gen_range(-50.0..50.0),
                )
            })
            .collect();
        let truth =
            RigidTransform::from_axis_angle(Vec3::new(1.0, 2.0, 0.5), 30f64.to_radians(), Vec3::new(3.0, -7.0, 11.0))
                .unwrap();
        let dst: Vec<Vec3> = src.iter().map(|p| truth.apply(p)).collect();
        let fit = fit_rigid(&src, &dst).unwrap();
        assert!((fit.rotation_matrix() - truth.rotation_matrix()).abs().max() < 1e-6);
        assert!((fit.translation_vector() - truth.translation_vector()).norm() < 1e-6);
    }

    #[test]
    fn reflection_excluded() {
        let l = landmarks();
        let mirrored: Vec<_> = l.iter().map(|p| Vec3::new(-p.x, p.y, p.z)).collect();
        let t = fit_rigid(&l, &mirrored).unwrap();
        assert!((t.rotation_matrix().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        let line: Vec<_> = (0..5).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(
            fit_rigid(&line, &line),
            Err(Error::DegenerateConfiguration(_))
        ));
        let two = &landmarks()[..2];
        assert!(matches!(fit_rigid(two, two), Err(Error::DegenerateConfiguration(_))));
        assert!(fit_rigid(&landmarks(), &landmarks()[..4]).is_err());
    }

    #[test]
    fn rejects_non_orthonormal() {
        assert!(RigidTransform::new(Matrix3::identity() * 1.001, Vec3::zeros()).is_err());
        let reflect = Matrix3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0));
        assert!(RigidTransform::new(reflect, Vec3::zeros()).is_err());
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            -3.1f64..3.1,
            prop::array::uniform3(-100.0f64..100.0),
        )
            .prop_filter_map("zero axis", |(a, ang, t)| {
                RigidTransform::from_axis_angle(Vec3::from(a), ang, Vec3::from(t)).ok()
            })
    }

    proptest! {
        #[test]
        fn preserves_pairwise_distances(t in arb_transform(), pts in prop::collection::vec(prop::array::uniform3(-50.0f64..50.0), 2..12)) {
            let pts: Vec<Vec3> = pts.into_iter().map(Vec3::from).collect();
            let moved: Vec<Vec3> = pts.iter().map(|p| t.apply(p)).collect();
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    let d0 = (pts[i] - pts[j]).norm();
                    let d1 = (moved[i] - moved[j]).norm();
                    prop_assert!((d0 - d1).abs() <= 1e-9 * d0.max(1.0));
                }
            }
        }

        #[test]
        fn refit_after_apply_is_identity(t in arb_transform()) {
            let src = landmarks();
            let dst: Vec<Vec3> = src.iter().map(|p| t.apply(p)).collect();
            let fit = fit_rigid(&src, &dst).unwrap();
            let aligned: Vec<Vec3> = src.iter().map(|p| fit.apply(p)).collect();
            let refit = fit_rigid(&aligned, &dst).unwrap();
            prop_assert!((refit.rotation_matrix() - Matrix3::identity()).abs().max() < 1e-6);
            prop_assert!(refit.translation_vector().norm() < 1e-6);
        }
    }
}
