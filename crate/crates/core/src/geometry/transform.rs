use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Rigid motion `X' = R X + t` mapping points from a source camera frame
/// into a target camera frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform { rotation, translation }
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// True when the rotation is orthonormal with determinant +1 within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        ortho <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    /// Conjugation by the horizontal image mirror `diag(-1, 1, 1)`.
    pub fn mirrored(&self) -> RigidTransform {
        let s = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
        RigidTransform {
            rotation: s * self.rotation * s,
            translation: s * self.translation,
        }
    }

    /// Axis-angle and translation 6-vector of this transform.
    pub fn to_pose_vector(&self) -> [f64; 6] {
        let r = nalgebra::Rotation3::from_matrix_unchecked(self.rotation).scaled_axis();
        [r.x, r.y, r.z, self.translation.x, self.translation.y, self.translation.z]
    }
}

/// Rodrigues map of a skew vector `r` (rotation by `|r|` about `r`).
pub fn axis_angle_to_matrix(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = r.norm_squared();
    // sin(θ)/θ and (1 - cos θ)/θ² with their Taylor expansions near zero.
    let (a, b) = if theta2 < 1e-8 {
        (1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0, 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = r.cross_matrix();
    Matrix3::identity() + k * a + k * k * b
}

/// Converts an `(axis-angle, translation)` 6-vector to a transform, inverting
/// it when `invert` is set (used for the backward temporal pair).
pub fn pose_vector_to_transform(v: &[f64; 6], invert: bool) -> RigidTransform {
    let r = Vector3::new(v[0], v[1], v[2]);
    let t = Vector3::new(v[3], v[4], v[5]);
    let tf = RigidTransform::new(axis_angle_to_matrix(&r), t);
    if invert {
        tf.inverse()
    } else {
        tf
    }
}

/// Axis-angle 6-vector of the mirrored motion (see [`RigidTransform::mirrored`]).
pub fn mirror_pose_vector(v: &[f64; 6]) -> [f64; 6] {
    [v[0], -v[1], -v[2], -v[3], v[4], v[5]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: &RigidTransform, b: &RigidTransform, tol: f64) -> bool {
        (a.rotation - b.rotation).amax() < tol && (a.translation - b.translation).amax() < tol
    }

    #[test]
    fn zero_vector_is_identity() {
        assert_eq!(pose_vector_to_transform(&[0.0; 6], false), RigidTransform::identity());
    }

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let tf = pose_vector_to_transform(&[0.0, 0.0, FRAC_PI_2, 0.0, 0.0, 0.0], false);
        let y = tf.apply(&Vector3::x());
        assert!((y - Vector3::y()).amax() < 1e-6);
    }

    #[test]
    fn small_angles_use_series_without_loss() {
        let r = Vector3::new(1e-5, -2e-5, 3e-5);
        let m = axis_angle_to_matrix(&r);
        let exact = nalgebra::Rotation3::new(r).into_inner();
        assert!((m - exact).amax() < 1e-15);
    }

    #[test]
    fn inversion_flag_yields_inverse() {
        let v = [0.1, -0.2, 0.3, 1.0, 2.0, -0.5];
        let fwd = pose_vector_to_transform(&v, false);
        let inv = pose_vector_to_transform(&v, true);
        assert!(close(&fwd.compose(&inv), &RigidTransform::identity(), 1e-6));
    }

    #[test]
    fn mirrored_vector_matches_mirrored_matrix() {
        let v = [0.1, -0.2, 0.3, 1.0, 2.0, -0.5];
        let a = pose_vector_to_transform(&v, false).mirrored();
        let b = pose_vector_to_transform(&mirror_pose_vector(&v), false);
        assert!(close(&a, &b, 1e-12));
    }

    #[test]
    fn pose_vector_round_trip() {
        let v = [0.3, 0.1, -0.2, 0.5, 0.0, 1.5];
        let back = pose_vector_to_transform(&v, false).to_pose_vector();
        for (a, b) in v.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    fn arb_vec6() -> impl Strategy<Value = [f64; 6]> {
        prop::array::uniform6(-2.0f64..2.0)
    }

    proptest! {
        #[test]
        fn rotations_are_orthonormal(v in arb_vec6()) {
            prop_assert!(pose_vector_to_transform(&v, false).is_valid(1e-5));
        }

        #[test]
        fn composition_is_associative(a in arb_vec6(), b in arb_vec6(), c in arb_vec6()) {
            let (a, b, c) = (
                pose_vector_to_transform(&a, false),
                pose_vector_to_transform(&b, false),
                pose_vector_to_transform(&c, false),
            );
            prop_assert!(close(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c)), 1e-6));
        }

        #[test]
        fn inversion_is_involution(v in arb_vec6()) {
            let t = pose_vector_to_transform(&v, false);
            prop_assert!(close(&t.inverse().inverse(), &t, 1e-6));
            prop_assert!(close(&t.compose(&t.inverse()), &RigidTransform::identity(), 1e-6));
        }
    }
}
