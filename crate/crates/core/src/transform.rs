//! Rigid transforms shared by every module.

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A rotation plus translation, the pose of one frame in another.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation,
        }
    }

    /// URDF-style fixed-axis roll/pitch/yaw plus translation.
    pub fn from_xyz_rpy(xyz: [f64; 3], rpy: [f64; 3]) -> Self {
        Self {
            rotation: Rotation3::from_euler_angles(rpy[0], rpy[1], rpy[2]),
            translation: Vector3::new(xyz[0], xyz[1], xyz[2]),
        }
    }

    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rot_inv = self.rotation.inverse();
        RigidTransform {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Max deviation of R^T R from the identity, for invariant checks.
    pub fn orthonormality_error(&self) -> f64 {
        let m = self.rotation.matrix();
        let e = m.transpose() * m - Matrix3::identity();
        e.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    r: [[f64; 3]; 3],
    t: [f64; 3],
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let m = self.rotation.matrix();
        let r = [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ];
        let t = [self.translation.x, self.translation.y, self.translation.z];
        TransformRepr { r, t }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = TransformRepr::deserialize(deserializer)?;
        let m = Matrix3::from_fn(|i, j| repr.r[i][j]);
        let rotation = Rotation3::from_matrix_unchecked(m);
        let out = RigidTransform {
            rotation,
            translation: Vector3::new(repr.t[0], repr.t[1], repr.t[2]),
        };
        if out.orthonormality_error() > 1e-6 || (m.determinant() - 1.0).abs() > 1e-6 {
            return Err(D::Error::custom("rotation matrix is not orthonormal"));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn compose_inverse_is_identity() {
        let t = RigidTransform::from_xyz_rpy([0.1, -0.2, 0.3], [0.4, 0.5, -0.6]);
        let id = t.compose(&t.inverse());
        assert!(id.orthonormality_error() < 1e-12);
        assert_relative_eq!(id.translation.norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(
            (id.rotation.matrix() - Matrix3::identity()).norm(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn rpy_matches_urdf_convention() {
        // yaw of pi/2 maps +x to +y
        let t = RigidTransform::from_xyz_rpy([0.0; 3], [0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        let v = t.transform_vector(&Vector3::x());
        assert_relative_eq!(v.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(v.y, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn serde_round_trip() {
        let t = RigidTransform::from_xyz_rpy([1.0, 2.0, 3.0], [0.1, 0.2, 0.3]);
        let json = serde_json::to_string(&t).unwrap();
        let back: RigidTransform = serde_json::from_str(&json).unwrap();
        assert!((back.translation - t.translation).norm() < 1e-15);
        assert!((back.rotation.matrix() - t.rotation.matrix()).norm() < 1e-15);
    }

    #[test]
    fn serde_rejects_non_rotation() {
        let json = r#"{"r":[[2.0,0.0,0.0],[0.0,1.0,0.0],[0.0,0.0,1.0]],"t":[0.0,0.0,0.0]}"#;
        assert!(serde_json::from_str::<RigidTransform>(json).is_err());
    }
}
