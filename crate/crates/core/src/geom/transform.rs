use nalgebra::{Matrix3, Point3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::scalar::Real;

fn check_rotation<T: Real>(r: &Matrix3<T>) -> Result<()> {
    let tol = T::orthonormal_tolerance();
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("rotation has non-finite entries".into()));
    }
    let gram = r.transpose() * r - Matrix3::identity();
    if gram.iter().any(|v| v.abs() > tol) {
        return Err(Error::Invalid("rotation is not orthonormal".into()));
    }
    if (r.determinant() - T::one()).abs() > tol {
        return Err(Error::Invalid("rotation determinant is not +1".into()));
    }
    Ok(())
}

/// Proper rigid motion `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform<T: Real> {
    rotation: Matrix3<T>,
    translation: Vector3<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self> {
        check_rotation(&rotation)?;
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("translation has non-finite entries".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<T>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation about +z by `yaw` radians followed by `t`.
    pub fn from_yaw(yaw: T, t: Vector3<T>) -> Self {
        let (s, c) = (yaw.sin(), yaw.cos());
        let z = T::zero();
        let o = T::one();
        Self {
            rotation: Matrix3::new(c, -s, z, s, c, z, z, z, o),
            translation: t,
        }
    }

    /// Builds from a (w, x, y, z) quaternion; the quaternion is normalized.
    pub fn from_quaternion(wxyz: [T; 4], t: Vector3<T>) -> Result<Self> {
        let q = nalgebra::Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        if q.norm() <= T::default_epsilon() {
            return Err(Error::Invalid("zero quaternion".into()));
        }
        let r = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        Self::new(r, t)
    }

    pub fn rotation(&self) -> &Matrix3<T> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    #[inline]
    pub fn apply(&self, p: &Point3<T>) -> Point3<T> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// Similarity `x -> s R x + t` with `s > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTransform<T: Real> {
    scale: T,
    rotation: Matrix3<T>,
    translation: Vector3<T>,
}

impl<T: Real> SimilarityTransform<T> {
    pub fn new(scale: T, rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self> {
        if !(scale > T::zero()) || !scale.is_finite() {
            return Err(Error::Invalid("similarity scale must be positive".into()));
        }
        check_rotation(&rotation)?;
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: T::one(),
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn rotation(&self) -> &Matrix3<T> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    #[inline]
    pub fn apply(&self, p: &Point3<T>) -> Point3<T> {
        Point3::from(self.rotation * p.coords * self.scale + self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let inv_s = T::one() / self.scale;
        Self {
            scale: inv_s,
            rotation: rt,
            translation: -(rt * self.translation) * inv_s,
        }
    }

    /// `rigid ∘ self`.
    pub fn then_rigid(&self, rigid: &RigidTransform<T>) -> Self {
        Self {
            scale: self.scale,
            rotation: rigid.rotation() * self.rotation,
            translation: rigid.rotation() * self.translation + rigid.translation(),
        }
    }
}

impl<T: Real> From<RigidTransform<T>> for SimilarityTransform<T> {
    fn from(r: RigidTransform<T>) -> Self {
        Self {
            scale: T::one(),
            rotation: r.rotation,
            translation: r.translation,
        }
    }
}
