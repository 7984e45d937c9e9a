use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::{Error, Result};
use crate::geom::RigidTransform;
use crate::scalar::Real;

/// Oriented box annotation. `dims` are (length, width, height) along the
/// box's local x, y, z axes; `rotation` maps local to world.
#[derive(Clone, Debug, PartialEq)]
pub struct Cuboid<T: Real> {
    center: Point3<T>,
    dims: Vector3<T>,
    rotation: Matrix3<T>,
    label: String,
}

impl<T: Real> Cuboid<T> {
    pub fn new(center: Point3<T>, dims: Vector3<T>, rotation: Matrix3<T>, label: impl Into<String>) -> Result<Self> {
        if dims.iter().any(|d| !(*d > T::zero()) || !d.is_finite()) {
            return Err(Error::Invalid("cuboid dimensions must be positive".into()));
        }
        // validates orthonormality
        RigidTransform::new(rotation, center.coords)?;
        Ok(Self {
            center,
            dims,
            rotation,
            label: label.into(),
        })
    }

    pub fn axis_aligned(min: Point3<T>, max: Point3<T>, label: impl Into<String>) -> Result<Self> {
        Self::new(
            nalgebra::center(&min, &max),
            max - min,
            Matrix3::identity(),
            label,
        )
    }

    pub fn from_yaw(center: Point3<T>, dims: Vector3<T>, yaw: T, label: impl Into<String>) -> Result<Self> {
        let r = *RigidTransform::from_yaw(yaw, Vector3::zeros()).rotation();
        Self::new(center, dims, r, label)
    }

    pub fn center(&self) -> &Point3<T> {
        &self.center
    }
    pub fn dims(&self) -> &Vector3<T> {
        &self.dims
    }
    pub fn rotation(&self) -> &Matrix3<T> {
        &self.rotation
    }
    pub fn label(&self) -> &str {
        &self.label
    }

    /// Inclusive containment, evaluated in the box's local frame.
    #[inline]
    pub fn contains(&self, p: &Point3<T>) -> bool {
        let local = self.rotation.transpose() * (p - self.center);
        let half = T::lit(0.5);
        (0..3).all(|a| local[a].abs() <= self.dims[a] * half)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inclusive_faces() {
        let c = Cuboid::axis_aligned(Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 2.0, 2.0), "SIGN").unwrap();
        assert!(c.contains(&Point3::new(1.0, 1.0, 1.0)));
        assert!(c.contains(&Point3::new(2.0, 0.0, 1.0)));
        assert!(!c.contains(&Point3::new(2.0001, 0.0, 1.0)));
    }

    #[test]
    fn rotated() {
        let c = Cuboid::from_yaw(Point3::origin(), Vector3::new(4.0, 1.0, 1.0), std::f64::consts::FRAC_PI_2, "BUS").unwrap();
        assert!(c.contains(&Point3::new(0.0, 1.9, 0.0)));
        assert!(!c.contains(&Point3::new(1.9, 0.0, 0.0)));
    }

    #[test]
    fn invalid_dims() {
        assert!(Cuboid::new(Point3::origin(), Vector3::new(1.0, 0.0, 1.0), Matrix3::identity(), "BUS").is_err());
    }
}
