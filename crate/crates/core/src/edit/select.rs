use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::scene::Cuboid;

/// Declarative voxel selection; membership is inclusive of the boundary.
#[derive(Clone, Debug, PartialEq)]
pub enum SelectionRegion<T: Real> {
    Box { min: Point3<T>, max: Point3<T> },
    Sphere { center: Point3<T>, radius: T },
    Oriented(Cuboid<T>),
}

impl<T: Real> SelectionRegion<T> {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Box { min, max } => {
                if (0..3).any(|a| !(min[a] <= max[a])) {
                    return Err(Error::Invalid("selection box min exceeds max".into()));
                }
            }
            Self::Sphere { radius, .. } => {
                // a zero radius selects the voxel centered exactly there
                if !(*radius >= T::zero()) {
                    return Err(Error::Invalid("selection radius must be non-negative".into()));
                }
            }
            Self::Oriented(_) => {}
        }
        Ok(())
    }

    pub fn contains(&self, p: &Point3<T>) -> bool {
        match self {
            Self::Box { min, max } => (0..3).all(|a| p[a] >= min[a] && p[a] <= max[a]),
            Self::Sphere { center, radius } => (p - center).norm_squared() <= *radius * *radius,
            Self::Oriented(c) => c.contains(p),
        }
    }
}
