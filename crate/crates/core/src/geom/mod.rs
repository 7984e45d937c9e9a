//! Points, transforms, projection, nearest-neighbour search and 2D hull
//! rasterization.

mod camera;
mod hull;
mod index;
mod raster;
mod transform;

pub use camera::{project_point, CameraModel, Pixel};
pub use hull::{convex_hull_2d, Polygon};
pub use index::{build_index, SpatialIndex};
pub(crate) use index::squared_distance;
pub use nalgebra::{Matrix3, Point2, Point3, Vector3};
pub use raster::{rasterize_polygon, Mask};
pub use transform::{RigidTransform, SimilarityTransform};

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Ordered point list with optional per-point provenance tags.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud<T: Real> {
    points: Vec<Point3<T>>,
    ids: Option<Vec<u64>>,
}

impl<T: Real> Default for PointCloud<T> {
    fn default() -> Self {
        Self {
            points: Vec::new(),
            ids: None,
        }
    }
}

pub(crate) fn is_finite_point<T: Real>(p: &Point3<T>) -> bool {
    p.x.is_finite() && p.y.is_finite() && p.z.is_finite()
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Point3<T>>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !is_finite_point(p)) {
            return Err(Error::Invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points, ids: None })
    }

    pub fn with_ids(points: Vec<Point3<T>>, ids: Vec<u64>) -> Result<Self> {
        if ids.len() != points.len() {
            return Err(Error::Invalid(format!(
                "{} ids for {} points",
                ids.len(),
                points.len()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::Invalid(format!("duplicate point id {dup}")));
        }
        let mut cloud = Self::new(points)?;
        cloud.ids = Some(ids);
        Ok(cloud)
    }

    pub fn points(&self) -> &[Point3<T>] {
        &self.points
    }

    pub fn ids(&self) -> Option<&[u64]> {
        self.ids.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Point3<T>> {
        self.points.iter()
    }

    /// Applies `f` to every point, keeping ids.
    pub fn map_points(&self, f: impl Fn(&Point3<T>) -> Point3<T>) -> Result<Self> {
        let mut out = Self::new(self.points.iter().map(f).collect())?;
        out.ids = self.ids.clone();
        Ok(out)
    }

    /// Keeps the points for which `keep` returns true.
    pub fn retain_indexed(&self, mut keep: impl FnMut(usize, &Point3<T>) -> bool) -> Self {
        let mut points = Vec::new();
        let mut ids = self.ids.as_ref().map(|_| Vec::new());
        for (i, p) in self.points.iter().enumerate() {
            if keep(i, p) {
                points.push(*p);
                if let (Some(out), Some(src)) = (ids.as_mut(), self.ids.as_ref()) {
                    out.push(src[i]);
                }
            }
        }
        Self { points, ids }
    }

    /// Concatenates clouds. Ids are kept only if every part carries them.
    pub fn concat(parts: &[PointCloud<T>]) -> Result<Self> {
        let points: Vec<_> = parts.iter().flat_map(|c| c.points.iter().copied()).collect();
        if parts.iter().all(|c| c.ids.is_some()) && !parts.is_empty() {
            let ids = parts
                .iter()
                .flat_map(|c| c.ids.as_ref().unwrap().iter().copied())
                .collect();
            Self::with_ids(points, ids)
        } else {
            Self::new(points)
        }
    }
}
