//! Image-space change labels: changed voxels are projected into a camera,
//! projections hidden behind closer geometry of a synchronized scan are
//! dropped, and each object's survivors are densified into a convex-hull
//! mask.

use std::collections::HashSet;

use nalgebra::{Point2, Point3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{convex_hull_2d, rasterize_polygon, CameraModel, Mask, Pixel, PointCloud, Polygon};
use crate::scalar::Real;
use crate::scene::PosedScan;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Added,
    Deleted,
}

/// Changed voxel centers of one object.
#[derive(Clone, Debug, PartialEq)]
pub struct ChangeObject<T: Real> {
    pub object_id: String,
    pub cloud: PointCloud<T>,
    pub kind: ChangeKind,
}

/// Per-object 3D changes.
#[derive(Clone, Debug, PartialEq)]
pub struct ChangeSet3D<T: Real> {
    objects: Vec<ChangeObject<T>>,
}

impl<T: Real> ChangeSet3D<T> {
    pub fn new(objects: Vec<ChangeObject<T>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for o in &objects {
            if o.cloud.is_empty() {
                return Err(Error::Invalid(format!("change object {} has no points", o.object_id)));
            }
            if !seen.insert(o.object_id.as_str()) {
                return Err(Error::Invalid(format!("duplicate change object {}", o.object_id)));
            }
        }
        Ok(Self { objects })
    }

    pub fn objects(&self) -> &[ChangeObject<T>] {
        &self.objects
    }
}

/// Neighbourhood (Chebyshev radius in pixels) and depth slack of the
/// occlusion test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionParams<T> {
    #[serde(rename = "occlusion_radius_px")]
    pub radius_px: u32,
    #[serde(rename = "occlusion_margin_m")]
    pub margin_m: T,
}

impl<T: Real> Default for OcclusionParams<T> {
    fn default() -> Self {
        Self {
            radius_px: 2,
            margin_m: T::lit(0.3),
        }
    }
}

impl<T: Real> OcclusionParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin_m > T::zero()) {
            return Err(Error::Invalid("occlusion margin must be positive".into()));
        }
        Ok(())
    }
}

/// Sparse per-pixel depth image holding the closest sample of each pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthReference<T: Real> {
    width: u32,
    height: u32,
    depth: Vec<Option<T>>,
}

impl<T: Real> DepthReference<T> {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            depth: vec![None; width as usize * height as usize],
        }
    }

    /// Z-buffers world points through `cam`.
    pub fn from_world_points<'a>(points: impl IntoIterator<Item = &'a Point3<T>>, cam: &CameraModel<T>) -> Self {
        let mut r = Self::empty(cam.width(), cam.height());
        for p in points {
            if let Some(px) = cam.project(p) {
                r.record(px.cell(), px.depth);
            }
        }
        r
    }

    fn record(&mut self, cell: (u32, u32), depth: T) {
        let i = (cell.1 * self.width + cell.0) as usize;
        let slot = &mut self.depth[i];
        if slot.is_none_or(|d| depth < d) {
            *slot = Some(depth);
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> Option<T> {
        if x < self.width && y < self.height {
            self.depth[(y * self.width + x) as usize]
        } else {
            None
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = ((u32, u32), T)> + '_ {
        let w = self.width;
        self.depth
            .iter()
            .enumerate()
            .filter_map(move |(i, d)| d.map(|d| ((i as u32 % w, i as u32 / w), d)))
    }

    pub fn len(&self) -> usize {
        self.depth.iter().filter(|d| d.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn any_in_window(&self, cell: (u32, u32), r: u32, pred: impl Fn(T) -> bool) -> bool {
        if self.width == 0 || self.height == 0 {
            return false;
        }
        let x0 = cell.0.saturating_sub(r);
        let y0 = cell.1.saturating_sub(r);
        let x1 = cell.0.saturating_add(r).min(self.width - 1);
        let y1 = cell.1.saturating_add(r).min(self.height - 1);
        (y0..=y1).any(|y| {
            let row = (y * self.width) as usize;
            (x0..=x1).any(|x| self.depth[row + x as usize].is_some_and(&pred))
        })
    }

    /// Whether a sample within the neighbourhood of `cell` is closer than
    /// `depth - margin`.
    pub fn occludes(&self, cell: (u32, u32), depth: T, params: &OcclusionParams<T>) -> bool {
        let limit = depth - params.margin_m;
        self.any_in_window(cell, params.radius_px, |d| d < limit)
    }

    /// Whether a sample within the neighbourhood of `cell` lies within
    /// `margin` of `depth`, i.e. the surface is still observed there.
    pub fn observes(&self, cell: (u32, u32), depth: T, params: &OcclusionParams<T>) -> bool {
        let m = params.margin_m;
        self.any_in_window(cell, params.radius_px, |d| (d - depth).abs() <= m)
    }
}

/// Projects every scan point (sensor frame, posed to world) into `cam`,
/// keeping the minimum depth per pixel.
pub fn depth_reference<T: Real>(scan: &PosedScan<T>, cam: &CameraModel<T>) -> DepthReference<T> {
    let world = scan.world_points();
    DepthReference::from_world_points(world.iter(), cam)
}

/// Keeps the pixels not occluded by `depth_ref`.
pub fn filter_occluded<T: Real>(
    pixels: &[Pixel<T>],
    depth_ref: &DepthReference<T>,
    params: &OcclusionParams<T>,
) -> Vec<Pixel<T>> {
    pixels
        .iter()
        .filter(|p| !depth_ref.occludes(p.cell(), p.depth, params))
        .copied()
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectProjection<T: Real> {
    pub object_id: String,
    pub kind: ChangeKind,
    /// Occlusion survivors, in-frame with positive depth.
    pub pixels: Vec<Pixel<T>>,
    /// Number of 3D change points of the object.
    pub input_count: usize,
    /// Number of those that projected into the frame.
    pub projected_count: usize,
}

impl<T: Real> ObjectProjection<T> {
    pub fn survivor_count(&self) -> usize {
        self.pixels.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseChangeProjection<T: Real> {
    pub objects: Vec<ObjectProjection<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectMask<T: Real> {
    pub object_id: String,
    pub kind: ChangeKind,
    /// `None` when no projection survived.
    pub polygon: Option<Polygon<T>>,
    pub survivors: usize,
    pub inputs: usize,
}

/// Binary change raster of one camera plus the per-object hulls it was
/// built from.
#[derive(Clone, Debug, PartialEq)]
pub struct ChangeMask<T: Real> {
    pub raster: Mask,
    pub objects: Vec<ObjectMask<T>>,
}

impl<T: Real> ChangeMask<T> {
    pub fn width(&self) -> u32 {
        self.raster.width()
    }

    pub fn height(&self) -> u32 {
        self.raster.height()
    }

    pub fn sidecar(&self) -> MaskSidecar {
        MaskSidecar {
            width: self.width(),
            height: self.height(),
            objects: self
                .objects
                .iter()
                .map(|o| SidecarObject {
                    object_id: o.object_id.clone(),
                    change_kind: o.kind,
                    polygon: o
                        .polygon
                        .as_ref()
                        .map(|p| p.vertices().iter().map(|v| [v.x.to_f64_lossy(), v.y.to_f64_lossy()]).collect())
                        .unwrap_or_default(),
                    survivors: o.survivors,
                    inputs: o.inputs,
                })
                .collect(),
        }
    }
}

/// JSON sidecar written next to each mask PNG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSidecar {
    pub width: u32,
    pub height: u32,
    pub objects: Vec<SidecarObject>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SidecarObject {
    pub object_id: String,
    pub change_kind: ChangeKind,
    pub polygon: Vec<[f64; 2]>,
    pub survivors: usize,
    pub inputs: usize,
}

fn pixel_center<T: Real>(p: &Pixel<T>) -> Point2<T> {
    let h = T::lit(0.5);
    Point2::new(p.u.floor() + h, p.v.floor() + h)
}

fn project_object<T: Real>(
    obj: &ChangeObject<T>,
    cam: &CameraModel<T>,
    depth_ref: &DepthReference<T>,
    params: &OcclusionParams<T>,
) -> (ObjectProjection<T>, ObjectMask<T>, Mask) {
    let projected: Vec<Pixel<T>> = obj.cloud.iter().filter_map(|p| cam.project(p)).collect();
    let pixels = filter_occluded(&projected, depth_ref, params);
    // hull over the centers of the survivors' pixels, so that every
    // survivor's own pixel passes the inclusive center test
    let centers: Vec<Point2<T>> = pixels.iter().map(pixel_center).collect();
    let polygon = convex_hull_2d(&centers).ok();
    let raster = polygon
        .as_ref()
        .map_or_else(|| Mask::new(cam.width(), cam.height()), |p| rasterize_polygon(p, cam.width(), cam.height()));
    let projection = ObjectProjection {
        object_id: obj.object_id.clone(),
        kind: obj.kind,
        input_count: obj.cloud.len(),
        projected_count: projected.len(),
        pixels,
    };
    let mask = ObjectMask {
        object_id: obj.object_id.clone(),
        kind: obj.kind,
        polygon,
        survivors: projection.pixels.len(),
        inputs: projection.input_count,
    };
    (projection, mask, raster)
}

/// Full per-camera pipeline against a prebuilt depth reference.
pub fn build_change_mask_with<T: Real>(
    changes: &ChangeSet3D<T>,
    cam: &CameraModel<T>,
    depth_ref: &DepthReference<T>,
    params: &OcclusionParams<T>,
) -> Result<(SparseChangeProjection<T>, ChangeMask<T>)> {
    params.validate()?;
    if (depth_ref.width(), depth_ref.height()) != (cam.width(), cam.height()) {
        return Err(Error::Invalid("depth reference does not match the camera".into()));
    }
    let per_object: Vec<_> = changes
        .objects()
        .par_iter()
        .map(|o| project_object(o, cam, depth_ref, params))
        .collect();
    let mut raster = Mask::new(cam.width(), cam.height());
    let mut projections = Vec::with_capacity(per_object.len());
    let mut masks = Vec::with_capacity(per_object.len());
    for (proj, mask, r) in per_object {
        raster.union_with(&r);
        projections.push(proj);
        masks.push(mask);
    }
    Ok((
        SparseChangeProjection { objects: projections },
        ChangeMask { raster, objects: masks },
    ))
}

/// Projects, occlusion-filters, hulls and rasterizes every change object
/// for one camera and its synchronized scan.
pub fn build_change_mask<T: Real>(
    changes: &ChangeSet3D<T>,
    cam: &CameraModel<T>,
    scan: &PosedScan<T>,
    params: &OcclusionParams<T>,
) -> Result<(SparseChangeProjection<T>, ChangeMask<T>)> {
    build_change_mask_with(changes, cam, &depth_reference(scan, cam), params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::RigidTransform;

    fn cam() -> CameraModel<f64> {
        CameraModel::new(100.0, 100.0, 50.0, 50.0, 100, 100, RigidTransform::identity()).unwrap()
    }

    fn scan(pts: &[[f64; 3]]) -> PosedScan<f64> {
        PosedScan::new(
            PointCloud::new(pts.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect()).unwrap(),
            RigidTransform::identity(),
            0,
        )
    }

    #[test]
    fn depth_reference_min_rule() {
        let r = depth_reference(&scan(&[[0.0, 0.0, 5.0]]), &cam());
        assert_eq!(r.get(50, 50), Some(5.0));
        assert_eq!(r.len(), 1);
        let r = depth_reference(&scan(&[[0.0, 0.0, 9.0], [0.0, 0.0, 5.0]]), &cam());
        assert_eq!(r.get(50, 50), Some(5.0));
    }

    fn px(u: f64, v: f64, depth: f64) -> Pixel<f64> {
        Pixel { u, v, depth }
    }

    #[test]
    fn occlusion_cases() {
        let p = OcclusionParams { radius_px: 2, margin_m: 0.5 };
        let r = depth_reference(&scan(&[[0.0, 0.0, 5.0]]), &cam());
        assert!(filter_occluded(&[px(50.2, 50.7, 10.0)], &r, &p).is_empty());
        // reference 5.2 is not closer than 5 - margin
        let r2 = depth_reference(&scan(&[[0.0, 0.0, 5.2]]), &cam());
        assert_eq!(filter_occluded(&[px(50.0, 50.0, 5.0)], &r2, &p).len(), 1);
        // occluder 3 px away is outside the radius
        assert_eq!(filter_occluded(&[px(53.0, 50.0, 10.0)], &r, &p).len(), 1);
        assert!(filter_occluded(&[px(52.0, 52.0, 10.0)], &r, &p).is_empty());
        let empty = DepthReference::empty(100, 100);
        assert_eq!(filter_occluded(&[px(50.0, 50.0, 10.0)], &empty, &p).len(), 1);
    }

    fn object(id: &str, pts: &[[f64; 3]]) -> ChangeObject<f64> {
        ChangeObject {
            object_id: id.into(),
            cloud: PointCloud::new(pts.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect()).unwrap(),
            kind: ChangeKind::Added,
        }
    }

    #[test]
    fn visible_object_mask() {
        let changes = ChangeSet3D::new(vec![object("a", &[[0.0, 0.0, 10.0], [1.0, 0.0, 10.0], [0.0, 1.0, 10.0]])]).unwrap();
        let (sparse, mask) = build_change_mask(&changes, &cam(), &scan(&[]), &OcclusionParams::default()).unwrap();
        assert_eq!(sparse.objects[0].survivor_count(), 3);
        // hull of pixel centers (50.5,50.5), (60.5,50.5), (50.5,60.5)
        assert_eq!(mask.raster.count(), 66);
        for p in &sparse.objects[0].pixels {
            let (x, y) = p.cell();
            assert!(mask.raster.get(x, y));
        }
    }

    #[test]
    fn hidden_and_outside_objects_are_empty() {
        let wall: Vec<[f64; 3]> = (0..40)
            .flat_map(|i| (0..40).map(move |j| [-2.0 + i as f64 * 0.1, -2.0 + j as f64 * 0.1, 4.0]))
            .collect();
        let changes = ChangeSet3D::new(vec![
            object("hidden", &[[0.0, 0.0, 10.0], [0.5, 0.0, 10.0]]),
            object("outside", &[[50.0, 0.0, 10.0], [0.0, 0.0, -3.0]]),
        ])
        .unwrap();
        let (sparse, mask) = build_change_mask(&changes, &cam(), &scan(&wall), &OcclusionParams::default()).unwrap();
        assert_eq!(mask.raster.count(), 0);
        assert!(mask.objects.iter().all(|o| o.polygon.is_none()));
        assert_eq!(sparse.objects[1].projected_count, 0);
    }

    #[test]
    fn rejects_invalid_inputs() {
        assert!(ChangeSet3D::new(vec![object("a", &[[0.0; 3]]), object("a", &[[0.0; 3]])]).is_err());
        assert!(ChangeSet3D::<f64>::new(vec![ChangeObject {
            object_id: "e".into(),
            cloud: PointCloud::default(),
            kind: ChangeKind::Deleted
        }])
        .is_err());
        let changes = ChangeSet3D::new(vec![object("a", &[[0.0, 0.0, 1.0]])]).unwrap();
        let bad = OcclusionParams { radius_px: 1, margin_m: 0.0 };
        assert!(build_change_mask(&changes, &cam(), &scan(&[]), &bad).is_err());
    }
}
