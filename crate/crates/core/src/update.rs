//! Map update under given change masks: conservative visibility-based
//! deletion and similarity registration of externally predicted
//! reconstructions.

use std::collections::BTreeSet;

use nalgebra::{Matrix3, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{CameraModel, Mask, PointCloud, SimilarityTransform};
use crate::project::{ChangeMask, DepthReference, OcclusionParams};
use crate::scalar::Real;
use crate::scene::{key_id, VoxelKey, VoxelScene};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisibilityClass {
    OutOfView,
    Occluded,
    Visible,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibilityCounts {
    pub out_of_view: usize,
    pub occluded: usize,
    pub visible: usize,
}

/// Per-point visibility of a map cloud in one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityReport {
    pub classes: Vec<VisibilityClass>,
}

impl VisibilityReport {
    pub fn counts(&self) -> VisibilityCounts {
        let mut c = VisibilityCounts::default();
        for class in &self.classes {
            match class {
                VisibilityClass::OutOfView => c.out_of_view += 1,
                VisibilityClass::Occluded => c.occluded += 1,
                VisibilityClass::Visible => c.visible += 1,
            }
        }
        c
    }
}

fn classify_point<T: Real>(
    p: &Point3<T>,
    cam: &CameraModel<T>,
    depth_ref: &DepthReference<T>,
    params: &OcclusionParams<T>,
) -> VisibilityClass {
    match cam.project(p) {
        None => VisibilityClass::OutOfView,
        Some(px) if depth_ref.occludes(px.cell(), px.depth, params) => VisibilityClass::Occluded,
        Some(_) => VisibilityClass::Visible,
    }
}

/// Classifies every point as out of view, occluded by current geometry in
/// `depth_ref`, or visible.
pub fn classify_visibility<T: Real>(
    map_cloud: &PointCloud<T>,
    cam: &CameraModel<T>,
    depth_ref: &DepthReference<T>,
    params: &OcclusionParams<T>,
) -> VisibilityReport {
    let classes = map_cloud
        .points()
        .par_iter()
        .map(|p| classify_point(p, cam, depth_ref, params))
        .collect();
    VisibilityReport { classes }
}

/// Voxels judged removed by one camera, with their centers.
#[derive(Clone, Debug, PartialEq)]
pub struct DeletionPrediction<T: Real> {
    pub keys: BTreeSet<VoxelKey>,
    pub cloud: PointCloud<T>,
    pub visibility: VisibilityCounts,
}

/// Deletes voxel centers of `p_out` that are visible and fall on a set
/// mask pixel, unless the current scan still observes a surface at the
/// point's depth (within the margin) in its pixel neighbourhood.
/// Without that check, unchanged background seen through a mask (ground
/// behind a removed object) would be deleted as well.
pub fn predict_deletions<T: Real>(
    p_out: &VoxelScene<T>,
    mask: &Mask,
    cam: &CameraModel<T>,
    depth_ref: &DepthReference<T>,
    params: &OcclusionParams<T>,
) -> Result<DeletionPrediction<T>> {
    if (mask.width(), mask.height()) != (cam.width(), cam.height()) {
        return Err(Error::MaskSize {
            mask_w: mask.width(),
            mask_h: mask.height(),
            cam_w: cam.width(),
            cam_h: cam.height(),
        });
    }
    params.validate()?;
    let keys: Vec<&VoxelKey> = p_out.keys().collect();
    let decisions: Vec<(VisibilityClass, bool)> = keys
        .par_iter()
        .map(|k| {
            let c = p_out.center(k);
            let class = classify_point(&c, cam, depth_ref, params);
            let delete = class == VisibilityClass::Visible && {
                let px = cam.project(&c).expect("visible points project");
                let (x, y) = px.cell();
                mask.get(x, y) && !depth_ref.observes((x, y), px.depth, params)
            };
            (class, delete)
        })
        .collect();
    let mut visibility = VisibilityCounts::default();
    let mut removed = BTreeSet::new();
    for (k, (class, delete)) in keys.iter().zip(decisions) {
        match class {
            VisibilityClass::OutOfView => visibility.out_of_view += 1,
            VisibilityClass::Occluded => visibility.occluded += 1,
            VisibilityClass::Visible => visibility.visible += 1,
        }
        if delete {
            removed.insert(**k);
        }
    }
    let cloud = PointCloud::with_ids(
        removed.iter().map(|k| p_out.center(k)).collect(),
        removed.iter().map(key_id).collect(),
    )?;
    Ok(DeletionPrediction {
        keys: removed,
        cloud,
        visibility,
    })
}

/// Source (predictor frame) ↔ target (map frame) point pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorrespondenceSet<T: Real> {
    pairs: Vec<(Point3<T>, Point3<T>)>,
}

impl<T: Real> CorrespondenceSet<T> {
    pub fn new(pairs: Vec<(Point3<T>, Point3<T>)>) -> Result<Self> {
        if pairs.iter().any(|(a, b)| a.iter().chain(b.iter()).any(|v| !v.is_finite())) {
            return Err(Error::Invalid("non-finite correspondence".into()));
        }
        Ok(Self { pairs })
    }

    pub fn from_pairs(sources: &[Point3<T>], targets: &[Point3<T>]) -> Result<Self> {
        if sources.len() != targets.len() {
            return Err(Error::Invalid("source and target counts differ".into()));
        }
        Self::new(sources.iter().copied().zip(targets.iter().copied()).collect())
    }

    pub fn pairs(&self) -> &[(Point3<T>, Point3<T>)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Sum of squared residuals of `sim` over the pairs.
    pub fn residual_sum(&self, sim: &SimilarityTransform<T>) -> T {
        self.pairs
            .iter()
            .fold(T::zero(), |acc, (x, y)| acc + (sim.apply(x) - y).norm_squared())
    }
}

/// Similarity fit with its residual RMSE.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Registration<T: Real> {
    pub transform: SimilarityTransform<T>,
    pub rmse: T,
}

/// Closed-form least-squares similarity `y ≈ s R x + t` (Umeyama), with the
/// reflection case folded into the smallest singular direction.
pub fn kabsch_umeyama<T: Real>(corr: &CorrespondenceSet<T>) -> Result<Registration<T>> {
    let n = corr.len();
    if n < 3 {
        return Err(Error::TooFewCorrespondences(n));
    }
    let inv_n = T::one() / T::lit(n as f64);
    let (sx, sy) = corr
        .pairs()
        .iter()
        .fold((Vector3::zeros(), Vector3::zeros()), |(a, b): (Vector3<T>, Vector3<T>), (x, y)| {
            (a + x.coords, b + y.coords)
        });
    let mu_x = sx * inv_n;
    let mu_y = sy * inv_n;

    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    for (x, y) in corr.pairs() {
        let dx = x.coords - mu_x;
        let dy = y.coords - mu_y;
        cov += dy * dx.transpose();
        scatter += dx * dx.transpose();
    }
    cov *= inv_n;
    scatter *= inv_n;
    let var_x = scatter.trace();

    // source must span at least a plane
    let mut ev: Vec<T> = scatter.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
    let rel = T::default_epsilon() * T::lit(1e4);
    if !(ev[0] > T::zero()) || ev[1] <= ev[0] * rel {
        return Err(Error::RankDeficient);
    }

    let svd = cov.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let d = svd.singular_values;
    let mut sign = Vector3::new(T::one(), T::one(), T::one());
    if u.determinant() * v_t.determinant() < T::zero() {
        // singular values are not sorted by nalgebra; flip the smallest
        let (imin, _) = d.argmin();
        sign[imin] = -T::one();
    }
    let rotation = u * Matrix3::from_diagonal(&sign) * v_t;
    let scale = d.component_mul(&sign).sum() / var_x;
    if !(scale > T::zero()) {
        return Err(Error::RankDeficient);
    }
    let translation = mu_y - rotation * mu_x * scale;
    let transform = SimilarityTransform::new(scale, rotation, translation)?;
    let rmse = (corr.residual_sum(&transform) * inv_n).sqrt();
    Ok(Registration { transform, rmse })
}

/// A predictor's point cloud in its own frame, with the pixel each point
/// was lifted from.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedReconstruction<T: Real> {
    cloud: PointCloud<T>,
    pixels: Vec<[T; 2]>,
    image_index: Vec<u32>,
    in_change_mask: Vec<bool>,
}

fn in_mask<T: Real>(masks: &[Mask], uv: &[T; 2], image: u32) -> bool {
    let Some(m) = masks.get(image as usize) else {
        return false;
    };
    let (u, v) = (uv[0].floor(), uv[1].floor());
    if u < T::zero() || v < T::zero() {
        return false;
    }
    match (u.to_u32(), v.to_u32()) {
        (Some(x), Some(y)) => m.get(x, y),
        _ => false,
    }
}

impl<T: Real> PredictedReconstruction<T> {
    /// Flags are derived from `masks` (indexed by image index); points of
    /// images without a mask are unflagged.
    pub fn new(cloud: PointCloud<T>, pixels: Vec<[T; 2]>, image_index: Vec<u32>, masks: &[Mask]) -> Result<Self> {
        if pixels.len() != cloud.len() || image_index.len() != cloud.len() {
            return Err(Error::Invalid("per-point pixel data does not match the cloud".into()));
        }
        if pixels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite source pixel".into()));
        }
        let in_change_mask = pixels
            .iter()
            .zip(&image_index)
            .map(|(uv, &img)| in_mask(masks, uv, img))
            .collect();
        Ok(Self {
            cloud,
            pixels,
            image_index,
            in_change_mask,
        })
    }

    pub fn cloud(&self) -> &PointCloud<T> {
        &self.cloud
    }

    pub fn pixels(&self) -> &[[T; 2]] {
        &self.pixels
    }

    pub fn image_index(&self) -> &[u32] {
        &self.image_index
    }

    pub fn in_change_mask(&self) -> &[bool] {
        &self.in_change_mask
    }

    pub fn masked_count(&self) -> usize {
        self.in_change_mask.iter().filter(|&&f| f).count()
    }
}

/// Registered additions of one prediction batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Addition<T: Real> {
    pub cloud: PointCloud<T>,
    /// `None` when no predicted point fell inside a mask and no fit ran.
    pub registration: Option<Registration<T>>,
}

/// Fits the similarity on `corr` and maps every masked predicted point into
/// the map frame.
pub fn register_addition<T: Real>(
    pred: &PredictedReconstruction<T>,
    corr: &CorrespondenceSet<T>,
    masks: &[ChangeMask<T>],
) -> Result<Addition<T>> {
    let rasters: Vec<Mask> = masks.iter().map(|m| m.raster.clone()).collect();
    register_addition_rasters(pred, corr, &rasters)
}

/// Same as [`register_addition`] with bare rasters.
pub fn register_addition_rasters<T: Real>(
    pred: &PredictedReconstruction<T>,
    corr: &CorrespondenceSet<T>,
    masks: &[Mask],
) -> Result<Addition<T>> {
    let selected: Vec<usize> = (0..pred.cloud.len())
        .filter(|&i| in_mask(masks, &pred.pixels[i], pred.image_index[i]))
        .collect();
    if selected.is_empty() {
        return Ok(Addition {
            cloud: PointCloud::default(),
            registration: None,
        });
    }
    let reg = kabsch_umeyama(corr)?;
    let pts = pred.cloud.points();
    let cloud = PointCloud::new(selected.iter().map(|&i| reg.transform.apply(&pts[i])).collect())?;
    Ok(Addition {
        cloud,
        registration: Some(reg),
    })
}

/// Concatenates per-batch additions and deduplicates them on the grid of
/// `grid`.
pub fn accumulate_additions<T: Real>(grid: &VoxelScene<T>, batches: &[PointCloud<T>]) -> Result<BTreeSet<VoxelKey>> {
    let mut keys = BTreeSet::new();
    for b in batches {
        for p in b.iter() {
            keys.insert(grid.key_of(p)?);
        }
    }
    Ok(keys)
}

/// `(P_out ∖ deleted) ∪ added` with synthetic provenance for added voxels.
pub fn updated_scene<T: Real>(
    p_out: &VoxelScene<T>,
    deleted: &BTreeSet<VoxelKey>,
    added: &BTreeSet<VoxelKey>,
) -> VoxelScene<T> {
    let mut s = p_out.empty_like();
    for (k, ids) in p_out.iter() {
        if !deleted.contains(k) {
            s.insert(*k, ids.iter().copied());
        }
    }
    for k in added {
        if !s.contains(k) {
            s.insert(*k, [key_id(k) | crate::edit::SYNTHETIC_ID_FLAG]);
        }
    }
    s
}
