use nalgebra::Point3;
use rayon::prelude::*;

use super::{voxelize, Cuboid, LabelTaxonomy, VoxelScene};
use crate::error::{Error, Result};
use crate::geom::{PointCloud, RigidTransform};
use crate::scalar::Real;

/// A scan in its sensor frame with its sensor-to-world pose.
#[derive(Clone, Debug, PartialEq)]
pub struct PosedScan<T: Real> {
    pub cloud: PointCloud<T>,
    pub pose: RigidTransform<T>,
    pub timestamp_ns: i64,
}

impl<T: Real> PosedScan<T> {
    pub fn new(cloud: PointCloud<T>, pose: RigidTransform<T>, timestamp_ns: i64) -> Self {
        Self {
            cloud,
            pose,
            timestamp_ns,
        }
    }

    pub fn world_points(&self) -> Vec<Point3<T>> {
        self.cloud.points().iter().map(|p| self.pose.apply(p)).collect()
    }
}

/// Packs (scan index, point index) into a provenance id.
pub fn pack_point_id(scan: u32, point: u32) -> u64 {
    ((scan as u64) << 32) | point as u64
}

pub fn unpack_point_id(id: u64) -> (u32, u32) {
    ((id >> 32) as u32, id as u32)
}

/// Drops points inside any dynamic-labelled cuboid (world frame, faces
/// inclusive). Points keep their ids; clouds without ids get their original
/// indices so provenance survives the filtering.
pub fn filter_dynamic<T: Real>(
    scan: &PosedScan<T>,
    cuboids: &[Cuboid<T>],
    taxonomy: &LabelTaxonomy,
) -> Result<PosedScan<T>> {
    let mut dynamic = Vec::new();
    for c in cuboids {
        if taxonomy.is_dynamic(c.label())? {
            dynamic.push(c);
        }
    }
    let keep: Vec<bool> = scan
        .cloud
        .points()
        .par_iter()
        .map(|p| {
            let w = scan.pose.apply(p);
            !dynamic.iter().any(|c| c.contains(&w))
        })
        .collect();
    let source = match scan.cloud.ids() {
        Some(_) => scan.cloud.clone(),
        None => PointCloud::with_ids(
            scan.cloud.points().to_vec(),
            (0..scan.cloud.len() as u64).collect(),
        )?,
    };
    Ok(PosedScan {
        cloud: source.retain_indexed(|i, _| keep[i]),
        pose: scan.pose,
        timestamp_ns: scan.timestamp_ns,
    })
}

/// World-frame concatenation of all scans with ids packed as
/// (scan index, point index). A point's index is its existing id when the
/// scan carries ids.
pub fn accumulate<T: Real>(scans: &[PosedScan<T>]) -> Result<PointCloud<T>> {
    if scans.is_empty() {
        return Err(Error::Invalid("no scans to accumulate".into()));
    }
    let mut points = Vec::new();
    let mut ids = Vec::new();
    for (s, scan) in scans.iter().enumerate() {
        let s = u32::try_from(s).ok().filter(|s| *s < 1 << 31).ok_or_else(|| Error::Invalid("too many scans".into()))?;
        points.extend(scan.world_points());
        for i in 0..scan.cloud.len() {
            let local = scan.cloud.ids().map_or(i as u64, |ids| ids[i]);
            let local = u32::try_from(local)
                .map_err(|_| Error::Invalid(format!("point id {local} exceeds 32 bits")))?;
            ids.push(pack_point_id(s, local));
        }
    }
    PointCloud::with_ids(points, ids)
}

/// Filters, accumulates and voxelizes posed scans into a static map.
pub fn build_scene<T: Real>(
    scans: &[PosedScan<T>],
    cuboids: &[Cuboid<T>],
    taxonomy: &LabelTaxonomy,
    resolution: T,
    origin: Point3<T>,
) -> Result<VoxelScene<T>> {
    let filtered = scans
        .iter()
        .map(|s| filter_dynamic(s, cuboids, taxonomy))
        .collect::<Result<Vec<_>>>()?;
    voxelize(&accumulate(&filtered)?, resolution, origin)
}
