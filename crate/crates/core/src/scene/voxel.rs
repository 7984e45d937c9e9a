use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::scalar::Real;

/// Default voxel edge length in meters.
pub const DEFAULT_RESOLUTION: f64 = 0.20;

/// Integer voxel coordinate; ordering is lexicographic on (i, j, k).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VoxelKey {
    pub i: i32,
    pub j: i32,
    pub k: i32,
}

impl VoxelKey {
    pub const fn new(i: i32, j: i32, k: i32) -> Self {
        Self { i, j, k }
    }

    pub fn offset(&self, di: i32, dj: i32, dk: i32) -> Self {
        Self::new(self.i + di, self.j + dj, self.k + dk)
    }
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit identifier of a voxel key.
pub fn key_id(key: &VoxelKey) -> u64 {
    let a = mix64(key.i as u32 as u64 ^ 0x9e37_79b9_7f4a_7c15);
    let b = mix64(a ^ (key.j as u32 as u64));
    mix64(b ^ ((key.k as u32 as u64) << 1))
}

/// Voxelized map. Cells are half-open `[origin + key·res, origin + (key+1)·res)`
/// and each occupied cell lists the (sorted) ids of the points that fell in it.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelScene<T: Real> {
    resolution: T,
    origin: Point3<T>,
    voxels: BTreeMap<VoxelKey, Vec<u64>>,
}

impl<T: Real> VoxelScene<T> {
    pub fn new(resolution: T, origin: Point3<T>) -> Result<Self> {
        if !(resolution > T::zero()) || !resolution.is_finite() {
            return Err(Error::Invalid("resolution must be positive".into()));
        }
        if !crate::geom::is_finite_point(&origin) {
            return Err(Error::Invalid("origin must be finite".into()));
        }
        Ok(Self {
            resolution,
            origin,
            voxels: BTreeMap::new(),
        })
    }

    pub fn resolution(&self) -> T {
        self.resolution
    }

    pub fn origin(&self) -> &Point3<T> {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn contains(&self, key: &VoxelKey) -> bool {
        self.voxels.contains_key(key)
    }

    /// Occupied keys in lexicographic order.
    pub fn keys(&self) -> impl ExactSizeIterator<Item = &VoxelKey> + '_ {
        self.voxels.keys()
    }

    pub fn provenance(&self, key: &VoxelKey) -> Option<&[u64]> {
        self.voxels.get(key).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VoxelKey, &[u64])> + '_ {
        self.voxels.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.resolution == other.resolution && self.origin == other.origin
    }

    /// Key of the cell containing `p`.
    pub fn key_of(&self, p: &Point3<T>) -> Result<VoxelKey> {
        let rel = (p - self.origin) / self.resolution;
        let cvt = |x: T| {
            x.floor()
                .to_i32()
                .ok_or_else(|| Error::Invalid("point outside the representable voxel range".into()))
        };
        Ok(VoxelKey::new(cvt(rel.x)?, cvt(rel.y)?, cvt(rel.z)?))
    }

    pub fn center(&self, key: &VoxelKey) -> Point3<T> {
        let h = T::lit(0.5);
        let idx = Vector3::new(
            T::lit(key.i as f64) + h,
            T::lit(key.j as f64) + h,
            T::lit(key.k as f64) + h,
        );
        self.origin + idx * self.resolution
    }

    /// Adds a voxel or merges ids into an existing one. Ids are kept sorted
    /// and unique.
    pub fn insert(&mut self, key: VoxelKey, ids: impl IntoIterator<Item = u64>) {
        let entry = self.voxels.entry(key).or_default();
        entry.extend(ids);
        entry.sort_unstable();
        entry.dedup();
    }

    pub(crate) fn remove(&mut self, key: &VoxelKey) -> Option<Vec<u64>> {
        self.voxels.remove(key)
    }

    /// An empty scene on the same grid.
    pub fn empty_like(&self) -> Self {
        Self {
            resolution: self.resolution,
            origin: self.origin,
            voxels: BTreeMap::new(),
        }
    }

    /// 64-bit digest over resolution, origin and the sorted occupied keys.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.resolution.to_f64_lossy().to_le_bytes());
        for c in self.origin.iter() {
            h.update(c.to_f64_lossy().to_le_bytes());
        }
        h.update((self.voxels.len() as u64).to_le_bytes());
        for k in self.voxels.keys() {
            h.update(k.i.to_le_bytes());
            h.update(k.j.to_le_bytes());
            h.update(k.k.to_le_bytes());
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}

/// Voxelizes a cloud: `key(p) = floor((p - origin) / resolution)`. Points
/// without ids contribute their index as provenance id.
pub fn voxelize<T: Real>(cloud: &PointCloud<T>, resolution: T, origin: Point3<T>) -> Result<VoxelScene<T>> {
    let mut scene = VoxelScene::new(resolution, origin)?;
    let keys: Vec<VoxelKey> = cloud
        .points()
        .par_iter()
        .map(|p| scene.key_of(p))
        .collect::<Result<_>>()?;
    for (i, key) in keys.into_iter().enumerate() {
        let id = cloud.ids().map_or(i as u64, |ids| ids[i]);
        scene.voxels.entry(key).or_default().push(id);
    }
    for ids in scene.voxels.values_mut() {
        ids.sort_unstable();
        ids.dedup();
    }
    Ok(scene)
}

/// Canonical cloud of a scene: one point per voxel at its center, ordered by
/// key, id = [`key_id`].
pub fn scene_points<T: Real>(scene: &VoxelScene<T>) -> PointCloud<T> {
    let points = scene.keys().map(|k| scene.center(k)).collect();
    let ids = scene.keys().map(key_id).collect();
    PointCloud::with_ids(points, ids).expect("voxel centers are finite and key ids distinct")
}
