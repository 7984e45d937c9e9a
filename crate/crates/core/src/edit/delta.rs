use std::collections::BTreeSet;

use nalgebra::Vector3;

use super::{GroundModel, PatchDatabase, SelectionRegion};
use crate::error::{Error, Result};
use crate::geom::RigidTransform;
use crate::scalar::Real;
use crate::scene::{key_id, Cuboid, LabelTaxonomy, VoxelKey, VoxelScene};

/// High bit marking provenance ids synthesized for inserted voxels; raw scan
/// ids never set it.
pub const SYNTHETIC_ID_FLAG: u64 = 1 << 63;

/// One patch placement and the voxels it occupies.
#[derive(Clone, Debug, PartialEq)]
pub struct Insertion<T: Real> {
    pub patch_id: String,
    pub placement: RigidTransform<T>,
    pub inserted_keys: BTreeSet<VoxelKey>,
}

/// Edit against a specific base scene, identified by its fingerprint.
#[derive(Clone, Debug, PartialEq)]
pub struct EditDelta<T: Real> {
    pub removed_keys: BTreeSet<VoxelKey>,
    pub insertions: Vec<Insertion<T>>,
    pub scene_fingerprint: u64,
}

impl<T: Real> EditDelta<T> {
    pub fn empty(scene: &VoxelScene<T>) -> Self {
        Self {
            removed_keys: BTreeSet::new(),
            insertions: Vec::new(),
            scene_fingerprint: scene.fingerprint(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.removed_keys.is_empty() && self.insertions.is_empty()
    }

    pub fn inserted_keys(&self) -> BTreeSet<VoxelKey> {
        self.insertions
            .iter()
            .flat_map(|ins| ins.inserted_keys.iter().copied())
            .collect()
    }

    /// Union of two deltas against the same base.
    pub fn union(mut self, other: Self) -> Result<Self> {
        if self.scene_fingerprint != other.scene_fingerprint {
            return Err(Error::FingerprintMismatch);
        }
        self.removed_keys.extend(other.removed_keys);
        self.insertions.extend(other.insertions);
        Ok(self)
    }

    /// Folds `next`, a delta against `apply_delta(base, self)`, into a single
    /// delta against the base: removed = R1 ∪ (R2 ∖ I1), insertions
    /// concatenated. Fails when `next` removes voxels that `self` inserted,
    /// since insertion records always carry the patch's full voxel set.
    pub fn then(&self, base: &VoxelScene<T>, next: &Self) -> Result<Self> {
        if self.scene_fingerprint != base.fingerprint() {
            return Err(Error::FingerprintMismatch);
        }
        let inserted = self.inserted_keys();
        if next.removed_keys.iter().any(|k| inserted.contains(k)) {
            return Err(Error::Invalid(
                "cannot merge: later delta removes voxels inserted by an earlier one".into(),
            ));
        }
        let mut removed = self.removed_keys.clone();
        removed.extend(next.removed_keys.iter().copied());
        let mut insertions = self.insertions.clone();
        insertions.extend(next.insertions.iter().cloned());
        Ok(Self {
            removed_keys: removed,
            insertions,
            scene_fingerprint: self.scene_fingerprint,
        })
    }
}

/// Removes every voxel whose center lies inside a static-labelled cuboid.
pub fn delete_by_cuboid<T: Real>(
    scene: &VoxelScene<T>,
    cuboid: &Cuboid<T>,
    taxonomy: &LabelTaxonomy,
) -> Result<EditDelta<T>> {
    if taxonomy.is_dynamic(cuboid.label())? {
        return Err(Error::DynamicLabelEdit(cuboid.label().to_string()));
    }
    let mut delta = EditDelta::empty(scene);
    delta.removed_keys = scene
        .keys()
        .filter(|k| cuboid.contains(&scene.center(k)))
        .copied()
        .collect();
    Ok(delta)
}

/// Removes every voxel whose center lies in `region`.
pub fn delete_by_selection<T: Real>(
    scene: &VoxelScene<T>,
    region: &SelectionRegion<T>,
) -> Result<EditDelta<T>> {
    region.validate()?;
    let mut delta = EditDelta::empty(scene);
    delta.removed_keys = scene
        .keys()
        .filter(|k| region.contains(&scene.center(k)))
        .copied()
        .collect();
    Ok(delta)
}

/// Places a patch at `xy` on the ground, rotated by `yaw` about +z, and
/// records the voxels it occupies on the scene's grid. Occupied target
/// voxels are not rejected.
pub fn insert_patch<T: Real>(
    scene: &VoxelScene<T>,
    db: &PatchDatabase<T>,
    patch_id: &str,
    xy: [T; 2],
    yaw: T,
    ground: &GroundModel<T>,
) -> Result<EditDelta<T>> {
    let patch = db.get(patch_id)?;
    let z = ground.height_at(xy[0], xy[1])?;
    let placement = RigidTransform::from_yaw(yaw, Vector3::new(xy[0], xy[1], z));
    let inserted_keys = patch
        .cloud()
        .iter()
        .map(|p| scene.key_of(&placement.apply(p)))
        .collect::<Result<BTreeSet<_>>>()?;
    let mut delta = EditDelta::empty(scene);
    delta.insertions.push(Insertion {
        patch_id: patch_id.to_string(),
        placement,
        inserted_keys,
    });
    Ok(delta)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Provenance id for a voxel created by the `ordinal`-th insertion of a
/// delta, namespaced by patch id.
pub fn synthetic_point_id(patch_id: &str, ordinal: usize, key: &VoxelKey) -> u64 {
    let mut h = fnv1a(patch_id.as_bytes()) ^ (ordinal as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    h = h.rotate_left(17) ^ key_id(key);
    h = (h ^ (h >> 29)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    SYNTHETIC_ID_FLAG | (h >> 1)
}

/// `(occupied ∖ removed) ∪ inserted`. Surviving voxels keep provenance;
/// inserted voxels gain a synthetic id per insertion.
pub fn apply_delta<T: Real>(scene: &VoxelScene<T>, delta: &EditDelta<T>) -> Result<VoxelScene<T>> {
    if delta.scene_fingerprint != scene.fingerprint() {
        return Err(Error::FingerprintMismatch);
    }
    let mut out = scene.clone();
    for k in &delta.removed_keys {
        if out.remove(k).is_none() {
            return Err(Error::Invalid("delta removes a voxel the scene does not have".into()));
        }
    }
    for (n, ins) in delta.insertions.iter().enumerate() {
        for k in &ins.inserted_keys {
            out.insert(*k, [synthetic_point_id(&ins.patch_id, n, k)]);
        }
    }
    Ok(out)
}
