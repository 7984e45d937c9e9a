use std::collections::BTreeMap;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::scalar::Real;

/// Object point cloud in a local frame whose lowest point sits at z = 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch<T: Real> {
    id: String,
    cloud: PointCloud<T>,
    label: String,
    footprint: [T; 4],
}

impl<T: Real> Patch<T> {
    pub fn new(id: impl Into<String>, cloud: PointCloud<T>, label: impl Into<String>) -> Result<Self> {
        let id = id.into();
        let first = cloud
            .points()
            .first()
            .ok_or_else(|| Error::Invalid(format!("patch {id} is empty")))?;
        let mut fp = [first.x, first.y, first.x, first.y];
        let mut min_z = first.z;
        for p in cloud.iter() {
            fp[0] = fp[0].min(p.x);
            fp[1] = fp[1].min(p.y);
            fp[2] = fp[2].max(p.x);
            fp[3] = fp[3].max(p.y);
            min_z = min_z.min(p.z);
        }
        if min_z.abs() > T::lit(1e-6) {
            return Err(Error::Invalid(format!(
                "patch {id} does not touch the ground plane (min z = {})",
                min_z.to_f64_lossy()
            )));
        }
        Ok(Self {
            id,
            cloud,
            label: label.into(),
            footprint: fp,
        })
    }

    /// Shifts the cloud so its lowest point is at z = 0, then builds the patch.
    pub fn normalized(id: impl Into<String>, cloud: PointCloud<T>, label: impl Into<String>) -> Result<Self> {
        let min_z = cloud
            .iter()
            .map(|p| p.z)
            .fold(None, |m: Option<T>, z| Some(m.map_or(z, |m| m.min(z))));
        let cloud = match min_z {
            Some(m) => cloud.map_points(|p| Point3::new(p.x, p.y, p.z - m))?,
            None => cloud,
        };
        Self::new(id, cloud, label)
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn cloud(&self) -> &PointCloud<T> {
        &self.cloud
    }
    pub fn label(&self) -> &str {
        &self.label
    }
    /// `[min_x, min_y, max_x, max_y]` in the local frame.
    pub fn footprint(&self) -> [T; 4] {
        self.footprint
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchManifestEntry {
    pub id: String,
    pub label: String,
    pub points: usize,
    pub file: String,
}

/// Collection of insertable patches keyed by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PatchDatabase<T: Real> {
    patches: BTreeMap<String, Patch<T>>,
}

impl<T: Real> PatchDatabase<T> {
    pub fn new() -> Self {
        Self {
            patches: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, patch: Patch<T>) -> Result<()> {
        if self.patches.contains_key(patch.id()) {
            return Err(Error::Invalid(format!("duplicate patch id {}", patch.id())));
        }
        self.patches.insert(patch.id().to_string(), patch);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&Patch<T>> {
        self.patches.get(id).ok_or_else(|| Error::UnknownPatch(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Patch<T>> {
        self.patches.values()
    }

    pub fn manifest(&self) -> Vec<PatchManifestEntry> {
        self.patches
            .values()
            .map(|p| PatchManifestEntry {
                id: p.id.clone(),
                label: p.label.clone(),
                points: p.cloud.len(),
                file: format!("{}.ply", p.id),
            })
            .collect()
    }
}

/// Ground heights sampled on a regular xy grid of `cell_size` cells anchored
/// at the world origin.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundModel<T: Real> {
    cell_size: T,
    heights: BTreeMap<(i32, i32), T>,
}

impl<T: Real> GroundModel<T> {
    pub fn new(cell_size: T, heights: BTreeMap<(i32, i32), T>) -> Result<Self> {
        if !(cell_size > T::zero()) || !cell_size.is_finite() {
            return Err(Error::Invalid("ground cell size must be positive".into()));
        }
        if heights.values().any(|h| !h.is_finite()) {
            return Err(Error::Invalid("ground heights must be finite".into()));
        }
        Ok(Self { cell_size, heights })
    }

    /// Constant height over cells `[i0, i1) x [j0, j1)`.
    pub fn flat(cell_size: T, height: T, cells_i: (i32, i32), cells_j: (i32, i32)) -> Result<Self> {
        let mut heights = BTreeMap::new();
        for i in cells_i.0..cells_i.1 {
            for j in cells_j.0..cells_j.1 {
                heights.insert((i, j), height);
            }
        }
        Self::new(cell_size, heights)
    }

    pub fn cell_size(&self) -> T {
        self.cell_size
    }

    pub fn heights(&self) -> &BTreeMap<(i32, i32), T> {
        &self.heights
    }

    pub fn cell_of(&self, x: T, y: T) -> Option<(i32, i32)> {
        Some((
            (x / self.cell_size).floor().to_i32()?,
            (y / self.cell_size).floor().to_i32()?,
        ))
    }

    pub fn height_at(&self, x: T, y: T) -> Result<T> {
        self.cell_of(x, y)
            .and_then(|c| self.heights.get(&c).copied())
            .ok_or(Error::NoGroundSample {
                x: x.to_f64_lossy(),
                y: y.to_f64_lossy(),
            })
    }
}
