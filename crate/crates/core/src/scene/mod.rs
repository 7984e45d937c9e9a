//! Static map construction: dynamic-object filtering, scan accumulation and
//! voxelization with per-voxel provenance.

mod builder;
mod cuboid;
mod taxonomy;
mod voxel;

pub use builder::{accumulate, build_scene, filter_dynamic, pack_point_id, unpack_point_id, PosedScan};
pub use cuboid::Cuboid;
pub use taxonomy::{LabelTaxonomy, DYNAMIC_LABELS, STATIC_LABELS};
pub use voxel::{key_id, scene_points, voxelize, VoxelKey, VoxelScene, DEFAULT_RESOLUTION};
