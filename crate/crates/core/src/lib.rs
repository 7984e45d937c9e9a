//! Point-cloud-map maintenance toolkit.
//!
//! Builds voxelized static maps with per-voxel provenance, records scene edits
//! as compact deltas, projects 3D changes into camera change masks, updates
//! maps from masks (visibility-based deletion, similarity-registered
//! addition) and scores the result with point-set distances.
//!
//! Geometry is generic over [`Real`] (`f32` / `f64`); the aliases below fix
//! the scalar to `f64`, which is what the file formats store.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geom;
pub mod io;
pub mod edit;
pub mod metrics;
pub mod project;
pub mod scalar;
pub mod scene;
pub mod synth;
pub mod update;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Point3d = geom::Point3<f64>;
pub type Cloud = geom::PointCloud<f64>;
pub type Rigid = geom::RigidTransform<f64>;
pub type Similarity = geom::SimilarityTransform<f64>;
pub type Camera = geom::CameraModel<f64>;
pub type Scene = scene::VoxelScene<f64>;
