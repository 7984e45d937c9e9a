//! Trackable scene edits: voxel deletions by cuboid or selection, patch
//! insertion on the ground, delta application and portable archives.

mod delta;
mod patch;
mod portable;
mod select;

pub use delta::{
    apply_delta, delete_by_cuboid, delete_by_selection, insert_patch, synthetic_point_id, EditDelta,
    Insertion, SYNTHETIC_ID_FLAG,
};
pub use patch::{GroundModel, Patch, PatchDatabase, PatchManifestEntry};
pub use portable::{
    decode_portable, encode_portable, export_portable, import_portable, read_portable, PortableArchive,
    PORTABLE_MAGIC, PORTABLE_VERSION,
};
pub use select::SelectionRegion;
