use std::io;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty point set")]
    EmptyPointSet,
    #[error("no change pixels")]
    NoChangePixels,
    #[error("undefined on empty set")]
    UndefinedOnEmptySet,
    #[error("label not in taxonomy: {0}")]
    UnknownLabel(String),
    #[error("refusing dynamic label for static edit: {0}")]
    DynamicLabelEdit(String),
    #[error("no ground sample at ({x}, {y})")]
    NoGroundSample { x: f64, y: f64 },
    #[error("unknown patch id: {0}")]
    UnknownPatch(String),
    #[error("delta does not target this scene")]
    FingerprintMismatch,
    #[error("portable archive corrupt: {0}")]
    CorruptArchive(String),
    #[error("incompatible voxel grids")]
    IncompatibleGrids,
    #[error("rank-deficient correspondence set")]
    RankDeficient,
    #[error("too few correspondences: {0} (need at least 3)")]
    TooFewCorrespondences(usize),
    #[error("mask is {mask_w}x{mask_h} but camera is {cam_w}x{cam_h}")]
    MaskSize {
        mask_w: u32,
        mask_h: u32,
        cam_w: u32,
        cam_h: u32,
    },
    #[error("infeasible recipe: {0}")]
    InfeasibleRecipe(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
