use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use pcm_core::project::OcclusionParams;
use pcm_core::scene::DEFAULT_RESOLUTION;

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct GlobalOpts {
    /// JSON run configuration; flags win over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Voxel edge length in meters.
    #[arg(long, global = true)]
    pub resolution: Option<f64>,
    #[arg(long, global = true)]
    pub occlusion_radius_px: Option<u32>,
    #[arg(long, global = true)]
    pub occlusion_margin_m: Option<f64>,
    /// Use the exhaustive O(N·M) distance backend.
    #[arg(long, global = true)]
    pub oracle: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread cap (0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Unset means the default grid, or the recipe's value for `synth`.
    pub resolution: Option<f64>,
    pub occlusion_radius_px: u32,
    pub occlusion_margin_m: f64,
    pub oracle: bool,
    pub seed: Option<u64>,
    pub threads: usize,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let occ = OcclusionParams::<f64>::default();
        Self {
            resolution: None,
            occlusion_radius_px: occ.radius_px,
            occlusion_margin_m: occ.margin_m,
            oracle: false,
            seed: None,
            threads: 0,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn resolve(opts: &GlobalOpts) -> Result<Self> {
        let mut cfg = match &opts.config {
            Some(p) => load(p)?,
            None => Self::default(),
        };
        if opts.resolution.is_some() {
            cfg.resolution = opts.resolution;
        }
        if let Some(r) = opts.occlusion_radius_px {
            cfg.occlusion_radius_px = r;
        }
        if let Some(m) = opts.occlusion_margin_m {
            cfg.occlusion_margin_m = m;
        }
        cfg.oracle |= opts.oracle;
        if opts.seed.is_some() {
            cfg.seed = opts.seed;
        }
        if let Some(t) = opts.threads {
            cfg.threads = t;
        }
        if opts.out.is_some() {
            cfg.out = opts.out.clone();
        }
        if let Some(r) = cfg.resolution {
            if !(r > 0.0 && r.is_finite()) {
                bail!("resolution must be a positive number, got {r}");
            }
        }
        cfg.occlusion().validate()?;
        Ok(cfg)
    }

    pub fn resolution(&self) -> f64 {
        self.resolution.unwrap_or(DEFAULT_RESOLUTION)
    }

    pub fn occlusion(&self) -> OcclusionParams<f64> {
        OcclusionParams {
            radius_px: self.occlusion_radius_px,
            margin_m: self.occlusion_margin_m,
        }
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out.as_deref().context("--out is required")
    }
}

fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}
