//! `pcm`: build, edit, exchange and update voxel point-cloud maps.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{GlobalOpts, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "pcm", version, about = "Point-cloud map maintenance toolkit")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Voxelize posed scans into a static map.
    Build {
        /// Scan directory (poses.txt + scan_NNNN.ply).
        #[arg(long)]
        scans: PathBuf,
        /// Object cuboids (JSON); dynamic ones are filtered out.
        #[arg(long)]
        cuboids: Option<PathBuf>,
        /// Label taxonomy (JSON); the built-in one otherwise.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Grid origin as x,y,z.
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.0, 0.0, 0.0])]
        origin: Vec<f64>,
    },
    /// Apply an edit script to a scene.
    Edit {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        patches: Option<PathBuf>,
        #[arg(long)]
        ground: Option<PathBuf>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
    /// Pack deltas against a base scene into a portable archive.
    Export {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long = "delta", required = true)]
        deltas: Vec<PathBuf>,
        /// Base reference stored in the archive (default: scene file name).
        #[arg(long)]
        base_ref: Option<String>,
    },
    /// Rebuild edited scenes from a base scene and a portable archive.
    Import {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        archive: PathBuf,
    },
    /// Project 3D changes into camera views and write change masks.
    Project {
        /// Change-set directory (changes.json + PLY files).
        #[arg(long)]
        changes: PathBuf,
        /// View directory (camera.json + scan/); repeat in image order.
        #[arg(long = "view", required = true)]
        views: Vec<PathBuf>,
    },
    /// Predict deleted voxels from change masks.
    Delete {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long = "view", required = true)]
        views: Vec<PathBuf>,
        /// Mask directory written by `project`.
        #[arg(long)]
        masks: PathBuf,
    },
    /// Register predicted reconstructions and add masked points.
    Add {
        #[arg(long)]
        scene: PathBuf,
        /// Batch directory (prediction.ply + correspondences.txt).
        #[arg(long = "batch")]
        batches: Vec<PathBuf>,
        #[arg(long)]
        masks: PathBuf,
    },
    /// Score an updated map against the ground truth.
    Eval {
        #[arg(long)]
        outdated: PathBuf,
        #[arg(long)]
        updated: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Generate a synthetic fixture bundle.
    Synth {
        /// Scene recipe (JSON).
        #[arg(long)]
        recipe: Option<PathBuf>,
        /// Use the tall-structure recipe family.
        #[arg(long, conflicts_with = "recipe")]
        tall: bool,
    },
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("PCM_TOOLKIT_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::resolve(&cli.global)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global()?;
    }
    use Command::*;
    match cli.command {
        Build {
            scans,
            cuboids,
            taxonomy,
            origin,
        } => commands::build(&cfg, &scans, cuboids.as_deref(), taxonomy.as_deref(), [origin[0], origin[1], origin[2]]),
        Edit {
            scene,
            script,
            patches,
            ground,
            taxonomy,
        } => commands::edit(&cfg, &scene, &script, patches.as_deref(), ground.as_deref(), taxonomy.as_deref()),
        Export { scene, deltas, base_ref } => commands::export(&cfg, &scene, &deltas, base_ref),
        Import { scene, archive } => commands::import(&cfg, &scene, &archive),
        Project { changes, views } => commands::project(&cfg, &changes, &views),
        Delete { scene, views, masks } => commands::delete(&cfg, &scene, &views, &masks),
        Add { scene, batches, masks } => commands::add(&cfg, &scene, &batches, &masks),
        Eval { outdated, updated, truth } => commands::eval(&cfg, &outdated, &updated, &truth),
        Synth { recipe, tall } => commands::synth(&cfg, recipe.as_deref(), tall),
    }
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("pcm: error: {msg}");
            ExitCode::FAILURE
        }
    }
}
