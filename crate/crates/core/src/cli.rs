//! Command-line entry point.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::PipelineConfig;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::extraction::TriangleMesh;
use crate::pipeline::{self, require};
use crate::raster::Raster;

#[derive(Debug, Parser)]
#[command(
    name = "satsurf",
    version,
    about = "Surface and DSM reconstruction from RPC satellite images"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Configuration file (TOML sections; see configs/).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `pipeline.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: number of processors).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Progress messages on standard error.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known geometry.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Scene description (default: bundled two-box scene).
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Align relative depth maps to sparse points.
    FuseDepth {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the surface model.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Directory with fused depth maps.
        #[arg(long)]
        fused: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write per-sample render values of a few rays to `rays.csv`.
        #[arg(long)]
        dump_rays: bool,
    },
    /// Mesh and DSM from a checkpoint.
    Extract {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fill DSM holes by inverse-distance weighting.
        #[arg(long)]
        fill_nodata: bool,
    },
    /// Compare a DSM (and optionally meshes) against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, requires = "truth_mesh")]
        pred_mesh: Option<PathBuf>,
        #[arg(long, requires = "pred_mesh")]
        truth_mesh: Option<PathBuf>,
        /// Metrics CSV to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scene: Option<String>,
        /// Remove the median height offset first.
        #[arg(long)]
        align: bool,
    },
    /// Synthesize (unless a dataset is configured), fuse, train, extract and
    /// evaluate.
    Pipeline {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        fill_nodata: bool,
    },
}

/// Exit status: 0 on success, 1 on bad input, 2 on a runtime failure.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_validation() => 1,
        Err(_) => 2,
    }
}

/// Parses `argv` (including the program name) and runs it.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = if cli.global.verbose {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
    let result = run(&cli);
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    exit_code(&result)
}

fn load_config(g: &GlobalArgs) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.pipeline.seed = s;
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be >= 1".into()));
        }
        // fails only when a pool already exists, e.g. on a second call in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut cfg = load_config(g)?;
    match &cli.command {
        Command::Synth { out, scene } => {
            if let Some(s) = scene {
                require(s)?;
                cfg.pipeline.synth_scene = s.display().to_string();
            }
            pipeline::synth(&cfg, &pipeline::load_scene(&cfg)?, out)?;
        }
        Command::FuseDepth { dataset, out } => {
            let ds = open(dataset)?;
            pipeline::fuse_depth(&ds, out, cfg.priors.fit_form)?;
        }
        Command::Train {
            dataset,
            fused,
            out,
            checkpoint,
            dump_rays,
        } => {
            let ds = open(dataset)?;
            for p in fused.iter().chain(checkpoint) {
                require(p)?;
            }
            pipeline::train_model(&cfg, &ds, fused.as_deref(), out, checkpoint.as_deref(), *dump_rays)?;
        }
        Command::Extract {
            dataset,
            checkpoint,
            out,
            fill_nodata,
        } => {
            let ds = open(dataset)?;
            require(checkpoint)?;
            pipeline::extract_from_checkpoint(&cfg, &ds, checkpoint, out, *fill_nodata)?;
        }
        Command::Evaluate {
            pred,
            truth,
            pred_mesh,
            truth_mesh,
            out,
            scene,
            align,
        } => {
            let p = Raster::read_asc(pred)?;
            let t = Raster::read_asc(truth)?;
            let meshes = match (pred_mesh, truth_mesh) {
                (Some(a), Some(b)) => Some((TriangleMesh::read_ply(a)?, TriangleMesh::read_ply(b)?)),
                _ => None,
            };
            let points = meshes
                .as_ref()
                .map(|(a, b)| (a.vertices.as_slice(), b.vertices.as_slice()));
            let name = scene.clone().unwrap_or_else(|| cfg.pipeline.scene.clone());
            let row = pipeline::evaluate(&name, &p, &t, points, *align || cfg.eval.align)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                pipeline::create_dir(dir)?;
            }
            pipeline::write_metrics(out, &row)?;
        }
        Command::Pipeline {
            dataset,
            out,
            fill_nodata,
        } => {
            if let Some(d) = dataset {
                cfg.pipeline.dataset = d.display().to_string();
            }
            let out = out.clone().unwrap_or_else(|| PathBuf::from(&cfg.pipeline.output));
            pipeline::run_pipeline(&cfg, &out, *fill_nodata)?;
        }
    }
    Ok(())
}

fn open(path: &Path) -> Result<Dataset> {
    require(path)?;
    Dataset::open(path)
}
