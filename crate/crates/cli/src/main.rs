use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use vagg::config::{FusionMode, PipelineConfig};
use vagg::pipeline;
use vagg::CliError;
use vagg_core::synth;
use vagg_core::volume::VoxelIndex;

/// Volumetric object detection by 2D view aggregation.
#[derive(Parser)]
#[command(name = "vagg", version, about)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON pipeline configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Output directory (or file for single-artifact commands).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset.
    Synth {
        #[arg(long, default_value_t = 24)]
        patients: usize,
        /// Cubic volume side in voxels.
        #[arg(long)]
        dims: Option<usize>,
    },
    /// Train candidate generation, calibrate, and emit candidate CSVs.
    Candgen {
        /// Dataset manifest(s); repeat to merge training sets.
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        /// Fixed probability threshold (skips calibration).
        #[arg(long)]
        threshold: Option<f64>,
        /// Reuse a previously trained candgen model directory.
        #[arg(long)]
        frozen_candgen: Option<PathBuf>,
    },
    /// Patient-level cross-validation of the full pipeline.
    Cv {
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
        /// Fusion mode recorded for the final models (all three are
        /// always evaluated).
        #[arg(long)]
        fusion: Option<FusionMode>,
        /// HOG cells per side (3, 5, or 9).
        #[arg(long)]
        cells: Option<usize>,
        #[arg(long)]
        frozen_candgen: Option<PathBuf>,
        /// Skip training the final whole-dataset model directory.
        #[arg(long)]
        no_final_models: bool,
    },
    /// Score one volume with a trained model directory.
    Detect {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        volume: PathBuf,
    },
    /// Write one candidate's views as a tiled 2D volume.
    DumpViews {
        #[arg(long)]
        volume: PathBuf,
        /// Candidate center as x,y,z voxel coordinates.
        #[arg(long, value_parser = parse_center)]
        center: VoxelIndexArg,
        #[arg(long, default_value_t = 4)]
        k: usize,
    },
    /// Write HOG descriptors of a candidate list as CSV.
    DumpHog {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long, default_value_t = 5)]
        cells: usize,
        #[arg(long, default_value_t = 4)]
        k: usize,
    },
    /// Render a linear model's weights as per-cell orientation glyphs.
    RenderWeights {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 5)]
        cells: usize,
    },
}

#[derive(Clone)]
struct VoxelIndexArg(VoxelIndex);

fn parse_center(s: &str) -> Result<VoxelIndexArg, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected x,y,z".into());
    }
    let parse = |p: &str| p.trim().parse::<usize>().map_err(|e| format!("bad coordinate: {e}"));
    Ok(VoxelIndexArg(VoxelIndex::new(
        parse(parts[0])?,
        parse(parts[1])?,
        parse(parts[2])?,
    )))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn require_out(global: &GlobalArgs) -> Result<PathBuf, CliError> {
    global
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("--out is required for this command".into()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = PipelineConfig::load_or_default(cli.global.config.as_deref())?;
    let seed = cli.global.seed;

    match cli.command {
        Command::Synth { patients, dims } => {
            let out = require_out(&cli.global)?;
            let mut spec = cfg.phantom.clone();
            if let Some(side) = dims {
                spec.dims = [side; 3];
            }
            let manifest = synth::generate_benchmark(&out, patients, &spec, seed)
                .map_err(|e| CliError::Data(format!("synth: {e}")))?;
            info!("wrote {} patients under {}", manifest.patients.len(), out.display());
            Ok(())
        }
        Command::Candgen { data, threshold, frozen_candgen } => {
            let out = require_out(&cli.global)?;
            if let Some(t) = threshold {
                cfg.candgen.threshold = Some(t);
            }
            let ds = pipeline::load_dataset(&data)?;
            let report =
                pipeline::run_candgen(&ds, &cfg, seed, &out, frozen_candgen.as_deref())?;
            info!(
                "candgen: threshold {:.4}, object sensitivity {:.3}, {:.1} FP/case, {} candidates",
                report.threshold,
                report.object_sensitivity,
                report.fp_per_case,
                report.candidates_total
            );
            Ok(())
        }
        Command::Cv { data, folds, fusion, cells, frozen_candgen, no_final_models } => {
            let out = require_out(&cli.global)?;
            if let Some(k) = folds {
                cfg.eval.folds = k;
            }
            if let Some(mode) = fusion {
                cfg.fusion.mode = mode;
            }
            if let Some(n) = cells {
                cfg.hog.cells_per_side = n;
            }
            let ds = pipeline::load_dataset(&data)?;
            let outcome = pipeline::run_cv(
                &ds,
                &cfg,
                seed,
                &out,
                frozen_candgen.as_deref(),
                !no_final_models,
            )?;
            info!(
                "cv: slice AUC {:.3}, KS p {:.2e}, sparse pAUC[0,10] {:.3}, \
                 scoring {:.2} s/volume",
                outcome.report.slice_auc,
                outcome.report.ks.p_value,
                outcome.report.validation["sparse"].partial_auc_10,
                outcome.scoring_seconds_per_volume
            );
            Ok(())
        }
        Command::Detect { models, volume } => {
            let out = require_out(&cli.global)?;
            let n = pipeline::run_detect(&models, &volume, &out)?;
            info!("detect: {n} candidates written to {}", out.display());
            Ok(())
        }
        Command::DumpViews { volume, center, k } => {
            let out = require_out(&cli.global)?;
            pipeline::run_dump_views(&volume, center.0, k, &out)
        }
        Command::DumpHog { volume, candidates, cells, k } => {
            let out = require_out(&cli.global)?;
            let rows = pipeline::run_dump_hog(&volume, &candidates, cells, k, &out)?;
            info!("dump-hog: {rows} descriptor rows");
            Ok(())
        }
        Command::RenderWeights { model, cells } => {
            let out = require_out(&cli.global)?;
            pipeline::run_render_weights(&model, cells, &out)
        }
    }
}
