use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ncrf::commands;
use ncrf::config::{Precision, RunConfig};
use ncrf::slides::Split;

#[derive(Parser)]
#[command(
    name = "ncrf",
    about = "Patch-grid tumor detection with a trainable CRF over CNN patch embeddings",
    version
)]
struct Cli {
    /// JSON config file; built-in defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Disable the CRF head (baseline per-patch classifier)
    #[arg(long, global = true)]
    no_crf: bool,

    /// Arithmetic precision (f64 is for verification runs)
    #[arg(long, global = true, value_enum)]
    precision: Option<Precision>,

    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: slides, tumor masks, manifest
    Synth,
    /// Train a model (CRF or baseline) on a synthesized dataset
    Train {
        /// Dataset directory (must contain manifest.json)
        #[arg(long)]
        data: PathBuf,
    },
    /// Write the probability map of one slide from a checkpoint
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        slide: PathBuf,
    },
    /// Non-maximum suppression over a probability-map CSV
    Detect {
        #[arg(long)]
        map: PathBuf,
    },
    /// FROC score of per-slide detection CSVs against manifest masks
    Froc {
        /// Directory holding <slide_id>.detections.csv files
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
    },
    /// Verify tape gradients against central finite differences
    Gradcheck {
        /// Coordinates checked per parameter group (0 = every coordinate)
        #[arg(long, default_value_t = 32)]
        samples: usize,
    },
}

fn build_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.no_crf {
        cfg.crf_enabled = false;
    }
    if let Some(p) = cli.precision {
        cfg.precision = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run() -> anyhow::Result<bool> {
    let cli = Cli::parse();
    let cfg = build_config(&cli)?;

    match &cli.command {
        Command::Synth => {
            let out = commands::cmd_synth(&cfg, &cli.out)?;
            println!(
                "wrote {} slides and {} (config {})",
                out.n_slides,
                out.manifest_path.display(),
                &cfg.hash()[..12]
            );
        }
        Command::Train { data } => {
            let out = commands::cmd_train(&cfg, data, &cli.out)?;
            println!(
                "trained {} steps; best valid accuracy {:.4}; checkpoint {}",
                out.steps,
                out.best_valid_accuracy,
                out.final_checkpoint.display()
            );
        }
        Command::Infer { checkpoint, slide } => {
            let out = commands::cmd_infer(&cfg, checkpoint, slide, &cli.out)?;
            println!(
                "evaluated {} cells; map {}",
                out.evaluated_cells,
                out.map_csv.display()
            );
        }
        Command::Detect { map } => {
            let path = commands::cmd_detect(&cfg, map, &cli.out)?;
            println!("detections {}", path.display());
        }
        Command::Froc { detections, manifest, split } => {
            let curve = commands::cmd_froc(&cfg, detections, manifest, *split, &cli.out)?;
            for &(fp, sens) in &curve.points {
                log::info!("froc point: {fp} fp/slide, sensitivity {sens}");
            }
            println!("average froc score: {:.4}", curve.average);
        }
        Command::Gradcheck { samples } => {
            let report = commands::cmd_gradcheck(&cfg, cfg.seed, *samples)?;
            for g in &report.groups {
                println!(
                    "group {:<5} max rel err {:.3e} over {} coordinates",
                    g.name, g.max_rel_err, g.checked
                );
            }
            if !report.passed() {
                println!("FAIL: a group exceeded tolerance {:.0e}", report.tolerance);
                return Ok(false);
            }
            println!("OK: all groups within {:.0e}", report.tolerance);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::init();
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
