use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use panseg::config::PipelineConfig;
use panseg::dss::dss_volume;
use panseg::experiment::{load_cases, run_loocv_cases, train_excluding, LoocvMode, LoocvOptions};
use panseg::forest::{estimate_bounding_box, RegressionForest};
use panseg::phantom::{gen_dataset, Manifest, PhantomRanges};
use panseg::pipeline::{build_database, segment_case, DatabaseCase};
use panseg::segment::write_overlays;
use panseg::volume::io::{read_volume_auto, write_labels, write_mhd, ElementType};
use panseg::{Error, Result};

/// Environment variable holding the log filter, e.g. `info` or `panseg=debug`.
const LOG_ENV: &str = "PANSEG_LOG";

#[derive(Parser)]
#[command(name = "panseg", version, about = "Atlas-based pancreas segmentation pipeline")]
struct Cli {
    /// Pipeline configuration (JSON); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the root seed (`forest.seed`, or the dataset seed for `phantom`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Upper bound on worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Paper,
    Phantom,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its manifest.
    Phantom {
        #[arg(long, short)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Randomisation ranges (JSON); built-in ranges when omitted.
        #[arg(long)]
        ranges: Option<PathBuf>,
    },
    /// Train the localisation forest on a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Leave this case out of training.
        #[arg(long)]
        exclude: Option<String>,
    },
    /// Estimate the organ bounding box of a CT volume.
    Localize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        ct: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the directed structure-specific volume.
    Dss {
        #[arg(long)]
        ct: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment one CT volume using the manifest cases as atlas database.
    Segment {
        #[arg(long)]
        ct: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Leave this case out of the database.
        #[arg(long)]
        exclude: Option<String>,
        /// Write PNG overlays of the labelled slices into this directory.
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
    /// Leave-one-out evaluation over a manifest.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Score each case's ground truth against itself.
        #[arg(long)]
        oracle: bool,
    },
    /// Print a complete configuration.
    DefaultConfig {
        #[arg(long, value_enum, default_value = "paper")]
        preset: Preset,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 3,
        Error::MalformedHeader { .. }
        | Error::ElementCountMismatch { .. }
        | Error::UnsupportedElementType(_)
        | Error::UnsupportedOrientation(_)
        | Error::Json { .. } => 4,
        Error::InvalidConfig(_) => 5,
        Error::ModelVersion { .. } | Error::InvalidModel(_) => 6,
        _ => 7,
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut c = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.forest.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn run(cli: &Cli) -> Result<()> {
    let started = Instant::now();
    match &cli.command {
        Command::Phantom { n, out, ranges } => {
            let ranges = match ranges {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::json(p, e))?
                }
                None => PhantomRanges::default(),
            };
            gen_dataset(*n, &ranges, cli.seed.unwrap_or(0), out)?;
            println!("{}", out.join("manifest.json").display());
        }
        Command::Train { manifest, out, exclude } => {
            let config = load_config(cli)?;
            let cases = load_cases(&Manifest::load(manifest)?)?;
            let skip = match exclude {
                Some(id) => Some(
                    cases
                        .iter()
                        .position(|c| &c.id == id)
                        .ok_or_else(|| Error::InvalidConfig(format!("no case `{id}` in the manifest")))?,
                ),
                None => None,
            };
            train_excluding(&cases, skip, &config.forest)?.save(out)?;
        }
        Command::Localize { model, ct, out } => {
            let forest = RegressionForest::load(model)?;
            let bbox = estimate_bounding_box(&forest, &read_volume_auto(ct)?)?;
            write_json(out, &bbox)?;
            println!("{}", serde_json::to_string(&bbox).expect("box serialises"));
        }
        Command::Dss { ct, out } => {
            let config = load_config(cli)?;
            write_mhd(out, &dss_volume(&read_volume_auto(ct)?, &config.dss)?, ElementType::Float)?;
        }
        Command::Segment { ct, model, manifest, out, exclude, overlay } => {
            let config = load_config(cli)?;
            let forest = RegressionForest::load(model)?;
            let volume = read_volume_auto(ct)?;
            let cases = load_cases(&Manifest::load(manifest)?)?;
            let db_cases: Vec<DatabaseCase> = cases
                .iter()
                .filter(|c| Some(&c.id) != exclude.as_ref())
                .map(|c| DatabaseCase { id: &c.id, ct: &c.ct, label: &c.label })
                .collect();
            let database = build_database(&db_cases, &forest, &config)?;
            let id = ct.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let seg = segment_case(&id, &volume, &forest, &database, &config, cli.jobs)?;
            write_labels(out, &seg.labels)?;
            write_json(&out.with_extension("json"), &seg.summary)?;
            if let Some(dir) = overlay {
                write_overlays(&volume, &seg.labels, dir, &id)?;
            }
        }
        Command::Evaluate { manifest, out, oracle } => {
            let config = load_config(cli)?;
            let cases = load_cases(&Manifest::load(manifest)?)?;
            let mode = if *oracle { LoocvMode::OraclePassthrough } else { LoocvMode::Pipeline };
            let opts = LoocvOptions { run_dir: Some(out.clone()), jobs: cli.jobs, mode };
            let report = run_loocv_cases(&cases, &config, &opts)?;
            if let (Some(ji), Some(dice)) = (report.ji, report.dice) {
                println!("JI {:.2} ± {:.2}  DICE {:.2} ± {:.2}", ji.mean, ji.sd, dice.mean, dice.sd);
            }
            if !report.failed.is_empty() {
                return Err(Error::Stage(format!("{} case(s) failed: {}", report.failed.len(), report.failed.join(", "))));
            }
        }
        Command::DefaultConfig { preset, out } => {
            let c = match preset {
                Preset::Paper => PipelineConfig::default(),
                Preset::Phantom => PipelineConfig::phantom(),
            };
            match out {
                Some(p) => c.save(p)?,
                None => print!("{}", c.to_json()),
            }
        }
    }
    info!("done in {:.2} s", started.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
