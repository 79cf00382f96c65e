//! `renaldet`: command-line driver for the kidney detection pipeline.
//!
//! Exit codes: 0 success, 1 computation failure, 2 bad arguments or config, 3 malformed input
//! file, 4 I/O failure, 5 train/test leakage, 6 every benchmark diverged.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};
use renaldet::detector::PredictOptions;
use renaldet::error::{Error, ErrorClass};

use crate::commands::{ConvertArgs, Normalize};
use crate::config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(
    name = "renaldet",
    version,
    about = "Kidney detection on volumetric MRI"
)]
struct Cli {
    /// Pipeline config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Benchmarks trained concurrently; results are identical for any value.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,
    /// Suppress JSON progress events on standard error.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Preprocess a DICOM series directory or NIfTI file into a NIfTI volume.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        /// Target spacing in mm as x,y,z, or "native".
        #[arg(long, default_value = "1,1,1")]
        resample: String,
        #[arg(long, value_enum, default_value_t = Normalize::Rician)]
        normalize: Normalize,
        /// Also write every axial slice as a 2-D NIfTI into this directory.
        #[arg(long)]
        slices: Option<PathBuf>,
    },
    /// Build the slice dataset and manifest from raw volumes and masks.
    BuildDataset {
        /// Raw root holding volumes/ and masks/ (default: paths.raw_root).
        #[arg(long)]
        raw: Option<PathBuf>,
        /// Dataset root (default: paths.data_root).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one detector on every annotated series.
    Train {
        #[arg(long)]
        out: PathBuf,
        /// Warm-start weights.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Directory holding a pseudo-labeled manifest and pseudo/ labels.
        #[arg(long)]
        pseudo_root: Option<PathBuf>,
    },
    /// Write detection files for every series in the dataset.
    Detect {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        conf: f64,
        #[arg(long, default_value_t = 0.45)]
        nms_iou: f64,
        #[arg(long, default_value_t = 2)]
        max_boxes: usize,
    },
    /// Score a directory of detection files against a directory of label files.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Where to write metrics.json and the curve CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run primary training, pseudo-labeling and final training across all benchmarks.
    Selftrain,
    /// Generate a synthetic corpus and build its dataset.
    Phantom {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        patients: Option<usize>,
    },
    /// Audit a finished run and print its table, or aggregate metrics reports.
    Report {
        /// Output root of a self-training run.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Standalone metrics JSON files to aggregate.
        #[arg(long, num_args = 1..)]
        metrics: Vec<PathBuf>,
    },
}

enum Failure {
    /// Bad arguments detected after parsing; carries the subcommand for its usage text.
    Usage(String, &'static str),
    Pipeline(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Pipeline(e)
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 2,
        ErrorClass::Format => 3,
        ErrorClass::Io => 4,
        ErrorClass::Leakage => 5,
        ErrorClass::Diverged => 6,
        ErrorClass::Compute => 1,
    }
}

fn parse_spacing(text: &str) -> Option<Option<[f64; 3]>> {
    if text == "native" {
        return Some(None);
    }
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse().ok())
        .collect::<Option<_>>()?;
    match parts[..] {
        [x, y, z] if [x, y, z].iter().all(|v| v.is_finite() && *v > 0.0) => Some(Some([x, y, z])),
        _ => None,
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) if !p.is_file() => {
            return Err(Error::InvalidConfig(format!(
                "config {} does not exist",
                p.display()
            )))
        }
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    cfg.validate(config::Needs::Nothing)?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<String, Failure> {
    let cfg = load_config(cli)?;
    let level = cfg.log_level.as_deref().unwrap_or("warn");
    let _ = env_logger::Builder::new().parse_filters(level).try_init();
    match &cli.command {
        Command::Convert {
            input,
            output,
            resample,
            normalize,
            slices,
        } => {
            if !input.exists() {
                return Err(Failure::Usage(
                    format!("input {} does not exist", input.display()),
                    "convert",
                ));
            }
            let Some(resample) = parse_spacing(resample) else {
                return Err(Failure::Usage(
                    format!("bad --resample {resample:?}"),
                    "convert",
                ));
            };
            let args = ConvertArgs {
                input: input.clone(),
                output: output.clone(),
                resample,
                normalize: *normalize,
                slices: slices.clone(),
            };
            Ok(commands::convert(&cfg, &args)?)
        }
        Command::BuildDataset { raw, out } => {
            Ok(commands::build(&cfg, raw.as_deref(), out.as_deref())?)
        }
        Command::Train {
            out,
            init,
            pseudo_root,
        } => Ok(commands::train(
            &cfg,
            out,
            init.as_deref(),
            pseudo_root.as_deref(),
        )?),
        Command::Detect {
            weights,
            out,
            conf,
            nms_iou,
            max_boxes,
        } => {
            if !(0.0..=1.0).contains(conf) || !(0.0..=1.0).contains(nms_iou) {
                return Err(Failure::Usage(
                    "--conf and --nms-iou must lie in [0, 1]".into(),
                    "detect",
                ));
            }
            let opts = PredictOptions {
                conf_threshold: *conf,
                nms_iou: *nms_iou,
                max_boxes: *max_boxes,
            };
            Ok(commands::detect(&cfg, weights, out, &opts)?)
        }
        Command::Eval { pred, gt, out } => {
            let (text, report) = commands::eval(&cfg, pred, gt, out.as_deref())?;
            Ok(if out.is_some() {
                text
            } else {
                format!("{text}{}\n", report.to_json())
            })
        }
        Command::Selftrain => Ok(commands::selftrain(&cfg, cli.jobs as usize)?),
        Command::Phantom { out, patients } => {
            Ok(commands::phantom(&cfg, out.as_deref(), *patients)?)
        }
        Command::Report { run, metrics } => {
            if run.is_none() && metrics.is_empty() {
                return Err(Failure::Usage("give --run or --metrics".into(), "report"));
            }
            Ok(commands::report(run.as_deref(), metrics)?)
        }
    }
}

fn usage(subcommand: &str) -> String {
    let mut cmd = Cli::command();
    match cmd.find_subcommand_mut(subcommand) {
        Some(sub) => sub.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    renaldet::progress::set_enabled(!cli.quiet);
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg, sub)) => {
            eprintln!("error: InvalidArguments: {msg}\n{}", usage(sub));
            ExitCode::from(2)
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {}: {e}", e.name());
            if e.class() == ErrorClass::Usage {
                eprintln!("{}", usage(command_name(&cli.command)));
            }
            ExitCode::from(exit_code(e.class()))
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Convert { .. } => "convert",
        Command::BuildDataset { .. } => "build-dataset",
        Command::Train { .. } => "train",
        Command::Detect { .. } => "detect",
        Command::Eval { .. } => "eval",
        Command::Selftrain => "selftrain",
        Command::Phantom { .. } => "phantom",
        Command::Report { .. } => "report",
    }
}
