use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use mri_enhance::enhance::Method;
use mri_enhance::pipeline::{
    export_histogram, ingest, ingest_evaluation, run_enhance, run_evaluate, OutputFormat, PipelineError,
    RunConfig, Size,
};

const EXIT_PARTIAL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(
    name = "mri-enhance",
    version,
    about = "HE / CLAHE enhancement and segmentation scoring for MRI slices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resize and enhance every image in a directory.
    Enhance(EnhanceArgs),
    /// Score predicted masks against ground truth.
    Evaluate(EvaluateArgs),
    /// Export the intensity histogram and CDF of one image.
    Histogram {
        #[arg(long = "in")]
        input: PathBuf,
        /// CSV unless the name ends in .json
        #[arg(long = "out")]
        output: PathBuf,
    },
}

#[derive(Args)]
struct EnhanceArgs {
    /// JSON run config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// none, he, clahe, blend, he-clahe or clahe-he
    #[arg(long)]
    method: Option<Method>,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long = "out")]
    output: Option<PathBuf>,
    /// Ground-truth masks paired by stem; written resized and binarized.
    #[arg(long)]
    masks: Option<PathBuf>,
    /// CLAHE tile grid as X,Y
    #[arg(long, value_parser = parse_tiles)]
    tiles: Option<(usize, usize)>,
    #[arg(long)]
    clip_limit: Option<f64>,
    /// HE weight for the blend method
    #[arg(long)]
    alpha: Option<f64>,
    /// Target size as WxH
    #[arg(long)]
    size: Option<Size>,
    #[arg(long)]
    export_histograms: bool,
    #[arg(long)]
    format: Option<OutputFormat>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    /// JSON report path
    #[arg(long = "out")]
    report: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

fn parse_tiles(s: &str) -> Result<(usize, usize), String> {
    let (x, y) = s.split_once(',').ok_or("tiles must look like X,Y")?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|e| format!("bad tile count `{v}`: {e}"))
    };
    Ok((parse(x)?, parse(y)?))
}

/// Fatal outcome plus the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match e {
            PipelineError::InvalidConfig(_)
            | PipelineError::EmptyDataset(_)
            | PipelineError::DuplicateStem { .. } => EXIT_CONFIG,
            _ => EXIT_PARTIAL,
        };
        Failure {
            code,
            error: e.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure {
            code: EXIT_PARTIAL,
            error,
        }
    }
}

fn invalid(msg: &str) -> Failure {
    PipelineError::InvalidConfig(msg.to_owned()).into()
}

fn base_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn enhance(args: EnhanceArgs) -> Result<u8, Failure> {
    let mut cfg = base_config(args.config.as_deref())?;
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if args.input.is_some() {
        cfg.input = args.input;
    }
    if args.output.is_some() {
        cfg.output = args.output;
    }
    if args.masks.is_some() {
        cfg.masks = args.masks;
    }
    if let Some((x, y)) = args.tiles {
        cfg.clahe.tiles_x = x;
        cfg.clahe.tiles_y = y;
    }
    if let Some(c) = args.clip_limit {
        cfg.clahe.clip_limit = c;
    }
    if args.alpha.is_some() {
        cfg.alpha = args.alpha;
    }
    if let Some(s) = args.size {
        cfg.size = s;
    }
    cfg.export_histograms |= args.export_histograms;
    if let Some(f) = args.format {
        cfg.format = f;
    }
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }

    let input = cfg.input.clone().ok_or_else(|| invalid("--in is required"))?;
    if cfg.output.is_none() {
        return Err(invalid("--out is required"));
    }
    cfg.enhancement()?;
    let manifest = ingest(&input, cfg.masks.as_deref(), None)?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    let summary = run_enhance(&manifest, &cfg)?;
    for f in summary.files.iter().filter(|f| f.error.is_some()) {
        eprintln!("error: {}: {}", f.input, f.error.as_deref().unwrap_or_default());
    }
    eprintln!("{} enhanced, {} failed", summary.succeeded, summary.failed);
    Ok(if summary.failed > 0 { EXIT_PARTIAL } else { 0 })
}

fn evaluate(args: EvaluateArgs) -> Result<u8, Failure> {
    let mut cfg = base_config(args.config.as_deref())?;
    if args.truth.is_some() {
        cfg.truth = args.truth;
    }
    if args.pred.is_some() {
        cfg.pred = args.pred;
    }
    if let Some(t) = args.threshold {
        cfg.threshold = t;
    }
    if args.report.is_some() {
        cfg.report = args.report;
    }
    if args.csv.is_some() {
        cfg.csv = args.csv;
    }
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }

    let truth = cfg.truth.clone().ok_or_else(|| invalid("--truth is required"))?;
    let pred = cfg.pred.clone().ok_or_else(|| invalid("--pred is required"))?;
    let report_path = cfg.report.clone().ok_or_else(|| invalid("--out is required"))?;
    cfg.validate_threshold()?;

    let manifest = ingest_evaluation(&truth, &pred)?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    let report = run_evaluate(&manifest, &cfg)?;
    fs::write(&report_path, report.to_json())
        .with_context(|| format!("writing {}", report_path.display()))?;
    if let Some(csv) = &cfg.csv {
        fs::write(csv, report.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    }
    for f in &report.failures {
        eprintln!("error: {}: {}", f.id, f.error);
    }
    if let Some(agg) = &report.aggregate {
        eprintln!(
            "{} images: mean accuracy {:.4}, mean jaccard {:.4}, mean dice {:.4}",
            agg.images, agg.mean_accuracy, agg.mean_jaccard, agg.mean_dice
        );
    }
    Ok(if report.failures.is_empty() {
        0
    } else {
        EXIT_PARTIAL
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Enhance(args) => enhance(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Histogram { input, output } => export_histogram(&input, &output)
            .map(|()| 0)
            .map_err(Failure::from),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
