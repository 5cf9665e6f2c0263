//! Batch orchestration over image directories.
//!
//! Files are paired across directories by file stem and processed in
//! lexicographic stem order on a bounded rayon pool. Every item writes only
//! its own output files; the coordinator writes the run manifest once at the
//! end. Per-file failures are recorded and never abort the batch.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clahe::ClaheParams;
use crate::enhance::{EnhancementConfig, Method};
use crate::histogram::{compute_histogram, HistogramExport};
use crate::hybrid::{HybridError, DEFAULT_ALPHA};
use crate::image::{
    decode_image, encode_pgm, encode_png, resize, BinaryMask, GrayImage, ImageError, ProbabilityMap,
};
use crate::metrics::{evaluate, summarize, AggregateReport, MetricsError, MetricsReport};
use crate::SCHEMA_VERSION;

/// Caps the worker pool size when set to a positive integer.
pub const THREADS_ENV: &str = "MRI_ENHANCE_THREADS";
pub const IMAGE_EXTENSIONS: [&str; 2] = ["png", "pgm"];
pub const MASK_BINARIZE_LEVEL: u8 = 128;
pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("no .png or .pgm images found in {0}")]
    EmptyDataset(PathBuf),
    #[error("stem `{stem}` appears more than once in {dir}")]
    DuplicateStem { stem: String, dir: PathBuf },
    #[error("no {kind} found for `{stem}`")]
    MissingMask { stem: String, kind: &'static str },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Enhance(#[from] HybridError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, PipelineError> {
    fs::read(path).map_err(|e| PipelineError::io(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(path).map_err(|e| PipelineError::io(path, e))
}

pub fn load_image(path: &Path) -> Result<GrayImage, PipelineError> {
    Ok(decode_image(&read(path)?)?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DatasetEntry {
    pub stem: String,
    pub image: PathBuf,
    pub truth: Option<PathBuf>,
    pub pred: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DatasetManifest {
    pub entries: Vec<DatasetEntry>,
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn paired_truth(&self) -> usize {
        self.entries.iter().filter(|e| e.truth.is_some()).count()
    }

    pub fn paired_pred(&self) -> usize {
        self.entries.iter().filter(|e| e.pred.is_some()).count()
    }
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

/// Supported image files of `dir` keyed by stem.
fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>, PipelineError> {
    let mut found = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| PipelineError::io(dir, e))? {
        let path = entry.map_err(|e| PipelineError::io(dir, e))?.path();
        if !path.is_file() || !has_image_extension(&path) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned) else {
            continue;
        };
        if found.insert(stem.clone(), path).is_some() {
            return Err(PipelineError::DuplicateStem {
                stem,
                dir: dir.to_path_buf(),
            });
        }
    }
    Ok(found)
}

fn pair(
    images: &BTreeMap<String, PathBuf>,
    others: Option<&Path>,
    kind: &str,
    warnings: &mut Vec<String>,
) -> Result<BTreeMap<String, PathBuf>, PipelineError> {
    let Some(dir) = others else {
        return Ok(BTreeMap::new());
    };
    let found = list_images(dir)?;
    for (stem, path) in &found {
        if !images.contains_key(stem) {
            warnings.push(format!(
                "unpaired {kind} {} has no matching image",
                path.display()
            ));
        }
    }
    Ok(found)
}

/// Lists the images of `image_dir` and pairs masks and predictions by stem.
///
/// Unpaired images stay in the manifest without masks; unpaired masks or
/// predictions become warnings.
pub fn ingest(
    image_dir: &Path,
    mask_dir: Option<&Path>,
    pred_dir: Option<&Path>,
) -> Result<DatasetManifest, PipelineError> {
    let images = list_images(image_dir)?;
    if images.is_empty() {
        return Err(PipelineError::EmptyDataset(image_dir.to_path_buf()));
    }
    let mut warnings = Vec::new();
    let mut truths = pair(&images, mask_dir, "mask", &mut warnings)?;
    let mut preds = pair(&images, pred_dir, "prediction", &mut warnings)?;
    let entries = images
        .into_iter()
        .map(|(stem, image)| DatasetEntry {
            truth: truths.remove(&stem),
            pred: preds.remove(&stem),
            stem,
            image,
        })
        .collect();
    Ok(DatasetManifest { entries, warnings })
}

/// Manifest for scoring: ground-truth masks drive the listing.
pub fn ingest_evaluation(truth_dir: &Path, pred_dir: &Path) -> Result<DatasetManifest, PipelineError> {
    let mut manifest = ingest(truth_dir, None, Some(pred_dir))?;
    for e in &mut manifest.entries {
        e.truth = Some(e.image.clone());
    }
    Ok(manifest)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Size {
    pub width: usize,
    pub height: usize,
}

impl Default for Size {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
        }
    }
}

impl fmt::Display for Size {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("size must look like WxH with positive integers, got `{s}`");
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let width: usize = w.trim().parse().map_err(|_| bad())?;
        let height: usize = h.trim().parse().map_err(|_| bad())?;
        if width == 0 || height == 0 {
            return Err(bad());
        }
        Ok(Self { width, height })
    }
}

impl TryFrom<String> for Size {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Size> for String {
    fn from(s: Size) -> String {
        s.to_string()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Pgm,
    Png,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Pgm => "pgm",
            OutputFormat::Png => "png",
        }
    }

    fn encode(self, img: &GrayImage) -> Result<Vec<u8>, ImageError> {
        match self {
            OutputFormat::Pgm => Ok(encode_pgm(img)),
            OutputFormat::Png => encode_png(img),
        }
    }
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pgm" => Ok(Self::Pgm),
            "png" => Ok(Self::Png),
            other => Err(format!("unknown output format `{other}` (expected pgm or png)")),
        }
    }
}

/// Everything a run needs. Loaded from JSON; CLI flags override fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub size: Size,
    pub clahe: ClaheParams,
    /// HE weight for `blend`; rejected for other methods.
    pub alpha: Option<f64>,
    pub threshold: f64,
    pub input: Option<PathBuf>,
    pub masks: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub export_histograms: bool,
    pub format: OutputFormat,
    pub truth: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    /// Worker count before the environment cap; defaults to the core count.
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::None,
            size: Size::default(),
            clahe: ClaheParams::default(),
            alpha: None,
            threshold: 0.5,
            input: None,
            masks: None,
            output: None,
            export_histograms: false,
            format: OutputFormat::Pgm,
            truth: None,
            pred: None,
            report: None,
            csv: None,
            workers: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn enhancement(&self) -> Result<EnhancementConfig, PipelineError> {
        if self.alpha.is_some() && self.method != Method::Blend {
            return Err(PipelineError::InvalidConfig(format!(
                "alpha only applies to blend, not {}",
                self.method
            )));
        }
        let cfg = EnhancementConfig {
            method: self.method,
            clahe: self.clahe,
            alpha: self.alpha.unwrap_or(DEFAULT_ALPHA),
        };
        cfg.validate()
            .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate_threshold(&self) -> Result<(), PipelineError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(PipelineError::InvalidConfig(format!(
                "threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn worker_count(&self) -> usize {
        let env_cap = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok());
        effective_workers(self.workers, env_cap)
    }
}

/// Requested (or core count) workers, capped by the environment value.
pub fn effective_workers(requested: Option<usize>, env_cap: Option<usize>) -> usize {
    let base = requested
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    match env_cap {
        Some(cap) if cap > 0 => base.min(cap),
        _ => base,
    }
}

fn with_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::InvalidConfig(format!("worker pool: {e}")))?;
    Ok(pool.install(job))
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(
        || path.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FileStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FileRecord {
    pub stem: String,
    pub input: String,
    pub status: FileStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_output: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// The effective enhancement settings, as recorded in the run manifest.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecordedConfig {
    pub method: Method,
    pub size: Size,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clahe: Option<ClaheParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub format: OutputFormat,
    pub export_histograms: bool,
    pub pipeline_order: [&'static str; 3],
    pub mask_binarize_level: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub config: RecordedConfig,
    pub warnings: Vec<String>,
    pub succeeded: usize,
    pub failed: usize,
    pub files: Vec<FileRecord>,
}

impl RunSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run summary serializes")
    }
}

struct ItemOutput {
    output: String,
    mask_output: Option<String>,
}

fn enhance_entry(
    entry: &DatasetEntry,
    cfg: &EnhancementConfig,
    run: &RunConfig,
    out_dir: &Path,
) -> Result<ItemOutput, PipelineError> {
    let Size { width, height } = run.size;
    let resized = resize(&load_image(&entry.image)?, width, height);
    let enhanced = cfg.apply(&resized)?;

    let mask_output = match &entry.truth {
        Some(path) => {
            let mask = BinaryMask::from_gray(&resize(&load_image(path)?, width, height));
            let name = format!("{}.{}", entry.stem, run.format.extension());
            write(
                &out_dir.join("masks").join(&name),
                run.format.encode(&mask.to_gray())?,
            )?;
            Some(format!("masks/{name}"))
        }
        None => None,
    };

    if run.export_histograms {
        let dir = out_dir.join("histograms");
        for (tag, img) in [("pre", &resized), ("post", &enhanced)] {
            let export = HistogramExport::new(&compute_histogram(img));
            write(&dir.join(format!("{}.{tag}.csv", entry.stem)), export.to_csv())?;
            write(&dir.join(format!("{}.{tag}.json", entry.stem)), export.to_json())?;
        }
    }

    let output = format!("{}.{}", entry.stem, run.format.extension());
    write(&out_dir.join(&output), run.format.encode(&enhanced)?)?;
    Ok(ItemOutput { output, mask_output })
}

/// Decode, resize, enhance and write every manifest entry into `cfg.output`,
/// then write the run manifest there.
pub fn run_enhance(manifest: &DatasetManifest, cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    let enhancement = cfg.enhancement()?;
    let out_dir = cfg
        .output
        .as_deref()
        .ok_or_else(|| PipelineError::InvalidConfig("no output directory".into()))?;
    create_dir(out_dir)?;
    if manifest.paired_truth() > 0 {
        create_dir(&out_dir.join("masks"))?;
    }
    if cfg.export_histograms {
        create_dir(&out_dir.join("histograms"))?;
    }

    let files: Vec<FileRecord> = with_pool(cfg.worker_count(), || {
        manifest
            .entries
            .par_iter()
            .map(|entry| {
                let result = enhance_entry(entry, &enhancement, cfg, out_dir);
                let mut record = FileRecord {
                    stem: entry.stem.clone(),
                    input: file_name(&entry.image),
                    status: FileStatus::Ok,
                    output: None,
                    mask_output: None,
                    error: None,
                };
                match result {
                    Ok(item) => {
                        record.output = Some(item.output);
                        record.mask_output = item.mask_output;
                    }
                    Err(e) => {
                        record.status = FileStatus::Failed;
                        record.error = Some(e.to_string());
                    }
                }
                record
            })
            .collect()
    })?;

    let failed = files.iter().filter(|f| f.status == FileStatus::Failed).count();
    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: RecordedConfig {
            method: enhancement.method,
            size: cfg.size,
            clahe: enhancement.method.uses_clahe().then_some(enhancement.clahe),
            alpha: (enhancement.method == Method::Blend).then_some(enhancement.alpha),
            format: cfg.format,
            export_histograms: cfg.export_histograms,
            pipeline_order: ["decode", "resize", "enhance"],
            mask_binarize_level: MASK_BINARIZE_LEVEL,
        },
        warnings: manifest.warnings.clone(),
        succeeded: files.len() - failed,
        failed,
        files,
    };
    write(&out_dir.join(RUN_MANIFEST), summary.to_json())?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FileFailure {
    pub id: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub threshold: f64,
    pub mask_binarize_level: u8,
    pub images: Vec<MetricsReport>,
    pub failures: Vec<FileFailure>,
    pub warnings: Vec<String>,
    pub aggregate: Option<AggregateReport>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("evaluation report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(MetricsReport::CSV_HEADER);
        out.push('\n');
        for r in &self.images {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

fn evaluate_entry(entry: &DatasetEntry, t: f64) -> Result<MetricsReport, PipelineError> {
    let missing = |kind| PipelineError::MissingMask {
        stem: entry.stem.clone(),
        kind,
    };
    let truth_path = entry
        .truth
        .as_deref()
        .ok_or_else(|| missing("ground-truth mask"))?;
    let pred_path = entry.pred.as_deref().ok_or_else(|| missing("prediction"))?;
    let truth = BinaryMask::from_gray(&load_image(truth_path)?);
    let pred = ProbabilityMap::from_gray(&load_image(pred_path)?);
    Ok(evaluate(entry.stem.clone(), &pred, &truth, t)?)
}

/// Scores each entry's prediction against its ground truth.
///
/// Predictions are read as probabilities `v / 255`; truth masks are
/// binarized at 128.
pub fn run_evaluate(manifest: &DatasetManifest, cfg: &RunConfig) -> Result<EvaluationReport, PipelineError> {
    cfg.validate_threshold()?;
    let results: Vec<_> = with_pool(cfg.worker_count(), || {
        manifest
            .entries
            .par_iter()
            .map(|e| (e.stem.clone(), evaluate_entry(e, cfg.threshold)))
            .collect()
    })?;
    let mut images = Vec::new();
    let mut failures = Vec::new();
    for (id, result) in results {
        match result {
            Ok(r) => images.push(r),
            Err(e) => failures.push(FileFailure {
                id,
                error: e.to_string(),
            }),
        }
    }
    let aggregate = if images.is_empty() {
        None
    } else {
        Some(summarize(&images)?)
    };
    Ok(EvaluationReport {
        schema_version: SCHEMA_VERSION,
        threshold: cfg.threshold,
        mask_binarize_level: MASK_BINARIZE_LEVEL,
        images,
        failures,
        warnings: manifest.warnings.clone(),
        aggregate,
    })
}

/// Writes the histogram of one image as CSV, or JSON when `output` ends in `.json`.
pub fn export_histogram(input: &Path, output: &Path) -> Result<(), PipelineError> {
    let export = HistogramExport::new(&compute_histogram(&load_image(input)?));
    let is_json = output.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    write(
        output,
        if is_json {
            export.to_json()
        } else {
            export.to_csv()
        },
    )
}
