//! File-based pipeline stages. Each stage reads its inputs from the output
//! directory, writes its artifacts there, and can be rerun on its own.
//!
//! | stage    | reads                         | writes                                   |
//! |----------|-------------------------------|------------------------------------------|
//! | ingest   | `<input>/*.csv`               | `clean.ejsonl`, `rejects.csv`            |
//! | enrich   | `clean.ejsonl`, cache         | `enriched.ejsonl`, `excluded.csv`, cache |
//! | train    | `enriched.ejsonl`             | `model.json`                             |
//! | evaluate | `enriched.ejsonl`, model      | `metrics.json`                           |
//! | report   | `enriched.ejsonl`, model      | `agg_year.csv`, `agg_summary.csv`, `compare_<year>.csv` |

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics;
use crate::enrich::budget::{BudgetExhausted, BudgetLedger};
use crate::enrich::cache::ResponseCache;
use crate::enrich::provider::{Provider, ProviderKind};
use crate::enrich::{enrich_all, EnrichedRecord, Gateway};
use crate::fsutil::write_atomic;
use crate::ingest::{self, CleanRecord, RejectReason};
use crate::model::{self, EvalMetrics, ModelCoefficients};
use crate::store::{default_units, DatasetFile, StoreError};

pub const CLEAN_FILE: &str = "clean.ejsonl";
pub const REJECTS_FILE: &str = "rejects.csv";
pub const ENRICHED_FILE: &str = "enriched.ejsonl";
pub const EXCLUDED_FILE: &str = "excluded.csv";
pub const MODEL_FILE: &str = "model.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const BUDGET_FILE: &str = "budget.json";
pub const CACHE_ENV: &str = "EPIFORGE_CACHE_DIR";

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub fixtures_dir: PathBuf,
    pub offline: bool,
    /// Overrides any `Year` column in the report files.
    pub year: Option<i32>,
    pub year_range: RangeInclusive<i32>,
    pub test_fraction: f64,
    pub seed: u64,
    pub ridge_lambda: f64,
    pub budgets: BTreeMap<ProviderKind, u32>,
    pub jobs: usize,
    pub score_all: bool,
    pub charts: bool,
}

impl PipelineConfig {
    /// Defaults rooted at `output_dir`, with the cache under it.
    pub fn new(input_dir: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        let output_dir = output_dir.into();
        Self {
            input_dir: input_dir.into(),
            cache_dir: output_dir.join("cache"),
            output_dir,
            fixtures_dir: PathBuf::from("fixtures"),
            offline: false,
            year: None,
            year_range: ingest::DEFAULT_YEAR_RANGE,
            test_fraction: model::split::DEFAULT_TEST_FRACTION,
            seed: model::split::DEFAULT_SEED,
            ridge_lambda: model::DEFAULT_LAMBDA,
            budgets: BTreeMap::new(),
            jobs: 1,
            score_all: false,
            charts: false,
        }
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error("enrichment stopped: {0}")]
    Enrich(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageStatus {
    Done,
    /// Nothing usable to produce.
    Empty(String),
    Paused(BudgetExhausted),
}

impl StageStatus {
    pub fn exit_code(&self) -> i32 {
        match self {
            StageStatus::Done => 0,
            StageStatus::Empty(_) => 2,
            StageStatus::Paused(_) => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub status: StageStatus,
    pub files: usize,
    pub failed_files: Vec<String>,
    pub raw_rows: usize,
    pub clean: usize,
    pub rejects: usize,
    pub duplicates: usize,
}

fn report_files(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let entries = std::fs::read_dir(dir).map_err(io_err(dir))?;
    let mut files = Vec::new();
    for e in entries {
        let path = e.map_err(io_err(dir))?.path();
        let is_csv = path.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv"));
        if path.is_file() && is_csv {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn clean_units() -> BTreeMap<String, String> {
    default_units()
        .into_iter()
        .filter(|(k, _)| k == "incidence_rate" || k == "population_k")
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<(), PipelineError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let bad = |e: csv::Error| PipelineError::Io {
        path: path.to_owned(),
        source: std::io::Error::other(e),
    };
    w.write_record(header).map_err(bad)?;
    for r in rows {
        w.serialize(r).map_err(bad)?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Io {
        path: path.to_owned(),
        source: std::io::Error::other(e.to_string()),
    })?;
    write_atomic(path, &bytes).map_err(io_err(path))
}

/// Parses, cleans, validates and deduplicates every `*.csv` in the input
/// directory.
pub fn ingest(config: &PipelineConfig) -> Result<IngestReport, PipelineError> {
    if !config.input_dir.is_dir() {
        return Err(PipelineError::Config(format!("input directory {} does not exist", config.input_dir.display())));
    }
    let files = report_files(&config.input_dir)?;
    let mut report = IngestReport {
        status: StageStatus::Done,
        files: files.len(),
        failed_files: Vec::new(),
        raw_rows: 0,
        clean: 0,
        rejects: 0,
        duplicates: 0,
    };
    if files.is_empty() {
        report.status = StageStatus::Empty(format!("no .csv report files in {}", config.input_dir.display()));
        return Ok(report);
    }

    let mut clean: Vec<CleanRecord> = Vec::new();
    let mut rejects: Vec<RejectReason> = Vec::new();
    for path in &files {
        match ingest::parse_report_path(path, config.year) {
            Ok((rows, parse_rejects)) => {
                report.raw_rows += rows.len() + parse_rejects.len();
                let (ok, bad) = ingest::validate_rows(&rows, &config.year_range);
                clean.extend(ok);
                rejects.extend(parse_rejects);
                rejects.extend(bad);
            }
            Err(e) => {
                log::error!("{e}");
                report.failed_files.push(path.display().to_string());
            }
        }
    }
    if report.failed_files.len() == files.len() {
        report.status = StageStatus::Empty("every report file failed to parse".into());
        return Ok(report);
    }

    let before = clean.len();
    let clean = ingest::dedupe(clean);
    report.duplicates = before - clean.len();
    report.clean = clean.len();
    report.rejects = rejects.len();
    rejects.sort_by(|a, b| (&a.source_file, a.source_line).cmp(&(&b.source_file, b.source_line)));

    DatasetFile::from_parts(clean_units(), clean, Vec::new())?.save(&config.artifact(CLEAN_FILE))?;
    write_csv(
        &config.artifact(REJECTS_FILE),
        &["source_file", "source_line", "code", "detail"],
        rejects.iter().map(|r| (&r.source_file, r.source_line, r.code.to_string(), &r.detail)),
    )?;
    if report.clean == 0 {
        report.status = StageStatus::Empty("no rows survived validation".into());
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrichReport {
    pub status: StageStatus,
    pub enriched: usize,
    pub excluded: usize,
    pub pending: usize,
    /// Provider calls made by this run, per provider.
    pub calls: BTreeMap<ProviderKind, usize>,
}

fn load_or_empty(path: &Path) -> Result<DatasetFile<EnrichedRecord>, PipelineError> {
    if path.exists() {
        Ok(DatasetFile::load(path)?)
    } else {
        Ok(DatasetFile::new(default_units()))
    }
}

/// Enriches every clean record not already enriched or excluded. Usage
/// against the daily budgets is persisted in the cache directory, keyed by
/// `today`.
pub fn enrich(config: &PipelineConfig, provider: &dyn Provider, today: NaiveDate) -> Result<EnrichReport, PipelineError> {
    let clean: DatasetFile<CleanRecord> = DatasetFile::load(&config.artifact(CLEAN_FILE))?;
    let enriched_path = config.artifact(ENRICHED_FILE);
    let existing = load_or_empty(&enriched_path)?;

    // keep earlier results only for records whose clean form is unchanged
    let current: BTreeMap<_, &CleanRecord> = clean.records.iter().map(|r| (r.key(), r)).collect();
    let kept_records: Vec<EnrichedRecord> = existing
        .records
        .into_iter()
        .filter(|r| current.get(&r.key()).is_some_and(|c| **c == r.record))
        .collect();
    let kept_exclusions: Vec<_> = existing.exclusions.into_iter().filter(|x| current.contains_key(&x.key)).collect();
    let base = DatasetFile::from_parts(existing.units, kept_records, kept_exclusions)?;
    let done: BTreeSet<_> = base.keys();
    let todo: Vec<CleanRecord> = clean.records.iter().filter(|r| !done.contains(&r.key())).cloned().collect();

    let cache = ResponseCache::on_disk(&config.cache_dir);
    let ledger = BudgetLedger::persistent(config.cache_dir.join(BUDGET_FILE), today, &config.budgets)
        .map_err(io_err(&config.cache_dir))?;
    let gateway = Gateway::new(provider, &cache, &ledger);
    let outcome = enrich_all(&gateway, &todo, config.jobs).map_err(PipelineError::Enrich)?;

    let delta = DatasetFile::from_parts(default_units(), outcome.enriched, outcome.excluded)?;
    let merged = base.merge(&delta)?;
    merged.save(&enriched_path)?;
    write_csv(
        &config.artifact(EXCLUDED_FILE),
        &["country", "year", "week", "reason", "detail"],
        merged
            .exclusions
            .iter()
            .map(|x| (&x.key.country, x.key.year, x.key.week, x.reason.to_string(), &x.detail)),
    )?;

    let calls = ProviderKind::ALL.iter().map(|&k| (k, gateway.stats(k).provider_calls)).collect();
    let status = match outcome.paused {
        Some(b) => StageStatus::Paused(b),
        None if merged.records.is_empty() => StageStatus::Empty("no record could be enriched".into()),
        None => StageStatus::Done,
    };
    Ok(EnrichReport {
        status,
        enriched: merged.records.len(),
        excluded: merged.exclusions.len(),
        pending: outcome.pending.len(),
        calls,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub seed: u64,
    pub test_fraction: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// What `train` writes: the model plus how its training rows were chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub split: SplitInfo,
    pub model: ModelCoefficients,
}

fn usable_records(config: &PipelineConfig) -> Result<Vec<EnrichedRecord>, PipelineError> {
    let data: DatasetFile<EnrichedRecord> = DatasetFile::load(&config.artifact(ENRICHED_FILE))?;
    Ok(data.records.into_iter().filter(|r| r.record.incidence_rate.is_some()).collect())
}

type Split = (Vec<EnrichedRecord>, Vec<EnrichedRecord>);

fn split_records(records: &[EnrichedRecord], test_fraction: f64, seed: u64) -> Result<Split, PipelineError> {
    Ok(model::split(records, test_fraction, seed)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub status: StageStatus,
    pub document: Option<ModelDocument>,
}

pub fn train(config: &PipelineConfig) -> Result<TrainReport, PipelineError> {
    let records = usable_records(config)?;
    if records.len() < 2 {
        return Ok(TrainReport {
            status: StageStatus::Empty(format!("{} records with an incidence rate; need at least 2", records.len())),
            document: None,
        });
    }
    let (train, test) = split_records(&records, config.test_fraction, config.seed)?;
    let (schema, _warnings) = model::FeatureSchema::learn(&train)?;
    let matrix = model::encode(&train, model::SchemaSource::Use(&schema))?;
    let fitted = model::fit(&matrix, config.ridge_lambda)?;
    let document = ModelDocument {
        split: SplitInfo {
            seed: config.seed,
            test_fraction: config.test_fraction,
            n_train: train.len(),
            n_test: test.len(),
        },
        model: fitted,
    };
    let path = config.artifact(MODEL_FILE);
    let json = serde_json::to_string_pretty(&document).expect("model serializes") + "\n";
    write_atomic(&path, json.as_bytes()).map_err(io_err(&path))?;
    Ok(TrainReport {
        status: StageStatus::Done,
        document: Some(document),
    })
}

pub fn load_model(config: &PipelineConfig) -> Result<ModelDocument, PipelineError> {
    let path = config.artifact(MODEL_FILE);
    let raw = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let doc: ModelDocument = serde_json::from_str(&raw).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    // re-run the structural checks
    ModelCoefficients::from_json(&serde_json::to_string(&doc.model).expect("model serializes"))?;
    Ok(doc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledMetrics {
    pub n: usize,
    #[serde(flatten)]
    pub metrics: EvalMetrics,
}

/// `metrics.json`: metrics on the training rows and on the held-out rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub train: LabeledMetrics,
    pub test: LabeledMetrics,
    pub ridge_lambda: f64,
    pub seed: u64,
    pub test_fraction: f64,
}

fn score(model: &ModelCoefficients, records: &[EnrichedRecord]) -> Result<LabeledMetrics, PipelineError> {
    let y: Vec<f64> = records.iter().filter_map(|r| r.record.incidence_rate).collect();
    let yhat: Vec<f64> = records.iter().map(|r| model::predict(model, r)).collect();
    Ok(LabeledMetrics {
        n: records.len(),
        metrics: model::evaluate(&y, &yhat)?,
    })
}

pub fn evaluate(config: &PipelineConfig) -> Result<MetricsDocument, PipelineError> {
    let doc = load_model(config)?;
    let records = usable_records(config)?;
    let (train, test) = split_records(&records, doc.split.test_fraction, doc.split.seed)?;
    let metrics = MetricsDocument {
        train: score(&doc.model, &train)?,
        test: score(&doc.model, &test)?,
        ridge_lambda: doc.model.ridge_lambda,
        seed: doc.split.seed,
        test_fraction: doc.split.test_fraction,
    };
    let path = config.artifact(METRICS_FILE);
    let json = serde_json::to_string_pretty(&metrics).expect("metrics serialize") + "\n";
    write_atomic(&path, json.as_bytes()).map_err(io_err(&path))?;
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub files: Vec<PathBuf>,
    pub comparisons: Vec<analytics::ComparisonRow>,
}

/// Aggregates over the enriched dataset, plus actual-vs-scored tables for
/// the held-out rows (or every row with `score_all`).
pub fn report(config: &PipelineConfig) -> Result<ReportSummary, PipelineError> {
    let doc = load_model(config)?;
    let data: DatasetFile<EnrichedRecord> = DatasetFile::load(&config.artifact(ENRICHED_FILE))?;
    let years = analytics::aggregate_by_year(data.records.iter().map(|r| &r.record));
    let summaries = analytics::aggregate_by_summary(&data.records);
    let scored_rows = if config.score_all {
        data.records.clone()
    } else {
        let usable: Vec<_> = data.records.iter().filter(|r| r.record.incidence_rate.is_some()).cloned().collect();
        split_records(&usable, doc.split.test_fraction, doc.split.seed)?.1
    };
    let comparisons = analytics::comparison_series(&scored_rows, &doc.model);

    let out = &config.output_dir;
    for entry in std::fs::read_dir(out).map_err(io_err(out))? {
        let path = entry.map_err(io_err(out))?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if name.starts_with("compare_") && (name.ends_with(".csv") || name.ends_with(".svg")) {
            std::fs::remove_file(&path).map_err(io_err(&path))?;
        }
    }
    let mut files = analytics::write_report(out, &years, &summaries, &comparisons).map_err(io_err(out))?;
    if config.charts {
        files.extend(analytics::write_charts(out, &years, &summaries, &comparisons).map_err(io_err(out))?);
    }
    Ok(ReportSummary { files, comparisons })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub ingest: IngestReport,
    pub enrich: Option<EnrichReport>,
    pub metrics: Option<MetricsDocument>,
    pub status: StageStatus,
}

/// All stages in order, stopping at the first that does not finish.
pub fn run_all(config: &PipelineConfig, provider: &dyn Provider, today: NaiveDate) -> Result<RunReport, PipelineError> {
    let ingest = ingest(config)?;
    let mut run = RunReport {
        status: ingest.status.clone(),
        ingest,
        enrich: None,
        metrics: None,
    };
    if run.status != StageStatus::Done {
        return Ok(run);
    }
    let enriched = enrich(config, provider, today)?;
    run.status = enriched.status.clone();
    run.enrich = Some(enriched);
    if run.status != StageStatus::Done {
        return Ok(run);
    }
    let trained = train(config)?;
    if trained.status != StageStatus::Done {
        run.status = trained.status;
        return Ok(run);
    }
    run.metrics = Some(evaluate(config)?);
    report(config)?;
    Ok(run)
}
