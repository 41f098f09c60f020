use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use chrono::{NaiveDate, Utc};
use clap::{Args, Parser, Subcommand};

use epiforge::enrich::budget::DEFAULT_DAILY_LIMIT;
use epiforge::enrich::provider::{ApiKeys, FixtureProvider, LiveEndpoints, LiveProvider, Provider, ProviderKind};
use epiforge::ingest::DEFAULT_YEAR_RANGE;
use epiforge::model::{split::DEFAULT_SEED, split::DEFAULT_TEST_FRACTION, DEFAULT_LAMBDA};
use epiforge::pipeline::{self, PipelineConfig, StageStatus, CACHE_ENV};

#[derive(Debug, Parser)]
#[command(name = "epiforge", version, about = "Weekly chikungunya report pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and clean the report CSVs into clean.ejsonl and rejects.csv
    Ingest,
    /// Geocode and attach weather, writing enriched.ejsonl and excluded.csv
    Enrich,
    /// Fit the incidence-rate model on the training split
    Train,
    /// Write train and test metrics for the fitted model
    Evaluate,
    /// Write aggregate and actual-vs-scored tables
    Report,
    /// Every stage in order
    RunAll,
}

#[derive(Debug, Args)]
struct Opts {
    /// Directory of weekly report CSV files
    #[arg(long, global = true, default_value = "reports")]
    input: PathBuf,
    /// Directory for all artifacts
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Answer provider requests from the fixture tree instead of the network
    #[arg(long, global = true)]
    offline: bool,
    #[arg(long, global = true, default_value = "fixtures")]
    fixtures: PathBuf,
    /// Response cache directory [default: <out>/cache]
    #[arg(long, global = true, env = CACHE_ENV)]
    cache: Option<PathBuf>,
    /// Year of every report row, overriding any Year column
    #[arg(long, global = true)]
    year: Option<i32>,
    #[arg(long, global = true, default_value_t = *DEFAULT_YEAR_RANGE.start())]
    first_year: i32,
    #[arg(long, global = true, default_value_t = *DEFAULT_YEAR_RANGE.end())]
    last_year: i32,
    #[arg(long, global = true, default_value_t = DEFAULT_TEST_FRACTION)]
    test_fraction: f64,
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Ridge penalty on every non-intercept weight
    #[arg(long, global = true, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, global = true, value_name = "N", default_value_t = DEFAULT_DAILY_LIMIT)]
    budget_geocode: u32,
    #[arg(long, global = true, value_name = "N", default_value_t = DEFAULT_DAILY_LIMIT)]
    budget_timezone: u32,
    #[arg(long, global = true, value_name = "N", default_value_t = DEFAULT_DAILY_LIMIT)]
    budget_weather: u32,
    /// Day the budgets are counted against [default: today, UTC]
    #[arg(long, global = true, hide = true)]
    budget_day: Option<NaiveDate>,
    /// Concurrent enrichment workers
    #[arg(long, global = true, default_value_t = 4)]
    jobs: usize,
    /// Score every record in the comparison tables, not just the test split
    #[arg(long, global = true)]
    score_all: bool,
    /// Also write SVG charts
    #[arg(long, global = true)]
    charts: bool,
}

impl Opts {
    fn config(&self) -> anyhow::Result<PipelineConfig> {
        if self.first_year > self.last_year {
            bail!("--first-year {} is after --last-year {}", self.first_year, self.last_year);
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            bail!("--test-fraction must be strictly between 0 and 1");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            bail!("--lambda must be a non-negative number");
        }
        let cwd = std::env::current_dir().context("resolving the working directory")?;
        let abs = |p: &PathBuf| if p.is_absolute() { p.clone() } else { cwd.join(p) };
        let output_dir = abs(&self.out);
        let mut config = PipelineConfig::new(abs(&self.input), &output_dir);
        config.cache_dir = self.cache.as_ref().map(&abs).unwrap_or_else(|| output_dir.join("cache"));
        config.fixtures_dir = abs(&self.fixtures);
        config.offline = self.offline;
        config.year = self.year;
        config.year_range = self.first_year..=self.last_year;
        config.test_fraction = self.test_fraction;
        config.seed = self.seed;
        config.ridge_lambda = self.lambda;
        config.budgets = BTreeMap::from([
            (ProviderKind::Geocode, self.budget_geocode),
            (ProviderKind::Timezone, self.budget_timezone),
            (ProviderKind::Weather, self.budget_weather),
        ]);
        config.jobs = self.jobs.max(1);
        config.score_all = self.score_all;
        config.charts = self.charts;
        Ok(config)
    }
}

fn provider(config: &PipelineConfig) -> anyhow::Result<Box<dyn Provider>> {
    if config.offline {
        if !config.fixtures_dir.is_dir() {
            bail!("fixture directory {} does not exist", config.fixtures_dir.display());
        }
        return Ok(Box::new(FixtureProvider::new(&config.fixtures_dir)));
    }
    let keys = ApiKeys::from_env().context("live enrichment needs API keys (or pass --offline)")?;
    Ok(Box::new(LiveProvider::new(LiveEndpoints::default(), keys)))
}

fn status_code(status: &StageStatus) -> u8 {
    match status {
        StageStatus::Done => {}
        StageStatus::Empty(msg) => eprintln!("epiforge: {msg}"),
        StageStatus::Paused(b) => eprintln!("epiforge: {b}; rerun later to resume"),
    }
    status.exit_code() as u8
}

fn run(cli: &Cli) -> anyhow::Result<u8> {
    let config = cli.opts.config()?;
    let today = cli.opts.budget_day.unwrap_or_else(|| Utc::now().date_naive());
    let code = match cli.command {
        Command::Ingest => {
            let r = pipeline::ingest(&config)?;
            println!(
                "ingest: {} files, {} clean, {} rejected, {} duplicates",
                r.files, r.clean, r.rejects, r.duplicates
            );
            status_code(&r.status)
        }
        Command::Enrich => {
            let provider = provider(&config)?;
            let r = pipeline::enrich(&config, provider.as_ref(), today)?;
            println!("enrich: {} enriched, {} excluded, {} pending, calls {:?}", r.enriched, r.excluded, r.pending, r.calls);
            status_code(&r.status)
        }
        Command::Train => {
            let r = pipeline::train(&config)?;
            if let Some(doc) = &r.document {
                println!("train: {} columns on {} rows", doc.model.weights.len(), doc.split.n_train);
            }
            status_code(&r.status)
        }
        Command::Evaluate => {
            let m = pipeline::evaluate(&config)?;
            println!("evaluate: test mae {:.6} rse {:?} cod {:?}", m.test.metrics.mae, m.test.metrics.rse, m.test.metrics.cod);
            0
        }
        Command::Report => {
            let r = pipeline::report(&config)?;
            println!("report: {} files", r.files.len());
            0
        }
        Command::RunAll => {
            let provider = provider(&config)?;
            let r = pipeline::run_all(&config, provider.as_ref(), today)?;
            if let Some(m) = &r.metrics {
                println!("run-all: test mae {:.6} rse {:?} cod {:?}", m.test.metrics.mae, m.test.metrics.rse, m.test.metrics.cod);
            }
            status_code(&r.status)
        }
    };
    Ok(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("epiforge: {e:#}");
            ExitCode::from(1)
        }
    }
}
