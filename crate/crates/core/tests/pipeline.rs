mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use common::{budgets, day, fixtures, offline_config, snapshot, weather_gaps, CountingProvider};
use epiforge::enrich::provider::{FetchError, Provider, ProviderKind, Request};
use epiforge::enrich::{EnrichedRecord, GeoPoint, WeatherObservation};
use epiforge::ingest::{CleanRecord, RecordKey};
use epiforge::pipeline::{self, PipelineConfig, StageStatus};
use epiforge::store::{default_units, DatasetFile};
use serde_json::Value;

fn load_enriched(out: &Path) -> DatasetFile<EnrichedRecord> {
    DatasetFile::load(&out.join(pipeline::ENRICHED_FILE)).unwrap()
}

#[test]
fn ingest_matches_golden_records() {
    let dir = tempfile::tempdir().unwrap();
    let config = offline_config(dir.path());
    let report = pipeline::ingest(&config).unwrap();
    assert_eq!(report.status, StageStatus::Done);
    assert_eq!((report.files, report.clean, report.rejects, report.duplicates), (3, 50, 6, 1));

    let clean: DatasetFile<CleanRecord> = DatasetFile::load(&dir.path().join(pipeline::CLEAN_FILE)).unwrap();
    let golden = std::fs::read_to_string(fixtures().join("golden/clean.jsonl")).unwrap();
    let want: Vec<Value> = golden.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let got: Vec<Value> = clean.records.iter().map(|r| serde_json::to_value(r).unwrap()).collect();
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(g, w);
    }
}

#[test]
fn ingest_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = offline_config(dir.path());
    pipeline::ingest(&config).unwrap();
    let first = snapshot(dir.path());
    pipeline::ingest(&config).unwrap();
    assert_eq!(snapshot(dir.path()), first);
}

#[test]
fn ingest_of_empty_directory_is_empty_result() {
    let input = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let config = PipelineConfig::new(input.path(), out.path());
    let report = pipeline::ingest(&config).unwrap();
    assert!(matches!(report.status, StageStatus::Empty(_)));
    assert_eq!(report.status.exit_code(), 2);
}

#[test]
fn ingest_when_every_file_fails() {
    let input = tempfile::tempdir().unwrap();
    std::fs::write(input.path().join("a.csv"), "just,some,other\ntable,1,2\n").unwrap();
    let out = tempfile::tempdir().unwrap();
    let report = pipeline::ingest(&PipelineConfig::new(input.path(), out.path())).unwrap();
    assert_eq!(report.status.exit_code(), 2);
    assert_eq!(report.failed_files.len(), 1);
}

#[test]
fn offline_enrichment_excludes_the_weather_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let config = offline_config(dir.path());
    pipeline::ingest(&config).unwrap();
    let provider = CountingProvider::new();
    let r = pipeline::enrich(&config, &provider, day(1)).unwrap();
    assert_eq!(r.status, StageStatus::Done);
    assert_eq!((r.enriched, r.excluded, r.pending), (48, 2, 0));
    // one geocode per country, one timezone and one weather call per row
    assert_eq!(provider.count(ProviderKind::Geocode), 10);
    assert_eq!(provider.count(ProviderKind::Timezone), 50);
    assert_eq!(provider.count(ProviderKind::Weather), 50);

    let data = load_enriched(dir.path());
    let excluded: Vec<_> = data.exclusions.iter().map(|x| x.key.clone()).collect();
    assert_eq!(excluded, weather_gaps());
    let csv = std::fs::read_to_string(dir.path().join(pipeline::EXCLUDED_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("country,year,week,reason,detail\n"));
}

#[test]
fn warm_cache_makes_no_calls_and_same_bytes() {
    let cache = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = tempfile::tempdir().unwrap();
        let mut config = offline_config(out.path());
        config.cache_dir = cache.path().to_owned();
        pipeline::ingest(&config).unwrap();
        let provider = CountingProvider::new();
        pipeline::enrich(&config, &provider, day(1)).unwrap();
        if run == 1 {
            assert_eq!(provider.total(), 0);
        }
        outputs.push(std::fs::read(out.path().join(pipeline::ENRICHED_FILE)).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn rerunning_enrich_skips_finished_records() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = offline_config(dir.path());
    pipeline::ingest(&config).unwrap();
    pipeline::enrich(&config, &CountingProvider::new(), day(1)).unwrap();
    let before = std::fs::read(dir.path().join(pipeline::ENRICHED_FILE)).unwrap();
    // even with an empty cache, nothing is requested again
    config.cache_dir = dir.path().join("other-cache");
    let provider = CountingProvider::new();
    let r = pipeline::enrich(&config, &provider, day(1)).unwrap();
    assert_eq!(provider.total(), 0);
    assert_eq!((r.enriched, r.excluded), (48, 2));
    assert_eq!(std::fs::read(dir.path().join(pipeline::ENRICHED_FILE)).unwrap(), before);
}

#[test]
fn budget_spread_over_several_days() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = offline_config(dir.path());
    config.budgets = budgets(10);
    pipeline::ingest(&config).unwrap();
    let mut seen = BTreeSet::new();
    for d in 1..=5 {
        let provider = CountingProvider::new();
        let r = pipeline::enrich(&config, &provider, day(d)).unwrap();
        assert_eq!(provider.count(ProviderKind::Weather), 10, "day {d}");
        for req in provider.calls() {
            assert!(seen.insert(req.cache_key()), "{req} requested twice");
        }
        let want = if d < 5 { 3 } else { 0 };
        assert_eq!(r.status.exit_code(), want, "day {d}");
        assert_eq!(r.enriched + r.excluded + r.pending, 50);
    }
    // a rerun the same day as a pause spends nothing more
    let provider = CountingProvider::new();
    pipeline::enrich(&config, &provider, day(5)).unwrap();
    assert_eq!(provider.total(), 0);
    let data = load_enriched(dir.path());
    assert_eq!((data.records.len(), data.exclusions.len()), (48, 2));
}

#[test]
fn paused_budget_is_remembered_within_a_day() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = offline_config(dir.path());
    config.budgets = budgets(10);
    pipeline::ingest(&config).unwrap();
    pipeline::enrich(&config, &CountingProvider::new(), day(1)).unwrap();
    let provider = CountingProvider::new();
    let r = pipeline::enrich(&config, &provider, day(1)).unwrap();
    assert_eq!(provider.count(ProviderKind::Weather), 0);
    assert!(matches!(r.status, StageStatus::Paused(b) if b.provider == ProviderKind::Weather));
}

struct Unreachable;

impl Provider for Unreachable {
    fn fetch(&self, request: &Request) -> Result<String, FetchError> {
        Err(FetchError::Transport {
            request: request.cache_key(),
            message: "connection refused".into(),
        })
    }
}

#[test]
fn transport_failure_is_fatal_and_loses_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let config = offline_config(dir.path());
    pipeline::ingest(&config).unwrap();
    assert!(pipeline::enrich(&config, &Unreachable, day(1)).is_err());
    // nothing was cached, so a later run enriches everything
    let r = pipeline::enrich(&config, &CountingProvider::new(), day(1)).unwrap();
    assert_eq!((r.enriched, r.excluded), (48, 2));
}

#[test]
fn enrich_needs_clean_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let config = offline_config(dir.path());
    assert!(pipeline::enrich(&config, &CountingProvider::new(), day(1)).is_err());
}

fn synthetic(n: usize) -> Vec<EnrichedRecord> {
    let countries = ["Aland", "Borduria", "Carpania"];
    let summaries = ["Clear", "Overcast", "Light Rain"];
    (0..n)
        .map(|i| {
            let f = i as f64;
            let c = i % 3;
            let temperature = 65.0 + (f * 0.73).sin() * 12.0;
            let humidity = 0.6 + (f * 1.31).cos() * 0.25;
            let s = (i / 3 + i) % 3;
            let suspected = 100 + (i * 37 % 400) as u64;
            let target = 1.5 + 0.04 * temperature + 2.0 * humidity + 0.003 * suspected as f64 + [0.0, 0.7, -0.4][c] + [0.2, 0.0, -0.3][s];
            EnrichedRecord {
                record: CleanRecord {
                    country: countries[c].into(),
                    year: 2014 + (i % 4) as i32,
                    week: 1 + (i / 4 % 52) as u32,
                    suspected,
                    confirmed: suspected / 7,
                    imported: Some((i % 5) as u64),
                    deaths: if i % 6 == 0 { None } else { Some((i % 3) as u64) },
                    incidence_rate: Some(target),
                    population_k: Some(1000 + 10 * c as u64),
                    source_file: "synthetic.csv".into(),
                    source_line: i as u64 + 2,
                },
                geo: GeoPoint::new(10.0 + c as f64, -60.0 - c as f64).unwrap(),
                timezone_id: "UTC".into(),
                utc_timestamp: 1_400_000_000 + i as i64 * 86_400,
                timestamp: 1_400_000_000 + i as i64 * 86_400,
                weather: WeatherObservation {
                    temperature,
                    summary: summaries[s].into(),
                    dew_point: temperature - 8.0 - (f * 0.4).sin(),
                    humidity,
                    pressure: 1012.0 + (f * 0.21).cos() * 4.0,
                    wind_speed: 6.0 + (f * 0.57).sin() * 3.0,
                },
            }
        })
        .collect()
}

fn write_enriched(dir: &Path, records: Vec<EnrichedRecord>) {
    DatasetFile::from_parts(default_units(), records, Vec::new())
        .unwrap()
        .save(&dir.join(pipeline::ENRICHED_FILE))
        .unwrap();
}

#[test]
fn synthetic_linear_data_is_fit_almost_exactly() {
    let dir = tempfile::tempdir().unwrap();
    write_enriched(dir.path(), synthetic(160));
    let config = PipelineConfig::new(dir.path(), dir.path());
    assert_eq!(pipeline::train(&config).unwrap().status, StageStatus::Done);
    let m = pipeline::evaluate(&config).unwrap();
    assert_eq!((m.train.n, m.test.n), (120, 40));
    let cod = m.test.metrics.cod.unwrap();
    assert!(cod >= 0.999, "test cod {cod}");
}

#[test]
fn seed_changes_split_but_not_schema() {
    let dir = tempfile::tempdir().unwrap();
    write_enriched(dir.path(), synthetic(60));
    let mut config = PipelineConfig::new(dir.path(), dir.path());
    let a = pipeline::train(&config).unwrap().document.unwrap();
    config.seed = 99;
    let b = pipeline::train(&config).unwrap().document.unwrap();
    assert_eq!(a.model.columns, b.model.columns);
    assert_ne!(a.model.schema.column_means, b.model.schema.column_means);
    assert_eq!((a.split.seed, b.split.seed), (1, 99));
}

#[test]
fn training_needs_two_usable_records() {
    let dir = tempfile::tempdir().unwrap();
    let mut recs = synthetic(3);
    recs[1].record.incidence_rate = None;
    recs[2].record.incidence_rate = None;
    write_enriched(dir.path(), recs);
    let r = pipeline::train(&PipelineConfig::new(dir.path(), dir.path())).unwrap();
    assert_eq!(r.status.exit_code(), 2);
    assert!(!dir.path().join(pipeline::MODEL_FILE).exists());
}

fn compare_rows_by_year(dir: &Path) -> BTreeMap<i32, usize> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let name = e.unwrap().file_name().to_string_lossy().into_owned();
        if let Some(year) = name.strip_prefix("compare_").and_then(|s| s.strip_suffix(".csv")) {
            let rows = std::fs::read_to_string(dir.join(&name)).unwrap().lines().count() - 1;
            out.insert(year.parse().unwrap(), rows);
        }
    }
    out
}

#[test]
fn score_all_compares_every_record() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = offline_config(dir.path());
    let run = pipeline::run_all(&config, &CountingProvider::new(), day(1)).unwrap();
    assert_eq!(run.status, StageStatus::Done);
    let held_out: usize = compare_rows_by_year(dir.path()).values().sum();
    assert_eq!(held_out, run.metrics.unwrap().test.n);

    config.score_all = true;
    pipeline::report(&config).unwrap();
    let data = load_enriched(dir.path());
    let mut per_year = BTreeMap::new();
    for r in &data.records {
        *per_year.entry(r.record.year).or_insert(0) += 1;
    }
    assert_eq!(compare_rows_by_year(dir.path()), per_year);
}

#[test]
fn stages_run_from_their_input_files_alone() {
    let first = tempfile::tempdir().unwrap();
    pipeline::run_all(&offline_config(first.path()), &CountingProvider::new(), day(1)).unwrap();
    // copy only enriched.ejsonl to a fresh directory and train there
    let second = tempfile::tempdir().unwrap();
    std::fs::copy(first.path().join(pipeline::ENRICHED_FILE), second.path().join(pipeline::ENRICHED_FILE)).unwrap();
    let config = PipelineConfig::new(second.path().join("unused"), second.path());
    pipeline::train(&config).unwrap();
    pipeline::evaluate(&config).unwrap();
    pipeline::report(&config).unwrap();
    for name in [pipeline::MODEL_FILE, pipeline::METRICS_FILE, "agg_year.csv", "agg_summary.csv"] {
        assert_eq!(
            std::fs::read(first.path().join(name)).unwrap(),
            std::fs::read(second.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn changed_clean_record_is_enriched_again() {
    let dir = tempfile::tempdir().unwrap();
    let config = offline_config(dir.path());
    pipeline::ingest(&config).unwrap();
    pipeline::enrich(&config, &CountingProvider::new(), day(1)).unwrap();

    let path = dir.path().join(pipeline::CLEAN_FILE);
    let mut clean: DatasetFile<CleanRecord> = DatasetFile::load(&path).unwrap();
    clean.records[0].suspected += 1;
    let changed = clean.records[0].clone();
    clean.save(&path).unwrap();

    let r = pipeline::enrich(&config, &CountingProvider::new(), day(1)).unwrap();
    assert_eq!(r.enriched, 48);
    let data = load_enriched(dir.path());
    let key: RecordKey = changed.key();
    let rec = data.records.iter().find(|r| r.key() == key).unwrap();
    assert_eq!(rec.record, changed);
}
