#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::NaiveDate;
use epiforge::enrich::provider::{FetchError, FixtureProvider, Provider, ProviderKind, Request};
use epiforge::ingest::RecordKey;
use epiforge::pipeline::PipelineConfig;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn day(d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 3, d).unwrap()
}

/// Offline configuration over the bundled reports, writing under `out`.
pub fn offline_config(out: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::new(fixtures().join("reports"), out);
    c.fixtures_dir = fixtures();
    c.offline = true;
    c.jobs = 4;
    c
}

/// Serves the fixture tree and records every request it is asked for.
pub struct CountingProvider {
    inner: FixtureProvider,
    calls: Mutex<Vec<Request>>,
}

impl CountingProvider {
    pub fn new() -> Self {
        Self {
            inner: FixtureProvider::new(fixtures()),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<Request> {
        self.calls.lock().unwrap().clone()
    }

    pub fn count(&self, kind: ProviderKind) -> usize {
        self.calls.lock().unwrap().iter().filter(|r| r.kind() == kind).count()
    }

    pub fn total(&self) -> usize {
        self.calls.lock().unwrap().len()
    }
}

impl Provider for CountingProvider {
    fn fetch(&self, request: &Request) -> Result<String, FetchError> {
        self.calls.lock().unwrap().push(request.clone());
        self.inner.fetch(request)
    }
}

pub fn budgets(weather: u32) -> BTreeMap<ProviderKind, u32> {
    BTreeMap::from([
        (ProviderKind::Geocode, 1000),
        (ProviderKind::Timezone, 1000),
        (ProviderKind::Weather, weather),
    ])
}

/// Keys of the rows the fixture corpus serves without weather.
pub fn weather_gaps() -> Vec<RecordKey> {
    let mut rdr = csv::Reader::from_path(fixtures().join("golden/weather_gaps.csv")).unwrap();
    rdr.deserialize::<(String, i32, u32)>()
        .map(|r| {
            let (country, year, week) = r.unwrap();
            RecordKey { country, year, week }
        })
        .collect()
}

/// Every file under `dir`, relative path to bytes.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
