//! Line-delimited JSON dataset files (`.ejsonl`).
//!
//! ```text
//! {"schema_version":1,"units":{...}}
//! {<record>}                 one per line, sorted by (country, year, week)
//! {"excluded":{<exclusion>}} after the records, sorted the same way
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enrich::{EnrichedRecord, Exclusion, UNITS};
use crate::epiweek::{iso_weeks_in_year, Zone};
use crate::fsutil::write_atomic;
use crate::ingest::{CleanRecord, RecordKey};

pub const SCHEMA_VERSION: u32 = 1;
pub const EXTENSION: &str = "ejsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: missing header line")]
    MissingHeader { path: PathBuf },
    #[error("{path}: schema version {found} is not supported (this build reads version {supported})")]
    VersionMismatch { path: PathBuf, found: u32, supported: u32 },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("dataset invariant violated: {0}")]
    Invariant(String),
    #[error("unit labels differ: {0}")]
    UnitMismatch(String),
}

/// A record type that can live in a dataset file.
pub trait DatasetRecord: Serialize + DeserializeOwned + Clone {
    fn key(&self) -> RecordKey;
    fn validate(&self) -> Result<(), String>;
}

impl DatasetRecord for CleanRecord {
    fn key(&self) -> RecordKey {
        CleanRecord::key(self)
    }

    fn validate(&self) -> Result<(), String> {
        if self.country.is_empty() || self.country.trim() != self.country {
            return Err(format!("country {:?} is not clean", self.country));
        }
        let max = iso_weeks_in_year(self.year);
        if self.week == 0 || self.week > max {
            return Err(format!("week {} outside 1..={max} for {}", self.week, self.year));
        }
        if let Some(r) = self.incidence_rate {
            if !r.is_finite() || r < 0.0 {
                return Err(format!("incidence rate {r} is not a non-negative number"));
            }
        }
        if self.population_k == Some(0) {
            return Err("population_k must be positive".into());
        }
        Ok(())
    }
}

impl DatasetRecord for EnrichedRecord {
    fn key(&self) -> RecordKey {
        self.record.key()
    }

    fn validate(&self) -> Result<(), String> {
        self.record.validate()?;
        crate::enrich::GeoPoint::new(self.geo.lat, self.geo.lon)?;
        Zone::parse(&self.timezone_id).map_err(|e| e.to_string())?;
        self.weather.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    units: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct ExclusionLine {
    excluded: Exclusion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile<R> {
    pub schema_version: u32,
    pub units: BTreeMap<String, String>,
    pub records: Vec<R>,
    pub exclusions: Vec<Exclusion>,
}

pub fn default_units() -> BTreeMap<String, String> {
    UNITS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

impl<R: DatasetRecord> DatasetFile<R> {
    pub fn new(units: BTreeMap<String, String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            units,
            records: Vec::new(),
            exclusions: Vec::new(),
        }
    }

    /// Builds a dataset from unordered parts, sorting both lists.
    pub fn from_parts(units: BTreeMap<String, String>, mut records: Vec<R>, mut exclusions: Vec<Exclusion>) -> Result<Self, StoreError> {
        records.sort_by_key(|r| r.key());
        exclusions.sort_by(|a, b| a.key.cmp(&b.key));
        let d = Self {
            schema_version: SCHEMA_VERSION,
            units,
            records,
            exclusions,
        };
        d.check()?;
        Ok(d)
    }

    /// Sorted unique keys, no key both kept and excluded, every record valid.
    pub fn check(&self) -> Result<(), StoreError> {
        for w in self.records.windows(2) {
            let (a, b) = (w[0].key(), w[1].key());
            if a >= b {
                return Err(StoreError::Invariant(if a == b {
                    format!("duplicate record key {a}")
                } else {
                    format!("records out of order at {b}")
                }));
            }
        }
        for w in self.exclusions.windows(2) {
            if w[0].key >= w[1].key {
                return Err(StoreError::Invariant(format!("exclusions duplicated or out of order at {}", w[1].key)));
            }
        }
        let kept: BTreeSet<RecordKey> = self.records.iter().map(|r| r.key()).collect();
        if let Some(x) = self.exclusions.iter().find(|x| kept.contains(&x.key)) {
            return Err(StoreError::Invariant(format!("{} is both kept and excluded", x.key)));
        }
        for r in &self.records {
            r.validate().map_err(|m| StoreError::Invariant(format!("{}: {m}", r.key())))?;
        }
        Ok(())
    }

    pub fn keys(&self) -> BTreeSet<RecordKey> {
        self.records
            .iter()
            .map(|r| r.key())
            .chain(self.exclusions.iter().map(|x| x.key.clone()))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, StoreError> {
        self.check()?;
        let json = |v: Result<Vec<u8>, serde_json::Error>| v.map_err(|e| StoreError::Invariant(e.to_string()));
        let mut out = json(serde_json::to_vec(&Header {
            schema_version: self.schema_version,
            units: self.units.clone(),
        }))?;
        out.push(b'\n');
        for r in &self.records {
            out.extend(json(serde_json::to_vec(r))?);
            out.push(b'\n');
        }
        for x in &self.exclusions {
            out.extend(json(serde_json::to_vec(&ExclusionLine { excluded: x.clone() }))?);
            out.push(b'\n');
        }
        Ok(out)
    }

    /// Validates and writes atomically.
    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let bytes = self.to_bytes()?;
        write_atomic(path, &bytes).map_err(|source| StoreError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let file = std::fs::File::open(path).map_err(|source| StoreError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::read(io::BufReader::new(file), path)
    }

    /// Parses a dataset, stopping at the first invalid line.
    pub fn read(reader: impl BufRead, path: &Path) -> Result<Self, StoreError> {
        let malformed = |line: usize, message: String| StoreError::Malformed {
            path: path.to_owned(),
            line,
            message,
        };
        let mut lines = reader.lines().enumerate();
        let header = loop {
            match lines.next() {
                None => return Err(StoreError::MissingHeader { path: path.to_owned() }),
                Some((_, Err(source))) => return Err(StoreError::Io { path: path.to_owned(), source }),
                Some((_, Ok(l))) if l.trim().is_empty() => continue,
                Some((i, Ok(l))) => {
                    let v: serde_json::Value = serde_json::from_str(&l).map_err(|e| malformed(i + 1, e.to_string()))?;
                    let Some(found) = v.get("schema_version").and_then(|s| s.as_u64()) else {
                        return Err(StoreError::MissingHeader { path: path.to_owned() });
                    };
                    if found != u64::from(SCHEMA_VERSION) {
                        return Err(StoreError::VersionMismatch {
                            path: path.to_owned(),
                            found: found.try_into().unwrap_or(u32::MAX),
                            supported: SCHEMA_VERSION,
                        });
                    }
                    break serde_json::from_value::<Header>(v).map_err(|e| malformed(i + 1, e.to_string()))?;
                }
            }
        };

        let mut d = Self::new(header.units);
        let mut seen: BTreeSet<RecordKey> = BTreeSet::new();
        for (i, line) in lines {
            let n = i + 1;
            let line = line.map_err(|source| StoreError::Io { path: path.to_owned(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| malformed(n, e.to_string()))?;
            if v.get("excluded").is_some() {
                let x = serde_json::from_value::<ExclusionLine>(v).map_err(|e| malformed(n, e.to_string()))?.excluded;
                if let Some(prev) = d.exclusions.last() {
                    if prev.key >= x.key {
                        return Err(malformed(n, format!("exclusion {} duplicated or out of order", x.key)));
                    }
                }
                if seen.contains(&x.key) {
                    return Err(malformed(n, format!("{} is both kept and excluded", x.key)));
                }
                d.exclusions.push(x);
            } else {
                if !d.exclusions.is_empty() {
                    return Err(malformed(n, "record after exclusion lines".into()));
                }
                let r: R = serde_json::from_value(v).map_err(|e| malformed(n, e.to_string()))?;
                let key = r.key();
                if let Some(last) = seen.last() {
                    if *last >= key {
                        return Err(malformed(n, format!("record {key} duplicated or out of order")));
                    }
                }
                r.validate().map_err(|m| malformed(n, format!("{key}: {m}")))?;
                seen.insert(key);
                d.records.push(r);
            }
        }
        Ok(d)
    }

    /// Union by key; `delta` wins on conflict, including over exclusions.
    pub fn merge(&self, delta: &Self) -> Result<Self, StoreError> {
        if self.schema_version != delta.schema_version {
            return Err(StoreError::Invariant(format!(
                "schema versions differ: {} vs {}",
                self.schema_version, delta.schema_version
            )));
        }
        if self.units != delta.units {
            return Err(StoreError::UnitMismatch(format!("{:?} vs {:?}", self.units, delta.units)));
        }
        let mut records: BTreeMap<RecordKey, R> = BTreeMap::new();
        let mut exclusions: BTreeMap<RecordKey, Exclusion> = BTreeMap::new();
        for (recs, excl) in [(&self.records, &self.exclusions), (&delta.records, &delta.exclusions)] {
            for r in recs {
                exclusions.remove(&r.key());
                records.insert(r.key(), r.clone());
            }
            for x in excl {
                records.remove(&x.key);
                exclusions.insert(x.key.clone(), x.clone());
            }
        }
        Ok(Self {
            schema_version: self.schema_version,
            units: self.units.clone(),
            records: records.into_values().collect(),
            exclusions: exclusions.into_values().collect(),
        })
    }
}
