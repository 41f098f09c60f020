//! Geolocation, timezone and historical-weather enrichment of clean records.
//!
//! Lookups go through a [`Gateway`], which layers the response cache and the
//! daily call budget over any [`Provider`]. A record whose lookups fail is
//! excluded with its reason; a record whose lookup would exceed the budget is
//! left pending so the run can resume later.

pub mod budget;
pub mod cache;
pub mod provider;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::epiweek::{self, EpiWeekDate, Zone};
use crate::ingest::{CleanRecord, RecordKey};
use budget::{BudgetExhausted, BudgetLedger};
use cache::{CachedResponse, ResponseCache};
use provider::{FetchError, Provider, ProviderKind, Request};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, String> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(format!("non-finite coordinates ({lat}, {lon})"));
        }
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(format!("coordinates out of range ({lat}, {lon})"));
        }
        Ok(Self { lat, lon })
    }
}

/// Weather at the start of an epidemiological week, in provider units
/// (see [`UNITS`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherObservation {
    pub temperature: f64,
    pub summary: String,
    pub dew_point: f64,
    pub humidity: f64,
    pub pressure: f64,
    pub wind_speed: f64,
}

impl WeatherObservation {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("temperature", self.temperature),
            ("dewPoint", self.dew_point),
            ("humidity", self.humidity),
            ("pressure", self.pressure),
            ("windSpeed", self.wind_speed),
        ];
        if let Some((name, v)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(format!("{name} is not finite: {v}"));
        }
        if !(0.0..=1.0).contains(&self.humidity) {
            return Err(format!("humidity {} outside [0, 1]", self.humidity));
        }
        if self.pressure <= 0.0 {
            return Err(format!("pressure {} is not positive", self.pressure));
        }
        Ok(())
    }
}

/// Unit labels recorded in dataset headers. Values are stored as the
/// providers report them.
pub const UNITS: [(&str, &str); 9] = [
    ("dew_point", "degF"),
    ("humidity", "fraction"),
    ("incidence_rate", "cases per 100,000"),
    ("lat", "degrees"),
    ("lon", "degrees"),
    ("population_k", "thousands"),
    ("pressure", "hPa"),
    ("temperature", "degF"),
    ("wind_speed", "mph"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichedRecord {
    pub record: CleanRecord,
    pub geo: GeoPoint,
    pub timezone_id: String,
    /// UTC midnight of the week's Monday.
    pub utc_timestamp: i64,
    /// Local midnight of the same Monday in `timezone_id`; the weather is
    /// fetched for this instant.
    pub timestamp: i64,
    pub weather: WeatherObservation,
}

impl EnrichedRecord {
    pub fn key(&self) -> RecordKey {
        self.record.key()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExclusionReason {
    GeocodeFailure,
    TimezoneFailure,
    WeatherUnavailable,
    InvalidWeather,
    InvalidDate,
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A record left out of the enriched dataset, with the provider's raw answer
/// (or the validation message) as detail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub key: RecordKey,
    pub reason: ExclusionReason,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnrichError {
    #[error("geocoding failed for {country:?}: {detail}")]
    GeocodeFailure { country: String, detail: String },
    #[error("timezone lookup failed: {0}")]
    TimezoneFailure(String),
    #[error("weather unavailable: {0}")]
    WeatherUnavailable(String),
    #[error("invalid weather response: {0}")]
    InvalidWeather(String),
    #[error("invalid epidemiological week: {0}")]
    InvalidDate(String),
    #[error(transparent)]
    BudgetExhausted(#[from] BudgetExhausted),
    #[error("{0}")]
    Fatal(String),
}

impl EnrichError {
    fn exclusion_reason(&self) -> Option<ExclusionReason> {
        Some(match self {
            EnrichError::GeocodeFailure { .. } => ExclusionReason::GeocodeFailure,
            EnrichError::TimezoneFailure(_) => ExclusionReason::TimezoneFailure,
            EnrichError::WeatherUnavailable(_) => ExclusionReason::WeatherUnavailable,
            EnrichError::InvalidWeather(_) => ExclusionReason::InvalidWeather,
            EnrichError::InvalidDate(_) => ExclusionReason::InvalidDate,
            EnrichError::BudgetExhausted(_) | EnrichError::Fatal(_) => return None,
        })
    }

    fn detail(&self) -> String {
        match self {
            EnrichError::GeocodeFailure { detail, .. } => detail.clone(),
            EnrichError::TimezoneFailure(d)
            | EnrichError::WeatherUnavailable(d)
            | EnrichError::InvalidWeather(d)
            | EnrichError::InvalidDate(d)
            | EnrichError::Fatal(d) => d.clone(),
            EnrichError::BudgetExhausted(e) => e.to_string(),
        }
    }
}

/// Distinct cleaned country names, sorted.
pub fn distinct_countries(records: &[CleanRecord]) -> Vec<String> {
    let mut names: Vec<String> = records.iter().map(|r| r.country.clone()).collect();
    names.sort();
    names.dedup();
    names
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CallStats {
    pub provider_calls: usize,
    pub cache_hits: usize,
}

/// Cache- and budget-aware access to a provider.
pub struct Gateway<'a> {
    provider: &'a dyn Provider,
    cache: &'a ResponseCache,
    budget: &'a BudgetLedger,
    stats: Mutex<BTreeMap<ProviderKind, CallStats>>,
}

impl<'a> Gateway<'a> {
    pub fn new(provider: &'a dyn Provider, cache: &'a ResponseCache, budget: &'a BudgetLedger) -> Self {
        Self {
            provider,
            cache,
            budget,
            stats: Mutex::default(),
        }
    }

    pub fn stats(&self, kind: ProviderKind) -> CallStats {
        self.stats.lock().unwrap().get(&kind).copied().unwrap_or_default()
    }

    pub fn total_provider_calls(&self) -> usize {
        self.stats.lock().unwrap().values().map(|s| s.provider_calls).sum()
    }

    fn note(&self, kind: ProviderKind, f: impl FnOnce(&mut CallStats)) {
        f(self.stats.lock().unwrap().entry(kind).or_default());
    }

    /// Raw body for `request`, or `Ok(Err((status, body)))` when the provider
    /// rejected it.
    fn fetch_raw(&self, request: &Request) -> Result<Result<String, (Option<u16>, String)>, EnrichError> {
        let kind = request.kind();
        let io_err = |e: std::io::Error| EnrichError::Fatal(format!("cache access for {request}: {e}"));
        if let Some(hit) = self.cache.get(request).map_err(io_err)? {
            self.note(kind, |s| s.cache_hits += 1);
            return Ok(match hit {
                CachedResponse::Ok(body) => Ok(body),
                CachedResponse::Rejected { status, body } => Err((status, body)),
            });
        }

        // one retry on transport failure; each attempt is a billed call
        let mut attempt = 0;
        let outcome = loop {
            self.budget.try_acquire(kind)?;
            self.note(kind, |s| s.provider_calls += 1);
            attempt += 1;
            match self.provider.fetch(request) {
                Err(FetchError::Transport { message, .. }) if attempt < 2 => {
                    log::warn!("{request}: {message}; retrying once");
                }
                other => break other,
            }
        };
        let cached = match outcome {
            Ok(body) => CachedResponse::Ok(body),
            Err(FetchError::Rejected { status, body, .. }) => CachedResponse::Rejected { status, body },
            // the network is down or the provider is failing: stop rather than
            // drop records that would have enriched fine
            Err(FetchError::Transport { message, .. }) => {
                return Err(EnrichError::Fatal(format!("{request}: {message}")));
            }
            Err(e @ FetchError::MissingKey(_)) => return Err(EnrichError::Fatal(e.to_string())),
        };
        self.cache.put(request, cached.clone()).map_err(io_err)?;
        Ok(match cached {
            CachedResponse::Ok(body) => Ok(body),
            CachedResponse::Rejected { status, body } => Err((status, body)),
        })
    }

    pub fn geocode(&self, country: &str) -> Result<GeoPoint, EnrichError> {
        let fail = |detail: String| EnrichError::GeocodeFailure {
            country: country.to_owned(),
            detail,
        };
        let body = self
            .fetch_raw(&Request::Geocode { country: country.to_owned() })?
            .map_err(|(_, body)| fail(body))?;
        parse_geocode(&body).map_err(fail)
    }

    pub fn resolve_timezone(&self, geo: GeoPoint, timestamp: i64) -> Result<String, EnrichError> {
        let body = self
            .fetch_raw(&Request::Timezone { geo, timestamp })?
            .map_err(|(_, body)| EnrichError::TimezoneFailure(body))?;
        parse_timezone(&body).map_err(EnrichError::TimezoneFailure)
    }

    pub fn fetch_weather(&self, geo: GeoPoint, timestamp: i64) -> Result<WeatherObservation, EnrichError> {
        if timestamp <= 0 {
            return Err(EnrichError::InvalidDate(format!("weather timestamp {timestamp} is not positive")));
        }
        let body = self
            .fetch_raw(&Request::Weather { geo, timestamp })?
            .map_err(|(_, body)| EnrichError::WeatherUnavailable(body))?;
        parse_weather(&body)
    }

    /// Geocode, resolve the zone at the week's UTC Monday, shift to local
    /// midnight, then fetch weather for that instant.
    pub fn enrich_with_geo(&self, record: &CleanRecord, geo: GeoPoint) -> Result<EnrichedRecord, EnrichError> {
        let mut week = EpiWeekDate::new(record.year, record.week).map_err(|e| EnrichError::InvalidDate(e.to_string()))?;
        let timezone_id = self.resolve_timezone(geo, week.utc_timestamp)?;
        let timestamp = week
            .localize(&timezone_id)
            .map_err(|e| EnrichError::TimezoneFailure(e.to_string()))?;
        let weather = self.fetch_weather(geo, timestamp)?;
        Ok(EnrichedRecord {
            record: record.clone(),
            geo,
            timezone_id,
            utc_timestamp: week.utc_timestamp,
            timestamp,
            weather,
        })
    }

    pub fn enrich_record(&self, record: &CleanRecord) -> Result<Enrichment, BudgetOrFatal> {
        let attempt = self.geocode(&record.country).and_then(|geo| self.enrich_with_geo(record, geo));
        Enrichment::classify(record.key(), attempt)
    }
}

/// Why an enrichment pass stopped early.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BudgetOrFatal {
    #[error(transparent)]
    Budget(BudgetExhausted),
    #[error("{0}")]
    Fatal(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Enrichment {
    Enriched(EnrichedRecord),
    Excluded(Exclusion),
}

impl Enrichment {
    fn classify(key: RecordKey, attempt: Result<EnrichedRecord, EnrichError>) -> Result<Self, BudgetOrFatal> {
        match attempt {
            Ok(r) => Ok(Enrichment::Enriched(r)),
            Err(EnrichError::BudgetExhausted(b)) => Err(BudgetOrFatal::Budget(b)),
            Err(EnrichError::Fatal(m)) => Err(BudgetOrFatal::Fatal(m)),
            Err(e) => {
                let reason = e.exclusion_reason().expect("non-pausing errors exclude");
                log::info!("excluding {key}: {e}");
                Ok(Enrichment::Excluded(Exclusion {
                    key,
                    reason,
                    detail: e.detail(),
                }))
            }
        }
    }
}

fn parse_json(body: &str) -> Result<Value, String> {
    serde_json::from_str(body).map_err(|e| format!("invalid JSON ({e}): {body}"))
}

pub fn parse_geocode(body: &str) -> Result<GeoPoint, String> {
    let v = parse_json(body)?;
    let loc = &v["results"][0]["geometry"]["location"];
    match (loc["lat"].as_f64(), loc["lng"].as_f64()) {
        (Some(lat), Some(lng)) => GeoPoint::new(lat, lng),
        _ => Err(format!("no location in response: {v}")),
    }
}

pub fn parse_timezone(body: &str) -> Result<String, String> {
    let v = parse_json(body)?;
    let id = v["timeZoneId"].as_str().ok_or_else(|| format!("no timeZoneId in response: {v}"))?;
    Zone::parse(id).map_err(|e| e.to_string())?;
    Ok(id.to_owned())
}

pub fn parse_weather(body: &str) -> Result<WeatherObservation, EnrichError> {
    let v = parse_json(body).map_err(EnrichError::WeatherUnavailable)?;
    let Some(current) = v.get("currently").filter(|c| c.is_object()) else {
        return Err(EnrichError::WeatherUnavailable(format!("no current observation: {v}")));
    };
    let num = |name: &str| {
        current[name]
            .as_f64()
            .ok_or_else(|| EnrichError::WeatherUnavailable(format!("currently.{name} missing: {current}")))
    };
    let summary = current["summary"]
        .as_str()
        .ok_or_else(|| EnrichError::WeatherUnavailable(format!("currently.summary missing: {current}")))?;
    let obs = WeatherObservation {
        temperature: num("temperature")?,
        summary: summary.to_owned(),
        dew_point: num("dewPoint")?,
        humidity: num("humidity")?,
        pressure: num("pressure")?,
        wind_speed: num("windSpeed")?,
    };
    obs.validate().map_err(EnrichError::InvalidWeather)?;
    Ok(obs)
}

/// Result of one enrichment pass over a set of records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnrichOutcome {
    pub enriched: Vec<EnrichedRecord>,
    pub excluded: Vec<Exclusion>,
    /// Records not attempted (or interrupted) because a budget ran out.
    pub pending: Vec<RecordKey>,
    pub paused: Option<BudgetExhausted>,
}

/// Enriches `records` with up to `width` workers. Countries are geocoded
/// first; then each record's timezone and weather are looked up. The first
/// exhausted budget stops new work; output order follows record keys
/// whatever the completion order was.
pub fn enrich_all(gateway: &Gateway<'_>, records: &[CleanRecord], width: usize) -> Result<EnrichOutcome, String> {
    let mut records: Vec<&CleanRecord> = records.iter().collect();
    records.sort_by_key(|r| r.key());

    let mut outcome = EnrichOutcome::default();
    let mut geo: BTreeMap<String, Result<GeoPoint, EnrichError>> = BTreeMap::new();
    let owned: Vec<CleanRecord> = records.iter().map(|r| (*r).clone()).collect();
    for country in distinct_countries(&owned) {
        match gateway.geocode(&country) {
            Err(EnrichError::BudgetExhausted(b)) => {
                outcome.paused = Some(b);
                outcome.pending = records.iter().map(|r| r.key()).collect();
                return Ok(outcome);
            }
            Err(EnrichError::Fatal(m)) => return Err(m),
            result => {
                geo.insert(country, result);
            }
        }
    }

    let slots: Vec<Mutex<Option<Enrichment>>> = records.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let stop_reason: Mutex<Option<BudgetOrFatal>> = Mutex::new(None);

    let work = || loop {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(record) = records.get(i) else { break };
        let attempt = match &geo[&record.country] {
            Ok(point) => gateway.enrich_with_geo(record, *point),
            Err(e) => Err(e.clone()),
        };
        match Enrichment::classify(record.key(), attempt) {
            Ok(done) => *slots[i].lock().unwrap() = Some(done),
            Err(reason) => {
                stop.store(true, Ordering::SeqCst);
                stop_reason.lock().unwrap().get_or_insert(reason);
            }
        }
    };
    std::thread::scope(|s| {
        for _ in 1..width.max(1) {
            s.spawn(work);
        }
        work();
    });

    match stop_reason.into_inner().unwrap() {
        Some(BudgetOrFatal::Fatal(m)) => return Err(m),
        Some(BudgetOrFatal::Budget(b)) => outcome.paused = Some(b),
        None => {}
    }
    for (record, slot) in records.iter().zip(slots) {
        match slot.into_inner().unwrap() {
            Some(Enrichment::Enriched(r)) => outcome.enriched.push(r),
            Some(Enrichment::Excluded(x)) => outcome.excluded.push(x),
            None => outcome.pending.push(record.key()),
        }
    }
    Ok(outcome)
}

/// Helper for callers that need to know what a timestamp means locally.
pub fn local_date_of(record: &EnrichedRecord) -> Option<chrono::NaiveDate> {
    epiweek::local_date(record.timestamp, &record.timezone_id).ok()
}

#[cfg(test)]
mod tests {
    use super::provider::MemoryProvider;
    use super::*;
    use chrono::NaiveDate;

    const WEATHER: &str = r#"{"latitude":21.5218,"currently":{"time":1431835200,"summary":"Humid and Mostly Cloudy","temperature":77.5,"dewPoint":71.2,"humidity":0.81,"pressure":1013.2,"windSpeed":6.3}}"#;

    fn clean(country: &str, year: i32, week: u32) -> CleanRecord {
        CleanRecord {
            country: country.into(),
            year,
            week,
            suspected: 10,
            confirmed: 1,
            imported: None,
            deaths: None,
            incidence_rate: Some(1.0),
            population_k: None,
            source_file: "f.csv".into(),
            source_line: 2,
        }
    }

    fn ledger() -> BudgetLedger {
        BudgetLedger::new(NaiveDate::from_ymd_opt(2026, 1, 1).unwrap(), &BTreeMap::new())
    }

    fn cuba() -> GeoPoint {
        GeoPoint::new(21.5218, -77.7812).unwrap()
    }

    fn cuba_provider() -> MemoryProvider {
        let mut p = MemoryProvider::new();
        p.insert(
            &Request::Geocode { country: "Cuba".into() },
            r#"{"results":[{"geometry":{"location":{"lat":21.5218,"lng":-77.7812}}}],"status":"OK"}"#,
        );
        // 2015 week 20 starts Monday 2015-05-11; Havana is UTC-4 in May.
        p.insert(&Request::Timezone { geo: cuba(), timestamp: 1431302400 }, r#"{"timeZoneId":"America/Havana"}"#);
        p.insert(&Request::Weather { geo: cuba(), timestamp: 1431316800 }, WEATHER);
        p
    }

    #[test]
    fn distinct_country_examples() {
        let rs = [clean("Haiti", 2015, 1), clean("Haiti", 2015, 2), clean("Cuba", 2015, 1)];
        assert_eq!(distinct_countries(&rs), ["Cuba", "Haiti"]);
        assert!(distinct_countries(&[]).is_empty());
    }

    #[test]
    fn geocode_reads_first_result_and_caches() {
        let p = cuba_provider();
        let cache = ResponseCache::in_memory();
        let budget = ledger();
        let gw = Gateway::new(&p, &cache, &budget);
        assert_eq!(gw.geocode("Cuba").unwrap(), cuba());
        assert_eq!(gw.geocode("Cuba").unwrap(), cuba());
        assert_eq!(p.calls_of(ProviderKind::Geocode).len(), 1);
        assert_eq!(budget.snapshot(ProviderKind::Geocode).used_today, 1);
        assert!(matches!(gw.geocode("Atlantis"), Err(EnrichError::GeocodeFailure { .. })));
        assert!(parse_geocode(r#"{"results":[],"status":"ZERO_RESULTS"}"#).is_err());
        assert!(parse_geocode(r#"{"results":[{"geometry":{"location":{"lat":91.0,"lng":0.0}}}]}"#).is_err());
    }

    #[test]
    fn timezone_lookup() {
        let mut p = MemoryProvider::new();
        let haiti = GeoPoint::new(18.97, -72.28).unwrap();
        p.insert(&Request::Timezone { geo: haiti, timestamp: 100 }, r#"{"status":"OK","timeZoneId":"America/Port-au-Prince"}"#);
        let cache = ResponseCache::in_memory();
        let budget = ledger();
        let gw = Gateway::new(&p, &cache, &budget);
        assert_eq!(gw.resolve_timezone(haiti, 100).unwrap(), "America/Port-au-Prince");
        assert_eq!(gw.resolve_timezone(haiti, 100).unwrap(), "America/Port-au-Prince");
        assert_eq!(gw.stats(ProviderKind::Timezone), CallStats { provider_calls: 1, cache_hits: 1 });
        assert!(matches!(gw.resolve_timezone(haiti, 200), Err(EnrichError::TimezoneFailure(_))));
        assert!(parse_timezone(r#"{"timeZoneId":"Nowhere/Special"}"#).is_err());
    }

    #[test]
    fn weather_fields_and_validation() {
        let w = parse_weather(WEATHER).unwrap();
        assert_eq!(
            w,
            WeatherObservation {
                temperature: 77.5,
                summary: "Humid and Mostly Cloudy".into(),
                dew_point: 71.2,
                humidity: 0.81,
                pressure: 1013.2,
                wind_speed: 6.3,
            }
        );
        assert!(matches!(parse_weather(r#"{"code":400,"error":"poorly formatted request"}"#), Err(EnrichError::WeatherUnavailable(_))));
        assert!(matches!(
            parse_weather(&WEATHER.replace(r#""pressure":1013.2,"#, "")),
            Err(EnrichError::WeatherUnavailable(_))
        ));
        assert!(matches!(parse_weather(&WEATHER.replace("0.81", "1.2")), Err(EnrichError::InvalidWeather(_))));
    }

    #[test]
    fn full_chain_and_determinism() {
        let p = cuba_provider();
        let cache = ResponseCache::in_memory();
        let budget = ledger();
        let gw = Gateway::new(&p, &cache, &budget);
        let rec = clean("Cuba", 2015, 20);
        let Enrichment::Enriched(e) = gw.enrich_record(&rec).unwrap() else { panic!() };
        assert_eq!(e.geo, cuba());
        assert_eq!(e.timezone_id, "America/Havana");
        assert_eq!((e.utc_timestamp, e.timestamp), (1431302400, 1431316800));
        assert_eq!(e.weather.summary, "Humid and Mostly Cloudy");
        assert_eq!(local_date_of(&e), NaiveDate::from_ymd_opt(2015, 5, 11));
        let calls = p.calls().len();
        assert_eq!(gw.enrich_record(&rec).unwrap(), Enrichment::Enriched(e));
        assert_eq!(p.calls().len(), calls);
    }

    #[test]
    fn missing_weather_excludes() {
        let mut p = cuba_provider();
        let peru = GeoPoint::new(-9.19, -75.0152).unwrap();
        p.insert(
            &Request::Geocode { country: "Peru".into() },
            r#"{"results":[{"geometry":{"location":{"lat":-9.19,"lng":-75.0152}}}]}"#,
        );
        p.insert(&Request::Timezone { geo: peru, timestamp: 1431302400 }, r#"{"timeZoneId":"America/Lima"}"#);
        let cache = ResponseCache::in_memory();
        let budget = ledger();
        let gw = Gateway::new(&p, &cache, &budget);
        let out = enrich_all(&gw, &[clean("Peru", 2015, 20), clean("Cuba", 2015, 20)], 2).unwrap();
        assert_eq!(out.enriched.len(), 1);
        assert_eq!(out.excluded.len(), 1);
        assert_eq!(out.excluded[0].reason, ExclusionReason::WeatherUnavailable);
        assert_eq!(out.excluded[0].key.country, "Peru");
        assert!(out.pending.is_empty() && out.paused.is_none());
    }

    #[test]
    fn budget_pauses_instead_of_dropping() {
        let p = MemoryProvider::with_responder(|req| {
            Ok(match req {
                Request::Geocode { .. } => r#"{"results":[{"geometry":{"location":{"lat":10.0,"lng":-70.0}}}]}"#.into(),
                Request::Timezone { .. } => r#"{"timeZoneId":"UTC"}"#.into(),
                Request::Weather { .. } => WEATHER.into(),
            })
        });
        let cache = ResponseCache::in_memory();
        let budget = BudgetLedger::new(NaiveDate::from_ymd_opt(2026, 1, 1).unwrap(), &BTreeMap::from([(ProviderKind::Weather, 3)]));
        let gw = Gateway::new(&p, &cache, &budget);
        let recs: Vec<_> = (1..=5).map(|w| clean("X", 2016, w)).collect();
        let out = enrich_all(&gw, &recs, 1).unwrap();
        assert_eq!(out.enriched.len(), 3);
        assert_eq!(out.pending.len(), 2);
        assert!(out.excluded.is_empty());
        assert_eq!(out.paused.unwrap().provider, ProviderKind::Weather);
        assert_eq!(p.calls_of(ProviderKind::Weather).len(), 3);
    }

    #[test]
    fn transport_errors_retry_once_and_are_not_cached() {
        let p = MemoryProvider::with_responder(|req| {
            Err(FetchError::Transport {
                request: req.cache_key(),
                message: "connection reset".into(),
            })
        });
        let cache = ResponseCache::in_memory();
        let budget = ledger();
        let gw = Gateway::new(&p, &cache, &budget);
        assert!(matches!(gw.geocode("Cuba"), Err(EnrichError::Fatal(_))));
        assert_eq!(p.calls().len(), 2);
        assert!(matches!(gw.geocode("Cuba"), Err(EnrichError::Fatal(_))));
        assert_eq!(p.calls().len(), 4);
        assert!(enrich_all(&gw, &[clean("Cuba", 2015, 1)], 1).is_err());
    }
}
