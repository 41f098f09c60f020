//! Provider access: live HTTP, on-disk fixtures, and an in-memory double.
//!
//! Every implementation answers the same [`Request`] with the raw response
//! body. Interpreting bodies happens in the caller so that cached, fixture and
//! live responses go through the same parsing.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use super::GeoPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Geocode,
    Timezone,
    Weather,
}

impl ProviderKind {
    pub const ALL: [ProviderKind; 3] = [ProviderKind::Geocode, ProviderKind::Timezone, ProviderKind::Weather];

    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::Geocode => "geocode",
            ProviderKind::Timezone => "timezone",
            ProviderKind::Weather => "weather",
        }
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Geocode { country: String },
    Timezone { geo: GeoPoint, timestamp: i64 },
    Weather { geo: GeoPoint, timestamp: i64 },
}

/// File-name slug for a country: lowercase, runs of anything that is not
/// alphanumeric collapse to a single `-`.
pub fn slug(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    for c in name.chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_owned()
}

/// Coordinate formatting shared by request URLs, cache keys and fixture
/// names: four decimals, no negative zero.
pub fn format_coord(v: f64) -> String {
    let r = (v * 1e4).round() / 1e4;
    let r = if r == 0.0 { 0.0 } else { r };
    format!("{r:.4}")
}

impl Request {
    pub fn kind(&self) -> ProviderKind {
        match self {
            Request::Geocode { .. } => ProviderKind::Geocode,
            Request::Timezone { .. } => ProviderKind::Timezone,
            Request::Weather { .. } => ProviderKind::Weather,
        }
    }

    /// Path relative to a fixture or cache root, e.g.
    /// `weather/21.5218_-77.7812_1431835200.json`.
    pub fn relative_path(&self) -> PathBuf {
        let file = match self {
            Request::Geocode { country } => format!("{}.json", slug(country)),
            Request::Timezone { geo, timestamp } | Request::Weather { geo, timestamp } => {
                format!("{}_{}_{}.json", format_coord(geo.lat), format_coord(geo.lon), timestamp)
            }
        };
        Path::new(self.kind().as_str()).join(file)
    }

    pub fn cache_key(&self) -> String {
        self.relative_path().to_string_lossy().into_owned()
    }
}

impl fmt::Display for Request {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.cache_key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FetchError {
    /// The provider answered, but not with a usable response (HTTP error
    /// status, missing fixture). Stable, so it is cached like a success.
    #[error("provider rejected {request}: {body}")]
    Rejected { request: String, status: Option<u16>, body: String },
    /// Nothing was received. Not cached.
    #[error("transport failure for {request}: {message}")]
    Transport { request: String, message: String },
    #[error("missing API key(s): {0}")]
    MissingKey(String),
}

pub trait Provider: Send + Sync {
    fn fetch(&self, request: &Request) -> Result<String, FetchError>;
}

/// Serves responses from `<root>/<kind>/<key>.json`. Has no network access.
#[derive(Debug, Clone)]
pub struct FixtureProvider {
    root: PathBuf,
}

impl FixtureProvider {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl Provider for FixtureProvider {
    fn fetch(&self, request: &Request) -> Result<String, FetchError> {
        let path = self.root.join(request.relative_path());
        match std::fs::read_to_string(&path) {
            Ok(body) => Ok(body),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(FetchError::Rejected {
                request: request.cache_key(),
                status: Some(404),
                body: format!("no fixture at {}", path.display()),
            }),
            Err(e) => Err(FetchError::Transport {
                request: request.cache_key(),
                message: format!("{}: {e}", path.display()),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiveEndpoints {
    pub geocode_base: String,
    pub timezone_base: String,
    pub weather_base: String,
}

impl Default for LiveEndpoints {
    fn default() -> Self {
        Self {
            geocode_base: "https://maps.googleapis.com/maps/api".into(),
            timezone_base: "https://maps.googleapis.com/maps/api".into(),
            weather_base: "https://api.darksky.net".into(),
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct ApiKeys {
    pub geocode: String,
    pub timezone: String,
    pub weather: String,
}

impl fmt::Debug for ApiKeys {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKeys { .. }")
    }
}

impl ApiKeys {
    pub const ENV_VARS: [&'static str; 3] = ["GEOCODE_API_KEY", "TIMEZONE_API_KEY", "WEATHER_API_KEY"];

    /// Reads all three keys, naming every missing variable on failure.
    pub fn from_env() -> Result<Self, FetchError> {
        Self::from_lookup(|name| std::env::var(name).ok())
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, FetchError> {
        let vals: Vec<Option<String>> = Self::ENV_VARS
            .iter()
            .map(|n| lookup(n).filter(|v| !v.trim().is_empty()))
            .collect();
        let missing: Vec<&str> = Self::ENV_VARS
            .iter()
            .zip(&vals)
            .filter(|(_, v)| v.is_none())
            .map(|(n, _)| *n)
            .collect();
        if !missing.is_empty() {
            return Err(FetchError::MissingKey(missing.join(", ")));
        }
        let mut it = vals.into_iter().flatten();
        Ok(Self {
            geocode: it.next().unwrap(),
            timezone: it.next().unwrap(),
            weather: it.next().unwrap(),
        })
    }
}

/// Blocking HTTP provider for the geocoding, timezone and historical weather
/// services.
pub struct LiveProvider {
    agent: ureq::Agent,
    endpoints: LiveEndpoints,
    keys: ApiKeys,
}

impl LiveProvider {
    pub fn new(endpoints: LiveEndpoints, keys: ApiKeys) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        Self { agent, endpoints, keys }
    }

    pub fn url_for(&self, request: &Request) -> Result<Url, FetchError> {
        let bad = |e: url::ParseError| FetchError::Transport {
            request: request.cache_key(),
            message: format!("bad endpoint URL: {e}"),
        };
        let base = |b: &str| b.trim_end_matches('/').to_owned();
        match request {
            Request::Geocode { country } => Url::parse_with_params(
                &format!("{}/geocode/json", base(&self.endpoints.geocode_base)),
                [("address", country.as_str()), ("key", self.keys.geocode.as_str())],
            )
            .map_err(bad),
            Request::Timezone { geo, timestamp } => Url::parse_with_params(
                &format!("{}/timezone/json", base(&self.endpoints.timezone_base)),
                [
                    ("location", format!("{},{}", format_coord(geo.lat), format_coord(geo.lon)).as_str()),
                    ("timestamp", timestamp.to_string().as_str()),
                    ("key", self.keys.timezone.as_str()),
                ],
            )
            .map_err(bad),
            Request::Weather { geo, timestamp } => {
                let mut url = Url::parse(&format!("{}/", base(&self.endpoints.weather_base))).map_err(bad)?;
                url.path_segments_mut()
                    .map_err(|_| bad(url::ParseError::RelativeUrlWithCannotBeABaseBase))?
                    .pop_if_empty()
                    .push("forecast")
                    .push(&self.keys.weather)
                    .push(&format!("{},{},{}", format_coord(geo.lat), format_coord(geo.lon), timestamp));
                Ok(url)
            }
        }
    }
}

impl Provider for LiveProvider {
    fn fetch(&self, request: &Request) -> Result<String, FetchError> {
        let url = self.url_for(request)?;
        let transport = |message: String| FetchError::Transport {
            request: request.cache_key(),
            message,
        };
        let mut response = self.agent.get(url.as_str()).call().map_err(|e| transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response.body_mut().read_to_string().map_err(|e| transport(e.to_string()))?;
        if (200..300).contains(&status) {
            Ok(body)
        } else if status == 429 || status >= 500 {
            Err(transport(format!("HTTP {status}: {body}")))
        } else {
            Err(FetchError::Rejected {
                request: request.cache_key(),
                status: Some(status),
                body,
            })
        }
    }
}

type Responder = dyn Fn(&Request) -> Result<String, FetchError> + Send + Sync;

/// In-memory provider that records every call it receives.
pub struct MemoryProvider {
    responses: HashMap<String, String>,
    fallback: Option<Box<Responder>>,
    calls: Mutex<Vec<String>>,
}

impl MemoryProvider {
    pub fn new() -> Self {
        Self {
            responses: HashMap::new(),
            fallback: None,
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Answers keys without a canned response with `responder`.
    pub fn with_responder(responder: impl Fn(&Request) -> Result<String, FetchError> + Send + Sync + 'static) -> Self {
        Self {
            fallback: Some(Box::new(responder)),
            ..Self::new()
        }
    }

    pub fn insert(&mut self, request: &Request, body: impl Into<String>) {
        self.responses.insert(request.cache_key(), body.into());
    }

    /// Cache keys of every call so far, in call order.
    pub fn calls(&self) -> Vec<String> {
        self.calls.lock().unwrap().clone()
    }

    pub fn calls_of(&self, kind: ProviderKind) -> Vec<String> {
        let prefix = format!("{}/", kind.as_str());
        self.calls().into_iter().filter(|c| c.starts_with(&prefix)).collect()
    }

    pub fn reset_calls(&self) {
        self.calls.lock().unwrap().clear();
    }
}

impl Default for MemoryProvider {
    fn default() -> Self {
        Self::new()
    }
}

impl Provider for MemoryProvider {
    fn fetch(&self, request: &Request) -> Result<String, FetchError> {
        let key = request.cache_key();
        self.calls.lock().unwrap().push(key.clone());
        if let Some(body) = self.responses.get(&key) {
            return Ok(body.clone());
        }
        match &self.fallback {
            Some(f) => f(request),
            None => Err(FetchError::Rejected {
                request: key,
                status: Some(404),
                body: "no canned response".into(),
            }),
        }
    }
}
