//! Weekly chikungunya surveillance pipeline: report ingestion, geolocation
//! and weather enrichment, a ridge-regression incidence-rate model, and the
//! aggregate series behind the summary figures.

pub mod analytics;
pub mod enrich;
pub mod epiweek;
mod fsutil;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod store;
