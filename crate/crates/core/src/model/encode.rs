//! Design-matrix construction for the incidence-rate model.
//!
//! Column layout: the standardized numeric features in [`NUMERIC_FEATURES`]
//! order, one indicator column per learned level of each categorical feature,
//! then an intercept column of ones.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::enrich::EnrichedRecord;

pub const NUMERIC_FEATURES: [&str; 14] = [
    "week",
    "suspected",
    "confirmed",
    "imported",
    "deaths",
    "population_k",
    "year",
    "lat",
    "lon",
    "weather_temperature",
    "weather_dewPoint",
    "weather_humidity",
    "weather_pressure",
    "weather_windSpeed",
];

pub const CATEGORICAL_FEATURES: [&str; 2] = ["country", "weather_summary"];
pub const TARGET: &str = "incidence_rate";
pub const INTERCEPT: &str = "intercept";

fn numeric_values(r: &EnrichedRecord) -> [Option<f64>; 14] {
    let c = &r.record;
    let w = &r.weather;
    [
        Some(f64::from(c.week)),
        Some(c.suspected as f64),
        Some(c.confirmed as f64),
        c.imported.map(|v| v as f64),
        c.deaths.map(|v| v as f64),
        c.population_k.map(|v| v as f64),
        Some(f64::from(c.year)),
        Some(r.geo.lat),
        Some(r.geo.lon),
        Some(w.temperature),
        Some(w.dew_point),
        Some(w.humidity),
        Some(w.pressure),
        Some(w.wind_speed),
    ]
}

fn categorical_values(r: &EnrichedRecord) -> [&str; 2] {
    [&r.record.country, &r.weather.summary]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalFeature {
    pub name: String,
    /// Level of each indicator column, in column order.
    pub levels: Vec<String>,
}

impl CategoricalFeature {
    fn column_of(&self, level: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == level)
    }
}

/// Everything learned from training data that encoding needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub numeric_features: Vec<String>,
    /// Training mean of each numeric feature's present values; substituted
    /// for absent optional fields.
    pub impute_values: Vec<f64>,
    pub column_means: Vec<f64>,
    /// Population standard deviations, with 1 for constant columns.
    pub column_scales: Vec<f64>,
    pub categorical_features: Vec<CategoricalFeature>,
    pub target: String,
}

impl FeatureSchema {
    /// Learns imputation values, standardization and level maps from
    /// `records`. Returns the schema and any warnings.
    pub fn learn(records: &[EnrichedRecord]) -> Result<(Self, Vec<String>), ModelError> {
        if records.is_empty() {
            return Err(ModelError::Empty);
        }
        let mut warnings = Vec::new();
        let raw: Vec<[Option<f64>; 14]> = records.iter().map(numeric_values).collect();
        let mut impute_values = Vec::with_capacity(NUMERIC_FEATURES.len());
        let mut column_means = Vec::with_capacity(NUMERIC_FEATURES.len());
        let mut column_scales = Vec::with_capacity(NUMERIC_FEATURES.len());
        for (j, name) in NUMERIC_FEATURES.iter().enumerate() {
            let present: Vec<f64> = raw.iter().filter_map(|row| row[j]).collect();
            let impute = if present.is_empty() {
                warnings.push(format!("{name}: no training values; imputing 0"));
                0.0
            } else {
                present.iter().sum::<f64>() / present.len() as f64
            };
            let filled: Vec<f64> = raw.iter().map(|row| row[j].unwrap_or(impute)).collect();
            let n = filled.len() as f64;
            let mean = filled.iter().sum::<f64>() / n;
            let var = filled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            let scale = if std > 1e-12 * mean.abs().max(1.0) {
                std
            } else {
                warnings.push(format!("{name}: zero variance; left unscaled"));
                1.0
            };
            impute_values.push(impute);
            column_means.push(mean);
            column_scales.push(scale);
        }
        for w in &warnings {
            log::warn!("{w}");
        }

        let categorical_features = CATEGORICAL_FEATURES
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let levels: BTreeSet<&str> = records.iter().map(|r| categorical_values(r)[k]).collect();
                CategoricalFeature {
                    name: (*name).to_owned(),
                    levels: levels.into_iter().map(str::to_owned).collect(),
                }
            })
            .collect();

        Ok((
            Self {
                numeric_features: NUMERIC_FEATURES.iter().map(|s| s.to_string()).collect(),
                impute_values,
                column_means,
                column_scales,
                categorical_features,
                target: TARGET.to_owned(),
            },
            warnings,
        ))
    }

    pub fn n_columns(&self) -> usize {
        self.numeric_features.len() + self.categorical_features.iter().map(|c| c.levels.len()).sum::<usize>() + 1
    }

    pub fn intercept_column(&self) -> usize {
        self.n_columns() - 1
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = self.numeric_features.clone();
        for c in &self.categorical_features {
            names.extend(c.levels.iter().map(|l| format!("{}={l}", c.name)));
        }
        names.push(INTERCEPT.to_owned());
        names
    }

    /// Encoded row for `record`. Unseen categorical levels encode as all
    /// zeros.
    pub fn encode_row(&self, record: &EnrichedRecord) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.n_columns());
        for (j, v) in numeric_values(record).iter().enumerate() {
            let v = v.unwrap_or(self.impute_values[j]);
            row.push((v - self.column_means[j]) / self.column_scales[j]);
        }
        for (feature, value) in self.categorical_features.iter().zip(categorical_values(record)) {
            let start = row.len();
            row.resize(start + feature.levels.len(), 0.0);
            if let Some(i) = feature.column_of(value) {
                row[start + i] = 1.0;
            }
        }
        row.push(1.0);
        row
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: DMatrix<f64>,
    pub targets: DVector<f64>,
    pub schema: FeatureSchema,
}

pub enum SchemaSource<'a> {
    Learn,
    Use(&'a FeatureSchema),
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }
}

/// Encodes `records`, all of which need an incidence rate.
pub fn encode(records: &[EnrichedRecord], schema: SchemaSource<'_>) -> Result<FeatureMatrix, ModelError> {
    let schema = match schema {
        SchemaSource::Learn => FeatureSchema::learn(records)?.0,
        SchemaSource::Use(s) => s.clone(),
    };
    let targets = records
        .iter()
        .map(|r| r.record.incidence_rate.ok_or_else(|| ModelError::MissingTarget(r.key().to_string())))
        .collect::<Result<Vec<f64>, _>>()?;
    let p = schema.n_columns();
    let mut values = DMatrix::zeros(records.len(), p);
    for (i, r) in records.iter().enumerate() {
        let row = schema.encode_row(r);
        values.row_mut(i).copy_from_slice(&row);
    }
    if values.iter().any(|v| !v.is_finite()) || targets.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite);
    }
    Ok(FeatureMatrix {
        values,
        targets: DVector::from_vec(targets),
        schema,
    })
}
