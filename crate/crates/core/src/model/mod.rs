//! Linear incidence-rate model: encoding, ridge fit, prediction, metrics and
//! the train/test split.

pub mod encode;
pub mod fit;
pub mod metrics;
pub mod split;

use thiserror::Error;

pub use encode::{encode, FeatureMatrix, FeatureSchema, SchemaSource};
pub use fit::{fit, predict, solve_ridge, ModelCoefficients, DEFAULT_LAMBDA};
pub use metrics::{evaluate, EvalMetrics};
pub use split::split;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("no records to work with")]
    Empty,
    #[error("record {0} has no incidence rate")]
    MissingTarget(String),
    #[error("non-finite value in design matrix or targets")]
    NonFinite,
    #[error("ridge lambda must be a non-negative number, got {0}")]
    BadLambda(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("cannot split: {0}")]
    Split(String),
}

#[cfg(test)]
pub(crate) mod testutil {
    use nalgebra::{DMatrix, DVector};

    use crate::enrich::{EnrichedRecord, GeoPoint, WeatherObservation};
    use crate::ingest::CleanRecord;

    /// Small deterministic generator for test data.
    pub struct Lcg(pub u64);

    impl Lcg {
        pub fn next_f64(&mut self) -> f64 {
            self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (self.0 >> 11) as f64 / (1u64 << 53) as f64
        }

        pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
            lo + (hi - lo) * self.next_f64()
        }
    }

    /// Solves (XᵀX + λD) w = Xᵀy by Gaussian elimination with partial
    /// pivoting, D = identity except zeros at `unpenalized`.
    #[allow(clippy::needless_range_loop)]
    pub fn normal_equations_oracle(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, unpenalized: &[usize]) -> Vec<f64> {
        let (n, p) = x.shape();
        let mut a = vec![vec![0.0; p + 1]; p];
        for i in 0..p {
            for j in 0..p {
                a[i][j] = (0..n).map(|k| x[(k, i)] * x[(k, j)]).sum();
            }
            if !unpenalized.contains(&i) {
                a[i][i] += lambda;
            }
            a[i][p] = (0..n).map(|k| x[(k, i)] * y[k]).sum();
        }
        for col in 0..p {
            let piv = (col..p).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs())).unwrap();
            a.swap(col, piv);
            for r in 0..p {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..=p {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        (0..p).map(|i| a[i][p] / a[i][i]).collect()
    }

    /// Enriched record whose numeric features vary with `week`.
    pub fn record(country: &str, week: u32, incidence: f64) -> EnrichedRecord {
        let w = f64::from(week);
        EnrichedRecord {
            record: CleanRecord {
                country: country.into(),
                year: 2016,
                week,
                suspected: u64::from(week * week % 17 + 3),
                confirmed: u64::from(week % 5),
                imported: Some(u64::from(week % 3)),
                deaths: None,
                incidence_rate: Some(incidence),
                population_k: Some(1000 + u64::from(week % 7) * 10),
                source_file: "t.csv".into(),
                source_line: u64::from(week) + 1,
            },
            geo: GeoPoint::new(10.0 + w * 0.01, -70.0 - (w * 0.37).sin()).unwrap(),
            timezone_id: "UTC".into(),
            utc_timestamp: 1_451_865_600 + i64::from(week) * 604_800,
            timestamp: 1_451_865_600 + i64::from(week) * 604_800,
            weather: WeatherObservation {
                temperature: 70.0 + (w * 1.3).cos() * 5.0,
                summary: if week.is_multiple_of(3) { "Clear".into() } else { "Humid and Mostly Cloudy".into() },
                dew_point: 60.0 + (w * 0.7).sin() * 4.0,
                humidity: 0.6 + (w * 0.9).cos() * 0.2,
                pressure: 1010.0 + (w * 0.4).sin() * 3.0,
                wind_speed: 5.0 + (w * 2.1).cos() * 2.0,
            },
        }
    }
}
