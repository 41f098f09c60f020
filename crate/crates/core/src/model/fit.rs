//! Ridge least squares via orthogonal decompositions.
//!
//! The penalty is folded into an augmented system
//!
//! ```text
//! [ X        ] w  ~  [ y ]
//! [ sqrt(λ)·P]       [ 0 ]
//! ```
//!
//! where `P` selects the penalized columns, and solved with Householder QR.
//! If `R` is numerically singular (only possible at λ = 0), the SVD gives the
//! minimum-norm solution instead.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::encode::{FeatureMatrix, FeatureSchema};
use super::ModelError;
use crate::enrich::EnrichedRecord;

pub const DEFAULT_LAMBDA: f64 = 0.001;

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    pub weights: DVector<f64>,
    pub rank_deficient: bool,
}

/// Minimizes `‖Xw − y‖² + λ Σ_{j ∉ unpenalized} w_j²`.
pub fn solve_ridge(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, unpenalized: &[usize]) -> Result<RidgeSolution, ModelError> {
    let (n, p) = x.shape();
    if n == 0 || p == 0 {
        return Err(ModelError::Empty);
    }
    if y.len() != n {
        return Err(ModelError::Shape(format!("{n} rows but {} targets", y.len())));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(ModelError::BadLambda(lambda));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite);
    }

    let penalized: Vec<usize> = if lambda > 0.0 {
        (0..p).filter(|j| !unpenalized.contains(j)).collect()
    } else {
        Vec::new()
    };
    let m = n + penalized.len();
    let mut a = DMatrix::zeros(m, p);
    a.view_mut((0, 0), (n, p)).copy_from(x);
    let root = lambda.sqrt();
    for (k, &j) in penalized.iter().enumerate() {
        a[(n + k, j)] = root;
    }
    let mut b = DVector::zeros(m);
    b.rows_mut(0, n).copy_from(y);

    if m >= p {
        let qr = a.clone().qr();
        let r = qr.r();
        let diag_max = r.diagonal().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let tol = diag_max * (m.max(p) as f64) * f64::EPSILON;
        if diag_max > 0.0 && r.diagonal().iter().all(|v| v.abs() > tol) {
            let qtb = qr.q().transpose() * &b;
            if let Some(w) = r.solve_upper_triangular(&qtb) {
                return Ok(RidgeSolution {
                    weights: w,
                    rank_deficient: false,
                });
            }
        }
    }

    log::warn!("design matrix is rank deficient ({m}x{p}); using the minimum-norm solution");
    let svd = a.svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |acc, v| acc.max(*v));
    let eps = smax * (m.max(p) as f64) * f64::EPSILON;
    let w = svd.solve(&b, eps).map_err(|e| ModelError::Shape(e.to_string()))?;
    Ok(RidgeSolution {
        weights: w,
        rank_deficient: true,
    })
}

/// A fitted model: weights over the schema's columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCoefficients {
    pub schema: FeatureSchema,
    pub columns: Vec<String>,
    pub weights: Vec<f64>,
    pub ridge_lambda: f64,
    pub rank_deficient: bool,
}

impl ModelCoefficients {
    pub fn column_means(&self) -> &[f64] {
        &self.schema.column_means
    }

    pub fn column_scales(&self) -> &[f64] {
        &self.schema.column_scales
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let m: Self = serde_json::from_str(s).map_err(|e| ModelError::Shape(e.to_string()))?;
        if m.weights.len() != m.schema.n_columns() || m.columns.len() != m.weights.len() {
            return Err(ModelError::Shape(format!(
                "{} weights for {} columns",
                m.weights.len(),
                m.schema.n_columns()
            )));
        }
        if m.weights.iter().any(|w| !w.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(m)
    }
}

/// Fits every column but the intercept under the ridge penalty.
pub fn fit(x: &FeatureMatrix, lambda: f64) -> Result<ModelCoefficients, ModelError> {
    let intercept = x.schema.intercept_column();
    if x.cols() != x.schema.n_columns() {
        return Err(ModelError::Shape(format!("{} columns, schema has {}", x.cols(), x.schema.n_columns())));
    }
    let sol = solve_ridge(&x.values, &x.targets, lambda, &[intercept])?;
    if sol.weights.iter().any(|w| !w.is_finite()) {
        return Err(ModelError::NonFinite);
    }
    Ok(ModelCoefficients {
        columns: x.schema.column_names(),
        schema: x.schema.clone(),
        weights: sol.weights.iter().copied().collect(),
        ridge_lambda: lambda,
        rank_deficient: sol.rank_deficient,
    })
}

/// Scored label for one record, in target units.
pub fn predict(model: &ModelCoefficients, record: &EnrichedRecord) -> f64 {
    model
        .schema
        .encode_row(record)
        .iter()
        .zip(&model.weights)
        .map(|(x, w)| x * w)
        .sum()
}
