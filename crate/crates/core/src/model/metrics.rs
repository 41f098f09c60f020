//! Mean absolute error, relative squared error and coefficient of
//! determination.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// `rse` and `cod` are `None` when the targets have no variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub mae: f64,
    pub rse: Option<f64>,
    pub cod: Option<f64>,
}

impl EvalMetrics {
    /// Coefficient of determination for a given relative squared error.
    pub fn cod_from_rse(rse: f64) -> f64 {
        1.0 - rse
    }
}

pub fn evaluate(y: &[f64], yhat: &[f64]) -> Result<EvalMetrics, ModelError> {
    if y.len() != yhat.len() {
        return Err(ModelError::Shape(format!("{} targets but {} predictions", y.len(), yhat.len())));
    }
    if y.is_empty() {
        return Err(ModelError::Empty);
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let mut abs = 0.0;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (a, p) in y.iter().zip(yhat) {
        let e = a - p;
        abs += e.abs();
        ss_res += e * e;
        ss_tot += (a - mean) * (a - mean);
    }
    let rse = (ss_tot > 0.0).then(|| ss_res / ss_tot);
    Ok(EvalMetrics {
        mae: abs / n,
        rse,
        cod: rse.map(EvalMetrics::cod_from_rse),
    })
}
