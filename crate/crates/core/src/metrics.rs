//! Regression metrics on original-unit responses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five error summaries of one prediction vector.
///
/// `mape` skips observations with `y == 0`; `mape_skipped` counts them and
/// `mape` is `None` when every observation was skipped. `r2` is `None` when the
/// response is constant, and `adj_r2` additionally when `n <= d_used + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub mape: Option<f64>,
    pub mape_skipped: usize,
    pub rmse: f64,
    pub r2: Option<f64>,
    pub adj_r2: Option<f64>,
    pub n: usize,
    pub d_used: usize,
}

pub fn compute_metrics(y: &[f64], yhat: &[f64], d_used: usize) -> Result<MetricsReport> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            found: yhat.len(),
        });
    }
    let n = y.len();
    if n < 2 {
        return Err(Error::invalid(format!("metrics need at least 2 observations, got {n}")));
    }
    if y.iter().chain(yhat).any(|v| !v.is_finite()) {
        return Err(Error::invalid("metrics require finite values"));
    }
    let nf = n as f64;
    let mean = y.iter().sum::<f64>() / nf;
    let (mut abs, mut sq, mut tot, mut pct) = (0.0, 0.0, 0.0, 0.0);
    let mut skipped = 0;
    for (&yi, &fi) in y.iter().zip(yhat) {
        let e = yi - fi;
        abs += e.abs();
        sq += e * e;
        tot += (yi - mean).powi(2);
        if yi == 0.0 {
            skipped += 1;
        } else {
            pct += (e / yi).abs();
        }
    }
    let r2 = (tot > 0.0).then(|| 1.0 - sq / tot);
    let adj_r2 = r2.and_then(|r2| {
        (n > d_used + 1).then(|| 1.0 - (1.0 - r2) * (nf - 1.0) / (nf - d_used as f64 - 1.0))
    });
    Ok(MetricsReport {
        mae: abs / nf,
        mape: (skipped < n).then(|| pct / (n - skipped) as f64),
        mape_skipped: skipped,
        rmse: (sq / nf).sqrt(),
        r2,
        adj_r2,
        n,
        d_used,
    })
}
