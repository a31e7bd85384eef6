//! Diebold–Mariano test of equal squared-error predictive accuracy.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{MrfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Compares forecast errors `a` and `b` of an `h`-step forecast.
///
/// The loss differential `d_t = a_t² − b_t²` has its long-run variance
/// estimated with a Bartlett kernel of `h − 1` lags (autocovariances scaled by
/// `1/n`). A positive statistic means `a` is less accurate. The p-value is
/// two-sided under the standard normal.
pub fn dm_test(a: &[f64], b: &[f64], h: usize) -> Result<DmResult> {
    if a.len() != b.len() {
        return Err(MrfError::arg(format!(
            "error series differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 10 {
        return Err(MrfError::arg(format!("DM test needs at least 10 errors, got {n}")));
    }
    if h == 0 {
        return Err(MrfError::arg("horizon must be at least 1"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * x - y * y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let gamma = |lag: usize| -> f64 {
        (lag..n)
            .map(|t| (d[t] - mean) * (d[t - lag] - mean))
            .sum::<f64>()
            / nf
    };
    let mut lrv = gamma(0);
    for k in 1..h.min(n) {
        lrv += 2.0 * (1.0 - k as f64 / h as f64) * gamma(k);
    }
    if !(lrv > 0.0) {
        return Ok(DmResult {
            statistic: 0.0,
            p_value: 1.0,
        });
    }
    let statistic = mean / (lrv / nf).sqrt();
    let normal = Normal::standard();
    let p_value = (2.0 * (1.0 - normal.cdf(statistic.abs()))).clamp(0.0, 1.0);
    Ok(DmResult { statistic, p_value })
}
