//! Two-regime self-exciting threshold autoregression with a grid-searched
//! threshold on `y_{t−1}` and iterated bootstrap forecasts.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MrfError, Result};
use crate::ridgewls::Gram;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SetarOptions {
    /// Autoregressive order of each regime.
    pub p: usize,
    /// Minimum share of observations in each regime.
    pub trim: f64,
    /// Bootstrap paths for multi-step forecasts.
    pub n_boot: usize,
    /// Length of resampled residual blocks.
    pub block_len: usize,
    pub seed: u64,
}

impl Default for SetarOptions {
    fn default() -> Self {
        SetarOptions {
            p: 2,
            trim: 0.15,
            n_boot: 500,
            block_len: 4,
            seed: 1,
        }
    }
}

/// Fitted two-regime model `y_t = [1, y_{t−1}, …, y_{t−p}] β_r + e_t` with
/// regime `high` when `y_{t−1} ≥ threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct SetarFit {
    pub threshold: f64,
    pub beta_high: Vec<f64>,
    pub beta_low: Vec<f64>,
    pub residuals: Vec<f64>,
    pub sse: f64,
    pub opts: SetarOptions,
}

fn regressors(y: &[f64], t: usize, p: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(p + 1);
    x.push(1.0);
    for l in 1..=p {
        x.push(y[t - l]);
    }
    x
}

/// Estimates the model on targets `y_t`, `t ∈ [p, last]`.
///
/// Every observed `y_{t−1}` leaving at least `trim` of the sample in each
/// regime is tried as threshold; the one with the smallest total SSE wins.
pub fn fit_setar(y: &[f64], last: usize, opts: &SetarOptions) -> Result<SetarFit> {
    let p = opts.p.max(1);
    if last >= y.len() {
        return Err(MrfError::arg("last target row beyond the series"));
    }
    let rows: Vec<usize> = (p..=last)
        .filter(|&t| (t - p..=t).all(|i| y[i].is_finite()))
        .collect();
    let n = rows.len();
    let k = p + 1;
    let floor = ((opts.trim * n as f64).ceil() as usize).max(k + 1);
    if n < 2 * floor {
        return Err(MrfError::arg(format!(
            "SETAR needs at least {} usable observations, got {n}",
            2 * floor
        )));
    }
    let mut order = rows.clone();
    order.sort_by(|&a, &b| y[a - 1].partial_cmp(&y[b - 1]).unwrap().then(a.cmp(&b)));

    // prefix Grams over observations sorted by the threshold variable
    let mut low = Gram::new(k);
    let mut best: Option<(f64, f64)> = None;
    let mut high_parts: Vec<Gram> = Vec::with_capacity(n + 1);
    {
        let mut g = Gram::new(k);
        high_parts.push(g.clone());
        for &t in order.iter().rev() {
            g.add(&regressors(y, t, p), y[t], 1.0);
            high_parts.push(g.clone());
        }
        high_parts.reverse();
    }
    for i in 0..n {
        // low = order[..i], high = order[i..], threshold = y_{t−1} of order[i]
        let c = y[order[i] - 1];
        let distinct = i == 0 || y[order[i - 1] - 1] < c;
        if distinct && i >= floor && n - i >= floor {
            let fits = low
                .solve(0.0, None)
                .and_then(|(_, a)| high_parts[i].solve(0.0, None).map(|(_, b)| a + b));
            if let Ok(sse) = fits {
                if best.is_none_or(|b| sse < b.0) {
                    best = Some((sse, c));
                }
            }
        }
        low.add(&regressors(y, order[i], p), y[order[i]], 1.0);
    }
    let (_, threshold) = best.ok_or_else(|| {
        MrfError::arg("no admissible SETAR threshold (too few distinct values)")
    })?;
    let mut gh = Gram::new(k);
    let mut gl = Gram::new(k);
    for &t in &rows {
        let x = regressors(y, t, p);
        if y[t - 1] >= threshold {
            gh.add(&x, y[t], 1.0);
        } else {
            gl.add(&x, y[t], 1.0);
        }
    }
    let (beta_high, sh) = gh.solve(0.0, None)?;
    let (beta_low, sl) = gl.solve(0.0, None)?;
    let mut fit = SetarFit {
        threshold,
        beta_high,
        beta_low,
        residuals: Vec::new(),
        sse: sh + sl,
        opts: opts.clone(),
    };
    fit.residuals = rows
        .iter()
        .map(|&t| y[t] - fit.step(&y[t - p..t]))
        .collect();
    Ok(fit)
}

impl SetarFit {
    /// One-step skeleton given the last `p` values (oldest first).
    pub fn step(&self, lags: &[f64]) -> f64 {
        let p = lags.len();
        let y1 = lags[p - 1];
        let b = if y1 >= self.threshold {
            &self.beta_high
        } else {
            &self.beta_low
        };
        let mut v = b[0];
        for l in 1..=p {
            v += b[l] * lags[p - l];
        }
        v
    }

    /// Iterated forecasts of `y_{origin+1..=origin+h}` from the observed
    /// history. One step ahead uses the skeleton; longer horizons average
    /// `n_boot` paths driven by resampled blocks of in-sample residuals.
    pub fn forecast_path(&self, y: &[f64], origin: usize, h: usize) -> Result<Vec<f64>> {
        let p = self.opts.p.max(1);
        if origin + 1 < p {
            return Err(MrfError::arg("not enough history at the forecast origin"));
        }
        let hist: Vec<f64> = y[origin + 1 - p..=origin].to_vec();
        if hist.iter().any(|v| !v.is_finite()) {
            return Err(MrfError::arg("missing values at the forecast origin"));
        }
        let mut out = vec![0.0; h];
        if h == 0 {
            return Ok(out);
        }
        out[0] = self.step(&hist);
        if h == 1 {
            return Ok(out);
        }
        let n_res = self.residuals.len();
        let block = self.opts.block_len.clamp(1, n_res);
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed ^ (origin as u64).wrapping_mul(0x9E37_79B9));
        let mut sums = vec![0.0; h];
        for _ in 0..self.opts.n_boot {
            let mut shocks = Vec::with_capacity(h);
            while shocks.len() < h {
                let start = rng.random_range(0..=n_res - block);
                shocks.extend_from_slice(&self.residuals[start..start + block]);
            }
            let mut lags = hist.clone();
            for j in 0..h {
                let skeleton = self.step(&lags);
                sums[j] += skeleton;
                let next = skeleton + shocks[j];
                lags.remove(0);
                lags.push(next);
            }
        }
        for j in 1..h {
            out[j] = sums[j] / self.opts.n_boot as f64;
        }
        Ok(out)
    }
}

/// Coefficient matrix `[β_low; β_high]` (2×(p+1)), for reporting.
pub fn coefficient_table(fit: &SetarFit) -> DMatrix<f64> {
    let k = fit.beta_low.len();
    DMatrix::from_fn(2, k, |r, c| if r == 0 { fit.beta_low[c] } else { fit.beta_high[c] })
}
