//! Ridge-penalised weighted least squares with a prior mean, random-walk
//! ("Olympic podium") time-smoothing weights and the split objective built
//! from both.
//!
//! The penalty is `λ‖β − p‖²` on every coefficient, intercept included.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MrfError, Result};

/// Pivot ratio below which an unpenalised system is declared singular.
const SINGULAR_RATIO: f64 = 1e-13;
/// Pivot ratio below which an unpenalised system gets a small diagonal jitter.
const JITTER_RATIO: f64 = 1e-9;
const JITTER: f64 = 1e-8;

/// Penalty, prior mean and scaling of a ridge regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeSpec {
    pub lambda: f64,
    /// Prior mean in original units; `None` shrinks towards the unweighted
    /// OLS estimate on the same rows (zero if OLS is not identified).
    pub prior_mean: Option<Vec<f64>>,
    pub standardize: bool,
}

impl RidgeSpec {
    pub fn new(lambda: f64) -> Self {
        RidgeSpec {
            lambda,
            prior_mean: None,
            standardize: true,
        }
    }

    pub fn with_prior(mut self, prior: Vec<f64>) -> Self {
        self.prior_mean = Some(prior);
        self
    }

    pub fn unstandardized(mut self) -> Self {
        self.standardize = false;
        self
    }

    fn validate(&self, k: usize) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(MrfError::arg(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if let Some(p) = &self.prior_mean {
            if p.len() != k {
                return Err(MrfError::arg(format!(
                    "prior mean has length {} but X has {k} columns",
                    p.len()
                )));
            }
        }
        Ok(())
    }
}

impl Default for RidgeSpec {
    fn default() -> Self {
        RidgeSpec::new(0.5)
    }
}

/// Result of [`ridge_wls_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub beta: Vec<f64>,
    /// `Σ w (y − Xβ)²` at the optimum.
    pub weighted_sse: f64,
    /// Weighted SSE plus the penalty (in the solver's coordinates).
    pub objective: f64,
}

/// Affine map between original regressors and the solver's coordinates.
///
/// Non-constant columns are divided by their standard deviation, and centred
/// as well when the design has an intercept (a non-zero constant column).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    means: Vec<f64>,
    scales: Vec<f64>,
    /// Index and value of the intercept column.
    intercept: Option<(usize, f64)>,
}

impl Standardizer {
    pub fn identity(k: usize) -> Self {
        Standardizer {
            means: vec![0.0; k],
            scales: vec![1.0; k],
            intercept: None,
        }
    }

    /// Moments of `x` over `rows` (all rows when `None`).
    pub fn fit(x: &DMatrix<f64>, rows: Option<&[usize]>) -> Self {
        let k = x.ncols();
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..x.nrows()).collect();
                &all
            }
        };
        let n = rows.len().max(1) as f64;
        let mut means = vec![0.0; k];
        let mut scales = vec![1.0; k];
        let mut constant = vec![false; k];
        let mut intercept = None;
        for j in 0..k {
            let first = rows.first().map_or(0.0, |&r| x[(r, j)]);
            if rows.iter().all(|&r| x[(r, j)] == first) {
                constant[j] = true;
                if intercept.is_none() && first != 0.0 {
                    intercept = Some((j, first));
                }
                continue;
            }
            let m = rows.iter().map(|&r| x[(r, j)]).sum::<f64>() / n;
            let var = rows.iter().map(|&r| (x[(r, j)] - m).powi(2)).sum::<f64>() / n;
            means[j] = m;
            scales[j] = var.sqrt();
        }
        if intercept.is_none() {
            means.iter_mut().for_each(|m| *m = 0.0);
        }
        Standardizer {
            means,
            scales,
            intercept,
        }
    }

    pub fn k(&self) -> usize {
        self.scales.len()
    }

    pub fn transform_row(&self, row: &[f64], out: &mut [f64]) {
        for j in 0..row.len() {
            out[j] = (row[j] - self.means[j]) / self.scales[j];
        }
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |t, j| {
            (x[(t, j)] - self.means[j]) / self.scales[j]
        })
    }

    /// Coefficients in the solver's coordinates to original units.
    pub fn beta_to_original(&self, b: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = b.iter().zip(&self.scales).map(|(v, s)| v / s).collect();
        if let Some((c, v)) = self.intercept {
            let shift: f64 = (0..b.len())
                .filter(|&j| j != c)
                .map(|j| self.means[j] * out[j])
                .sum();
            out[c] = b[c] - shift / v;
        }
        out
    }

    /// Original coefficients to the solver's coordinates.
    pub fn beta_to_standardized(&self, b: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = b.iter().zip(&self.scales).map(|(v, s)| v * s).collect();
        if let Some((c, v)) = self.intercept {
            let shift: f64 = (0..b.len())
                .filter(|&j| j != c)
                .map(|j| self.means[j] * b[j])
                .sum();
            out[c] = b[c] + shift / v;
        }
        out
    }
}

/// Weighted cross-products `X'WX` (upper triangle), `X'Wy` and `y'Wy`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    k: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    yy: f64,
    wsum: f64,
}

impl Gram {
    pub fn new(k: usize) -> Self {
        Gram {
            k,
            a: vec![0.0; k * k],
            b: vec![0.0; k],
            yy: 0.0,
            wsum: 0.0,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn yy(&self) -> f64 {
        self.yy
    }

    /// Total weight accumulated.
    pub fn wsum(&self) -> f64 {
        self.wsum
    }

    #[inline]
    pub fn add(&mut self, x: &[f64], y: f64, w: f64) {
        let k = self.k;
        for i in 0..k {
            let wxi = w * x[i];
            for j in i..k {
                self.a[i * k + j] += wxi * x[j];
            }
            self.b[i] += wxi * y;
        }
        self.yy += w * y * y;
        self.wsum += w;
    }

    pub fn merged(&self, other: &Gram) -> Gram {
        let mut g = self.clone();
        g.a.iter_mut().zip(&other.a).for_each(|(u, v)| *u += v);
        g.b.iter_mut().zip(&other.b).for_each(|(u, v)| *u += v);
        g.yy += other.yy;
        g.wsum += other.wsum;
        g
    }

    /// Minimises `y'Wy − 2β'X'Wy + β'X'WXβ + λ‖β − p‖²`.
    ///
    /// Returns the minimiser and the minimised (penalised) objective.
    pub fn solve(&self, lambda: f64, prior: Option<&[f64]>) -> Result<(Vec<f64>, f64)> {
        let k = self.k;
        let mut r = self.b.clone();
        let mut pp = 0.0;
        if let Some(p) = prior {
            for i in 0..k {
                r[i] += lambda * p[i];
                pp += p[i] * p[i];
            }
        }
        let beta = if k == 1 {
            let m = self.a[0] + lambda;
            if !(m > 0.0) {
                return Err(MrfError::RankDeficient { k });
            }
            vec![r[0] / m]
        } else {
            match cholesky_solve(&self.a, k, &r, lambda, 0.0) {
                Ok(b) => b,
                Err(Pivot::Small) => {
                    let jitter = JITTER * (0..k).map(|i| self.a[i * k + i]).sum::<f64>() / k as f64;
                    cholesky_solve(&self.a, k, &r, lambda, jitter.max(JITTER))
                        .map_err(|_| MrfError::RankDeficient { k })?
                }
                Err(Pivot::Singular) => return Err(MrfError::RankDeficient { k }),
            }
        };
        let fit: f64 = beta.iter().zip(&r).map(|(b, r)| b * r).sum();
        let obj = (self.yy + lambda * pp - fit).max(0.0);
        Ok((beta, obj))
    }
}

enum Pivot {
    Small,
    Singular,
}

/// Cholesky solve of `(A + (λ + jitter)I) β = r` with `A` stored as its upper
/// triangle. Without penalty, tiny pivots relative to the original diagonal
/// signal (near) singularity.
fn cholesky_solve(
    a: &[f64],
    k: usize,
    r: &[f64],
    lambda: f64,
    jitter: f64,
) -> std::result::Result<Vec<f64>, Pivot> {
    let shift = lambda + jitter;
    let mut l = vec![0.0; k * k];
    for j in 0..k {
        let diag = a[j * k + j] + shift;
        let mut d = diag;
        for p in 0..j {
            d -= l[j * k + p] * l[j * k + p];
        }
        if lambda == 0.0 && jitter == 0.0 {
            let ratio = if diag > 0.0 { d / diag } else { -1.0 };
            if !(ratio >= SINGULAR_RATIO) {
                return Err(Pivot::Singular);
            }
            if ratio < JITTER_RATIO {
                return Err(Pivot::Small);
            }
        } else if !(d > 0.0) {
            return Err(Pivot::Singular);
        }
        let dj = d.sqrt();
        l[j * k + j] = dj;
        for i in (j + 1)..k {
            let mut v = a[j * k + i];
            for p in 0..j {
                v -= l[i * k + p] * l[j * k + p];
            }
            l[i * k + j] = v / dj;
        }
    }
    let mut z = vec![0.0; k];
    for i in 0..k {
        let mut v = r[i];
        for p in 0..i {
            v -= l[i * k + p] * z[p];
        }
        z[i] = v / l[i * k + i];
    }
    let mut beta = vec![0.0; k];
    for i in (0..k).rev() {
        let mut v = z[i];
        for p in (i + 1)..k {
            v -= l[p * k + i] * beta[p];
        }
        beta[i] = v / l[i * k + i];
    }
    Ok(beta)
}

/// Unweighted OLS.
pub fn ols(x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    let mut g = Gram::new(x.ncols());
    let mut row = vec![0.0; x.ncols()];
    for t in 0..x.nrows() {
        for j in 0..x.ncols() {
            row[j] = x[(t, j)];
        }
        g.add(&row, y[t], 1.0);
    }
    g.solve(0.0, None).map(|(b, _)| b)
}

/// Ridge-penalised weighted least squares,
/// `argmin Σ w (y − Xβ)² + λ‖β − p‖²`.
pub fn ridge_wls_solve(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    spec: &RidgeSpec,
) -> Result<RidgeFit> {
    let (n, k) = (x.nrows(), x.ncols());
    if n == 0 || k == 0 {
        return Err(MrfError::arg("empty design"));
    }
    if y.len() != n || w.len() != n {
        return Err(MrfError::arg(format!(
            "X has {n} rows, y has {}, w has {}",
            y.len(),
            w.len()
        )));
    }
    if w.iter().any(|v| !(*v >= 0.0)) || !w.iter().any(|v| *v > 0.0) {
        return Err(MrfError::arg("weights must be non-negative with at least one positive"));
    }
    spec.validate(k)?;
    let st = if spec.standardize {
        Standardizer::fit(x, None)
    } else {
        Standardizer::identity(k)
    };
    let xs = st.transform(x);
    let prior = resolve_prior(&xs, y, &st, spec);
    let shifted: Vec<f64> = (0..n)
        .map(|t| y[t] - (0..k).map(|j| xs[(t, j)] * prior[j]).sum::<f64>())
        .collect();
    let mut g = Gram::new(k);
    let mut row = vec![0.0; k];
    for t in 0..n {
        if w[t] == 0.0 {
            continue;
        }
        for j in 0..k {
            row[j] = xs[(t, j)];
        }
        g.add(&row, shifted[t], w[t]);
    }
    let (dev, _) = g.solve(spec.lambda, None)?;
    let bs: Vec<f64> = dev.iter().zip(&prior).map(|(d, p)| d + p).collect();
    let beta = st.beta_to_original(&bs);
    let weighted_sse: f64 = (0..n)
        .map(|t| {
            let e = y[t] - (0..k).map(|j| x[(t, j)] * beta[j]).sum::<f64>();
            w[t] * e * e
        })
        .sum();
    let penalty = spec.lambda * dev.iter().map(|d| d * d).sum::<f64>();
    Ok(RidgeFit {
        beta,
        weighted_sse,
        objective: weighted_sse + penalty,
    })
}

/// Prior mean in the solver's coordinates.
pub(crate) fn resolve_prior(
    xs: &DMatrix<f64>,
    y: &[f64],
    st: &Standardizer,
    spec: &RidgeSpec,
) -> Vec<f64> {
    let k = xs.ncols();
    match &spec.prior_mean {
        Some(p) => st.beta_to_standardized(p),
        None if spec.lambda == 0.0 => vec![0.0; k],
        None => ols(xs, y).unwrap_or_else(|_| {
            log::debug!("OLS prior not identified; shrinking towards zero");
            vec![0.0; k]
        }),
    }
}

/// Random-walk time-smoothing weights over `0..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PodiumWeights {
    pub weights: Vec<f64>,
    pub zeta: f64,
}

/// Weight 1 on leaf members, `ζ` one step away and `ζ²` two steps away from
/// the nearest member (largest weight wins). Indices are 0-based.
pub fn podium_weights(leaf: &[usize], zeta: f64, t_len: usize) -> Result<PodiumWeights> {
    podium_weights_within(leaf, zeta, t_len, None)
}

/// [`podium_weights`] where neighbours only receive weight if `eligible`.
pub fn podium_weights_within(
    leaf: &[usize],
    zeta: f64,
    t_len: usize,
    eligible: Option<&[bool]>,
) -> Result<PodiumWeights> {
    if leaf.is_empty() {
        return Err(MrfError::arg("podium weights need a non-empty leaf"));
    }
    if !(0.0..1.0).contains(&zeta) {
        return Err(MrfError::arg(format!("zeta must lie in [0, 1), got {zeta}")));
    }
    if let Some(&bad) = leaf.iter().find(|&&i| i >= t_len) {
        return Err(MrfError::arg(format!("leaf index {bad} outside 0..{t_len}")));
    }
    let mut w = vec![0.0; t_len];
    let steps = [1.0, zeta, zeta * zeta];
    for &m in leaf {
        let lo = m.saturating_sub(2);
        let hi = (m + 2).min(t_len - 1);
        for t in lo..=hi {
            if t != m && eligible.is_some_and(|e| !e[t]) {
                continue;
            }
            let v = steps[t.abs_diff(m)];
            if v > w[t] {
                w[t] = v;
            }
        }
    }
    Ok(PodiumWeights { weights: w, zeta })
}

/// Data for evaluating a single split directly.
#[derive(Debug, Clone, Copy)]
pub struct SplitData<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
    pub s: &'a DMatrix<f64>,
    /// Rows that may receive random-walk weight (all rows when `None`).
    pub eligible: Option<&'a [bool]>,
}

/// Penalised weighted SSE of the two children of `node` obtained by splitting
/// on `S_j ≤ c`, each child fitted with its own podium weights.
///
/// Returns `f64::INFINITY` when a child has fewer than `min_leaf` members.
/// Standardization and the default prior use every row of `data.x`.
pub fn split_objective(
    candidate: (usize, f64),
    node: &[usize],
    data: &SplitData<'_>,
    spec: &RidgeSpec,
    zeta: f64,
    min_leaf: usize,
) -> Result<f64> {
    let (j, c) = candidate;
    let (left, right): (Vec<usize>, Vec<usize>) =
        node.iter().partition(|&&t| !(data.s[(t, j)] > c));
    let floor = min_leaf.max(1);
    if left.len() < floor || right.len() < floor {
        return Ok(f64::INFINITY);
    }
    spec.validate(data.x.ncols())?;
    let t_len = data.x.nrows();
    let st = if spec.standardize {
        Standardizer::fit(data.x, None)
    } else {
        Standardizer::identity(data.x.ncols())
    };
    let xs = st.transform(data.x);
    let prior = resolve_prior(&xs, data.y, &st, spec);
    let mut total = 0.0;
    for child in [&left, &right] {
        let w = podium_weights_within(child, zeta, t_len, data.eligible)?;
        let mut g = Gram::new(data.x.ncols());
        let mut row = vec![0.0; data.x.ncols()];
        for t in 0..t_len {
            if w.weights[t] == 0.0 {
                continue;
            }
            for k in 0..row.len() {
                row[k] = xs[(t, k)];
            }
            let fit: f64 = row.iter().zip(&prior).map(|(a, b)| a * b).sum();
            g.add(&row, data.y[t] - fit, w.weights[t]);
        }
        total += g.solve(spec.lambda, None)?.1;
    }
    Ok(total)
}
