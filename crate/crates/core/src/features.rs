//! State-set engineering: principal-component factors, moving average factors
//! (MAFs) and assembly of the candidate splitting panel `S_t`.
//!
//! Every column of the assembled matrix at row `t` uses only data observed at
//! or before `t`. Row `t` is a forecast origin: the first own lag (`y_L1`) is
//! the value of the target at `t` itself.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dataio::{build_lag_panel, fmt_f64, origin_lags, write_csv_rows, SeriesPanel};
use crate::error::{MrfError, Result};
use crate::frame::Frame;

/// Principal components of a standardized panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSet {
    /// `T×k` factor scores; rows that could not be scored are `NaN`.
    pub scores: DMatrix<f64>,
    /// `N×k` eigenvectors of the (weighted) correlation matrix.
    pub loadings: DMatrix<f64>,
    pub explained_variance: Vec<f64>,
    means: Vec<f64>,
    sds: Vec<f64>,
    col_weights: Vec<f64>,
}

impl FactorSet {
    pub fn k(&self) -> usize {
        self.loadings.ncols()
    }

    /// Scores new rows with the standardization and loadings estimated at fit
    /// time. Rows containing `NaN` score as `NaN`.
    pub fn project(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.k();
        let n = self.means.len();
        let mut out = DMatrix::from_element(x.nrows(), k, f64::NAN);
        let mut z = vec![0.0; n];
        for t in 0..x.nrows() {
            let mut ok = true;
            for j in 0..n {
                let v = x[(t, j)];
                if v.is_nan() {
                    ok = false;
                    break;
                }
                z[j] = (v - self.means[j]) / self.sds[j] * self.col_weights[j];
            }
            if !ok {
                continue;
            }
            for c in 0..k {
                out[(t, c)] = (0..n).map(|j| z[j] * self.loadings[(j, c)]).sum();
            }
        }
        out
    }
}

/// PCA on the correlation matrix of `x` (columns standardized internally).
///
/// Loading columns are signed so that their largest-magnitude entry is positive.
pub fn pca(x: &DMatrix<f64>, k: usize) -> Result<FactorSet> {
    let names: Vec<String> = (0..x.ncols()).map(|j| format!("column {j}")).collect();
    pca_with(x, &names, k, None, None)
}

/// PCA with named columns (for error messages), optional per-column weights
/// applied after standardization, and an optional subset of rows used for
/// estimation. All rows are scored afterwards.
pub fn pca_with(
    x: &DMatrix<f64>,
    names: &[String],
    k: usize,
    col_weights: Option<&[f64]>,
    fit_rows: Option<&[usize]>,
) -> Result<FactorSet> {
    let n = x.ncols();
    let rows: Vec<usize> = match fit_rows {
        Some(r) => r.to_vec(),
        None => (0..x.nrows()).collect(),
    };
    let t = rows.len();
    if k == 0 || k > t.min(n) {
        return Err(MrfError::arg(format!(
            "number of components {k} must be in 1..={}",
            t.min(n)
        )));
    }
    if t < 2 {
        return Err(MrfError::arg("PCA needs at least two observations"));
    }
    if let Some(&r) = rows.iter().find(|&&r| x.row(r).iter().any(|v| v.is_nan())) {
        return Err(MrfError::arg(format!("row {r} contains missing values")));
    }
    let weights: Vec<f64> = col_weights.map_or_else(|| vec![1.0; n], |w| w.to_vec());

    let mut means = vec![0.0; n];
    let mut sds = vec![0.0; n];
    for j in 0..n {
        let m = rows.iter().map(|&r| x[(r, j)]).sum::<f64>() / t as f64;
        let ss = rows.iter().map(|&r| (x[(r, j)] - m).powi(2)).sum::<f64>();
        let sd = (ss / (t - 1) as f64).sqrt();
        if !(sd > 1e-12 * m.abs().max(1.0)) {
            return Err(MrfError::ZeroVariance {
                column: names[j].clone(),
            });
        }
        means[j] = m;
        sds[j] = sd;
    }
    let z = DMatrix::from_fn(t, n, |i, j| (x[(rows[i], j)] - means[j]) / sds[j] * weights[j]);
    let corr = (z.transpose() * &z) / (t - 1) as f64;
    let trace = corr.trace();
    let eig = SymmetricEigen::new(corr);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut loadings = DMatrix::zeros(n, k);
    let mut explained = Vec::with_capacity(k);
    for (c, &src) in order.iter().take(k).enumerate() {
        let mut v = eig.eigenvectors.column(src).into_owned();
        let mut best = 0;
        for j in 1..n {
            if v[j].abs() > v[best].abs() + 1e-12 {
                best = j;
            }
        }
        if v[best] < 0.0 {
            v.neg_mut();
        }
        loadings.set_column(c, &v);
        explained.push((eig.eigenvalues[src] / trace).clamp(0.0, 1.0));
    }
    let mut fs = FactorSet {
        scores: DMatrix::zeros(0, k),
        loadings,
        explained_variance: explained,
        means,
        sds,
        col_weights: weights,
    };
    fs.scores = fs.project(x);
    Ok(fs)
}

/// Options for moving average factors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MafOptions {
    /// Geometric down-weighting `decay^p` of lag `p` before extraction.
    pub lag_decay: Option<f64>,
}

/// Moving average factors: the first `k` principal components of the panel of
/// `p` lags of `series`. The first `p` rows (incomplete lag panel) are `NaN`.
pub fn compute_mafs(series: &[f64], p: usize, k: usize) -> Result<DMatrix<f64>> {
    compute_mafs_with(series, p, k, MafOptions::default(), None)
}

/// [`compute_mafs`] with options and an optional last row used for estimation.
pub fn compute_mafs_with(
    series: &[f64],
    p: usize,
    k: usize,
    opts: MafOptions,
    fit_end: Option<usize>,
) -> Result<DMatrix<f64>> {
    if k == 0 || k > p {
        return Err(MrfError::arg(format!("MAF count {k} must be in 1..={p}")));
    }
    let panel = build_lag_panel(series, p)?;
    maf_scores(&panel, k, opts, fit_end)
}

fn maf_scores(
    panel: &DMatrix<f64>,
    k: usize,
    opts: MafOptions,
    fit_end: Option<usize>,
) -> Result<DMatrix<f64>> {
    let p = panel.ncols();
    let last = fit_end.unwrap_or(panel.nrows().saturating_sub(1));
    let rows: Vec<usize> = (0..panel.nrows().min(last + 1))
        .filter(|&t| panel.row(t).iter().all(|v| v.is_finite()))
        .collect();
    if rows.len() < p + k {
        return Err(MrfError::arg(format!(
            "MAF extraction needs at least {} complete lag rows, found {}",
            p + k,
            rows.len()
        )));
    }
    let names: Vec<String> = (1..=p).map(|l| format!("lag {l}")).collect();
    let weights: Option<Vec<f64>> = opts
        .lag_decay
        .map(|d| (1..=p).map(|l| d.powi(l as i32)).collect());
    let fs = pca_with(panel, &names, k, weights.as_deref(), Some(&rows))
        .map_err(|e| match e {
            MrfError::ZeroVariance { .. } => MrfError::ZeroVariance {
                column: "series (constant lag panel)".into(),
            },
            other => other,
        })?;
    Ok(fs.scores)
}

/// Origin of a state column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnGroup {
    OwnLag,
    Trend,
    RawLag,
    FactorLag,
    Maf,
}

impl ColumnGroup {
    pub fn tag(self) -> &'static str {
        match self {
            ColumnGroup::OwnLag => "own-lag",
            ColumnGroup::Trend => "trend",
            ColumnGroup::RawLag => "raw-lag",
            ColumnGroup::FactorLag => "factor-lag",
            ColumnGroup::Maf => "maf",
        }
    }
}

/// The `T×J` panel of candidate splitting variables.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    pub frame: Frame,
    pub groups: Vec<ColumnGroup>,
    pub trend_col: usize,
}

impl StateMatrix {
    pub fn new(frame: Frame, groups: Vec<ColumnGroup>) -> Result<Self> {
        if groups.len() != frame.ncols() {
            return Err(MrfError::arg("one group tag per state column required"));
        }
        if frame.ncols() < 2 {
            return Err(MrfError::arg("a state matrix needs at least two columns"));
        }
        let trends: Vec<usize> = groups
            .iter()
            .enumerate()
            .filter(|(_, g)| **g == ColumnGroup::Trend)
            .map(|(j, _)| j)
            .collect();
        if trends.len() != 1 {
            return Err(MrfError::arg(format!(
                "exactly one trend column required, found {}",
                trends.len()
            )));
        }
        let trend_col = trends[0];
        let ok = (0..frame.nrows()).all(|t| frame.values[(t, trend_col)] == (t + 1) as f64);
        if !ok {
            return Err(MrfError::arg("trend column must equal 1..T"));
        }
        Ok(StateMatrix {
            frame,
            groups,
            trend_col,
        })
    }

    /// Appends a trend column to arbitrary state columns (tagged `raw-lag`
    /// unless stated otherwise).
    pub fn from_columns(values: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let t = values.nrows();
        let j = values.ncols();
        let mut all = DMatrix::zeros(t, j + 1);
        all.columns_mut(0, j).copy_from(&values);
        for r in 0..t {
            all[(r, j)] = (r + 1) as f64;
        }
        let mut n = names;
        n.push("trend".into());
        let mut groups = vec![ColumnGroup::RawLag; j];
        groups.push(ColumnGroup::Trend);
        StateMatrix::new(Frame::new(all, n)?, groups)
    }

    pub fn nrows(&self) -> usize {
        self.frame.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.frame.ncols()
    }

    pub fn names(&self) -> &[String] {
        &self.frame.names
    }

    pub fn group_map(&self) -> BTreeMap<String, ColumnGroup> {
        self.frame
            .names
            .iter()
            .cloned()
            .zip(self.groups.iter().copied())
            .collect()
    }

    /// CSV dump; the first line is a `#` comment listing each column's group.
    pub fn write_csv<W: Write>(&self, mut writer: W, dates: Option<&[String]>) -> Result<()> {
        let tags: Vec<String> = self
            .frame
            .names
            .iter()
            .zip(&self.groups)
            .map(|(n, g)| format!("{n}={}", g.tag()))
            .collect();
        writeln!(writer, "# groups: {}", tags.join(";"))?;
        let mut header = vec!["date".to_string()];
        header.extend(self.frame.names.iter().cloned());
        let rows: Vec<Vec<String>> = (0..self.nrows())
            .map(|t| {
                let mut r = vec![dates.map_or_else(|| (t + 1).to_string(), |d| d[t].clone())];
                r.extend(self.frame.values.row(t).iter().map(|v| fmt_f64(*v)));
                r
            })
            .collect();
        write_csv_rows(writer, &header, &rows)
    }
}

/// Composition of the state set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StateConfig {
    pub n_factors: usize,
    pub factor_lags: usize,
    pub own_lags: usize,
    pub raw_lags: usize,
    pub maf_per_var: usize,
    pub maf_lags: usize,
    pub maf_lag_decay: Option<f64>,
    /// Own lags and trend only.
    pub tiny: bool,
}

impl Default for StateConfig {
    fn default() -> Self {
        StateConfig {
            n_factors: 5,
            factor_lags: 8,
            own_lags: 8,
            raw_lags: 2,
            maf_per_var: 2,
            maf_lags: 8,
            maf_lag_decay: None,
            tiny: false,
        }
    }
}

impl StateConfig {
    pub fn tiny(own_lags: usize) -> Self {
        StateConfig {
            own_lags,
            tiny: true,
            ..StateConfig::default()
        }
    }
}

/// Own lags of `y` plus a time trend.
pub fn tiny_state(y: &[f64], own_lags: usize) -> Result<StateMatrix> {
    let lags = origin_lags(y, own_lags);
    let names = (1..=own_lags).map(|l| format!("y_L{l}")).collect();
    let mut sm = StateMatrix::from_columns(lags, names)?;
    for g in sm.groups.iter_mut().take(own_lags) {
        *g = ColumnGroup::OwnLag;
    }
    Ok(sm)
}

/// Panel columns fully observed over the estimation window and that window's
/// first row. The window starts at the first row where at least 90% of the
/// series are observed and ends at `fit_end`.
pub fn complete_columns(panel: &DMatrix<f64>, fit_end: usize) -> (Vec<usize>, usize) {
    let n = panel.ncols();
    let fit_end = fit_end.min(panel.nrows().saturating_sub(1));
    let start = (0..=fit_end)
        .find(|&t| {
            let obs = panel.row(t).iter().filter(|v| v.is_finite()).count();
            obs as f64 >= 0.9 * n as f64
        })
        .unwrap_or(0);
    let cols = (0..n)
        .filter(|&j| (start..=fit_end).all(|t| panel[(t, j)].is_finite()))
        .collect();
    (cols, start)
}

/// Cross-sectional factors of a (stationary) panel, estimated on rows up to
/// `fit_end` and projected on every row.
pub fn panel_factors(panel: &SeriesPanel, k: usize, fit_end: Option<usize>) -> Result<Frame> {
    let fit_end = fit_end.unwrap_or(panel.nrows() - 1);
    let (cols, start) = complete_columns(&panel.values, fit_end);
    if cols.len() < k {
        return Err(MrfError::arg(format!(
            "only {} series are complete over the estimation window; cannot extract {k} factors",
            cols.len()
        )));
    }
    let x = panel.values.select_columns(&cols);
    let names: Vec<String> = cols.iter().map(|&j| panel.names[j].clone()).collect();
    let rows: Vec<usize> = (start..=fit_end).collect();
    let fs = pca_with(&x, &names, k, None, Some(&rows))?;
    Ok(Frame::with_prefix(fs.scores, "F"))
}

/// Builds `S_t`: own lags of `y`, a trend, raw lags of every panel series,
/// lags of cross-sectional factors and MAFs of every panel series.
///
/// Estimation-dependent pieces (factor loadings, MAF weights) use rows up to
/// `fit_end` (all rows when `None`). Series with missing values inside the
/// estimation window are left out of the raw, factor and MAF blocks.
pub fn assemble_state_matrix(
    y: &[f64],
    panel: &SeriesPanel,
    cfg: &StateConfig,
    fit_end: Option<usize>,
) -> Result<StateMatrix> {
    let t_len = y.len();
    if panel.nrows() != t_len {
        return Err(MrfError::arg(format!(
            "target has {t_len} rows but panel has {}",
            panel.nrows()
        )));
    }
    if cfg.own_lags == 0 {
        return Err(MrfError::arg("own_lags must be at least 1"));
    }
    let own_prefix = if panel.names.iter().any(|n| n == "y") {
        "target"
    } else {
        "y"
    };
    let mut blocks: Vec<(DMatrix<f64>, Vec<String>, ColumnGroup)> = Vec::new();
    blocks.push((
        origin_lags(y, cfg.own_lags),
        (1..=cfg.own_lags).map(|l| format!("{own_prefix}_L{l}")).collect(),
        ColumnGroup::OwnLag,
    ));
    blocks.push((
        DMatrix::from_fn(t_len, 1, |t, _| (t + 1) as f64),
        vec!["trend".into()],
        ColumnGroup::Trend,
    ));

    if !cfg.tiny {
        let fit_end_row = fit_end.unwrap_or(t_len - 1);
        let (cols, _) = complete_columns(&panel.values, fit_end_row);
        if cols.len() < panel.ncols() {
            log::warn!(
                "{} of {} series have gaps in the estimation window and are left out of S_t",
                panel.ncols() - cols.len(),
                panel.ncols()
            );
        }
        if cfg.raw_lags > 0 {
            for &j in &cols {
                let s: Vec<f64> = panel.values.column(j).iter().copied().collect();
                blocks.push((
                    origin_lags(&s, cfg.raw_lags),
                    (1..=cfg.raw_lags)
                        .map(|l| format!("{}_L{l}", panel.names[j]))
                        .collect(),
                    ColumnGroup::RawLag,
                ));
            }
        }
        if cfg.n_factors > 0 && cfg.factor_lags > 0 {
            let f = panel_factors(panel, cfg.n_factors, Some(fit_end_row))?;
            for c in 0..cfg.n_factors {
                let s: Vec<f64> = f.values.column(c).iter().copied().collect();
                blocks.push((
                    origin_lags(&s, cfg.factor_lags),
                    (1..=cfg.factor_lags)
                        .map(|l| format!("F{}_L{l}", c + 1))
                        .collect(),
                    ColumnGroup::FactorLag,
                ));
            }
        }
        if cfg.maf_per_var > 0 {
            let opts = MafOptions {
                lag_decay: cfg.maf_lag_decay,
            };
            for &j in &cols {
                let s: Vec<f64> = panel.values.column(j).iter().copied().collect();
                let lags = origin_lags(&s, cfg.maf_lags);
                let scores = maf_scores(&lags, cfg.maf_per_var, opts, Some(fit_end_row))
                    .map_err(|e| match e {
                        MrfError::ZeroVariance { .. } => MrfError::ZeroVariance {
                            column: panel.names[j].clone(),
                        },
                        other => other,
                    })?;
                blocks.push((
                    scores,
                    (1..=cfg.maf_per_var)
                        .map(|i| format!("{}_MAF{i}", panel.names[j]))
                        .collect(),
                    ColumnGroup::Maf,
                ));
            }
        }
    }

    let j_total: usize = blocks.iter().map(|b| b.0.ncols()).sum();
    let mut values = DMatrix::zeros(t_len, j_total);
    let mut names = Vec::with_capacity(j_total);
    let mut groups = Vec::with_capacity(j_total);
    let mut c = 0;
    for (m, n, g) in blocks {
        values.columns_mut(c, m.ncols()).copy_from(&m);
        c += m.ncols();
        groups.extend(std::iter::repeat_n(g, n.len()));
        names.extend(n);
    }
    StateMatrix::new(Frame::new(values, names)?, groups)
}
