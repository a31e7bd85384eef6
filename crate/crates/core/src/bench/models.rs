//! The forecasting model zoo. Every model is fitted once per estimation
//! point and then produces forecasts of the direct target from any origin.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bench::setar::{fit_setar, SetarFit, SetarOptions};
use crate::dataio::{build_direct_target, origin_lags, ForecastSpec, SeriesPanel, TargetMode};
use crate::error::{MrfError, Result};
use crate::features::{
    assemble_state_matrix, complete_columns, panel_factors, tiny_state, StateConfig, StateMatrix,
};
use crate::forest::{fit_forest, MrfForest};
use crate::frame::Frame;
use crate::ridgewls::{ridge_wls_solve, RidgeSpec};
use crate::tree::HyperParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `[1, y lags]` by OLS.
    #[default]
    Ar,
    /// AR plus lags of panel factors, by OLS.
    FaAr,
    /// AR on the last `window` observations only.
    RwAr,
    /// Two-regime threshold AR with iterated forecasts.
    Setar,
    /// Plain random forest (intercept-only leaves, no penalty, no smoothing)
    /// on the state set without MAFs.
    Rf,
    /// Plain random forest on the full state set.
    RfMaf,
    /// Forest with an AR linear part on the full state set.
    Arrf,
    /// Forest with an AR linear part on own lags and a trend.
    TinyArrf,
    /// Forest with an AR linear part augmented by panel factors.
    FaArrf,
    /// Forest with an AR linear part augmented by chosen panel series.
    Varrf,
    /// Ridge regression of the target on the state set.
    RidgeMaf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 11] = [
        ModelKind::Ar,
        ModelKind::FaAr,
        ModelKind::RwAr,
        ModelKind::Setar,
        ModelKind::Rf,
        ModelKind::RfMaf,
        ModelKind::Arrf,
        ModelKind::TinyArrf,
        ModelKind::FaArrf,
        ModelKind::Varrf,
        ModelKind::RidgeMaf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ar => "ar",
            ModelKind::FaAr => "fa_ar",
            ModelKind::RwAr => "rw_ar",
            ModelKind::Setar => "setar",
            ModelKind::Rf => "rf",
            ModelKind::RfMaf => "rf_maf",
            ModelKind::Arrf => "arrf",
            ModelKind::TinyArrf => "tiny_arrf",
            ModelKind::FaArrf => "fa_arrf",
            ModelKind::Varrf => "varrf",
            ModelKind::RidgeMaf => "ridge_maf",
        }
    }

    pub fn is_forest(self) -> bool {
        matches!(
            self,
            ModelKind::Rf
                | ModelKind::RfMaf
                | ModelKind::Arrf
                | ModelKind::TinyArrf
                | ModelKind::FaArrf
                | ModelKind::Varrf
        )
    }

    /// Whether the model needs a panel of predictors besides the target.
    pub fn needs_panel(self) -> bool {
        matches!(
            self,
            ModelKind::FaAr | ModelKind::FaArrf | ModelKind::Varrf | ModelKind::RidgeMaf
        )
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = MrfError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        if norm == "plain_rf" {
            return Ok(ModelKind::Rf);
        }
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| {
                let known: Vec<&str> = ModelKind::ALL.iter().map(|k| k.name()).collect();
                MrfError::Config(format!(
                    "unknown model `{s}` (expected one of {})",
                    known.join(", ")
                ))
            })
    }
}

/// A model and its recipe. Unset options take per-kind defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Column label in reports; defaults to the kind's name.
    pub label: Option<String>,
    /// Own lags in the linear part (4 for `ar`/`fa_ar`/`rw_ar`, else 2).
    pub lags: Option<usize>,
    /// Panel factors in the linear part of `fa_ar`/`fa_arrf`.
    pub n_linear_factors: usize,
    /// Lags of each such factor (2 for `fa_ar`, 1 for `fa_arrf`).
    pub factor_lags: Option<usize>,
    /// Estimation window of `rw_ar`.
    pub window: usize,
    /// Panel series entering the linear part of `varrf`.
    pub var_columns: Vec<String>,
    /// Ridge penalty of `ridge_maf` per training observation.
    pub ridge_penalty: f64,
    pub hp: HyperParams,
    pub state: StateConfig,
    pub setar: SetarOptions,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Ar,
            label: None,
            lags: None,
            n_linear_factors: 2,
            factor_lags: None,
            window: 40,
            var_columns: Vec::new(),
            ridge_penalty: 0.1,
            hp: HyperParams::default(),
            state: StateConfig::default(),
            setar: SetarOptions::default(),
        }
    }
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            ..ModelConfig::default()
        }
    }

    pub fn with_lags(mut self, lags: usize) -> Self {
        self.lags = Some(lags);
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.kind.to_string())
    }

    pub fn lags(&self) -> usize {
        self.lags.unwrap_or(match self.kind {
            ModelKind::Ar | ModelKind::FaAr | ModelKind::RwAr => 4,
            _ => 2,
        })
    }

    pub fn factor_lags(&self) -> usize {
        self.factor_lags.unwrap_or(match self.kind {
            ModelKind::FaAr => 2,
            _ => 1,
        })
    }

    /// Hyperparameters actually used: plain forests get `λ = ζ = 0`.
    pub fn effective_hp(&self) -> HyperParams {
        match self.kind {
            ModelKind::Rf | ModelKind::RfMaf => HyperParams {
                lambda: 0.0,
                zeta: 0.0,
                ..self.hp.clone()
            },
            _ => self.hp.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lags() == 0 && !matches!(self.kind, ModelKind::Rf | ModelKind::RfMaf) {
            return Err(MrfError::Config("lags must be at least 1".into()));
        }
        if self.kind == ModelKind::Varrf && self.var_columns.is_empty() {
            return Err(MrfError::Config("varrf needs at least one entry in var_columns".into()));
        }
        if self.kind == ModelKind::RwAr && self.window == 0 {
            return Err(MrfError::Config("rw_ar window must be at least 1".into()));
        }
        if !(self.ridge_penalty >= 0.0) {
            return Err(MrfError::Config("ridge_penalty must be >= 0".into()));
        }
        if self.kind.is_forest() {
            self.effective_hp().validate()?;
        }
        Ok(())
    }
}

/// Target series and optional panel of (stationary) predictors, aligned by row.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub y: &'a [f64],
    pub panel: Option<&'a SeriesPanel>,
}

impl<'a> ModelInput<'a> {
    pub fn univariate(y: &'a [f64]) -> Self {
        ModelInput { y, panel: None }
    }

    fn panel(&self, kind: ModelKind) -> Result<&'a SeriesPanel> {
        self.panel
            .ok_or_else(|| MrfError::Config(format!("model `{kind}` needs a predictor panel")))
    }
}

/// Regressors, state set and direct target on every row `0..T`. Targets not
/// yet observed at the estimation point are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub target: Vec<f64>,
    pub x: Frame,
    pub state: Option<StateMatrix>,
}

fn lag_frame(series: &[f64], n: usize, prefix: &str) -> Frame {
    Frame {
        values: origin_lags(series, n),
        names: (1..=n).map(|l| format!("{prefix}_L{l}")).collect(),
    }
}

fn const_frame(t_len: usize) -> Frame {
    Frame {
        values: DMatrix::from_element(t_len, 1, 1.0),
        names: vec!["const".into()],
    }
}

fn factor_frame(panel: &SeriesPanel, m: usize, lags: usize, est_end: usize) -> Result<Frame> {
    let f = panel_factors(panel, m, Some(est_end))?;
    let parts: Vec<Frame> = (0..m)
        .map(|c| {
            let s: Vec<f64> = f.values.column(c).iter().copied().collect();
            lag_frame(&s, lags, &format!("F{}", c + 1))
        })
        .collect();
    Frame::hstack(&parts.iter().collect::<Vec<_>>())
}

fn state_for(cfg: &ModelConfig, input: &ModelInput, est_end: usize) -> Result<StateMatrix> {
    let own = cfg.state.own_lags;
    let panel = match (cfg.kind, input.panel) {
        (ModelKind::TinyArrf, _) | (_, None) => return tiny_state(input.y, own),
        (_, Some(p)) => p,
    };
    let mut sc = cfg.state.clone();
    if cfg.kind == ModelKind::Rf {
        sc.maf_per_var = 0;
    }
    let (complete, _) = complete_columns(&panel.values, est_end);
    if sc.n_factors > complete.len() {
        log::warn!(
            "only {} complete series; using that many factors in S_t instead of {}",
            complete.len(),
            sc.n_factors
        );
        sc.n_factors = complete.len();
    }
    assemble_state_matrix(input.y, panel, &sc, Some(est_end))
}

/// Builds the design of `cfg` for horizon `spec` with information up to row
/// `est_end`. Factor loadings and MAF weights are estimated on rows
/// `0..=est_end` only.
pub fn build_design(
    cfg: &ModelConfig,
    input: &ModelInput,
    spec: ForecastSpec,
    est_end: usize,
) -> Result<Design> {
    cfg.validate()?;
    let t_len = input.y.len();
    if let Some(p) = input.panel {
        if p.nrows() != t_len {
            return Err(MrfError::arg(format!(
                "target has {t_len} rows but panel has {}",
                p.nrows()
            )));
        }
    }
    if est_end >= t_len {
        return Err(MrfError::arg(format!(
            "estimation point {est_end} beyond the last row {}",
            t_len - 1
        )));
    }
    let h = spec.horizon;
    let mut target = build_direct_target(input.y, spec)?;
    for (t, v) in target.iter_mut().enumerate() {
        if t + h > est_end {
            *v = f64::NAN;
        }
    }
    let p = cfg.lags();
    let own = || lag_frame(input.y, p, "y");
    let x = match cfg.kind {
        ModelKind::Ar | ModelKind::RwAr | ModelKind::Setar | ModelKind::Arrf | ModelKind::TinyArrf => {
            Frame::hstack(&[&const_frame(t_len), &own()])?
        }
        ModelKind::FaAr | ModelKind::FaArrf => {
            let panel = input.panel(cfg.kind)?;
            let f = factor_frame(panel, cfg.n_linear_factors, cfg.factor_lags(), est_end)?;
            Frame::hstack(&[&const_frame(t_len), &own(), &f])?
        }
        ModelKind::Varrf => {
            let panel = input.panel(cfg.kind)?;
            let mut parts = vec![const_frame(t_len), own()];
            for c in &cfg.var_columns {
                let s = panel
                    .column(c)
                    .ok_or_else(|| MrfError::Config(format!("var column `{c}` not in panel")))?;
                parts.push(lag_frame(&s, 1, c));
            }
            Frame::hstack(&parts.iter().collect::<Vec<_>>())?
        }
        ModelKind::Rf | ModelKind::RfMaf => const_frame(t_len),
        ModelKind::RidgeMaf => {
            input.panel(cfg.kind)?;
            let sm = state_for(cfg, input, est_end)?;
            let keep: Vec<usize> = (0..sm.ncols()).filter(|&j| j != sm.trend_col).collect();
            let s = Frame {
                values: sm.frame.values.select_columns(&keep),
                names: keep.iter().map(|&j| sm.frame.names[j].clone()).collect(),
            };
            Frame::hstack(&[&const_frame(t_len), &s])?
        }
    };
    let state = if cfg.kind.is_forest() {
        Some(state_for(cfg, input, est_end)?)
    } else {
        None
    };
    Ok(Design { target, x, state })
}

/// A fitted model.
pub trait Forecaster: Send + Sync {
    /// Forecast of the direct target made at row `origin`.
    fn forecast(&self, origin: usize) -> Result<f64>;
}

fn dot_row(x: &DMatrix<f64>, t: usize, beta: &[f64]) -> Result<f64> {
    if t >= x.nrows() {
        return Err(MrfError::arg(format!("origin {t} beyond the data")));
    }
    let v: f64 = (0..beta.len()).map(|j| x[(t, j)] * beta[j]).sum();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(MrfError::arg(format!("regressors missing at origin {t}")))
    }
}

struct LinearModel {
    x: DMatrix<f64>,
    beta: Vec<f64>,
}

impl Forecaster for LinearModel {
    fn forecast(&self, origin: usize) -> Result<f64> {
        dot_row(&self.x, origin, &self.beta)
    }
}

struct ForestModel {
    forest: MrfForest,
    x: DMatrix<f64>,
    s: DMatrix<f64>,
}

impl Forecaster for ForestModel {
    fn forecast(&self, origin: usize) -> Result<f64> {
        if origin >= self.s.nrows() {
            return Err(MrfError::arg(format!("origin {origin} beyond the data")));
        }
        let s_row: Vec<f64> = self.s.row(origin).iter().copied().collect();
        let beta = self.forest.beta_at(&s_row);
        dot_row(&self.x, origin, &beta)
    }
}

struct SetarModel {
    fit: SetarFit,
    y: Vec<f64>,
    spec: ForecastSpec,
}

impl Forecaster for SetarModel {
    fn forecast(&self, origin: usize) -> Result<f64> {
        let h = self.spec.horizon;
        if origin >= self.y.len() {
            return Err(MrfError::arg(format!("origin {origin} beyond the data")));
        }
        let path = self.fit.forecast_path(&self.y, origin, h)?;
        Ok(match self.spec.target_mode {
            TargetMode::Point => path[h - 1],
            TargetMode::Average => path.iter().sum::<f64>() / h as f64,
        })
    }
}

/// Rows usable for estimation: target and every regressor observed.
fn complete_rows(x: &DMatrix<f64>, target: &[f64]) -> Vec<usize> {
    (0..target.len())
        .filter(|&t| target[t].is_finite() && x.row(t).iter().all(|v| v.is_finite()))
        .collect()
}

fn fit_linear(x: &DMatrix<f64>, target: &[f64], rows: &[usize], spec: &RidgeSpec) -> Result<Vec<f64>> {
    let xs = x.select_rows(rows);
    let ys: Vec<f64> = rows.iter().map(|&t| target[t]).collect();
    Ok(ridge_wls_solve(&xs, &ys, &vec![1.0; rows.len()], spec)?.beta)
}

/// Fits the forest of a forest kind on rows `0..=est_end`, returning it with
/// the full-length design.
pub fn fit_mrf(
    cfg: &ModelConfig,
    input: &ModelInput,
    spec: ForecastSpec,
    est_end: usize,
) -> Result<(MrfForest, Design)> {
    if !cfg.kind.is_forest() {
        return Err(MrfError::Config(format!("model `{}` is not a forest", cfg.kind)));
    }
    let design = build_design(cfg, input, spec, est_end)?;
    let state = design.state.as_ref().expect("forest kinds carry a state set");
    let n = est_end + 1;
    let forest = fit_forest(
        &design.target[..n],
        &design.x.slice_rows(0..n),
        &state.frame.slice_rows(0..n),
        Some(state.trend_col),
        &cfg.effective_hp(),
    )?;
    Ok((forest, design))
}

/// Fits `cfg` with information up to row `est_end`.
pub fn fit_model(
    cfg: &ModelConfig,
    input: &ModelInput,
    spec: ForecastSpec,
    est_end: usize,
) -> Result<Box<dyn Forecaster>> {
    cfg.validate()?;
    match cfg.kind {
        ModelKind::Setar => {
            if est_end >= input.y.len() {
                return Err(MrfError::arg("estimation point beyond the data"));
            }
            let opts = SetarOptions {
                p: cfg.lags(),
                ..cfg.setar.clone()
            };
            let fit = fit_setar(input.y, est_end, &opts)?;
            Ok(Box::new(SetarModel {
                fit,
                y: input.y.to_vec(),
                spec,
            }))
        }
        k if k.is_forest() => {
            let (forest, design) = fit_mrf(cfg, input, spec, est_end)?;
            let state = design.state.expect("forest kinds carry a state set");
            Ok(Box::new(ForestModel {
                forest,
                x: design.x.values,
                s: state.frame.values,
            }))
        }
        _ => {
            let design = build_design(cfg, input, spec, est_end)?;
            let x = design.x.values;
            let mut rows = complete_rows(&x, &design.target);
            if rows.len() <= x.ncols() {
                return Err(MrfError::arg(format!(
                    "{} usable rows for {} regressors",
                    rows.len(),
                    x.ncols()
                )));
            }
            let ridge = match cfg.kind {
                ModelKind::RidgeMaf => {
                    let n = rows.len() as f64;
                    let mean = rows.iter().map(|&t| design.target[t]).sum::<f64>() / n;
                    let mut prior = vec![0.0; x.ncols()];
                    prior[0] = mean;
                    RidgeSpec::new(cfg.ridge_penalty * n).with_prior(prior)
                }
                _ => RidgeSpec::new(0.0).unstandardized(),
            };
            if cfg.kind == ModelKind::RwAr {
                if cfg.window > rows.len() {
                    return Err(MrfError::arg(format!(
                        "rolling window of {} exceeds the {} available observations",
                        cfg.window,
                        rows.len()
                    )));
                }
                rows.drain(..rows.len() - cfg.window);
            }
            let beta = fit_linear(&x, &design.target, &rows, &ridge)?;
            Ok(Box::new(LinearModel { x, beta }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::dgp::{simulate_dgp, DgpId, DgpSpec};

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert_eq!("plain_rf".parse::<ModelKind>().unwrap(), ModelKind::Rf);
        assert_eq!("Tiny-ARRF".parse::<ModelKind>().unwrap(), ModelKind::TinyArrf);
        assert!("star".parse::<ModelKind>().is_err());
    }

    #[test]
    fn ar_forecast_uses_origin_lags() {
        let sim = simulate_dgp(&DgpSpec::new(DgpId::Ar3, 400, 4)).unwrap();
        let cfg = ModelConfig::new(ModelKind::Ar).with_lags(2);
        let input = ModelInput::univariate(&sim.y);
        let m = fit_model(&cfg, &input, ForecastSpec::point(1), 399).unwrap();
        let d = build_design(&cfg, &input, ForecastSpec::point(1), 399).unwrap();
        assert_eq!(d.x.names, ["const", "y_L1", "y_L2"]);
        assert!(m.forecast(100).unwrap().is_finite());
        assert!(m.forecast(0).is_err());
    }

    #[test]
    fn target_masked_after_estimation_point() {
        let y: Vec<f64> = (0..50).map(|t| (t as f64 * 0.3).sin()).collect();
        let cfg = ModelConfig::new(ModelKind::Ar);
        let d = build_design(&cfg, &ModelInput::univariate(&y), ForecastSpec::point(3), 30).unwrap();
        assert!(d.target[27].is_finite());
        assert!(d.target[28].is_nan());
    }

    #[test]
    fn rolling_window_too_long() {
        let y: Vec<f64> = (0..60).map(|t| (t as f64 * 0.7).cos()).collect();
        let cfg = ModelConfig {
            window: 500,
            ..ModelConfig::new(ModelKind::RwAr)
        };
        assert!(fit_model(&cfg, &ModelInput::univariate(&y), ForecastSpec::point(1), 59).is_err());
    }

    #[test]
    fn panel_models_need_panel() {
        let y = vec![0.0; 80];
        for k in [ModelKind::FaAr, ModelKind::FaArrf, ModelKind::RidgeMaf] {
            let cfg = ModelConfig::new(k);
            assert!(build_design(&cfg, &ModelInput::univariate(&y), ForecastSpec::point(1), 70).is_err());
        }
    }
}
