//! Monte Carlo studies on the simulated processes: forecasting horse races
//! on data-poor processes and coefficient recovery on data-rich ones.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::dgp::{simulate_dgp, DgpId, DgpSpec, Simulation};
use crate::bench::harness::{run_oos, EvalReport, ForecastRecord, OosConfig, OosRun, Scheme};
use crate::bench::models::{ModelConfig, ModelInput, ModelKind};
use crate::dataio::TargetMode;
use crate::error::{MrfError, Result};
use crate::forest::{fit_forest, GtvpResult, MrfForest};
use crate::ridgewls::ols;
use crate::tree::HyperParams;

pub const ORACLE: &str = "oracle";

/// A forecasting horse race over repeated simulations of one process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimStudyConfig {
    pub dgp: DgpId,
    pub t_len: usize,
    pub n_sims: usize,
    /// Final observations of each sample forecast out of sample.
    pub holdout: usize,
    pub horizons: Vec<usize>,
    pub sigma: Option<f64>,
    pub seed: u64,
    /// Base model label for relative RMSEs and DM tests.
    pub base: String,
    pub models: Vec<ModelConfig>,
}

impl Default for SimStudyConfig {
    fn default() -> Self {
        SimStudyConfig {
            dgp: DgpId::Ar1,
            t_len: 150,
            n_sims: 100,
            holdout: 40,
            horizons: vec![1, 2, 3, 4],
            sigma: None,
            seed: 1,
            base: "ar".into(),
            models: default_sim_models(),
        }
    }
}

/// AR(2), rolling-window AR(2), SETAR, plain RF and Tiny ARRF, all with
/// the `[1, y_t, y_{t−1}]` linear part where one applies.
pub fn default_sim_models() -> Vec<ModelConfig> {
    [
        ModelKind::Ar,
        ModelKind::RwAr,
        ModelKind::Setar,
        ModelKind::Rf,
        ModelKind::TinyArrf,
    ]
    .into_iter()
    .map(|k| ModelConfig::new(k).with_lags(2))
    .collect()
}

/// Seed of replicate `s`.
pub fn replicate_seed(seed: u64, s: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(s as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimStudy {
    pub run: OosRun,
    pub report: EvalReport,
}

impl SimStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dgp.is_data_rich() {
            return Err(MrfError::Config(format!(
                "{} is a data-rich process; use the coefficient-recovery study",
                self.dgp
            )));
        }
        if self.n_sims == 0 {
            return Err(MrfError::Config("sims must be >= 1".into()));
        }
        let h_max = self.horizons.iter().copied().max().unwrap_or(0);
        if self.holdout == 0 || self.holdout + h_max + 30 > self.t_len {
            return Err(MrfError::Config(format!(
                "holdout {} leaves too little training data in T = {}",
                self.holdout, self.t_len
            )));
        }
        if !self.models.iter().any(|m| m.label() == self.base) {
            return Err(MrfError::Config(format!(
                "base model `{}` is not among the models",
                self.base
            )));
        }
        self.models.iter().try_for_each(ModelConfig::validate)
    }

    fn oos(&self) -> OosConfig {
        OosConfig {
            horizons: self.horizons.clone(),
            target_mode: TargetMode::Point,
            scheme: Scheme::Fixed,
            reestimate_every: self.holdout,
            oos_start: self.t_len - self.holdout,
            oos_end: self.t_len - 1,
        }
    }

    fn spec(&self, s: usize) -> DgpSpec {
        DgpSpec {
            sigma: self.sigma,
            ..DgpSpec::new(self.dgp, self.t_len, replicate_seed(self.seed, s))
        }
    }
}

fn oracle_records(sim: &Simulation, oos: &OosConfig, replicate: usize) -> Vec<ForecastRecord> {
    let mut out = Vec::new();
    for &h in &oos.horizons {
        for o in oos.oos_start - h..=oos.oos_end - h {
            out.push(ForecastRecord {
                model: ORACLE.into(),
                horizon: h,
                replicate,
                origin: o,
                forecast: sim.oracle_forecast(o, h),
                actual: sim.y[o + h],
            });
        }
    }
    out
}

/// Simulates `n_sims` samples, estimates every model once at the end of the
/// training part, forecasts the holdout and scores RMSEs pooled over all
/// replicates (relative to the base and to the oracle).
pub fn run_sim_study(cfg: &SimStudyConfig) -> Result<SimStudy> {
    cfg.validate()?;
    let oos = cfg.oos();
    let parts: Vec<OosRun> = (0..cfg.n_sims)
        .into_par_iter()
        .map(|s| {
            let sim = simulate_dgp(&cfg.spec(s))?;
            let models: Vec<ModelConfig> = cfg
                .models
                .iter()
                .map(|m| {
                    let mut m = m.clone();
                    m.hp.seed = replicate_seed(m.hp.seed, s);
                    m.setar.seed = replicate_seed(m.setar.seed, s);
                    m
                })
                .collect();
            let mut run = run_oos(&models, &ModelInput::univariate(&sim.y), &oos, s)?;
            run.records.extend(oracle_records(&sim, &oos, s));
            Ok(run)
        })
        .collect::<Result<_>>()?;
    let mut run = OosRun::default();
    parts.into_iter().for_each(|p| run.extend(p));
    let report = EvalReport::from_run(&run, &cfg.dgp.to_string(), &cfg.base, Some(ORACLE))?;
    Ok(SimStudy { run, report })
}

/// Outcome of fitting a forest to one data-rich sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RichStudy {
    pub sim: Simulation,
    pub forest: MrfForest,
    /// Out-of-bag coefficient paths over the training rows.
    pub gtvp: GtvpResult,
    /// `T×3` estimates: OOB means in training, projections in the holdout.
    pub beta_hat: DMatrix<f64>,
    pub train_len: usize,
    /// Holdout RMSEs of the forest, OLS, a plain forest and the oracle.
    pub holdout_rmse: Vec<(String, f64)>,
}

impl RichStudy {
    pub fn rmse_of(&self, model: &str) -> Option<f64> {
        self.holdout_rmse
            .iter()
            .find(|(m, _)| m == model)
            .map(|(_, r)| *r)
    }

    /// Correlation of estimated and true coefficient `k` over the holdout.
    pub fn holdout_correlation(&self, k: usize) -> f64 {
        let t_len = self.sim.t_len();
        let a: Vec<f64> = (self.train_len..t_len).map(|t| self.beta_hat[(t, k)]).collect();
        let b: Vec<f64> = (self.train_len..t_len).map(|t| self.sim.beta[(t, k)]).collect();
        correlation(&a, &b)
    }

    /// Share of training rows whose true coefficient `k` lies in the
    /// central credible band at `level` (rows without OOB trees excluded).
    pub fn band_coverage(&self, k: usize, level: f64) -> Result<f64> {
        let (lo, hi) = self.gtvp.credible_bands(level)?;
        let mut hits = 0usize;
        let mut n = 0usize;
        for t in 0..self.train_len {
            if !(lo[(t, k)].is_finite() && hi[(t, k)].is_finite()) {
                continue;
            }
            n += 1;
            let b = self.sim.beta[(t, k)];
            if lo[(t, k)] <= b && b <= hi[(t, k)] {
                hits += 1;
            }
        }
        if n == 0 {
            return Err(MrfError::arg("no row has out-of-bag trees"));
        }
        Ok(hits as f64 / n as f64)
    }
}

/// Pearson correlation (`NaN` when either side is constant).
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn rmse_between(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (s / a.len() as f64).sqrt()
}

/// Fits the forest with `X_t = [1, X1_t, X2_t]` and the 103-column state
/// set on the training part of a data-rich sample, then projects the
/// coefficients over the holdout. OLS and a plain forest on the same state
/// set are scored on the holdout alongside the oracle.
pub fn run_rich_study(spec: &DgpSpec, hp: &HyperParams) -> Result<RichStudy> {
    if !spec.id.is_data_rich() {
        return Err(MrfError::Config(format!("{} is not a data-rich process", spec.id)));
    }
    let sim = simulate_dgp(spec)?;
    let n = spec.train_len();
    let t_len = sim.t_len();
    let x = sim.design_frame();
    let state = sim.state_matrix()?;
    let (x_tr, x_ho) = (x.slice_rows(0..n), x.slice_rows(n..t_len));
    let (s_tr, s_ho) = (state.frame.slice_rows(0..n), state.frame.slice_rows(n..t_len));
    let y_tr = &sim.y[..n];
    let y_ho = &sim.y[n..];

    let forest = fit_forest(y_tr, &x_tr, &s_tr, Some(state.trend_col), hp)?;
    let gtvp = forest.gtvp_paths(&s_tr, 0, false)?;
    let (beta_ho, pred_ho) = forest.project_gtvp(&s_ho, &x_ho)?;
    let k = x.ncols();
    let mut beta_hat = DMatrix::from_element(t_len, k, f64::NAN);
    beta_hat.rows_mut(0, n).copy_from(&gtvp.mean);
    beta_hat.rows_mut(n, t_len - n).copy_from(&beta_ho);

    let rows: Vec<usize> = (0..n).filter(|&t| y_tr[t].is_finite()).collect();
    let b_ols = ols(&x_tr.values.select_rows(&rows), &rows.iter().map(|&t| y_tr[t]).collect::<Vec<_>>())?;
    let pred_ols: Vec<f64> = (0..t_len - n)
        .map(|t| (0..k).map(|c| x_ho.values[(t, c)] * b_ols[c]).sum())
        .collect();

    let plain_hp = HyperParams {
        lambda: 0.0,
        zeta: 0.0,
        ..hp.clone()
    };
    let design_rf = crate::frame::LinearDesign::intercept_only(y_tr.to_vec());
    let rf = fit_forest(y_tr, &design_rf.x, &s_tr, Some(state.trend_col), &plain_hp)?;
    let pred_rf = rf.predict(&s_ho, &crate::frame::LinearDesign::intercept_only(y_ho.to_vec()).x)?;

    let pred_oracle: Vec<f64> = (n..t_len).map(|t| sim.oracle_forecast(t, 0)).collect();
    let holdout_rmse = vec![
        ("mrf".to_string(), rmse_between(&pred_ho, y_ho)),
        ("ols".to_string(), rmse_between(&pred_ols, y_ho)),
        ("rf".to_string(), rmse_between(&pred_rf, y_ho)),
        (ORACLE.to_string(), rmse_between(&pred_oracle, y_ho)),
    ];
    Ok(RichStudy {
        sim,
        forest,
        gtvp,
        beta_hat,
        train_len: n,
        holdout_rmse,
    })
}
