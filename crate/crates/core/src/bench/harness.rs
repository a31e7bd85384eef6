//! Pseudo-out-of-sample evaluation: re-estimation schedule, forecast
//! records, RMSE tables and Diebold–Mariano comparisons.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::dm::dm_test;
use crate::bench::models::{fit_model, ModelConfig, ModelInput};
use crate::dataio::{build_direct_target, fmt_f64, write_csv_rows, ForecastSpec, TargetMode};
use crate::error::{MrfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Re-estimate on all data up to each re-estimation point.
    #[default]
    Expanding,
    /// Estimate once, on data up to the period before the evaluation range.
    Fixed,
}

/// Evaluation window and schedule. Rows are 0-based; the evaluation range
/// holds the dates `oos_start..=oos_end` whose outcomes are forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OosConfig {
    pub horizons: Vec<usize>,
    pub target_mode: TargetMode,
    pub scheme: Scheme,
    /// Forecast origins covered by one estimation (expanding scheme).
    pub reestimate_every: usize,
    pub oos_start: usize,
    pub oos_end: usize,
}

impl Default for OosConfig {
    fn default() -> Self {
        OosConfig {
            horizons: vec![1],
            target_mode: TargetMode::Point,
            scheme: Scheme::Expanding,
            reestimate_every: 8,
            oos_start: 0,
            oos_end: 0,
        }
    }
}

impl OosConfig {
    pub fn validate(&self, t_len: usize) -> Result<()> {
        let bad = |m: String| Err(MrfError::Config(m));
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return bad("horizons must be a non-empty list of integers >= 1".into());
        }
        if self.reestimate_every == 0 {
            return bad("reestimate_every must be >= 1".into());
        }
        if self.oos_end >= t_len || self.oos_start > self.oos_end {
            return bad(format!(
                "evaluation range {}..={} does not fit in {t_len} rows",
                self.oos_start, self.oos_end
            ));
        }
        let h_max = *self.horizons.iter().max().unwrap();
        if self.oos_start < h_max + 1 {
            return bad(format!(
                "evaluation must start after row {h_max} to leave data before the first origin"
            ));
        }
        Ok(())
    }

    /// Estimation point of each forecast origin for horizon `h`.
    pub fn schedule(&self, h: usize) -> Vec<(usize, Vec<usize>)> {
        let first = self.oos_start - h;
        let last = self.oos_end - h;
        match self.scheme {
            Scheme::Fixed => vec![(self.oos_start - 1, (first..=last).collect())],
            Scheme::Expanding => (first..=last)
                .step_by(self.reestimate_every)
                .map(|e| (e, (e..=(e + self.reestimate_every - 1).min(last)).collect()))
                .collect(),
        }
    }
}

/// One forecast and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub model: String,
    pub horizon: usize,
    /// Simulation replicate (0 for a single dataset).
    pub replicate: usize,
    pub origin: usize,
    pub forecast: f64,
    pub actual: f64,
}

impl ForecastRecord {
    pub fn error(&self) -> f64 {
        self.actual - self.forecast
    }
}

/// A model failure during evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureNote {
    pub model: String,
    pub horizon: usize,
    pub replicate: usize,
    pub est_end: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OosRun {
    pub records: Vec<ForecastRecord>,
    pub failures: Vec<FailureNote>,
}

impl OosRun {
    pub fn extend(&mut self, other: OosRun) {
        self.records.extend(other.records);
        self.failures.extend(other.failures);
    }

    /// Tidy CSV of every forecast.
    pub fn write_forecasts<W: Write>(&self, writer: W) -> Result<()> {
        let header: Vec<String> = ["model", "horizon", "replicate", "origin", "forecast", "actual"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows: Vec<Vec<String>> = self
            .records
            .iter()
            .map(|r| {
                vec![
                    r.model.clone(),
                    r.horizon.to_string(),
                    r.replicate.to_string(),
                    r.origin.to_string(),
                    fmt_f64(r.forecast),
                    fmt_f64(r.actual),
                ]
            })
            .collect();
        write_csv_rows(writer, &header, &rows)
    }
}

/// Produces forecasts of every model for every horizon over the evaluation
/// range. A model that fails at some estimation point leaves `NaN`
/// forecasts for the origins it covers and a [`FailureNote`].
pub fn run_oos(
    models: &[ModelConfig],
    input: &ModelInput,
    cfg: &OosConfig,
    replicate: usize,
) -> Result<OosRun> {
    let t_len = input.y.len();
    cfg.validate(t_len)?;
    for m in models {
        m.validate()?;
    }
    let mut jobs = Vec::new();
    for (mi, _) in models.iter().enumerate() {
        for &h in &cfg.horizons {
            for (e, origins) in cfg.schedule(h) {
                jobs.push((mi, h, e, origins));
            }
        }
    }
    let targets: BTreeMap<usize, Vec<f64>> = cfg
        .horizons
        .iter()
        .map(|&h| {
            build_direct_target(input.y, ForecastSpec::new(h, cfg.target_mode)?).map(|t| (h, t))
        })
        .collect::<Result<_>>()?;
    let parts: Vec<OosRun> = jobs
        .into_par_iter()
        .map(|(mi, h, e, origins)| {
            let m = &models[mi];
            let label = m.label();
            let spec = ForecastSpec {
                horizon: h,
                target_mode: cfg.target_mode,
            };
            let mut out = OosRun::default();
            let fitted = fit_model(m, input, spec, e);
            let mut note = |msg: String| {
                log::warn!("{label} h={h} at {e}: {msg}");
                out.failures.push(FailureNote {
                    model: label.clone(),
                    horizon: h,
                    replicate,
                    est_end: e,
                    message: msg,
                });
            };
            let mut forecasts = Vec::with_capacity(origins.len());
            match fitted {
                Ok(model) => {
                    for &o in &origins {
                        match model.forecast(o) {
                            Ok(f) => forecasts.push(f),
                            Err(err) => {
                                note(format!("origin {o}: {err}"));
                                forecasts.push(f64::NAN);
                            }
                        }
                    }
                }
                Err(err) => {
                    note(err.to_string());
                    forecasts.resize(origins.len(), f64::NAN);
                }
            }
            for (&o, f) in origins.iter().zip(forecasts) {
                out.records.push(ForecastRecord {
                    model: label.clone(),
                    horizon: h,
                    replicate,
                    origin: o,
                    forecast: f,
                    actual: targets[&h][o],
                });
            }
            out
        })
        .collect();
    let mut run = OosRun::default();
    parts.into_iter().for_each(|p| run.extend(p));
    Ok(run)
}

/// Scores of one model at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub model: String,
    pub horizon: usize,
    pub n: usize,
    pub rmse: f64,
    /// RMSE over the base model's RMSE.
    pub relative: f64,
    /// RMSE over the oracle's RMSE, minus one.
    pub delta_oracle: Option<f64>,
    /// Diebold–Mariano statistic against the base (positive: worse than base).
    pub dm_stat: f64,
    pub dm_p_value: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub target: String,
    pub base: String,
    pub oracle: Option<String>,
    pub models: Vec<String>,
    pub horizons: Vec<usize>,
    pub cells: Vec<EvalCell>,
}

/// Errors of one model and horizon keyed by `(replicate, origin)`.
fn errors_of(records: &[ForecastRecord], model: &str, h: usize) -> BTreeMap<(usize, usize), f64> {
    records
        .iter()
        .filter(|r| r.model == model && r.horizon == h)
        .map(|r| ((r.replicate, r.origin), r.error()))
        .collect()
}

fn rmse(errors: &BTreeMap<(usize, usize), f64>) -> f64 {
    if errors.is_empty() {
        return f64::NAN;
    }
    (errors.values().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

impl EvalReport {
    /// Scores the records of `run`. RMSEs pool all replicates; a model
    /// with any missing forecast at a horizon gets `NaN` scores there.
    pub fn from_run(run: &OosRun, target: &str, base: &str, oracle: Option<&str>) -> Result<Self> {
        let mut models: Vec<String> = Vec::new();
        let mut horizons: Vec<usize> = Vec::new();
        for r in &run.records {
            if !models.contains(&r.model) {
                models.push(r.model.clone());
            }
            if !horizons.contains(&r.horizon) {
                horizons.push(r.horizon);
            }
        }
        horizons.sort_unstable();
        for name in std::iter::once(base).chain(oracle) {
            if !models.iter().any(|m| m == name) {
                return Err(MrfError::Config(format!("model `{name}` has no forecasts")));
            }
        }
        let mut cells = Vec::new();
        for &h in &horizons {
            let base_err = errors_of(&run.records, base, h);
            let base_rmse = rmse(&base_err);
            let oracle_rmse = oracle.map(|o| rmse(&errors_of(&run.records, o, h)));
            for m in &models {
                let err = errors_of(&run.records, m, h);
                let failures = err.values().filter(|e| !e.is_finite()).count();
                let r = rmse(&err);
                let (dm_stat, dm_p_value) = if failures > 0 || !base_rmse.is_finite() {
                    (f64::NAN, f64::NAN)
                } else if m == base {
                    (0.0, 1.0)
                } else {
                    let paired: Vec<(f64, f64)> = err
                        .iter()
                        .filter_map(|(k, a)| base_err.get(k).map(|b| (*a, *b)))
                        .collect();
                    let a: Vec<f64> = paired.iter().map(|p| p.0).collect();
                    let b: Vec<f64> = paired.iter().map(|p| p.1).collect();
                    match dm_test(&a, &b, h) {
                        Ok(d) if d.statistic.is_finite() => (d.statistic, d.p_value),
                        _ => (f64::NAN, f64::NAN),
                    }
                };
                cells.push(EvalCell {
                    model: m.clone(),
                    horizon: h,
                    n: err.len(),
                    rmse: r,
                    relative: if m == base && r.is_finite() {
                        1.0
                    } else {
                        r / base_rmse
                    },
                    delta_oracle: oracle_rmse.map(|o| r / o - 1.0),
                    dm_stat,
                    dm_p_value,
                    failures,
                });
            }
        }
        Ok(EvalReport {
            target: target.to_string(),
            base: base.to_string(),
            oracle: oracle.map(str::to_string),
            models,
            horizons,
            cells,
        })
    }

    pub fn cell(&self, model: &str, h: usize) -> Option<&EvalCell> {
        self.cells.iter().find(|c| c.model == model && c.horizon == h)
    }

    /// One row per model and horizon.
    pub fn write_tidy_csv<W: Write>(&self, writer: W) -> Result<()> {
        let header: Vec<String> = [
            "target",
            "model",
            "horizon",
            "n",
            "rmse",
            "relative_rmse",
            "delta_oracle",
            "dm_stat",
            "dm_p_value",
            "failures",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let rows: Vec<Vec<String>> = self
            .cells
            .iter()
            .map(|c| {
                vec![
                    self.target.clone(),
                    c.model.clone(),
                    c.horizon.to_string(),
                    c.n.to_string(),
                    fmt_f64(c.rmse),
                    fmt_f64(c.relative),
                    c.delta_oracle.map(fmt_f64).unwrap_or_default(),
                    fmt_f64(c.dm_stat),
                    fmt_f64(c.dm_p_value),
                    c.failures.to_string(),
                ]
            })
            .collect();
        write_csv_rows(writer, &header, &rows)
    }

    /// Rows are target × horizon; the base column holds its RMSE, other
    /// columns relative RMSEs with DM significance stars (10/5/1%).
    pub fn write_table_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut header = vec!["target".to_string(), "horizon".into()];
        header.push(format!("{} (rmse)", self.base));
        let others: Vec<&String> = self.models.iter().filter(|m| **m != self.base).collect();
        header.extend(others.iter().map(|m| m.to_string()));
        let rows: Vec<Vec<String>> = self
            .horizons
            .iter()
            .map(|&h| {
                let mut row = vec![self.target.clone(), h.to_string()];
                let base = self.cell(&self.base, h).map_or(f64::NAN, |c| c.rmse);
                row.push(format!("{base:.4}"));
                for m in &others {
                    let text = match self.cell(m, h) {
                        Some(c) if c.relative.is_finite() => {
                            format!("{:.3}{}", c.relative, stars(c.dm_p_value))
                        }
                        _ => "NaN".to_string(),
                    };
                    row.push(text);
                }
                row
            })
            .collect();
        write_csv_rows(writer, &header, &rows)
    }
}

/// Significance stars for a p-value at the 10%, 5% and 1% levels.
pub fn stars(p: f64) -> &'static str {
    if !p.is_finite() {
        ""
    } else if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}
