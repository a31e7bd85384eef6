//! The subcommands. Each one turns a validated [`RunConfig`] into
//! in-memory [`Artifacts`].

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Context;
use mrf_core::analysis::{
    groups_by_variable, surrogate_beta_tree, surrogate_candidates, variable_importance, ViMode,
    ViOptions, ViReport,
};
use mrf_core::bench::dgp::DgpSpec;
use mrf_core::bench::harness::{run_oos, EvalReport, OosConfig};
use mrf_core::bench::models::{fit_mrf, Design, ModelConfig, ModelInput, ModelKind};
use mrf_core::bench::study::{run_rich_study, run_sim_study, SimStudyConfig, ORACLE};
use mrf_core::dataio::{build_direct_target, date_index, fmt_f64, write_csv_rows, ForecastSpec, SeriesPanel};
use mrf_core::features::StateMatrix;
use mrf_core::forest::MrfForest;
use serde::Serialize;

use crate::config::{config_err, RunConfig};
use crate::output::{sha256_hex, Artifacts};

/// A command's outputs plus the digests of the files it read.
pub struct Outcome {
    pub artifacts: Artifacts,
    pub inputs: BTreeMap<String, String>,
}

pub fn run(command: &str, cfg: &RunConfig) -> anyhow::Result<Outcome> {
    cfg.validate()?;
    match command {
        "simulate" => simulate(cfg),
        "fit" => fit(cfg),
        "oos" => oos(cfg),
        "vi" => vi(cfg),
        "surrogate" => surrogate(cfg),
        "project" => project(cfg),
        other => Err(config_err(format!("unknown command `{other}`"))),
    }
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn csv(header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv_rows(&mut buf, &strings(header), rows)?;
    Ok(buf)
}

fn json<T: Serialize>(value: &T) -> anyhow::Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// The predictor panel (stationary, restricted to the sample) and target.
struct Dataset {
    panel: SeriesPanel,
    y: Vec<f64>,
    path: PathBuf,
    digest: String,
}

impl Dataset {
    fn input(&self) -> ModelInput<'_> {
        ModelInput {
            y: &self.y,
            panel: Some(&self.panel),
        }
    }

    fn row_of(&self, label: &str, field: &str) -> anyhow::Result<usize> {
        date_index(&self.panel.dates, label).ok_or_else(|| {
            config_err(format!(
                "[{field}] date `{label}` is not in the sample ({} to {})",
                self.panel.dates[0],
                self.panel.dates[self.panel.nrows() - 1]
            ))
        })
    }

    fn inputs(&self) -> BTreeMap<String, String> {
        BTreeMap::from([(self.path.display().to_string(), self.digest.clone())])
    }
}

fn load_data(cfg: &RunConfig) -> anyhow::Result<Dataset> {
    let d = &cfg.data;
    let path = d
        .path
        .clone()
        .ok_or_else(|| config_err("[data] path is required for this command"))?;
    let bytes = std::fs::read(&path)
        .map_err(|e| config_err(format!("[data] cannot read `{}`: {e}", path.display())))?;
    let target = d
        .target
        .clone()
        .ok_or_else(|| config_err("[data] target is required for this command"))?;
    let raw = SeriesPanel::read_csv(bytes.as_slice())
        .with_context(|| format!("reading `{}`", path.display()))?;
    if !raw.names.contains(&target) {
        return Err(config_err(format!(
            "[data] target column `{target}` not found; available: {}",
            raw.names.join(", ")
        )));
    }
    let mut panel = if d.transform { raw.transformed()? } else { raw };
    if !d.columns.is_empty() {
        let mut cols = d.columns.clone();
        if !cols.contains(&target) {
            cols.insert(0, target.clone());
        }
        panel = panel
            .select(&cols)
            .map_err(|e| config_err(format!("[data] columns: {e}")))?;
    }
    let find = |label: &Option<String>, field: &str, default: usize| -> anyhow::Result<usize> {
        match label {
            None => Ok(default),
            Some(l) => date_index(&panel.dates, l)
                .ok_or_else(|| config_err(format!("[data] {field} date `{l}` is not in the file"))),
        }
    };
    let start = find(&d.start, "start", 0)?;
    let end = find(&d.end, "end", panel.nrows() - 1)?;
    if start >= end {
        return Err(config_err("[data] start must precede end"));
    }
    let panel = panel.slice_rows(start..end + 1)?;
    let y = panel.column(&target).expect("target checked above");
    Ok(Dataset {
        panel,
        y,
        path,
        digest: sha256_hex(&bytes),
    })
}

fn forecast_spec(cfg: &RunConfig) -> anyhow::Result<ForecastSpec> {
    Ok(ForecastSpec::new(cfg.forecast.horizon, cfg.forecast.target_mode)?)
}

fn forest_model(cfg: &RunConfig) -> anyhow::Result<&ModelConfig> {
    if !cfg.model.kind.is_forest() {
        return Err(config_err(format!(
            "[model] kind `{}` is not a forest; this command needs one of rf, rf_maf, arrf, tiny_arrf, fa_arrf, varrf",
            cfg.model.kind
        )));
    }
    Ok(&cfg.model)
}

fn state_of(design: &Design) -> &StateMatrix {
    design.state.as_ref().expect("forest designs carry a state set")
}

fn bands_csv(
    gtvp: &mrf_core::forest::GtvpResult,
    levels: &[f64],
    dates: &[String],
) -> anyhow::Result<Vec<u8>> {
    let mut rows = Vec::new();
    for &level in levels {
        let (lo, hi) = gtvp.credible_bands(level)?;
        for t in 0..lo.nrows() {
            for (c, name) in gtvp.coef_names.iter().enumerate() {
                rows.push(vec![
                    dates[t].clone(),
                    name.clone(),
                    fmt_f64(level),
                    fmt_f64(lo[(t, c)]),
                    fmt_f64(hi[(t, c)]),
                ]);
            }
        }
    }
    csv(&["date", "coefficient", "level", "lower", "upper"], &rows)
}

fn needs_draws(levels: &[f64]) -> bool {
    let stored = |p: f64| mrf_core::forest::GTVP_LEVELS.iter().any(|l| (l - p).abs() < 1e-9);
    levels
        .iter()
        .any(|l| !(stored((1.0 - l) / 2.0) && stored((1.0 + l) / 2.0)))
}

fn simulate(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let sc = &cfg.simulate;
    let t_len = sc.t_len.unwrap_or(sc.dgp.default_t());
    let mut artifacts = Artifacts::default();
    if sc.dgp.is_data_rich() {
        let spec = DgpSpec {
            sigma: sc.sigma,
            train_len: sc.train_len,
            ..DgpSpec::new(sc.dgp, t_len, cfg.seed)
        };
        spec.validate().map_err(|e| config_err(format!("[simulate] {e}")))?;
        let mut hp = cfg.model.hp.clone();
        hp.seed = cfg.seed;
        let st = run_rich_study(&spec, &hp)?;
        let n = st.train_len;
        let names = ["const", "X1", "X2"];
        let levels = [0.05, 0.16, 0.84, 0.95];
        let idx: Vec<usize> = levels
            .iter()
            .map(|p| st.gtvp.levels.iter().position(|l| (l - p).abs() < 1e-9).unwrap())
            .collect();
        let mut rows = Vec::new();
        for t in 0..st.sim.t_len() {
            for (k, name) in names.iter().enumerate() {
                let mut r = vec![
                    t.to_string(),
                    name.to_string(),
                    if t < n { "train" } else { "holdout" }.to_string(),
                    fmt_f64(st.sim.beta[(t, k)]),
                    fmt_f64(st.beta_hat[(t, k)]),
                ];
                for &i in &idx {
                    r.push(if t < n { fmt_f64(st.gtvp.quantiles[i][(t, k)]) } else { String::new() });
                }
                rows.push(r);
            }
        }
        artifacts.add(
            "gtvp.csv",
            csv(
                &["t", "coefficient", "sample", "truth", "estimate", "q05", "q16", "q84", "q95"],
                &rows,
            )?,
        );
        #[derive(Serialize)]
        struct Metrics {
            dgp: String,
            t_len: usize,
            train_len: usize,
            n_trees: usize,
            holdout_rmse: BTreeMap<String, f64>,
            holdout_correlation: BTreeMap<String, f64>,
            coverage_68: BTreeMap<String, f64>,
            coverage_90: BTreeMap<String, f64>,
        }
        let per_k = |f: &dyn Fn(usize) -> anyhow::Result<f64>| -> anyhow::Result<BTreeMap<String, f64>> {
            names
                .iter()
                .enumerate()
                .map(|(k, n)| Ok((n.to_string(), f(k)?)))
                .collect()
        };
        let metrics = Metrics {
            dgp: sc.dgp.to_string(),
            t_len,
            train_len: n,
            n_trees: st.forest.n_trees(),
            holdout_rmse: st.holdout_rmse.iter().cloned().collect(),
            holdout_correlation: per_k(&|k| Ok(st.holdout_correlation(k)))?,
            coverage_68: per_k(&|k| Ok(st.band_coverage(k, 0.68)?))?,
            coverage_90: per_k(&|k| Ok(st.band_coverage(k, 0.90)?))?,
        };
        artifacts.add("metrics.json", json(&metrics)?);
    } else {
        let study_cfg = SimStudyConfig {
            dgp: sc.dgp,
            t_len,
            n_sims: sc.n_sims,
            holdout: sc.holdout,
            horizons: sc.horizons.clone(),
            sigma: sc.sigma,
            seed: cfg.seed,
            base: sc.base.clone(),
            models: if sc.models.is_empty() {
                mrf_core::bench::study::default_sim_models()
            } else {
                sc.models.clone()
            },
        };
        study_cfg
            .validate()
            .map_err(|e| config_err(format!("[simulate] {e}")))?;
        let st = run_sim_study(&study_cfg)?;
        artifacts.write_with("eval.csv", |w| st.report.write_tidy_csv(w))?;
        artifacts.write_with("table.csv", |w| st.report.write_table_csv(w))?;
        let bars: Vec<Vec<String>> = st
            .report
            .cells
            .iter()
            .filter(|c| c.model != ORACLE)
            .map(|c| {
                vec![
                    c.model.clone(),
                    c.horizon.to_string(),
                    fmt_f64(c.delta_oracle.map_or(f64::NAN, |d| 100.0 * d)),
                ]
            })
            .collect();
        artifacts.add("bars.csv", csv(&["model", "horizon", "delta_oracle_pct"], &bars)?);
        artifacts.write_with("forecasts.csv", |w| st.run.write_forecasts(w))?;
    }
    Ok(Outcome {
        artifacts,
        inputs: BTreeMap::new(),
    })
}

fn fit(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let model = forest_model(cfg)?;
    let data = load_data(cfg)?;
    let spec = forecast_spec(cfg)?;
    let t_len = data.y.len();
    let (forest, design) = fit_mrf(model, &data.input(), spec, t_len - 1)?;
    let state = state_of(&design);
    let dates = &data.panel.dates;
    let gtvp = forest.gtvp_paths(
        &state.frame,
        cfg.gtvp.exclusion_halfwidth,
        needs_draws(&cfg.gtvp.levels),
    )?;

    let mut artifacts = Artifacts::default();
    artifacts.add("forest.json", forest.to_json()?.into_bytes());
    artifacts.write_with("gtvp.csv", |w| gtvp.write_csv(w, dates))?;
    artifacts.add("bands.csv", bands_csv(&gtvp, &cfg.gtvp.levels, dates)?);
    artifacts.write_with("state.csv", |w| state.write_csv(w, Some(dates)))?;

    let last = t_len - 1;
    let s_last = state.frame.row(last);
    let x_last = design.x.row(last);
    let beta = forest.beta_at(&s_last);
    let point: f64 = x_last.iter().zip(&beta).map(|(a, b)| a * b).sum();
    let mut rows = vec![vec![
        dates[last].clone(),
        spec.horizon.to_string(),
        "forecast".to_string(),
        fmt_f64(point),
    ]];
    for (name, b) in design.x.names.iter().zip(&beta) {
        rows.push(vec![
            dates[last].clone(),
            spec.horizon.to_string(),
            name.clone(),
            fmt_f64(*b),
        ]);
    }
    artifacts.add("forecast.csv", csv(&["origin", "horizon", "quantity", "value"], &rows)?);
    let weights = forest.kernel_weights(&s_last);
    let rows: Vec<Vec<String>> = weights
        .iter()
        .enumerate()
        .map(|(t, w)| vec![dates[t].clone(), fmt_f64(*w)])
        .collect();
    artifacts.add("kernel_weights.csv", csv(&["date", "weight"], &rows)?);
    Ok(Outcome {
        artifacts,
        inputs: data.inputs(),
    })
}

fn oos(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let data = load_data(cfg)?;
    let oc = &cfg.oos;
    let start = oc
        .start
        .as_deref()
        .ok_or_else(|| config_err("[oos] start is required"))?;
    let start = data.row_of(start, "oos.start")?;
    let end = match oc.end.as_deref() {
        Some(l) => data.row_of(l, "oos.end")?,
        None => data.y.len() - 1,
    };
    let models: Vec<ModelConfig> = if cfg.models.is_empty() {
        vec![
            ModelConfig::new(ModelKind::Ar).with_label("ar"),
            cfg.model.clone(),
        ]
    } else {
        cfg.models.clone()
    };
    let mut labels = std::collections::HashSet::new();
    for m in &models {
        if !labels.insert(m.label()) {
            return Err(config_err(format!("[models] label `{}` is used twice", m.label())));
        }
    }
    if !labels.contains(&oc.base) {
        return Err(config_err(format!("[oos] base model `{}` is not among the models", oc.base)));
    }
    let oos_cfg = OosConfig {
        horizons: oc.horizons.clone(),
        target_mode: cfg.forecast.target_mode,
        scheme: oc.scheme,
        reestimate_every: oc.reestimate_every,
        oos_start: start,
        oos_end: end,
    };
    oos_cfg
        .validate(data.y.len())
        .map_err(|e| config_err(format!("[oos] {e}")))?;
    let run = run_oos(&models, &data.input(), &oos_cfg, 0)?;
    for f in &run.failures {
        log::warn!("{f:?}");
    }
    let target = cfg.data.target.clone().unwrap_or_default();
    let report = EvalReport::from_run(&run, &target, &oc.base, None)?;
    let mut artifacts = Artifacts::default();
    artifacts.write_with("forecasts.csv", |w| run.write_forecasts(w))?;
    artifacts.write_with("eval.csv", |w| report.write_tidy_csv(w))?;
    artifacts.write_with("table.csv", |w| report.write_table_csv(w))?;
    artifacts.add("failures.json", json(&run.failures)?);
    Ok(Outcome {
        artifacts,
        inputs: data.inputs(),
    })
}

/// A forest fitted on the rows before an optional holdout.
struct Fitted {
    forest: MrfForest,
    design: Design,
    /// Last estimation row.
    est_end: usize,
    /// Unmasked direct target.
    target: Vec<f64>,
}

fn fit_before(cfg: &RunConfig, data: &Dataset, holdout: Option<&str>, field: &str) -> anyhow::Result<Fitted> {
    let model = forest_model(cfg)?;
    let spec = forecast_spec(cfg)?;
    let t_len = data.y.len();
    let est_end = match holdout {
        Some(l) => {
            let r = data.row_of(l, field)?;
            if r == 0 {
                return Err(config_err(format!("[{field}] leaves no estimation rows")));
            }
            r - 1
        }
        None => t_len - 1,
    };
    let (forest, design) = fit_mrf(model, &data.input(), spec, est_end)?;
    let target = build_direct_target(&data.y, spec)?;
    Ok(Fitted {
        forest,
        design,
        est_end,
        target,
    })
}

fn vi_reports(cfg: &RunConfig, f: &Fitted) -> anyhow::Result<Vec<ViReport>> {
    let state = state_of(&f.design);
    let n = f.est_end + 1;
    let t_len = f.target.len();
    let s_tr = state.frame.slice_rows(0..n);
    let x_tr = f.design.x.slice_rows(0..n);
    let y_tr = &f.design.target[..n];
    let opts = ViOptions {
        n_repeats: cfg.vi.n_repeats,
        seed: cfg.seed,
        groups: cfg.vi.grouped.then(|| groups_by_variable(&state.frame.names)),
        block_len: cfg.vi.block_len,
    };
    let mut reports = vec![variable_importance(&f.forest, &s_tr, &x_tr, y_tr, &ViMode::Oob, &opts)?];
    if n < t_len {
        let rows: Vec<usize> = (n..t_len).filter(|&t| f.target[t].is_finite()).collect();
        if rows.len() >= 2 {
            let s_ho = state.frame.slice_rows(n..t_len);
            let x_ho = f.design.x.slice_rows(n..t_len);
            reports.push(variable_importance(
                &f.forest,
                &s_ho,
                &x_ho,
                &f.target[n..],
                &ViMode::Oos,
                &opts,
            )?);
        } else {
            log::warn!("holdout has fewer than two observed targets; skipping the oos mode");
        }
    }
    let k_all: Vec<usize> = (0..f.design.x.ncols()).collect();
    let ks = if cfg.vi.coefficients.is_empty() {
        &k_all
    } else {
        &cfg.vi.coefficients
    };
    for &k in ks {
        reports.push(
            variable_importance(&f.forest, &s_tr, &x_tr, y_tr, &ViMode::Beta { k }, &opts)
                .map_err(|e| config_err(format!("[vi] coefficients: {e}")))?,
        );
    }
    Ok(reports)
}

fn vi_csv(reports: &[ViReport]) -> anyhow::Result<Vec<u8>> {
    let mut out = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        let mut buf = Vec::new();
        r.write_csv(&mut buf)?;
        let skip = if i == 0 {
            0
        } else {
            buf.iter().position(|&b| b == b'\n').map_or(buf.len(), |p| p + 1)
        };
        out.extend_from_slice(&buf[skip..]);
    }
    Ok(out)
}

fn vi(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let data = load_data(cfg)?;
    let fitted = fit_before(cfg, &data, cfg.vi.holdout_start.as_deref(), "vi.holdout_start")?;
    let reports = vi_reports(cfg, &fitted)?;
    let mut artifacts = Artifacts::default();
    artifacts.add("vi.csv", vi_csv(&reports)?);
    Ok(Outcome {
        artifacts,
        inputs: data.inputs(),
    })
}

fn surrogate(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let data = load_data(cfg)?;
    let fitted = fit_before(cfg, &data, cfg.vi.holdout_start.as_deref(), "vi.holdout_start")?;
    let reports = vi_reports(cfg, &fitted)?;
    let candidates = surrogate_candidates(&reports, cfg.surrogate.top_n);
    let state = state_of(&fitted.design);
    let n = fitted.est_end + 1;
    let s_tr = state.frame.slice_rows(0..n);
    let gtvp = fitted
        .forest
        .gtvp_paths(&s_tr, cfg.surrogate.exclusion_halfwidth, false)?;
    let names = &fitted.design.x.names;
    let chosen: Vec<usize> = if cfg.surrogate.coefficients.is_empty() {
        (0..names.len()).collect()
    } else {
        cfg.surrogate
            .coefficients
            .iter()
            .map(|c| {
                names.iter().position(|n| n == c).ok_or_else(|| {
                    config_err(format!(
                        "[surrogate] coefficient `{c}` not in the linear part ({})",
                        names.join(", ")
                    ))
                })
            })
            .collect::<anyhow::Result<_>>()?
    };
    let mut artifacts = Artifacts::default();
    artifacts.add("vi.csv", vi_csv(&reports)?);
    for k in chosen {
        let path: Vec<f64> = (0..n).map(|t| gtvp.mean[(t, k)]).collect();
        let tree = surrogate_beta_tree(
            &path,
            &s_tr,
            &candidates,
            cfg.surrogate.cp,
            cfg.surrogate.min_leaf,
        )?;
        if let Some(note) = &tree.note {
            log::warn!("surrogate for `{}`: {note}", names[k]);
        }
        artifacts.add(format!("surrogate_{}.json", names[k]), tree.to_json()?.into_bytes());
        artifacts.add(format!("surrogate_{}.txt", names[k]), tree.render().into_bytes());
    }
    Ok(Outcome {
        artifacts,
        inputs: data.inputs(),
    })
}

fn project(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let data = load_data(cfg)?;
    let label = cfg
        .project
        .fit_end
        .as_deref()
        .ok_or_else(|| config_err("[project] fit_end is required"))?;
    let e = data.row_of(label, "project.fit_end")?;
    let t_len = data.y.len();
    if e + 1 >= t_len {
        return Err(config_err("[project] fit_end leaves no rows to project"));
    }
    let fitted = fit_before(cfg, &data, data.panel.dates.get(e + 1).map(String::as_str), "project.fit_end")?;
    let state = state_of(&fitted.design);
    let n = e + 1;
    let gtvp = fitted
        .forest
        .gtvp_paths(&state.frame.slice_rows(0..n), cfg.gtvp.exclusion_halfwidth, false)?;
    let (beta_out, pred_out) = fitted.forest.project_gtvp(
        &state.frame.slice_rows(n..t_len),
        &fitted.design.x.slice_rows(n..t_len),
    )?;
    let dates = &data.panel.dates;
    let names = &fitted.design.x.names;
    let mut rows = Vec::new();
    for t in 0..t_len {
        for (k, name) in names.iter().enumerate() {
            let (v, sample) = if t < n {
                (gtvp.mean[(t, k)], "in")
            } else {
                (beta_out[(t - n, k)], "out")
            };
            rows.push(vec![dates[t].clone(), name.clone(), sample.to_string(), fmt_f64(v)]);
        }
    }
    let mut artifacts = Artifacts::default();
    artifacts.add("projection.csv", csv(&["date", "coefficient", "sample", "beta"], &rows)?);
    let rows: Vec<Vec<String>> = (n..t_len)
        .map(|t| {
            vec![
                dates[t].clone(),
                fmt_f64(pred_out[t - n]),
                fmt_f64(fitted.target[t]),
            ]
        })
        .collect();
    artifacts.add("predictions.csv", csv(&["origin", "forecast", "actual"], &rows)?);
    Ok(Outcome {
        artifacts,
        inputs: data.inputs(),
    })
}
