//! The run configuration: one TOML file, `--set key=value` overrides and
//! validation with field context.

use std::fmt;
use std::path::{Path, PathBuf};

use mrf_core::bench::dgp::DgpId;
use mrf_core::bench::harness::Scheme;
use mrf_core::bench::models::{ModelConfig, ModelKind};
use mrf_core::dataio::TargetMode;
use serde::{Deserialize, Serialize};

/// A configuration problem: bad syntax, unknown keys, invalid values or
/// references to data that does not exist.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Subcommand the configuration was resolved for.
    pub command: String,
    /// Master seed; overrides the seeds of every model and study.
    pub seed: u64,
    /// Run directory receiving every artifact.
    pub out: PathBuf,
    pub data: DataConfig,
    /// Model of `fit`, `vi`, `surrogate` and `project`, and the challenger
    /// of `oos` when `models` is empty.
    pub model: ModelConfig,
    /// Models compared by `oos`.
    pub models: Vec<ModelConfig>,
    pub forecast: ForecastConfig,
    pub oos: OosSection,
    pub simulate: SimulateSection,
    pub gtvp: GtvpSection,
    pub vi: ViSection,
    pub surrogate: SurrogateSection,
    pub project: ProjectSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            seed: 1,
            out: PathBuf::from("runs/latest"),
            data: DataConfig::default(),
            model: ModelConfig::new(ModelKind::Arrf),
            models: Vec::new(),
            forecast: ForecastConfig::default(),
            oos: OosSection::default(),
            simulate: SimulateSection::default(),
            gtvp: GtvpSection::default(),
            vi: ViSection::default(),
            surrogate: SurrogateSection::default(),
            project: ProjectSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// CSV panel: a `date` column then one column per series, optionally
    /// with a `transform` row of FRED codes.
    pub path: Option<PathBuf>,
    /// Column forecast and explained.
    pub target: Option<String>,
    /// Series kept in the predictor panel (all when empty).
    pub columns: Vec<String>,
    /// Apply the transform codes found in the file.
    pub transform: bool,
    /// First and last dates of the sample.
    pub start: Option<String>,
    pub end: Option<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            target: None,
            columns: Vec::new(),
            transform: true,
            start: None,
            end: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastConfig {
    pub horizon: usize,
    pub target_mode: TargetMode,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            horizon: 1,
            target_mode: TargetMode::Point,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OosSection {
    /// First and last dates whose outcomes are forecast.
    pub start: Option<String>,
    pub end: Option<String>,
    pub horizons: Vec<usize>,
    pub scheme: Scheme,
    pub reestimate_every: usize,
    /// Label of the benchmark model.
    pub base: String,
}

impl Default for OosSection {
    fn default() -> Self {
        OosSection {
            start: None,
            end: None,
            horizons: vec![1],
            scheme: Scheme::Expanding,
            reestimate_every: 8,
            base: "ar".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSection {
    pub dgp: DgpId,
    /// Sample length (process default when unset).
    pub t_len: Option<usize>,
    pub n_sims: usize,
    pub holdout: usize,
    pub horizons: Vec<usize>,
    pub sigma: Option<f64>,
    pub base: String,
    /// Horse-race models (AR, RW-AR, SETAR, RF and Tiny ARRF when empty).
    pub models: Vec<ModelConfig>,
    /// Training length of data-rich processes (40% of `T` when unset).
    pub train_len: Option<usize>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            dgp: DgpId::Ar1,
            t_len: None,
            n_sims: 100,
            holdout: 40,
            horizons: vec![1, 2, 3, 4],
            sigma: None,
            base: "ar".into(),
            models: Vec::new(),
            train_len: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GtvpSection {
    /// Trees must leave out `t−w..=t+w` to contribute at `t`.
    pub exclusion_halfwidth: usize,
    /// Central band levels written to the band file.
    pub levels: Vec<f64>,
}

impl Default for GtvpSection {
    fn default() -> Self {
        GtvpSection {
            exclusion_halfwidth: 0,
            levels: vec![0.68, 0.90],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViSection {
    pub n_repeats: usize,
    /// First date of the held-out range scored by the `oos` mode.
    pub holdout_start: Option<String>,
    /// Permute all columns derived from one variable together.
    pub grouped: bool,
    /// Permute blocks of rows instead of single rows.
    pub block_len: Option<usize>,
    /// Coefficients scored in `beta` mode (all when empty).
    pub coefficients: Vec<usize>,
}

impl Default for ViSection {
    fn default() -> Self {
        ViSection {
            n_repeats: 5,
            holdout_start: None,
            grouped: false,
            block_len: None,
            coefficients: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateSection {
    pub cp: f64,
    pub top_n: usize,
    pub min_leaf: usize,
    /// Coefficient names to explain (all when empty).
    pub coefficients: Vec<String>,
    pub exclusion_halfwidth: usize,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        SurrogateSection {
            cp: 0.075,
            top_n: 20,
            min_leaf: 10,
            coefficients: Vec::new(),
            exclusion_halfwidth: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectSection {
    /// Last date of the estimation sample; coefficients are projected after it.
    pub fit_end: Option<String>,
}

/// Parses `text` as TOML and applies `overrides` (`a.b.c=value`) on top.
pub fn parse_with_overrides(text: &str, overrides: &[String]) -> anyhow::Result<toml::Table> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    Ok(table)
}

/// Sets a dotted key. The value is read as TOML when it parses as such and
/// kept as a string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> anyhow::Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(config_err(format!("override `{assignment}` has an empty key")));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Deserialises a table, rejecting unknown keys by their full path.
pub fn from_table(mut table: toml::Table) -> anyhow::Result<RunConfig> {
    // a partial [model] table must keep the run's default kind
    if let Some(toml::Value::Table(m)) = table.get_mut("model") {
        m.entry("kind")
            .or_insert_with(|| toml::Value::String(RunConfig::default().model.kind.name().into()));
    }
    let mut unknown = Vec::new();
    let cfg: RunConfig = serde_ignored::deserialize(toml::Value::Table(table), |path| {
        unknown.push(path.to_string())
    })
    .map_err(|e| config_err(e.to_string()))?;
    if !unknown.is_empty() {
        return Err(config_err(format!("unknown key(s): {}", unknown.join(", "))));
    }
    Ok(cfg)
}

/// Reads the config file (if any) and applies the overrides.
pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| config_err(format!("cannot read config `{}`: {e}", p.display())))?,
        None => String::new(),
    };
    let table = parse_with_overrides(&text, overrides).map_err(|e| match path {
        Some(p) => config_err(format!("{}: {e}", p.display())),
        None => e,
    })?;
    from_table(table)
}

impl RunConfig {
    /// Pushes the master seed into every model and study component.
    pub fn apply_seed(&mut self) {
        let seed = self.seed;
        for m in std::iter::once(&mut self.model)
            .chain(self.models.iter_mut())
            .chain(self.simulate.models.iter_mut())
        {
            m.hp.seed = seed;
            m.setar.seed = seed;
        }
    }

    /// The resolved configuration as TOML; hashed into the manifest.
    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let err = |field: &str, e: mrf_core::MrfError| config_err(format!("[{field}] {e}"));
        self.model.validate().map_err(|e| err("model", e))?;
        for (i, m) in self.models.iter().enumerate() {
            m.validate().map_err(|e| err(&format!("models[{i}]"), e))?;
        }
        for (i, m) in self.simulate.models.iter().enumerate() {
            m.validate().map_err(|e| err(&format!("simulate.models[{i}]"), e))?;
        }
        if self.forecast.horizon == 0 {
            return Err(config_err("[forecast] horizon must be at least 1"));
        }
        if self.gtvp.levels.iter().any(|l| !(0.0..1.0).contains(l)) {
            return Err(config_err("[gtvp] levels must lie in [0, 1)"));
        }
        if self.vi.n_repeats == 0 {
            return Err(config_err("[vi] n_repeats must be at least 1"));
        }
        if !(self.surrogate.cp >= 0.0) {
            return Err(config_err("[surrogate] cp must be non-negative"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_values() {
        let t = parse_with_overrides(
            "[model]\nkind = \"ar\"\n",
            &["model.hp.n_trees=7".into(), "data.target=UR".into(), "seed = 9".into()],
        )
        .unwrap();
        let cfg = from_table(t).unwrap();
        assert_eq!(cfg.model.hp.n_trees, 7);
        assert_eq!(cfg.model.kind, ModelKind::Ar);
        assert_eq!(cfg.data.target.as_deref(), Some("UR"));
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn partial_model_table_keeps_default_kind() {
        let t = parse_with_overrides("", &["model.hp.n_trees=7".into()]).unwrap();
        assert_eq!(from_table(t).unwrap().model.kind, ModelKind::Arrf);
    }

    #[test]
    fn unknown_keys_are_named() {
        let t = parse_with_overrides("[model.hp]\nn_tree = 3\n", &[]).unwrap();
        let e = from_table(t).unwrap_err().to_string();
        assert!(e.contains("model.hp.n_tree"), "{e}");
    }

    #[test]
    fn syntax_errors_carry_line() {
        let e = parse_with_overrides("seed = 1\n[model\n", &[]).unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.models.push(ModelConfig::new(ModelKind::Setar));
        let text = cfg.to_toml().unwrap();
        let back = from_table(text.parse().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
