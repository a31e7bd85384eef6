//! `mrf`: command-line front end for macroeconomic random forests.
//!
//! Exit codes: 0 success, 2 usage, 3 configuration, 4 input data,
//! 5 estimation, 6 replay mismatch, 1 anything else.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mrf_core::MrfError;

use crate::config::{config_err, ConfigError, RunConfig};
use crate::output::Manifest;

#[derive(Parser)]
#[command(name = "mrf", version, about = "Macroeconomic random forests")]
struct Cli {
    /// Worker threads (default: $MRF_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulation study: horse race on a data-poor process or coefficient
    /// recovery on a data-rich one.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Process id (ar1..ar6, dr1..dr6).
        #[arg(long)]
        dgp: Option<String>,
        /// Sample length.
        #[arg(long = "T")]
        t_len: Option<usize>,
        /// Number of simulated samples.
        #[arg(long)]
        sims: Option<usize>,
    },
    /// Fit a forest and export it with its coefficient paths and bands.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Pseudo-out-of-sample forecasting comparison.
    Oos {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Permutation variable importance.
    Vi {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Pruned trees explaining each coefficient path.
    Surrogate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Coefficients projected beyond the estimation sample.
    Project {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Rerun the command recorded in a manifest and check every artifact.
    Replay {
        manifest: PathBuf,
        /// Directory for the rerun (default: the recorded one).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `model.hp.n_trees=300`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DataArgs {
    /// CSV panel.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Target column.
    #[arg(long)]
    target: Option<String>,
    /// Model kind (ar, fa_ar, rw_ar, setar, rf, rf_maf, arrf, tiny_arrf,
    /// fa_arrf, varrf, ridge_maf).
    #[arg(long)]
    model: Option<String>,
}

fn quote(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn path_str(p: &Path) -> anyhow::Result<String> {
    p.to_str()
        .map(quote)
        .ok_or_else(|| config_err(format!("path `{}` is not valid UTF-8", p.display())))
}

/// Flags become overrides applied before the user's `--set` ones.
fn resolve(
    name: &str,
    common: &Common,
    mut flags: Vec<String>,
) -> anyhow::Result<RunConfig> {
    flags.push(format!("command={}", quote(name)));
    if let Some(o) = &common.out {
        flags.push(format!("out={}", path_str(o)?));
    }
    if let Some(s) = common.seed {
        flags.push(format!("seed={s}"));
    }
    flags.extend(common.set.iter().cloned());
    let mut cfg = config::load(common.config.as_deref(), &flags)?;
    cfg.command = name.to_string();
    cfg.apply_seed();
    Ok(cfg)
}

fn data_flags(d: &DataArgs) -> anyhow::Result<Vec<String>> {
    let mut f = Vec::new();
    if let Some(p) = &d.data {
        f.push(format!("data.path={}", path_str(p)?));
    }
    if let Some(t) = &d.target {
        f.push(format!("data.target={}", quote(t)));
    }
    if let Some(m) = &d.model {
        let kind: mrf_core::bench::models::ModelKind =
            m.parse().map_err(|e: MrfError| config_err(e.to_string()))?;
        f.push(format!("model.kind={}", quote(kind.name())));
    }
    Ok(f)
}

fn execute(cfg: &RunConfig) -> anyhow::Result<Manifest> {
    let outcome = commands::run(&cfg.command, cfg)?;
    let manifest = Manifest::new(
        &cfg.command,
        cfg.seed,
        cfg.to_toml()?,
        outcome.inputs,
        &outcome.artifacts,
    );
    output::write_run(&cfg.out, &outcome.artifacts, &manifest)?;
    log::info!(
        "wrote {} to {}",
        outcome.artifacts.names().join(", "),
        cfg.out.display()
    );
    Ok(manifest)
}

#[derive(Debug)]
struct ReplayMismatch(String);

impl std::fmt::Display for ReplayMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "replay mismatch: {}", self.0)
    }
}

impl std::error::Error for ReplayMismatch {}

fn replay(path: &Path, out: Option<&PathBuf>) -> anyhow::Result<()> {
    let recorded = Manifest::read(path)?;
    let mut table = config::parse_with_overrides(&recorded.config, &[])?;
    if let Some(o) = out {
        config::apply_override(&mut table, &format!("out={}", path_str(o)?))?;
    }
    let cfg = config::from_table(table)?;
    let fresh = execute(&cfg)?;
    let bad: Vec<String> = recorded
        .artifacts
        .iter()
        .chain(&recorded.inputs)
        .filter(|(name, digest)| {
            fresh.artifacts.get(*name).or(fresh.inputs.get(*name)) != Some(*digest)
        })
        .map(|(name, _)| name.clone())
        .collect();
    if !bad.is_empty() {
        return Err(ReplayMismatch(format!("differing files: {}", bad.join(", "))).into());
    }
    println!(
        "replayed {} artifacts of `{}` identically",
        recorded.artifacts.len(),
        recorded.command
    );
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = match &cli.command {
        Command::Replay { manifest, out } => return replay(manifest, out.as_ref()),
        Command::Simulate {
            common,
            dgp,
            t_len,
            sims,
        } => {
            let mut f = Vec::new();
            if let Some(d) = dgp {
                f.push(format!("simulate.dgp={}", quote(&d.to_ascii_lowercase())));
            }
            if let Some(t) = t_len {
                f.push(format!("simulate.t_len={t}"));
            }
            if let Some(s) = sims {
                f.push(format!("simulate.n_sims={s}"));
            }
            resolve("simulate", common, f)?
        }
        Command::Fit { common, data } => resolve("fit", common, data_flags(data)?)?,
        Command::Oos { common, data } => resolve("oos", common, data_flags(data)?)?,
        Command::Vi { common, data } => resolve("vi", common, data_flags(data)?)?,
        Command::Surrogate { common, data } => resolve("surrogate", common, data_flags(data)?)?,
        Command::Project { common, data } => resolve("project", common, data_flags(data)?)?,
    };
    let manifest = execute(&cfg)?;
    println!(
        "{}: {} artifacts in {} (config {})",
        manifest.command,
        manifest.artifacts.len(),
        cfg.out.display(),
        &manifest.config_sha256[..12]
    );
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 3;
        }
        if cause.is::<ReplayMismatch>() {
            return 6;
        }
        if let Some(e) = cause.downcast_ref::<MrfError>() {
            return match e {
                MrfError::Config(_) => 3,
                MrfError::Domain { .. }
                | MrfError::Parse { .. }
                | MrfError::Schema { .. }
                | MrfError::Io(_)
                | MrfError::Csv(_) => 4,
                _ => 5,
            };
        }
        if cause.is::<std::io::Error>() {
            return 4;
        }
    }
    1
}

fn threads(cli: Option<usize>) -> anyhow::Result<Option<usize>> {
    if let Some(n) = cli {
        return Ok(Some(n));
    }
    match std::env::var("MRF_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| config_err(format!("MRF_THREADS=`{v}` is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = threads(cli.threads).and_then(|n| {
        if let Some(n) = n.filter(|&n| n > 0) {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(anyhow::Error::from)?;
        }
        run(cli)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
