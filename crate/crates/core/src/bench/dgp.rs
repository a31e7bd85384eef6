//! Simulated data-generating processes with their true coefficient paths and
//! oracle forecasts.
//!
//! Data-poor processes (`ar1`..`ar6`) are autoregressions of order two whose
//! coefficients switch with a threshold on `y_{t−1}` and/or a break at `T/2`.
//! Data-rich processes (`dr1`..`dr6`) are static regressions
//! `y_t = β_{0,t} + β_{1,t} X1_t + β_{2,t} X2_t + ε_t` whose coefficients
//! depend on a latent factor observed only through 50 noisy copies.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{MrfError, Result};
use crate::features::{ColumnGroup, StateMatrix};
use crate::frame::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DgpId {
    Ar1,
    Ar2,
    Ar3,
    Ar4,
    Ar5,
    Ar6,
    Dr1,
    Dr2,
    Dr3,
    Dr4,
    Dr5,
    Dr6,
}

impl DgpId {
    pub const ALL: [DgpId; 12] = [
        DgpId::Ar1,
        DgpId::Ar2,
        DgpId::Ar3,
        DgpId::Ar4,
        DgpId::Ar5,
        DgpId::Ar6,
        DgpId::Dr1,
        DgpId::Dr2,
        DgpId::Dr3,
        DgpId::Dr4,
        DgpId::Dr5,
        DgpId::Dr6,
    ];

    pub fn is_data_rich(self) -> bool {
        matches!(
            self,
            DgpId::Dr1 | DgpId::Dr2 | DgpId::Dr3 | DgpId::Dr4 | DgpId::Dr5 | DgpId::Dr6
        )
    }

    /// Shock s.d. (data-poor) or scale multiplier of the calibrated noise
    /// (data-rich).
    pub fn default_sigma(self) -> f64 {
        match self {
            DgpId::Ar4 => 0.5,
            DgpId::Ar5 => 0.3,
            DgpId::Ar1 | DgpId::Ar2 | DgpId::Ar3 | DgpId::Ar6 => 3.0,
            _ => 1.0,
        }
    }

    pub fn default_t(self) -> usize {
        if self.is_data_rich() {
            1000
        } else {
            150
        }
    }
}

impl fmt::Display for DgpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DgpId::Ar1 => "ar1",
            DgpId::Ar2 => "ar2",
            DgpId::Ar3 => "ar3",
            DgpId::Ar4 => "ar4",
            DgpId::Ar5 => "ar5",
            DgpId::Ar6 => "ar6",
            DgpId::Dr1 => "dr1",
            DgpId::Dr2 => "dr2",
            DgpId::Dr3 => "dr3",
            DgpId::Dr4 => "dr4",
            DgpId::Dr5 => "dr5",
            DgpId::Dr6 => "dr6",
        };
        f.write_str(s)
    }
}

impl FromStr for DgpId {
    type Err = MrfError;

    fn from_str(s: &str) -> Result<Self> {
        let l = s.trim().to_ascii_lowercase();
        DgpId::ALL
            .iter()
            .copied()
            .find(|d| d.to_string() == l)
            .ok_or_else(|| MrfError::UnknownDgp(s.to_string()))
    }
}

/// Parameters of one simulated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpSpec {
    pub id: DgpId,
    pub t_len: usize,
    pub sigma: Option<f64>,
    pub seed: u64,
    pub burn_in: usize,
    /// Break date as a fraction of `T` for break processes (data-rich `dr5`).
    pub break_frac: f64,
    /// Training length of data-rich processes (oracle freezes random walks
    /// there). Defaults to 40% of `T`.
    pub train_len: Option<usize>,
    /// Pre-sample values `(y_{−1}, y_{−2})` of data-poor processes.
    pub initial: [f64; 2],
}

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec {
            id: DgpId::Ar3,
            t_len: 150,
            sigma: None,
            seed: 1,
            burn_in: 200,
            break_frac: 0.25,
            train_len: None,
            initial: [0.0, 0.0],
        }
    }
}

impl DgpSpec {
    pub fn new(id: DgpId, t_len: usize, seed: u64) -> Self {
        DgpSpec {
            id,
            t_len,
            seed,
            ..DgpSpec::default()
        }
    }

    pub fn train_len(&self) -> usize {
        self.train_len.unwrap_or(2 * self.t_len / 5)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or_else(|| self.id.default_sigma())
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_len < 60 {
            return Err(MrfError::Config(format!("T must be at least 60, got {}", self.t_len)));
        }
        if !(self.sigma() >= 0.0) {
            return Err(MrfError::Config("sigma must be non-negative".into()));
        }
        let train_len = self.train_len();
        if self.id.is_data_rich() && !(train_len >= 20 && train_len < self.t_len) {
            return Err(MrfError::Config(format!(
                "train_len must be in [20, T), got {train_len}"
            )));
        }
        if !(self.break_frac > 0.0 && self.break_frac < 1.0) {
            return Err(MrfError::Config("break_frac must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One regime law of an order-two autoregression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArLaw {
    Linear([f64; 3]),
    /// `high` applies when `y_{t−1} ≥ threshold`.
    Threshold {
        threshold: f64,
        high: [f64; 3],
        low: [f64; 3],
    },
}

impl ArLaw {
    pub fn beta(&self, y1: f64) -> [f64; 3] {
        match *self {
            ArLaw::Linear(b) => b,
            ArLaw::Threshold {
                threshold,
                high,
                low,
            } => {
                if y1 >= threshold {
                    high
                } else {
                    low
                }
            }
        }
    }

    pub fn step(&self, y1: f64, y2: f64) -> f64 {
        let b = self.beta(y1);
        b[0] + b[1] * y1 + b[2] * y2
    }
}

pub const AR_BETA: [f64; 3] = [0.0, 0.7, -0.2];
const SETAR_DGP1: ArLaw = ArLaw::Threshold {
    threshold: 1.0,
    high: [2.0, 0.8, -0.2],
    low: [0.25, 0.4, -0.2],
};
const SETAR_PERSISTENT: ArLaw = ArLaw::Threshold {
    threshold: 0.0,
    high: [2.0, 0.8, -0.2],
    low: [0.25, 1.1, -0.4],
};
const SETAR_DGP4: ArLaw = ArLaw::Threshold {
    threshold: 1.0,
    high: [2.0, 0.8, -0.2],
    low: [0.0, 0.4, -0.2],
};

/// Laws before and after the break (identical without a break).
fn poor_laws(id: DgpId) -> (ArLaw, ArLaw) {
    let ar = ArLaw::Linear(AR_BETA);
    match id {
        DgpId::Ar1 => (SETAR_DGP1, ar),
        DgpId::Ar2 => (SETAR_PERSISTENT, SETAR_PERSISTENT),
        DgpId::Ar3 => (ar, ar),
        DgpId::Ar4 => (SETAR_DGP4, SETAR_DGP4),
        DgpId::Ar5 => (
            ArLaw::Linear([0.0, 0.7, -0.35]),
            ArLaw::Linear([0.15, 0.6, 0.0]),
        ),
        DgpId::Ar6 => (SETAR_PERSISTENT, ar),
        _ => unreachable!("data-rich id"),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Oracle {
    Poor {
        before: ArLaw,
        after: ArLaw,
        break_at: usize,
    },
    Rich {
        /// Coefficients following random walks (frozen by the oracle).
        random_walk: [bool; 3],
        train_len: usize,
    },
}

/// A simulated sample with its true coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub spec: DgpSpec,
    pub y: Vec<f64>,
    /// `T×3` coefficients that generated `y_t`.
    pub beta: DMatrix<f64>,
    /// `T×3` regressors of `y_t`: `[1, y_{t−1}, y_{t−2}]` or `[1, X1_t, X2_t]`.
    pub x: DMatrix<f64>,
    /// Shock s.d. at each `t`.
    pub noise_sd: Vec<f64>,
    /// Data-rich only: the 100 noisy copies of the two latent factors.
    pub panel: Option<Frame>,
    /// Data-rich only: the latent factors (`T×2`).
    pub factors: Option<DMatrix<f64>>,
    oracle: Oracle,
}

/// Simulates one sample. Draws are fully determined by `spec`.
pub fn simulate_dgp(spec: &DgpSpec) -> Result<Simulation> {
    spec.validate()?;
    if spec.id.is_data_rich() {
        simulate_rich(spec)
    } else {
        Ok(simulate_poor(spec))
    }
}

fn simulate_poor(spec: &DgpSpec) -> Simulation {
    let (before, after) = poor_laws(spec.id);
    let t_len = spec.t_len;
    let break_at = t_len / 2;
    let sigma = spec.sigma();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.burn_in + t_len;
    let mut path = Vec::with_capacity(total + 2);
    path.push(spec.initial[1]);
    path.push(spec.initial[0]);
    let mut beta = DMatrix::zeros(t_len, 3);
    let mut x = DMatrix::zeros(t_len, 3);
    for i in 0..total {
        let y1 = path[i + 1];
        let y2 = path[i];
        let law = if i >= spec.burn_in && i - spec.burn_in >= break_at {
            after
        } else {
            before
        };
        let e: f64 = StandardNormal.sample(&mut rng);
        path.push(law.step(y1, y2) + sigma * e);
        if i >= spec.burn_in {
            let t = i - spec.burn_in;
            let b = law.beta(y1);
            for k in 0..3 {
                beta[(t, k)] = b[k];
            }
            x[(t, 0)] = 1.0;
            x[(t, 1)] = y1;
            x[(t, 2)] = y2;
        }
    }
    Simulation {
        spec: spec.clone(),
        y: path[spec.burn_in + 2..].to_vec(),
        beta,
        x,
        noise_sd: vec![sigma; t_len],
        panel: None,
        factors: None,
        oracle: Oracle::Poor {
            before,
            after,
            break_at,
        },
    }
}

/// Unit-variance Gaussian AR(1) with coefficient `rho`, after burn-in.
fn ar1_path(rho: f64, t_len: usize, burn: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sd = (1.0 - rho * rho).sqrt();
    let mut v = 0.0;
    let mut out = Vec::with_capacity(t_len);
    for i in 0..burn + t_len {
        let e: f64 = StandardNormal.sample(rng);
        v = rho * v + sd * e;
        if i >= burn {
            out.push(v);
        }
    }
    out
}

const FACTOR_RHO: f64 = 0.8;
const RW_STEP: f64 = 0.05;
const SV_RHO: f64 = 0.95;
const SV_SD: f64 = 0.1;
/// Share of `var(y)` explained by the signal.
const SIGNAL_SHARE: f64 = 2.0 / 3.0;

fn simulate_rich(spec: &DgpSpec) -> Result<Simulation> {
    let t_len = spec.t_len;
    let burn = spec.burn_in;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let f1 = ar1_path(FACTOR_RHO, t_len, burn, &mut rng);
    let f2 = ar1_path(FACTOR_RHO, t_len, burn, &mut rng);
    let x1 = ar1_path(FACTOR_RHO, t_len, burn, &mut rng);
    let x2 = ar1_path(FACTOR_RHO, t_len, burn, &mut rng);

    let mut panel = DMatrix::zeros(t_len, 100);
    let mut names = Vec::with_capacity(100);
    for (fi, f) in [&f1, &f2].into_iter().enumerate() {
        let m = f.iter().sum::<f64>() / t_len as f64;
        let sd = (f.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (t_len - 1) as f64).sqrt();
        for c in 0..50 {
            let frac = rng.random_range(0.005..0.03);
            let col = fi * 50 + c;
            for t in 0..t_len {
                let e: f64 = StandardNormal.sample(&mut rng);
                panel[(t, col)] = f[t] + frac * sd * e;
            }
            names.push(format!("f{}c{:02}", fi + 1, c + 1));
        }
    }

    let mut beta = DMatrix::zeros(t_len, 3);
    let mut random_walk = [false; 3];
    let break_at = (spec.break_frac * t_len as f64).round() as usize;
    let slow = |t: usize| (2.0 * std::f64::consts::PI * t as f64 / t_len as f64).sin();
    let mut rw = [0.0, 1.0, -0.5];
    for t in 0..t_len {
        let high = f1[t] > 0.0;
        let b: [f64; 3] = match spec.id {
            DgpId::Dr1 => {
                if high {
                    [1.0, 1.5, -0.5]
                } else {
                    [-1.0, 0.0, 1.0]
                }
            }
            DgpId::Dr2 => {
                if t > 0 {
                    for v in rw.iter_mut().skip(1) {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        *v += RW_STEP * e;
                    }
                }
                [0.5, rw[1], rw[2]]
            }
            DgpId::Dr3 => [0.5, f1[t], slow(t)],
            DgpId::Dr4 => [0.5, if high { 1.5 } else { -0.5 }, slow(t)],
            DgpId::Dr5 => [
                0.5,
                if high { 1.5 } else { -0.5 },
                if t < break_at { 1.0 } else { -1.0 },
            ],
            DgpId::Dr6 => [0.5, 1.0, -0.5],
            _ => unreachable!("data-poor id"),
        };
        for k in 0..3 {
            beta[(t, k)] = b[k];
        }
    }
    if spec.id == DgpId::Dr2 {
        random_walk = [false, true, true];
    }

    let x = DMatrix::from_fn(t_len, 3, |t, k| match k {
        0 => 1.0,
        1 => x1[t],
        _ => x2[t],
    });
    let signal: Vec<f64> = (0..t_len)
        .map(|t| (0..3).map(|k| x[(t, k)] * beta[(t, k)]).sum())
        .collect();
    let m = signal.iter().sum::<f64>() / t_len as f64;
    let var_signal = signal.iter().map(|v| (v - m).powi(2)).sum::<f64>() / t_len as f64;
    let base_sd = (var_signal * (1.0 - SIGNAL_SHARE) / SIGNAL_SHARE).sqrt() * spec.sigma();

    let mut scale = vec![1.0; t_len];
    if spec.id == DgpId::Dr6 {
        let h = ar1_path(SV_RHO, t_len, burn, &mut rng);
        let sd_h = SV_SD / (1.0 - SV_RHO * SV_RHO).sqrt();
        let raw: Vec<f64> = h.iter().map(|v| (v * sd_h).exp()).collect();
        let mean_var = raw.iter().sum::<f64>() / t_len as f64;
        scale = raw.iter().map(|v| (v / mean_var).sqrt()).collect();
    }
    let noise_sd: Vec<f64> = scale.iter().map(|s| s * base_sd).collect();
    let y: Vec<f64> = (0..t_len)
        .map(|t| {
            let e: f64 = StandardNormal.sample(&mut rng);
            signal[t] + noise_sd[t] * e
        })
        .collect();
    let factors = DMatrix::from_fn(t_len, 2, |t, k| if k == 0 { f1[t] } else { f2[t] });
    Ok(Simulation {
        spec: spec.clone(),
        y,
        beta,
        x,
        noise_sd,
        panel: Some(Frame::new(panel, names)?),
        factors: Some(factors),
        oracle: Oracle::Rich {
            random_walk,
            train_len: spec.train_len(),
        },
    })
}

impl Simulation {
    pub fn t_len(&self) -> usize {
        self.y.len()
    }

    /// Oracle forecast of `y_{origin+h}` from information at `origin`.
    ///
    /// Data-poor: the true law iterated forward with future shocks set to
    /// zero (breaks applied at their known dates). Data-rich (`h = 0`): the
    /// fit `X_t β_t` with random-walk coefficients frozen at the last
    /// training period.
    pub fn oracle_forecast(&self, origin: usize, h: usize) -> f64 {
        match &self.oracle {
            Oracle::Poor {
                before,
                after,
                break_at,
            } => {
                let mut y1 = self.y[origin];
                let mut y2 = if origin > 0 {
                    self.y[origin - 1]
                } else {
                    self.x[(0, 1)]
                };
                for j in 1..=h {
                    let law = if origin + j >= *break_at { after } else { before };
                    let next = law.step(y1, y2);
                    y2 = y1;
                    y1 = next;
                }
                y1
            }
            Oracle::Rich {
                random_walk,
                train_len,
            } => {
                let t = origin + h;
                let frozen = (*train_len).min(self.t_len()) - 1;
                (0..3)
                    .map(|k| {
                        let b = if random_walk[k] && t > frozen {
                            self.beta[(frozen, k)]
                        } else {
                            self.beta[(t, k)]
                        };
                        self.x[(t, k)] * b
                    })
                    .sum()
            }
        }
    }

    /// Monte Carlo conditional mean of `y_{origin+h}` for data-poor processes.
    pub fn oracle_mc(&self, origin: usize, h: usize, n_paths: usize, seed: u64) -> Result<f64> {
        let Oracle::Poor {
            before,
            after,
            break_at,
        } = &self.oracle
        else {
            return Err(MrfError::arg("Monte Carlo oracle is for data-poor processes"));
        };
        let sigma = self.noise_sd[0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y2_0 = if origin > 0 {
            self.y[origin - 1]
        } else {
            self.x[(0, 1)]
        };
        let mut total = 0.0;
        for _ in 0..n_paths {
            let (mut y1, mut y2) = (self.y[origin], y2_0);
            for j in 1..=h {
                let law = if origin + j >= *break_at { after } else { before };
                let e: f64 = StandardNormal.sample(&mut rng);
                let next = law.step(y1, y2) + if j < h { sigma * e } else { 0.0 };
                y2 = y1;
                y1 = next;
            }
            total += y1;
        }
        Ok(total / n_paths as f64)
    }

    /// Data-rich state set: the 100 factor copies, `y_{t−1}`, `y_{t−2}` and a trend.
    pub fn state_matrix(&self) -> Result<StateMatrix> {
        let panel = self
            .panel
            .as_ref()
            .ok_or_else(|| MrfError::arg("state matrix is defined for data-rich processes"))?;
        let t_len = self.t_len();
        let j = panel.ncols();
        let mut values = DMatrix::from_element(t_len, j + 3, f64::NAN);
        values.columns_mut(0, j).copy_from(&panel.values);
        for t in 0..t_len {
            if t >= 1 {
                values[(t, j)] = self.y[t - 1];
            }
            if t >= 2 {
                values[(t, j + 1)] = self.y[t - 2];
            }
            values[(t, j + 2)] = (t + 1) as f64;
        }
        let mut names = panel.names.clone();
        names.extend(["y_lag1".to_string(), "y_lag2".into(), "trend".into()]);
        let mut groups = vec![ColumnGroup::RawLag; j];
        groups.extend([ColumnGroup::OwnLag, ColumnGroup::OwnLag, ColumnGroup::Trend]);
        StateMatrix::new(Frame::new(values, names)?, groups)
    }

    /// Regressor frame `[const, X1, X2]` (data-rich) or `[const, y_lag1, y_lag2]`.
    pub fn design_frame(&self) -> Frame {
        let names = if self.spec.id.is_data_rich() {
            vec!["const".into(), "X1".into(), "X2".into()]
        } else {
            vec!["const".into(), "y_lag1".into(), "y_lag2".into()]
        };
        Frame {
            values: self.x.clone(),
            names,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_parse_and_print() {
        for id in DgpId::ALL {
            assert_eq!(id.to_string().parse::<DgpId>().unwrap(), id);
        }
        assert!(matches!("ar9".parse::<DgpId>(), Err(MrfError::UnknownDgp(_))));
    }

    #[test]
    fn noiseless_ar_matches_hand_recursion() {
        let spec = DgpSpec {
            sigma: Some(0.0),
            burn_in: 0,
            initial: [1.0, 0.5],
            ..DgpSpec::new(DgpId::Ar3, 60, 4)
        };
        let sim = simulate_dgp(&spec).unwrap();
        let (mut y1, mut y2) = (1.0, 0.5);
        for t in 0..10 {
            let v = 0.7 * y1 - 0.2 * y2;
            assert!((sim.y[t] - v).abs() < 1e-15);
            y2 = y1;
            y1 = v;
        }
    }

    #[test]
    fn persistent_setar_starts_in_high_regime_from_large_value() {
        let spec = DgpSpec {
            burn_in: 0,
            initial: [10.0, 10.0],
            ..DgpSpec::new(DgpId::Ar2, 100, 1)
        };
        let sim = simulate_dgp(&spec).unwrap();
        assert_eq!(sim.beta.row(0).iter().copied().collect::<Vec<_>>(), vec![2.0, 0.8, -0.2]);
    }

    #[test]
    fn flat_data_rich_beta() {
        let sim = simulate_dgp(&DgpSpec::new(DgpId::Dr6, 200, 3)).unwrap();
        for k in 0..3 {
            let first = sim.beta[(0, k)];
            assert!(sim.beta.column(k).iter().all(|v| *v == first));
        }
        let sm = sim.state_matrix().unwrap();
        assert_eq!(sm.ncols(), 103);
    }

    #[test]
    fn simulations_are_reproducible() {
        for id in [DgpId::Ar1, DgpId::Dr2] {
            let spec = DgpSpec::new(id, 120, 9);
            assert_eq!(simulate_dgp(&spec).unwrap(), simulate_dgp(&spec).unwrap());
        }
    }

    #[test]
    fn ar_oracle_one_step() {
        let sim = simulate_dgp(&DgpSpec::new(DgpId::Ar3, 100, 2)).unwrap();
        let t = 50;
        let want = 0.7 * sim.y[t] - 0.2 * sim.y[t - 1];
        assert!((sim.oracle_forecast(t, 1) - want).abs() < 1e-15);
    }

    #[test]
    fn too_short_sample_rejected() {
        assert!(simulate_dgp(&DgpSpec::new(DgpId::Ar3, 30, 1)).is_err());
    }
}
