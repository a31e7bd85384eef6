//! The ensemble: block subsampling (or block Bayesian-bootstrap weights),
//! prediction, out-of-bag GTVP paths with credible bands, kernel weights and
//! out-of-sample coefficient projection.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{fmt_f64, write_csv_rows};
use crate::error::{MrfError, Result};
use crate::features::StateMatrix;
use crate::frame::{Frame, LinearDesign};
use crate::ridgewls::RidgeSpec;
use crate::tree::{grow_tree, tree_rng, tree_apply, HyperParams, MrfTree, TrainingSet};

/// Quantile levels stored with every GTVP result.
pub const GTVP_LEVELS: [f64; 5] = [0.05, 0.16, 0.5, 0.84, 0.95];

const FORMAT_TAG: &str = "mrf-forest";
const FORMAT_VERSION: u32 = 1;

/// Fixed, non-overlapping, contiguous blocks covering `0..T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPlan {
    /// Half-open `[start, end)` row ranges.
    pub bounds: Vec<(usize, usize)>,
}

impl BlockPlan {
    pub fn new(t_len: usize, block_size: usize) -> Result<Self> {
        if block_size == 0 || t_len == 0 {
            return Err(MrfError::arg("block plan needs T >= 1 and block size >= 1"));
        }
        let bounds = (0..t_len.div_ceil(block_size))
            .map(|b| (b * block_size, ((b + 1) * block_size).min(t_len)))
            .collect();
        Ok(BlockPlan { bounds })
    }

    pub fn n_blocks(&self) -> usize {
        self.bounds.len()
    }

    pub fn t_len(&self) -> usize {
        self.bounds.last().map_or(0, |b| b.1)
    }

    /// Draws whole blocks without replacement until at least `round(rate·T)`
    /// rows are covered; returns the covered rows, sorted.
    pub fn draw(&self, rate: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let target = ((rate * self.t_len() as f64).round() as usize).max(1);
        let mut order: Vec<usize> = (0..self.n_blocks()).collect();
        order.shuffle(rng);
        let mut taken = Vec::new();
        let mut covered = 0;
        for b in order {
            if covered >= target {
                break;
            }
            let (s, e) = self.bounds[b];
            covered += e - s;
            taken.push(b);
        }
        taken.sort_unstable();
        taken
            .into_iter()
            .flat_map(|b| self.bounds[b].0..self.bounds[b].1)
            .collect()
    }

    /// One Exp(1) weight per block, spread over its rows.
    pub fn exp_weights(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut w = vec![0.0; self.t_len()];
        for &(s, e) in &self.bounds {
            let v: f64 = Exp1.sample(rng);
            w[s..e].iter_mut().for_each(|x| *x = v);
        }
        w
    }
}

/// A fitted forest. Immutable once built and safe to share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrfForest {
    pub trees: Vec<MrfTree>,
    /// `inbag[b][t]`: row `t` belongs to a block drawn by tree `b`.
    pub inbag: Vec<Vec<bool>>,
    pub hp: HyperParams,
    pub s_names: Vec<String>,
    pub x_names: Vec<String>,
    /// Prior mean the leaves were shrunk towards, in original units.
    pub prior: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    forest: MrfForest,
}

/// Fits a forest of `hp.n_trees` trees of `y` on the linear part `x`, with
/// splits searched over the state columns `s`.
pub fn fit_forest(
    y: &[f64],
    x: &Frame,
    s: &Frame,
    trend_col: Option<usize>,
    hp: &HyperParams,
) -> Result<MrfForest> {
    hp.validate()?;
    let t_len = y.len();
    if t_len < 2 * hp.block_size {
        return Err(MrfError::Config(format!(
            "sample of {t_len} rows is shorter than two blocks of {}",
            hp.block_size
        )));
    }
    let spec = RidgeSpec {
        lambda: hp.lambda,
        prior_mean: None,
        standardize: hp.standardize,
    };
    let data = TrainingSet::new(y, &x.values, &s.values, &spec, trend_col)?;
    let n_valid = data.valid_rows().len();
    let min_leaf = hp.min_leaf(data.k());
    let expected = if hp.bayes_weights {
        n_valid
    } else {
        (hp.subsample_rate * n_valid as f64).floor() as usize
    };
    if expected < min_leaf.max(1) {
        return Err(MrfError::Config(format!(
            "about {expected} usable rows per tree cannot hold a leaf of {min_leaf}"
        )));
    }
    let plan = BlockPlan::new(t_len, hp.block_size)?;
    let grown: Vec<(MrfTree, Vec<bool>)> = (0..hp.n_trees)
        .into_par_iter()
        .map(|b| {
            let mut rng = tree_rng(hp.seed, b as u64);
            let (rows, weights) = if hp.bayes_weights {
                (data.valid_rows(), Some(plan.exp_weights(&mut rng)))
            } else {
                (plan.draw(hp.subsample_rate, &mut rng), None)
            };
            let mut mask = vec![false; t_len];
            rows.iter().for_each(|&t| mask[t] = true);
            let sample: Vec<usize> = rows.into_iter().filter(|&t| data.valid()[t]).collect();
            let tree = grow_tree(&data, &sample, hp, weights.as_deref(), &mut rng, b as u64)?;
            Ok((tree, mask))
        })
        .collect::<Result<Vec<_>>>()?;
    let failures: usize = grown.iter().map(|(t, _)| t.fit_log.len()).sum();
    if failures > 0 {
        log::warn!("{failures} node solves failed and kept their parent's coefficients");
    }
    let (trees, inbag) = grown.into_iter().unzip();
    Ok(MrfForest {
        trees,
        inbag,
        hp: hp.clone(),
        s_names: s.names.clone(),
        x_names: x.names.clone(),
        prior: data.prior(),
    })
}

/// [`fit_forest`] on an assembled state matrix.
pub fn fit_forest_state(
    design: &LinearDesign,
    state: &StateMatrix,
    hp: &HyperParams,
) -> Result<MrfForest> {
    fit_forest(
        &design.y,
        &design.x,
        &state.frame,
        Some(state.trend_col),
        hp,
    )
}

/// Out-of-bag coefficient paths.
#[derive(Debug, Clone, PartialEq)]
pub struct GtvpResult {
    pub coef_names: Vec<String>,
    /// `T×K` mean over qualifying trees.
    pub mean: DMatrix<f64>,
    /// Quantile levels of `quantiles`.
    pub levels: Vec<f64>,
    /// One `T×K` matrix per level.
    pub quantiles: Vec<DMatrix<f64>>,
    /// Number of trees contributing at each `t`.
    pub n_oob: Vec<usize>,
    /// Per-`t` draws, `draws[t][k]`, when requested.
    pub draws: Option<Vec<Vec<Vec<f64>>>>,
}

/// Type-7 empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl GtvpResult {
    fn level_index(&self, p: f64) -> Option<usize> {
        self.levels.iter().position(|l| (l - p).abs() < 1e-9)
    }

    /// Central credible interval at `level` for every `(t, k)`; level 0 gives
    /// the median twice.
    pub fn credible_bands(&self, level: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if !(0.0..1.0).contains(&level) {
            return Err(MrfError::arg(format!("band level must be in [0, 1), got {level}")));
        }
        let lo = (1.0 - level) / 2.0;
        let hi = 1.0 - lo;
        if let (Some(a), Some(b)) = (self.level_index(lo), self.level_index(hi)) {
            return Ok((self.quantiles[a].clone(), self.quantiles[b].clone()));
        }
        let draws = self.draws.as_ref().ok_or_else(|| {
            MrfError::Unavailable(format!(
                "{:.0}% band needs quantiles {lo} and {hi}, which are not stored; keep draws",
                level * 100.0
            ))
        })?;
        let (t_len, k) = self.mean.shape();
        let mut lower = DMatrix::from_element(t_len, k, f64::NAN);
        let mut upper = lower.clone();
        for t in 0..t_len {
            for c in 0..k {
                let mut d = draws[t][c].clone();
                d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                lower[(t, c)] = quantile_sorted(&d, lo);
                upper[(t, c)] = quantile_sorted(&d, hi);
            }
        }
        Ok((lower, upper))
    }

    /// Tidy CSV: `date, coefficient, mean, q05, q16, q84, q95, n_oob`.
    pub fn write_csv<W: Write>(&self, writer: W, dates: &[String]) -> Result<()> {
        let header: Vec<String> = ["date", "coefficient", "mean", "q05", "q16", "q84", "q95", "n_oob"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let idx: Vec<usize> = [0.05, 0.16, 0.84, 0.95]
            .iter()
            .map(|p| {
                self.level_index(*p)
                    .ok_or_else(|| MrfError::Unavailable(format!("quantile {p} not stored")))
            })
            .collect::<Result<_>>()?;
        let mut rows = Vec::new();
        for t in 0..self.mean.nrows() {
            for (c, name) in self.coef_names.iter().enumerate() {
                let mut r = vec![dates[t].clone(), name.clone(), fmt_f64(self.mean[(t, c)])];
                r.extend(idx.iter().map(|&i| fmt_f64(self.quantiles[i][(t, c)])));
                r.push(self.n_oob[t].to_string());
                rows.push(r);
            }
        }
        write_csv_rows(writer, &header, &rows)
    }
}

impl MrfForest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn k(&self) -> usize {
        self.x_names.len()
    }

    pub fn t_len(&self) -> usize {
        self.inbag.first().map_or(0, |v| v.len())
    }

    fn check(&self, s: &Frame, x: Option<&Frame>) -> Result<()> {
        s.check_schema(&self.s_names)?;
        if let Some(x) = x {
            x.check_schema(&self.x_names)?;
            if x.nrows() != s.nrows() {
                return Err(MrfError::arg("S and X row counts differ"));
            }
        }
        Ok(())
    }

    /// Mean over all trees of the routed leaf coefficients of one state row.
    pub fn beta_at(&self, s_row: &[f64]) -> Vec<f64> {
        let k = self.k();
        let mut acc = vec![0.0; k];
        for tree in &self.trees {
            let (leaf, _) = tree.leaf_of(s_row);
            for (a, b) in acc.iter_mut().zip(tree.leaf_beta(leaf)) {
                *a += b;
            }
        }
        let b = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= b);
        acc
    }

    /// Average of the trees' predictions `x_t·β_b(S_t)`.
    pub fn predict(&self, s: &Frame, x: &Frame) -> Result<Vec<f64>> {
        self.check(s, Some(x))?;
        Ok(self.predict_matrix(&s.values, &x.values))
    }

    pub(crate) fn predict_matrix(&self, s: &DMatrix<f64>, x: &DMatrix<f64>) -> Vec<f64> {
        (0..s.nrows())
            .into_par_iter()
            .map(|t| {
                let s_row: Vec<f64> = s.row(t).iter().copied().collect();
                let x_row: Vec<f64> = x.row(t).iter().copied().collect();
                let sum: f64 = self
                    .trees
                    .iter()
                    .map(|tree| tree_apply(tree, &s_row, &x_row).prediction)
                    .sum();
                sum / self.trees.len() as f64
            })
            .collect()
    }

    /// Out-of-bag predictions of the training rows (`NaN` where every tree
    /// saw the row).
    pub fn oob_predict_matrix(&self, s: &DMatrix<f64>, x: &DMatrix<f64>) -> Vec<f64> {
        (0..s.nrows())
            .into_par_iter()
            .map(|t| {
                let s_row: Vec<f64> = s.row(t).iter().copied().collect();
                let x_row: Vec<f64> = x.row(t).iter().copied().collect();
                let mut sum = 0.0;
                let mut n = 0usize;
                for (tree, inb) in self.trees.iter().zip(&self.inbag) {
                    if self.hp.bayes_weights || !inb[t] {
                        sum += tree_apply(tree, &s_row, &x_row).prediction;
                        n += 1;
                    }
                }
                if n == 0 {
                    f64::NAN
                } else {
                    sum / n as f64
                }
            })
            .collect()
    }

    /// Out-of-bag coefficient paths over the training rows `s`. Tree `b`
    /// contributes to row `t` only if it drew none of `[t − w, t + w]`.
    /// Under block Bayesian-bootstrap weights every tree counts as a draw.
    pub fn gtvp_paths(&self, s: &Frame, halfwidth: usize, keep_draws: bool) -> Result<GtvpResult> {
        self.check(s, None)?;
        let t_len = s.nrows();
        if t_len != self.t_len() {
            return Err(MrfError::arg(format!(
                "forest was trained on {} rows, got {t_len}",
                self.t_len()
            )));
        }
        if self.n_trees() < 200 {
            log::warn!(
                "credible bands from {} trees; 200-300 trees are typically needed for stable bands",
                self.n_trees()
            );
        }
        let prefix: Vec<Vec<usize>> = self
            .inbag
            .iter()
            .map(|m| {
                let mut p = vec![0usize; t_len + 1];
                for t in 0..t_len {
                    p[t + 1] = p[t] + m[t] as usize;
                }
                p
            })
            .collect();
        let k = self.k();
        let per_t: Vec<(Vec<Vec<f64>>, usize)> = (0..t_len)
            .into_par_iter()
            .map(|t| {
                let s_row: Vec<f64> = s.values.row(t).iter().copied().collect();
                let mut draws = vec![Vec::new(); k];
                if s_row.iter().any(|v| !v.is_finite()) {
                    return (draws, 0);
                }
                let lo = t.saturating_sub(halfwidth);
                let hi = (t + halfwidth + 1).min(t_len);
                let mut n = 0;
                for (b, tree) in self.trees.iter().enumerate() {
                    let qualifies =
                        self.hp.bayes_weights || prefix[b][hi] - prefix[b][lo] == 0;
                    if !qualifies {
                        continue;
                    }
                    let (leaf, _) = tree.leaf_of(&s_row);
                    for (c, v) in tree.leaf_beta(leaf).iter().enumerate() {
                        draws[c].push(*v);
                    }
                    n += 1;
                }
                (draws, n)
            })
            .collect();
        let levels = GTVP_LEVELS.to_vec();
        let mut mean = DMatrix::from_element(t_len, k, f64::NAN);
        let mut quantiles = vec![DMatrix::from_element(t_len, k, f64::NAN); levels.len()];
        let mut n_oob = vec![0; t_len];
        let mut empty = 0;
        for (t, (draws, n)) in per_t.iter().enumerate() {
            n_oob[t] = *n;
            if *n == 0 {
                empty += 1;
                continue;
            }
            for c in 0..k {
                let d = &draws[c];
                mean[(t, c)] = d.iter().sum::<f64>() / d.len() as f64;
                let mut sorted = d.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                for (q, &p) in levels.iter().enumerate() {
                    quantiles[q][(t, c)] = quantile_sorted(&sorted, p);
                }
            }
        }
        if empty > 0 {
            log::warn!("{empty} rows have no out-of-bag trees; their coefficients are NaN");
        }
        Ok(GtvpResult {
            coef_names: self.x_names.clone(),
            mean,
            levels,
            quantiles,
            n_oob,
            draws: keep_draws.then(|| per_t.into_iter().map(|(d, _)| d).collect()),
        })
    }

    /// Weights `α_t(s0) = (1/B) Σ_b 1{t ∈ L_b(s0)} / |L_b(s0)|` over training rows.
    pub fn kernel_weights(&self, s0: &[f64]) -> Vec<f64> {
        let mut alpha = vec![0.0; self.t_len()];
        let b = self.trees.len() as f64;
        for tree in &self.trees {
            let (leaf, _) = tree.leaf_of(s0);
            let members = tree.leaf_members(leaf);
            let w = 1.0 / (b * members.len() as f64);
            for &t in members {
                alpha[t] += w;
            }
        }
        alpha
    }

    /// Coefficients `β_t = mean_b β_b(S_t)` and predictions `x_t·β_t` for
    /// rows outside the training sample (every tree contributes).
    pub fn project_gtvp(&self, s: &Frame, x: &Frame) -> Result<(DMatrix<f64>, Vec<f64>)> {
        self.check(s, Some(x))?;
        let k = self.k();
        let rows: Vec<Vec<f64>> = (0..s.nrows())
            .into_par_iter()
            .map(|t| {
                let s_row: Vec<f64> = s.values.row(t).iter().copied().collect();
                self.beta_at(&s_row)
            })
            .collect();
        let betas = DMatrix::from_fn(s.nrows(), k, |t, c| rows[t][c]);
        let preds = (0..s.nrows())
            .map(|t| (0..k).map(|c| x.values[(t, c)] * betas[(t, c)]).sum())
            .collect();
        Ok((betas, preds))
    }

    /// Versioned JSON serialization.
    pub fn save<W: Write>(&self, writer: W) -> Result<()> {
        let env = EnvelopeRef {
            format: FORMAT_TAG,
            version: FORMAT_VERSION,
            forest: self,
        };
        serde_json::to_writer(writer, &env)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.save(&mut buf)?;
        Ok(String::from_utf8(buf).expect("JSON is UTF-8"))
    }

    pub fn load<R: Read>(reader: R) -> Result<Self> {
        let env: Envelope = serde_json::from_reader(reader)?;
        if env.format != FORMAT_TAG {
            return Err(MrfError::arg(format!("not a forest file (format `{}`)", env.format)));
        }
        if env.version != FORMAT_VERSION {
            return Err(MrfError::arg(format!(
                "unsupported forest format version {} (expected {FORMAT_VERSION})",
                env.version
            )));
        }
        Ok(env.forest)
    }
}

#[derive(Serialize)]
struct EnvelopeRef<'a> {
    format: &'a str,
    version: u32,
    forest: &'a MrfForest,
}

/// Average of the trees' predictions.
pub fn forest_predict(forest: &MrfForest, s: &Frame, x: &Frame) -> Result<Vec<f64>> {
    forest.predict(s, x)
}
