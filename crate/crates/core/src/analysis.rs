//! Interpreting a fitted forest: permutation variable importance (out-of-bag,
//! out-of-sample and coefficient-path flavours) and cost-complexity pruned
//! surrogate trees explaining a coefficient path with state variables.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{fmt_f64, write_csv_rows};
use crate::error::{MrfError, Result};
use crate::forest::MrfForest;
use crate::frame::Frame;
use crate::tree::{candidate_thresholds, tree_rng};

/// What a permutation is scored against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViMode {
    /// Out-of-bag predictions on the training rows.
    Oob,
    /// Full-forest predictions on held-out rows.
    Oos,
    /// Out-of-bag path of coefficient `k` on the training rows.
    Beta { k: usize },
}

impl ViMode {
    pub fn label(&self) -> String {
        match self {
            ViMode::Oob => "oob".into(),
            ViMode::Oos => "oos".into(),
            ViMode::Beta { k } => format!("beta_{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViOptions {
    pub n_repeats: usize,
    pub seed: u64,
    /// Columns permuted together (with one shared row permutation) when any
    /// member is scored.
    pub groups: Option<Vec<Vec<usize>>>,
    /// Permute contiguous blocks of this many rows instead of single rows.
    pub block_len: Option<usize>,
}

impl Default for ViOptions {
    fn default() -> Self {
        ViOptions {
            n_repeats: 5,
            seed: 1,
            groups: None,
            block_len: None,
        }
    }
}

/// Per-feature importance scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViReport {
    pub mode: ViMode,
    pub features: Vec<String>,
    /// Percent RMSE increase (prediction modes) or RMS path deviation.
    pub scores: Vec<f64>,
    pub seed: u64,
    pub n_repeats: usize,
}

impl ViReport {
    /// Feature indices sorted by decreasing score (ties by index).
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| {
            self.scores[b]
                .partial_cmp(&self.scores[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx
    }

    /// CSV with columns `feature, mode, score, rank`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut rank = vec![0; self.scores.len()];
        for (r, &j) in self.ranking().iter().enumerate() {
            rank[j] = r + 1;
        }
        let header: Vec<String> = ["feature", "mode", "score", "rank"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows: Vec<Vec<String>> = (0..self.scores.len())
            .map(|j| {
                vec![
                    self.features[j].clone(),
                    self.mode.label(),
                    fmt_f64(self.scores[j]),
                    rank[j].to_string(),
                ]
            })
            .collect();
        write_csv_rows(writer, &header, &rows)
    }
}

/// Groups state columns that derive from the same variable (`v_L1`, `v_L2`,
/// `v_MAF1`, ...).
pub fn groups_by_variable(names: &[String]) -> Vec<Vec<usize>> {
    let stem = |n: &str| -> String {
        for sep in ["_MAF", "_L"] {
            if let Some(i) = n.rfind(sep) {
                if n[i + sep.len()..].chars().all(|c| c.is_ascii_digit()) && i + sep.len() < n.len()
                {
                    return n[..i].to_string();
                }
            }
        }
        n.to_string()
    };
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    for (j, n) in names.iter().enumerate() {
        let s = stem(n);
        match out.iter_mut().find(|(k, _)| *k == s) {
            Some((_, v)) => v.push(j),
            None => out.push((s, vec![j])),
        }
    }
    out.into_iter().map(|(_, v)| v).collect()
}

fn rmse(pred: &[f64], y: &[f64], rows: &[usize]) -> f64 {
    let ss: f64 = rows.iter().map(|&t| (pred[t] - y[t]).powi(2)).sum();
    (ss / rows.len() as f64).sqrt()
}

fn permutation(n: usize, block_len: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match block_len {
        Some(b) if b > 1 => {
            let mut blocks: Vec<Vec<usize>> = (0..n)
                .collect::<Vec<_>>()
                .chunks(b)
                .map(|c| c.to_vec())
                .collect();
            blocks.shuffle(rng);
            blocks.concat()
        }
        _ => {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(rng);
            p
        }
    }
}

/// Permutation importance of every state column.
///
/// `s`, `x`, `y` are the training rows for [`ViMode::Oob`] and
/// [`ViMode::Beta`], and the held-out rows for [`ViMode::Oos`]. Columns that
/// never split score exactly zero.
pub fn variable_importance(
    forest: &MrfForest,
    s: &Frame,
    x: &Frame,
    y: &[f64],
    mode: &ViMode,
    opts: &ViOptions,
) -> Result<ViReport> {
    s.check_schema(&forest.s_names)?;
    x.check_schema(&forest.x_names)?;
    if s.nrows() != y.len() || x.nrows() != y.len() {
        return Err(MrfError::arg("S, X and y row counts differ"));
    }
    if opts.n_repeats == 0 {
        return Err(MrfError::arg("n_repeats must be at least 1"));
    }
    if let ViMode::Beta { k } = mode {
        if *k >= forest.k() {
            return Err(MrfError::arg(format!(
                "coefficient index {k} out of range for K = {}",
                forest.k()
            )));
        }
    }
    if matches!(mode, ViMode::Oob | ViMode::Beta { .. }) && s.nrows() != forest.t_len() {
        return Err(MrfError::arg("out-of-bag importance needs the training rows"));
    }
    let j_total = s.ncols();
    let mut used = vec![false; j_total];
    for tree in &forest.trees {
        for f in tree.split_features() {
            used[f] = true;
        }
    }
    let evaluate = |sv: &DMatrix<f64>| -> Vec<f64> {
        match mode {
            ViMode::Oob => forest.oob_predict_matrix(sv, &x.values),
            ViMode::Oos => forest.predict_matrix(sv, &x.values),
            ViMode::Beta { k } => oob_beta_path(forest, sv, *k),
        }
    };
    let base = evaluate(&s.values);
    let rows: Vec<usize> = (0..y.len())
        .filter(|&t| {
            base[t].is_finite()
                && (matches!(mode, ViMode::Beta { .. }) || y[t].is_finite())
                && s.values.row(t).iter().all(|v| v.is_finite())
        })
        .collect();
    if rows.is_empty() {
        return Err(MrfError::Unavailable("no rows to score importance on".into()));
    }
    let base_rmse = rmse(&base, y, &rows);
    let group_of = |j: usize| -> Vec<usize> {
        opts.groups
            .as_ref()
            .and_then(|g| g.iter().find(|m| m.contains(&j)).cloned())
            .unwrap_or_else(|| vec![j])
    };
    let scores: Vec<f64> = (0..j_total)
        .into_par_iter()
        .map(|j| {
            let cols = group_of(j);
            if !cols.iter().any(|&c| used[c]) {
                return 0.0;
            }
            let mut rng = tree_rng(opts.seed, j as u64);
            let mut total = 0.0;
            for _ in 0..opts.n_repeats {
                let perm = permutation(rows.len(), opts.block_len, &mut rng);
                let mut sv = s.values.clone();
                for &c in &cols {
                    for (i, &t) in rows.iter().enumerate() {
                        sv[(t, c)] = s.values[(rows[perm[i]], c)];
                    }
                }
                let out = evaluate(&sv);
                total += match mode {
                    ViMode::Beta { .. } => {
                        let ss: f64 = rows.iter().map(|&t| (out[t] - base[t]).powi(2)).sum();
                        (ss / rows.len() as f64).sqrt()
                    }
                    _ => 100.0 * (rmse(&out, y, &rows) / base_rmse - 1.0),
                };
            }
            total / opts.n_repeats as f64
        })
        .collect();
    Ok(ViReport {
        mode: mode.clone(),
        features: s.names.clone(),
        scores,
        seed: opts.seed,
        n_repeats: opts.n_repeats,
    })
}

fn oob_beta_path(forest: &MrfForest, s: &DMatrix<f64>, k: usize) -> Vec<f64> {
    (0..s.nrows())
        .into_par_iter()
        .map(|t| {
            let row: Vec<f64> = s.row(t).iter().copied().collect();
            let mut sum = 0.0;
            let mut n = 0usize;
            for (tree, inb) in forest.trees.iter().zip(&forest.inbag) {
                if forest.hp.bayes_weights || !inb[t] {
                    let (leaf, _) = tree.leaf_of(&row);
                    sum += tree.leaf_beta(leaf)[k];
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

/// Union of the `top_n` highest-scoring features of each report, sorted.
pub fn surrogate_candidates(reports: &[ViReport], top_n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = reports
        .iter()
        .flat_map(|r| r.ranking().into_iter().take(top_n))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Node of a surrogate tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SurrogateNode {
    Split {
        feature: String,
        feature_index: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n: usize,
        mean: f64,
        deviance: f64,
    },
    Leaf {
        n: usize,
        mean: f64,
        deviance: f64,
    },
}

/// A pruned CART regression tree explaining one coefficient path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateTree {
    pub nodes: Vec<SurrogateNode>,
    pub cp: f64,
    pub min_leaf: usize,
    /// Fitted path; `NaN` on rows that were not used.
    pub fitted: Vec<f64>,
    pub r2: f64,
    pub note: Option<String>,
}

struct Grown {
    members: Vec<usize>,
    mean: f64,
    deviance: f64,
    split: Option<(usize, f64, usize, usize)>,
}

fn stats(path: &[f64], members: &[usize]) -> (f64, f64) {
    let n = members.len() as f64;
    let mean = members.iter().map(|&t| path[t]).sum::<f64>() / n;
    let dev = members.iter().map(|&t| (path[t] - mean).powi(2)).sum::<f64>();
    (mean, dev)
}

/// Grows a variance-reduction CART of `path` on the `features` columns of `s`
/// and prunes it: a split survives only if its weakest-link complexity
/// exceeds `cp` times the root deviance.
pub fn surrogate_beta_tree(
    path: &[f64],
    s: &Frame,
    features: &[usize],
    cp: f64,
    min_leaf: usize,
) -> Result<SurrogateTree> {
    if features.len() < 2 {
        return Err(MrfError::arg("a surrogate tree needs at least two candidate features"));
    }
    if path.len() != s.nrows() {
        return Err(MrfError::arg("path and state rows differ"));
    }
    if let Some(&bad) = features.iter().find(|&&j| j >= s.ncols()) {
        return Err(MrfError::arg(format!("feature index {bad} out of range")));
    }
    if !(cp >= 0.0) {
        return Err(MrfError::arg("cp must be non-negative"));
    }
    let min_leaf = min_leaf.max(1);
    let rows: Vec<usize> = (0..path.len())
        .filter(|&t| path[t].is_finite() && features.iter().all(|&j| s.values[(t, j)].is_finite()))
        .collect();
    if rows.is_empty() {
        return Err(MrfError::arg("no complete rows for the surrogate tree"));
    }

    let mut grown: Vec<Grown> = Vec::new();
    let (m0, d0) = stats(path, &rows);
    grown.push(Grown {
        members: rows.clone(),
        mean: m0,
        deviance: d0,
        split: None,
    });
    let mut queue = vec![0usize];
    while let Some(i) = queue.pop() {
        let members = grown[i].members.clone();
        let parent_dev = grown[i].deviance;
        if members.len() < 2 * min_leaf || parent_dev <= 0.0 {
            continue;
        }
        let mut best: Option<(f64, usize, f64)> = None;
        for &j in features {
            let vals: Vec<f64> = members.iter().map(|&t| s.values[(t, j)]).collect();
            for c in candidate_thresholds(&vals, usize::MAX) {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    members.iter().partition(|&&t| s.values[(t, j)] <= c);
                if l.len() < min_leaf || r.len() < min_leaf {
                    continue;
                }
                let dev = stats(path, &l).1 + stats(path, &r).1;
                if best.is_none_or(|b| dev < b.0) {
                    best = Some((dev, j, c));
                }
            }
        }
        let Some((dev, j, c)) = best else { continue };
        if !(parent_dev - dev > 1e-12 * parent_dev) {
            continue;
        }
        let (l, r): (Vec<usize>, Vec<usize>) =
            members.iter().partition(|&&t| s.values[(t, j)] <= c);
        let li = grown.len();
        for part in [l, r] {
            let (m, d) = stats(path, &part);
            grown.push(Grown {
                members: part,
                mean: m,
                deviance: d,
                split: None,
            });
        }
        grown[i].split = Some((j, c, li, li + 1));
        queue.push(li + 1);
        queue.push(li);
    }

    // weakest-link pruning
    let bar = cp * d0;
    loop {
        let mut weakest: Option<(f64, usize)> = None;
        for i in 0..grown.len() {
            if grown[i].split.is_none() || !reachable(&grown, i) {
                continue;
            }
            let (leaf_dev, leaves) = subtree(&grown, i);
            let g = (grown[i].deviance - leaf_dev) / (leaves - 1) as f64;
            if weakest.is_none_or(|w| g < w.0) {
                weakest = Some((g, i));
            }
        }
        match weakest {
            Some((g, i)) if !(g > bar) => grown[i].split = None,
            _ => break,
        }
    }

    // compact the surviving nodes
    let mut nodes = Vec::new();
    let mut fitted = vec![f64::NAN; path.len()];
    compact(&grown, 0, s, &mut nodes, &mut fitted);
    let note;
    let r2 = if d0 <= 0.0 {
        note = Some("constant path: R² undefined".to_string());
        f64::NAN
    } else {
        note = None;
        let sse: f64 = rows.iter().map(|&t| (path[t] - fitted[t]).powi(2)).sum();
        1.0 - sse / d0
    };
    Ok(SurrogateTree {
        nodes,
        cp,
        min_leaf,
        fitted,
        r2,
        note,
    })
}

fn reachable(grown: &[Grown], target: usize) -> bool {
    let mut stack = vec![0];
    while let Some(i) = stack.pop() {
        if i == target {
            return true;
        }
        if let Some((_, _, l, r)) = grown[i].split {
            stack.push(l);
            stack.push(r);
        }
    }
    false
}

fn subtree(grown: &[Grown], i: usize) -> (f64, usize) {
    match grown[i].split {
        None => (grown[i].deviance, 1),
        Some((_, _, l, r)) => {
            let (dl, nl) = subtree(grown, l);
            let (dr, nr) = subtree(grown, r);
            (dl + dr, nl + nr)
        }
    }
}

fn compact(
    grown: &[Grown],
    i: usize,
    s: &Frame,
    nodes: &mut Vec<SurrogateNode>,
    fitted: &mut [f64],
) -> usize {
    let g = &grown[i];
    let slot = nodes.len();
    match g.split {
        None => {
            nodes.push(SurrogateNode::Leaf {
                n: g.members.len(),
                mean: g.mean,
                deviance: g.deviance,
            });
            for &t in &g.members {
                fitted[t] = g.mean;
            }
        }
        Some((j, c, l, r)) => {
            nodes.push(SurrogateNode::Leaf {
                n: 0,
                mean: 0.0,
                deviance: 0.0,
            });
            let left = compact(grown, l, s, nodes, fitted);
            let right = compact(grown, r, s, nodes, fitted);
            nodes[slot] = SurrogateNode::Split {
                feature: s.names[j].clone(),
                feature_index: j,
                threshold: c,
                left,
                right,
                n: g.members.len(),
                mean: g.mean,
                deviance: g.deviance,
            };
        }
    }
    slot
}

impl SurrogateTree {
    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, SurrogateNode::Leaf { .. }))
            .count()
    }

    /// `(feature index, threshold)` of every split, in pre-order.
    pub fn splits(&self) -> Vec<(usize, f64)> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                SurrogateNode::Split {
                    feature_index,
                    threshold,
                    ..
                } => Some((*feature_index, *threshold)),
                SurrogateNode::Leaf { .. } => None,
            })
            .collect()
    }

    /// Indented text rendering.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if let Some(n) = &self.note {
            let _ = writeln!(out, "# {n}");
        }
        self.render_node(0, 0, "root", &mut out);
        out
    }

    fn render_node(&self, i: usize, depth: usize, label: &str, out: &mut String) {
        let pad = "  ".repeat(depth);
        match &self.nodes[i] {
            SurrogateNode::Leaf { n, mean, .. } => {
                let _ = writeln!(out, "{pad}{label}: n={n} value={mean:.6}");
            }
            SurrogateNode::Split {
                feature,
                threshold,
                left,
                right,
                n,
                mean,
                ..
            } => {
                let _ = writeln!(out, "{pad}{label}: n={n} mean={mean:.6}");
                self.render_node(*left, depth + 1, &format!("{feature} <= {threshold:.6}"), out);
                self.render_node(*right, depth + 1, &format!("{feature} > {threshold:.6}"), out);
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(t: usize) -> Frame {
        let v = DMatrix::from_fn(t, 3, |i, j| ((i * (j + 3) * 7919) % 101) as f64 / 10.0);
        Frame::new(v, vec!["a_L1".into(), "a_L2".into(), "b_MAF1".into()]).unwrap()
    }

    #[test]
    fn groups_share_stems() {
        let names: Vec<String> = ["x_L1", "x_L2", "x_MAF1", "trend", "F1_L1"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(groups_by_variable(&names), vec![vec![0, 1, 2], vec![3], vec![4]]);
    }

    #[test]
    fn step_path_is_recovered() {
        let s = frame(60);
        let path: Vec<f64> = (0..60)
            .map(|t| if s.values[(t, 1)] > 5.0 { 3.0 } else { 1.0 })
            .collect();
        let tree = surrogate_beta_tree(&path, &s, &[0, 1, 2], 0.075, 5).unwrap();
        assert_eq!(tree.splits().len(), 1);
        assert_eq!(tree.splits()[0].0, 1);
        assert!((tree.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_path_and_full_cp_give_root() {
        let s = frame(40);
        let flat = vec![2.0; 40];
        let t = surrogate_beta_tree(&flat, &s, &[0, 1], 0.075, 5).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert!(t.r2.is_nan());
        assert!(t.note.is_some());
        let path: Vec<f64> = (0..40).map(|t| s.values[(t, 0)]).collect();
        let t = surrogate_beta_tree(&path, &s, &[0, 1], 1.0, 5).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert!(t.render().contains("root"));
    }
}
