//! Growing a single macroeconomic random forest tree: feature sampling,
//! candidate thresholds, the random-walk-regularised split search and routing.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MrfError, Result};
use crate::ridgewls::{resolve_prior, Gram, RidgeSpec, Standardizer};

/// Tuning parameters of trees and forests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    /// Fraction of state columns drawn at every node.
    pub mtry_frac: f64,
    /// A node is only split if it has at least this many members.
    pub min_node_size: usize,
    /// Minimum leaf fraction: children need `ceil(mlf·K)` members. `None`
    /// means 1 when `lambda > 0` or `zeta > 0`, else 2.
    pub mlf: Option<f64>,
    pub lambda: f64,
    pub zeta: f64,
    /// Multiplier on the trend column's weight in the feature draw.
    pub trend_push: f64,
    pub max_candidates: usize,
    pub subsample_rate: f64,
    pub block_size: usize,
    pub n_trees: usize,
    pub seed: u64,
    pub standardize: bool,
    /// Weight blocks by Exp(1) draws instead of subsampling them.
    pub bayes_weights: bool,
    /// Apply the podium weights while searching splits too. When off, they
    /// only enter the node and leaf coefficient estimates.
    pub rw_in_search: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            mtry_frac: 1.0 / 3.0,
            min_node_size: 10,
            mlf: None,
            lambda: 0.5,
            zeta: 0.8,
            trend_push: 1.0,
            max_candidates: 50,
            subsample_rate: 0.75,
            block_size: 8,
            n_trees: 100,
            seed: 1,
            standardize: true,
            bayes_weights: false,
            rw_in_search: false,
        }
    }
}

impl HyperParams {
    /// Defaults for monthly data (larger nodes and blocks).
    pub fn monthly() -> Self {
        HyperParams {
            min_node_size: 15,
            block_size: 24,
            ..HyperParams::default()
        }
    }

    /// The plain regression forest restriction: no penalty, no smoothing.
    pub fn plain_forest() -> Self {
        HyperParams {
            lambda: 0.0,
            zeta: 0.0,
            ..HyperParams::default()
        }
    }

    pub fn effective_mlf(&self) -> f64 {
        self.mlf
            .unwrap_or(if self.lambda > 0.0 || self.zeta > 0.0 { 1.0 } else { 2.0 })
    }

    /// Minimum members per leaf for a `k`-parameter linear part.
    pub fn min_leaf(&self, k: usize) -> usize {
        ((self.effective_mlf() * k as f64).ceil() as usize).max(1)
    }

    /// Number of features drawn at each node out of `j`.
    pub fn n_features(&self, j: usize) -> usize {
        ((self.mtry_frac * j as f64).ceil() as usize).clamp(1, j.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MrfError::Config(m));
        if !(self.mtry_frac > 0.0 && self.mtry_frac <= 1.0) {
            return bad(format!("mtry_frac must be in (0, 1], got {}", self.mtry_frac));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.zeta) {
            return bad(format!("zeta must be in [0, 1), got {}", self.zeta));
        }
        if self.mlf.is_some_and(|m| !(m >= 0.0)) {
            return bad("mlf must be >= 0".into());
        }
        if !(self.trend_push >= 1.0) {
            return bad(format!("trend_push must be >= 1, got {}", self.trend_push));
        }
        if self.max_candidates == 0 {
            return bad("max_candidates must be >= 1".into());
        }
        if !(self.subsample_rate > 0.0 && self.subsample_rate <= 1.0) {
            return bad(format!(
                "subsample_rate must be in (0, 1], got {}",
                self.subsample_rate
            ));
        }
        if self.block_size == 0 {
            return bad("block_size must be >= 1".into());
        }
        if self.n_trees == 0 {
            return bad("n_trees must be >= 1".into());
        }
        Ok(())
    }
}

/// The random stream of tree `b`: a ChaCha8 generator seeded with `seed`,
/// positioned on stream `b`. Streams never overlap, so trees can be grown in
/// any order or thread.
pub fn tree_rng(seed: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b);
    rng
}

/// Draws `hp.n_features(j)` distinct columns without replacement, sequentially
/// and with probability proportional to weight (1 for every column,
/// `trend_push` for the trend). Returned sorted.
pub fn sample_features(
    j: usize,
    hp: &HyperParams,
    trend_col: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let k = hp.n_features(j);
    let mut pool: Vec<usize> = (0..j).collect();
    let weight = |c: usize| {
        if Some(c) == trend_col {
            hp.trend_push
        } else {
            1.0
        }
    };
    let mut out = Vec::with_capacity(k);
    if k == j {
        return pool;
    }
    for _ in 0..k {
        let total: f64 = pool.iter().map(|&c| weight(c)).sum();
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = pool.len() - 1;
        for (i, &c) in pool.iter().enumerate() {
            acc += weight(c);
            if u < acc {
                pick = i;
                break;
            }
        }
        out.push(pool.remove(pick));
    }
    out.sort_unstable();
    out
}

/// Midpoints between consecutive distinct values, thinned to at most `max`
/// evenly spaced ones.
pub fn candidate_thresholds(values: &[f64], max: usize) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    let mids: Vec<f64> = v.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0).collect();
    let m = mids.len();
    if m <= max {
        return mids;
    }
    (0..max)
        .map(|i| mids[((i as f64 + 0.5) * m as f64 / max as f64) as usize])
        .collect()
}

/// Data prepared once per fit: standardized regressors, target net of the
/// prior fit and the validity mask.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    t_len: usize,
    k: usize,
    s: DMatrix<f64>,
    xs: Vec<f64>,
    ys: Vec<f64>,
    valid: Vec<bool>,
    standardizer: Standardizer,
    prior_std: Vec<f64>,
    lambda: f64,
    trend_col: Option<usize>,
    /// Mean square of the original target, the scale of rounding noise.
    y_scale: f64,
}

impl TrainingSet {
    /// Rows with any missing value in `y`, `X` or `S` are left out of
    /// estimation. Scaling moments and the default (OLS) prior use every
    /// remaining row.
    pub fn new(
        y: &[f64],
        x: &DMatrix<f64>,
        s: &DMatrix<f64>,
        spec: &RidgeSpec,
        trend_col: Option<usize>,
    ) -> Result<Self> {
        let t_len = y.len();
        if x.nrows() != t_len || s.nrows() != t_len {
            return Err(MrfError::arg(format!(
                "y has {t_len} rows, X has {}, S has {}",
                x.nrows(),
                s.nrows()
            )));
        }
        let k = x.ncols();
        if k == 0 || s.ncols() == 0 {
            return Err(MrfError::arg("X and S need at least one column"));
        }
        let valid: Vec<bool> = (0..t_len)
            .map(|t| {
                y[t].is_finite()
                    && x.row(t).iter().all(|v| v.is_finite())
                    && s.row(t).iter().all(|v| v.is_finite())
            })
            .collect();
        let rows: Vec<usize> = (0..t_len).filter(|&t| valid[t]).collect();
        if rows.is_empty() {
            return Err(MrfError::arg("no complete rows to train on"));
        }
        let standardizer = if spec.standardize {
            Standardizer::fit(x, Some(&rows))
        } else {
            Standardizer::identity(k)
        };
        let xv = x.select_rows(&rows);
        let yv: Vec<f64> = rows.iter().map(|&t| y[t]).collect();
        let y_scale = yv.iter().map(|v| v * v).sum::<f64>() / yv.len() as f64;
        let xsv = standardizer.transform(&xv);
        let prior_std = resolve_prior(&xsv, &yv, &standardizer, spec);
        let mut xs = vec![0.0; t_len * k];
        let mut ys = vec![f64::NAN; t_len];
        let mut row = vec![0.0; k];
        for &t in &rows {
            let raw: Vec<f64> = x.row(t).iter().copied().collect();
            standardizer.transform_row(&raw, &mut row);
            xs[t * k..(t + 1) * k].copy_from_slice(&row);
            let fit: f64 = row.iter().zip(&prior_std).map(|(a, b)| a * b).sum();
            ys[t] = y[t] - fit;
        }
        Ok(TrainingSet {
            t_len,
            k,
            s: s.clone(),
            xs,
            ys,
            valid,
            standardizer,
            prior_std,
            lambda: spec.lambda,
            trend_col,
            y_scale,
        })
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn j(&self) -> usize {
        self.s.ncols()
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_rows(&self) -> Vec<usize> {
        (0..self.t_len).filter(|&t| self.valid[t]).collect()
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn trend_col(&self) -> Option<usize> {
        self.trend_col
    }

    /// Coefficients of the prior mean in original units.
    pub fn prior(&self) -> Vec<f64> {
        self.standardizer.beta_to_original(&self.prior_std)
    }

    #[inline]
    fn x_row(&self, t: usize) -> &[f64] {
        &self.xs[t * self.k..(t + 1) * self.k]
    }

    fn to_original(&self, dev: &[f64]) -> Vec<f64> {
        let b: Vec<f64> = dev.iter().zip(&self.prior_std).map(|(d, p)| d + p).collect();
        self.standardizer.beta_to_original(&b)
    }
}

/// A node of a fitted tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Coefficients in original units.
        beta: Vec<f64>,
        /// Training rows (in-bag) that landed here.
        members: Vec<usize>,
    },
}

/// A fitted tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrfTree {
    pub nodes: Vec<Node>,
    pub rng_stream: u64,
    /// Leaves whose own solve failed and that kept their parent's coefficients.
    pub fit_log: Vec<String>,
}

/// Output of routing one row through a tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Routed<'a> {
    pub prediction: f64,
    pub beta: &'a [f64],
    pub leaf: usize,
    /// A routing feature was `NaN` (sent left).
    pub nan_routed: bool,
}

impl MrfTree {
    /// Index of the leaf reached by `s_row`, and whether a `NaN` was met.
    pub fn leaf_of(&self, s_row: &[f64]) -> (usize, bool) {
        let mut i = 0;
        let mut nan = false;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return (i, nan),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let v = s_row[*feature];
                    if v.is_nan() {
                        nan = true;
                        i = *left;
                    } else if v <= *threshold {
                        i = *left;
                    } else {
                        i = *right;
                    }
                }
            }
        }
    }

    pub fn leaf_beta(&self, leaf: usize) -> &[f64] {
        match &self.nodes[leaf] {
            Node::Leaf { beta, .. } => beta,
            Node::Split { .. } => panic!("node {leaf} is not a leaf"),
        }
    }

    pub fn leaf_members(&self, leaf: usize) -> &[usize] {
        match &self.nodes[leaf] {
            Node::Leaf { members, .. } => members,
            Node::Split { .. } => panic!("node {leaf} is not a leaf"),
        }
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i], Node::Leaf { .. }))
            .collect()
    }

    /// Splitting features used anywhere in the tree, with multiplicity.
    pub fn split_features(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect()
    }

    pub fn depth(&self) -> usize {
        fn rec(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + rec(nodes, *left).max(rec(nodes, *right)),
            }
        }
        rec(&self.nodes, 0)
    }
}

/// Routes a row (left when `S_j ≤ c`) and predicts `x_row · β_leaf`.
pub fn tree_apply<'a>(tree: &'a MrfTree, s_row: &[f64], x_row: &[f64]) -> Routed<'a> {
    let (leaf, nan_routed) = tree.leaf_of(s_row);
    let beta = tree.leaf_beta(leaf);
    let prediction = x_row.iter().zip(beta).map(|(x, b)| x * b).sum();
    Routed {
        prediction,
        beta,
        leaf,
        nan_routed,
    }
}

/// A chosen split and the children's total penalised objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub objective: f64,
}

/// Everything needed to grow one tree on a given in-bag sample.
pub struct GrowContext<'a> {
    data: &'a TrainingSet,
    hp: &'a HyperParams,
    eligible: Vec<bool>,
    case_weights: Option<&'a [f64]>,
    min_leaf: usize,
    steps: [f64; 3],
    search_steps: [f64; 3],
}

/// Random-walk expanded cross-products of a growing member set.
struct Expander {
    w: Vec<f64>,
    touched: Vec<usize>,
    gram: Gram,
    count: usize,
}

impl Expander {
    fn new(t_len: usize, k: usize) -> Self {
        Expander {
            w: vec![0.0; t_len],
            touched: Vec::new(),
            gram: Gram::new(k),
            count: 0,
        }
    }

    fn reset(&mut self) {
        for &t in &self.touched {
            self.w[t] = 0.0;
        }
        self.touched.clear();
        self.gram = Gram::new(self.gram.k());
        self.count = 0;
    }
}

impl<'a> GrowContext<'a> {
    /// `sample` lists the in-bag rows; only they can receive weight.
    pub fn new(
        data: &'a TrainingSet,
        hp: &'a HyperParams,
        sample: &[usize],
        case_weights: Option<&'a [f64]>,
    ) -> Self {
        let mut eligible = vec![false; data.t_len];
        for &t in sample {
            if data.valid[t] {
                eligible[t] = true;
            }
        }
        let z = hp.zeta;
        GrowContext {
            data,
            hp,
            eligible,
            case_weights,
            min_leaf: hp.min_leaf(data.k),
            steps: [1.0, z, z * z],
            search_steps: if hp.rw_in_search {
                [1.0, z, z * z]
            } else {
                [1.0, 0.0, 0.0]
            },
        }
    }

    pub fn min_leaf(&self) -> usize {
        self.min_leaf
    }

    #[inline]
    fn add_member(&self, e: &mut Expander, m: usize) {
        let t_len = self.data.t_len;
        let lo = m.saturating_sub(2);
        let hi = (m + 2).min(t_len - 1);
        for t in lo..=hi {
            if !self.eligible[t] {
                continue;
            }
            let mut v = self.search_steps[t.abs_diff(m)];
            if let Some(cw) = self.case_weights {
                v *= cw[t];
            }
            if v > e.w[t] {
                if e.w[t] == 0.0 {
                    e.touched.push(t);
                }
                e.gram.add(self.data.x_row(t), self.data.ys[t], v - e.w[t]);
                e.w[t] = v;
            }
        }
        e.count += 1;
    }

    /// Ridge fit of a member set (in deviation-from-prior, solver coordinates).
    fn fit_members(&self, members: &[usize]) -> Result<(Vec<f64>, f64)> {
        let mut w: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
        for &m in members {
            let lo = m.saturating_sub(2);
            let hi = (m + 2).min(self.data.t_len - 1);
            for t in lo..=hi {
                if !self.eligible[t] {
                    continue;
                }
                let mut v = self.steps[t.abs_diff(m)];
                if let Some(cw) = self.case_weights {
                    v *= cw[t];
                }
                let e = w.entry(t).or_insert(0.0);
                if v > *e {
                    *e = v;
                }
            }
        }
        let mut g = Gram::new(self.data.k);
        for (&t, &v) in &w {
            if v > 0.0 {
                g.add(self.data.x_row(t), self.data.ys[t], v);
            }
        }
        g.solve(self.data.lambda, None)
    }

    /// Best admissible split of `node` (rows sorted by time) over `features`.
    pub fn best_split_among(&self, node: &[usize], features: &[usize]) -> Option<SplitChoice> {
        let n = node.len();
        if n < self.hp.min_node_size || n < 2 * self.min_leaf {
            return None;
        }
        let lambda = self.data.lambda;
        let mut best: Option<SplitChoice> = None;
        let mut fwd = Expander::new(self.data.t_len, self.data.k);
        let mut bwd = Expander::new(self.data.t_len, self.data.k);
        for &j in features {
            let vals: Vec<f64> = node.iter().map(|&t| self.data.s[(t, j)]).collect();
            let cands = candidate_thresholds(&vals, self.hp.max_candidates);
            if cands.is_empty() {
                continue;
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
            let m = cands.len();

            // child 1 = {S_j ≤ c}, swept upwards
            let mut left: Vec<Option<(Gram, f64, usize)>> = Vec::with_capacity(m);
            fwd.reset();
            let mut p = 0;
            for &c in &cands {
                while p < n && vals[order[p]] <= c {
                    self.add_member(&mut fwd, node[order[p]]);
                    p += 1;
                }
                let cnt = fwd.count;
                if cnt < self.min_leaf || n - cnt < self.min_leaf {
                    left.push(None);
                    continue;
                }
                left.push(match fwd.gram.solve(lambda, None) {
                    Ok((_, obj)) => Some((fwd.gram.clone(), obj, cnt)),
                    Err(_) => None,
                });
            }

            // child 2 = {S_j > c}, swept downwards
            bwd.reset();
            let mut q = n;
            for i in (0..m).rev() {
                let c = cands[i];
                while q > 0 && vals[order[q - 1]] > c {
                    q -= 1;
                    self.add_member(&mut bwd, node[order[q]]);
                }
                let Some((g1, obj1, _)) = &left[i] else {
                    continue;
                };
                let Ok((_, obj2)) = bwd.gram.solve(lambda, None) else {
                    continue;
                };
                let obj = obj1 + obj2;
                // both children forced to share one coefficient vector
                let merged = g1.merged(&bwd.gram);
                let Ok((_, base)) = merged.solve(2.0 * lambda, None) else {
                    continue;
                };
                let noise = merged.yy() + merged.wsum() * self.data.y_scale;
                let tol = 1e-10 * base + 1e3 * f64::EPSILON * noise;
                if !(base - obj > tol) {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(b) => {
                        obj < b.objective
                            || (obj == b.objective
                                && (j, c) < (b.feature, b.threshold))
                    }
                };
                if better {
                    best = Some(SplitChoice {
                        feature: j,
                        threshold: c,
                        objective: obj,
                    });
                }
            }
        }
        best
    }

    /// Draws the node's feature subset from `rng`, then searches it.
    pub fn best_split(&self, node: &[usize], rng: &mut ChaCha8Rng) -> Option<SplitChoice> {
        let feats = sample_features(self.data.j(), self.hp, self.data.trend_col, rng);
        self.best_split_among(node, &feats)
    }

    /// Grows the tree from the in-bag rows given at construction.
    pub fn grow(&self, rng: &mut ChaCha8Rng, stream: u64) -> Result<MrfTree> {
        let root: Vec<usize> = (0..self.data.t_len).filter(|&t| self.eligible[t]).collect();
        if root.len() < self.min_leaf {
            return Err(MrfError::Config(format!(
                "in-bag sample of {} rows is below the minimum leaf size {}",
                root.len(),
                self.min_leaf
            )));
        }
        let mut nodes: Vec<Node> = Vec::new();
        let mut fit_log = Vec::new();
        let root_beta = vec![0.0; self.data.k];
        // (members, parent coefficients, node slot)
        nodes.push(Node::Leaf {
            beta: Vec::new(),
            members: Vec::new(),
        });
        let mut stack = vec![(root, root_beta, 0usize)];
        while let Some((members, parent, slot)) = stack.pop() {
            let own = match self.fit_members(&members) {
                Ok((b, _)) => b,
                Err(e) => {
                    fit_log.push(format!(
                        "node {slot} ({} members): {e}; kept parent coefficients",
                        members.len()
                    ));
                    parent
                }
            };
            match self.best_split(&members, rng) {
                Some(sp) => {
                    let (l, r): (Vec<usize>, Vec<usize>) = members
                        .iter()
                        .partition(|&&t| self.data.s[(t, sp.feature)] <= sp.threshold);
                    let li = nodes.len();
                    nodes.push(Node::Leaf {
                        beta: Vec::new(),
                        members: Vec::new(),
                    });
                    nodes.push(Node::Leaf {
                        beta: Vec::new(),
                        members: Vec::new(),
                    });
                    nodes[slot] = Node::Split {
                        feature: sp.feature,
                        threshold: sp.threshold,
                        left: li,
                        right: li + 1,
                    };
                    stack.push((r, own.clone(), li + 1));
                    stack.push((l, own, li));
                }
                None => {
                    nodes[slot] = Node::Leaf {
                        beta: self.data.to_original(&own),
                        members,
                    };
                }
            }
        }
        Ok(MrfTree {
            nodes,
            rng_stream: stream,
            fit_log,
        })
    }
}

/// Grows one tree on the in-bag rows `sample` (optionally weighted per row).
pub fn grow_tree(
    data: &TrainingSet,
    sample: &[usize],
    hp: &HyperParams,
    case_weights: Option<&[f64]>,
    rng: &mut ChaCha8Rng,
    stream: u64,
) -> Result<MrfTree> {
    GrowContext::new(data, hp, sample, case_weights).grow(rng, stream)
}
