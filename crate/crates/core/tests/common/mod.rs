#![allow(dead_code)]

use mrf_core::forest::BlockPlan;
use mrf_core::tree::{candidate_thresholds, sample_features, tree_rng, HyperParams};
use mrf_core::Frame;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_frame(rng: &mut ChaCha8Rng, t_len: usize, j: usize, prefix: &str) -> Frame {
    let v = DMatrix::from_fn(t_len, j, |_, _| normal(rng));
    Frame::with_prefix(v, prefix)
}

pub fn intercept(t_len: usize) -> Frame {
    Frame::new(DMatrix::from_element(t_len, 1, 1.0), vec!["const".into()]).unwrap()
}

/// `y = 2·1{S1 > 0} + S2 + noise` with `j` standard normal state columns.
pub fn threshold_data(seed: u64, t_len: usize, j: usize) -> (Vec<f64>, Frame) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = random_frame(&mut rng, t_len, j, "S");
    let y = (0..t_len)
        .map(|t| {
            let jump = if s.values[(t, 0)] > 0.0 { 2.0 } else { 0.0 };
            jump + 0.5 * s.values[(t, 1.min(j - 1))] + 0.3 * normal(&mut rng)
        })
        .collect();
    (y, s)
}

enum OracleNode {
    Leaf(f64),
    Split(usize, f64, Box<OracleNode>, Box<OracleNode>),
}

impl OracleNode {
    fn predict(&self, row: &[f64]) -> f64 {
        match self {
            OracleNode::Leaf(v) => *v,
            OracleNode::Split(j, c, l, r) => {
                if row[*j] <= *c {
                    l.predict(row)
                } else {
                    r.predict(row)
                }
            }
        }
    }
}

/// Sum of squared deviations from the mean of a running sum.
fn sse(sum: f64, sum_sq: f64, n: f64) -> f64 {
    (sum_sq - sum / n * sum).max(0.0)
}

struct Cart<'a> {
    y: &'a [f64],
    s: &'a DMatrix<f64>,
    hp: &'a HyperParams,
    min_leaf: usize,
    y_scale: f64,
}

impl Cart<'_> {
    /// Grows depth-first, left child first, drawing a feature subset at every
    /// node. Members are kept in time order.
    fn grow(&self, members: Vec<usize>, rng: &mut ChaCha8Rng) -> OracleNode {
        let feats = sample_features(self.s.ncols(), self.hp, None, rng);
        let n = members.len();
        let mean = members.iter().map(|&t| self.y[t]).sum::<f64>() / n as f64;
        if n < self.hp.min_node_size || n < 2 * self.min_leaf {
            return OracleNode::Leaf(mean);
        }
        // (objective, feature, threshold)
        let mut best: Option<(f64, usize, f64)> = None;
        for &j in &feats {
            let vals: Vec<f64> = members.iter().map(|&t| self.s[(t, j)]).collect();
            let cands = candidate_thresholds(&vals, self.hp.max_candidates);
            let mut sorted: Vec<usize> = members.clone();
            sorted.sort_by(|&a, &b| self.s[(a, j)].partial_cmp(&self.s[(b, j)]).unwrap());
            for &c in &cands {
                let n_left = sorted.iter().filter(|&&t| self.s[(t, j)] <= c).count();
                if n_left < self.min_leaf || n - n_left < self.min_leaf {
                    continue;
                }
                let (mut sl, mut ql) = (0.0, 0.0);
                for &t in &sorted[..n_left] {
                    sl += self.y[t];
                    ql += self.y[t] * self.y[t];
                }
                let (mut sr, mut qr) = (0.0, 0.0);
                for &t in sorted[n_left..].iter().rev() {
                    sr += self.y[t];
                    qr += self.y[t] * self.y[t];
                }
                let obj = sse(sl, ql, n_left as f64) + sse(sr, qr, (n - n_left) as f64);
                let parent = sse(sl + sr, ql + qr, n as f64);
                let noise = ql + qr + n as f64 * self.y_scale;
                if !(parent - obj > 1e-10 * parent + 1e3 * f64::EPSILON * noise) {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bo, bj, bc)) => obj < bo || (obj == bo && (j, c) < (bj, bc)),
                };
                if better {
                    best = Some((obj, j, c));
                }
            }
        }
        match best {
            None => OracleNode::Leaf(mean),
            Some((_, j, c)) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    members.iter().partition(|&&t| self.s[(t, j)] <= c);
                let left = self.grow(l, rng);
                let right = self.grow(r, rng);
                OracleNode::Split(j, c, Box::new(left), Box::new(right))
            }
        }
    }
}

/// A standard regression forest (mean leaves, variance-reduction splits)
/// drawing its blocks, feature subsets and thresholds the same way as the
/// library. Returns predictions for every row of `s_pred`.
pub fn plain_forest_oracle(
    y: &[f64],
    s: &DMatrix<f64>,
    hp: &HyperParams,
    s_pred: &DMatrix<f64>,
) -> Vec<f64> {
    let t_len = y.len();
    let plan = BlockPlan::new(t_len, hp.block_size).unwrap();
    let cart = Cart {
        y,
        s,
        hp,
        min_leaf: hp.min_leaf(1),
        y_scale: y.iter().map(|v| v * v).sum::<f64>() / t_len as f64,
    };
    let trees: Vec<OracleNode> = (0..hp.n_trees)
        .map(|b| {
            let mut rng = tree_rng(hp.seed, b as u64);
            let rows = plan.draw(hp.subsample_rate, &mut rng);
            cart.grow(rows, &mut rng)
        })
        .collect();
    (0..s_pred.nrows())
        .map(|t| {
            let row: Vec<f64> = s_pred.row(t).iter().copied().collect();
            let total = trees.iter().fold(0.0, |acc, tr| acc + tr.predict(&row));
            total / hp.n_trees as f64
        })
        .collect()
}
