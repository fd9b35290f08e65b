//! Multiclass gradient boosting with second-order, exact greedy regression trees.
//!
//! Each round fits one tree per class to the softmax cross-entropy gradient
//! `g = p - y` and hessian `h = 2p(1 - p)`. A split's gain is
//!
//! ```text
//! ½ [G_L²/(H_L+λ) + G_R²/(H_R+λ) - G²/(H+λ)] - γ
//! ```
//!
//! and a leaf's value is `-η · G/(H+λ)`.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::preprocess::{FeatureMatrix, N_CLASSES};
use crate::seed::{rng_for, Rng};

const MIN_HESSIAN: f64 = 1e-16;
const NO_NODE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtConfig {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub max_depth: usize,
    pub reg_lambda: f64,
    pub min_child_weight: f64,
    pub gamma: f64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_estimators: 300,
            learning_rate: 0.01,
            subsample: 0.8,
            colsample_bytree: 0.8,
            max_depth: 6,
            reg_lambda: 1.0,
            min_child_weight: 1.0,
            gamma: 0.0,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v <= 1.0;
        if !frac(self.subsample) || !frac(self.colsample_bytree) {
            return Err(Error::Config("subsample and colsample_bytree must lie in (0, 1]".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.reg_lambda >= 0.0) || !(self.min_child_weight >= 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::Config("learning_rate must be positive; lambda, min_child_weight, gamma non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    /// Rows with `x[feature] < threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    /// Node 0 is the root; children always follow their parent.
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf(v) => return v,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if row[feature] < threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                TreeNode::Leaf(_) => 0,
                TreeNode::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    /// `[nodes, 5]` rows of `(feature, threshold, left, right, leaf)`; leaves have feature −1.
    pub fn to_tensor(&self) -> Tensor {
        let mut d = Vec::with_capacity(self.nodes.len() * 5);
        for n in &self.nodes {
            match *n {
                TreeNode::Split { feature, threshold, left, right } => {
                    d.extend([feature as f64, threshold, left as f64, right as f64, 0.0])
                }
                TreeNode::Leaf(v) => d.extend([-1.0, 0.0, 0.0, 0.0, v]),
            }
        }
        Tensor::matrix(self.nodes.len(), 5, d).unwrap()
    }

    pub fn from_tensor(t: &Tensor, n_features: usize) -> Result<Self> {
        let bad = |msg: String| Error::Format { offset: 0, msg };
        if t.shape().len() != 2 || t.shape()[1] != 5 || t.shape()[0] == 0 {
            return Err(bad(format!("tree tensor must be [n, 5], got {:?}", t.shape())));
        }
        let n = t.shape()[0];
        let mut nodes = Vec::with_capacity(n);
        for (i, r) in t.data().chunks_exact(5).enumerate() {
            if r[0] < 0.0 {
                if !r[4].is_finite() {
                    return Err(bad(format!("non-finite leaf at node {i}")));
                }
                nodes.push(TreeNode::Leaf(r[4]));
                continue;
            }
            let as_index = |v: f64| (v.fract() == 0.0 && v >= 0.0).then_some(v as usize);
            let (f, l, rr) = (as_index(r[0]), as_index(r[2]), as_index(r[3]));
            match (f, l, rr) {
                (Some(f), Some(l), Some(rr)) if f < n_features && l > i && rr > i && l < n && rr < n && r[1].is_finite() => {
                    nodes.push(TreeNode::Split { feature: f, threshold: r[1], left: l, right: rr })
                }
                _ => return Err(bad(format!("invalid split at node {i}"))),
            }
        }
        Ok(Self { nodes })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtEnsemble {
    pub config: GbtConfig,
    pub n_features: usize,
    pub base_score: f64,
    /// One tree per class for every round.
    pub rounds: Vec<Vec<Tree>>,
}

/// Sorted feature indices, one ordering per column.
struct Presorted {
    order: Vec<Vec<u32>>,
}

impl Presorted {
    fn new(x: &[f64], n: usize, d: usize) -> Self {
        let order = (0..d)
            .map(|f| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| x[a as usize * d + f].total_cmp(&x[b as usize * d + f]));
                idx
            })
            .collect();
        Self { order }
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

/// The gain of splitting `(g, h)` into `(gl, hl)` and the remainder.
pub fn split_gain(gl: f64, hl: f64, g: f64, h: f64, lambda: f64, gamma: f64) -> f64 {
    let (gr, hr) = (g - gl, h - hl);
    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda)) - gamma
}

/// Grows one regression tree on the rows in `rows` using features `cols`.
#[allow(clippy::too_many_arguments)]
fn fit_tree(
    x: &[f64],
    d: usize,
    sorted: &Presorted,
    g: &[f64],
    h: &[f64],
    rows: &[usize],
    cols: &[usize],
    cfg: &GbtConfig,
) -> Tree {
    let n = g.len();
    let mut node_of = vec![NO_NODE; n];
    let (mut g0, mut h0) = (0.0, 0.0);
    for &r in rows {
        node_of[r] = 0;
        g0 += g[r];
        h0 += h[r];
    }
    let mut nodes = vec![TreeNode::Leaf(0.0)];
    let mut stats = vec![(g0, h0)];
    let mut frontier = vec![0usize];
    for _ in 0..cfg.max_depth {
        if frontier.is_empty() {
            break;
        }
        let mut slot = vec![usize::MAX; nodes.len()];
        for (s, &id) in frontier.iter().enumerate() {
            slot[id] = s;
        }
        let k = frontier.len();
        let mut best: Vec<Option<Candidate>> = vec![None; k];
        let mut gl = vec![0.0; k];
        let mut hl = vec![0.0; k];
        let mut seen = vec![false; k];
        let mut last = vec![0.0; k];
        for &f in cols {
            gl.fill(0.0);
            hl.fill(0.0);
            seen.fill(false);
            for &r in &sorted.order[f] {
                let r = r as usize;
                let id = node_of[r];
                if id == NO_NODE || slot[id as usize] == usize::MAX {
                    continue;
                }
                let s = slot[id as usize];
                let v = x[r * d + f];
                if seen[s] && v > last[s] {
                    let (gt, ht) = stats[frontier[s]];
                    let hr = ht - hl[s];
                    if hl[s] >= cfg.min_child_weight && hr >= cfg.min_child_weight {
                        let gain = split_gain(gl[s], hl[s], gt, ht, cfg.reg_lambda, cfg.gamma);
                        if gain > 0.0 && best[s].map_or(true, |b| gain > b.gain) {
                            best[s] = Some(Candidate { gain, feature: f, threshold: last[s] + (v - last[s]) / 2.0 });
                        }
                    }
                }
                gl[s] += g[r];
                hl[s] += h[r];
                last[s] = v;
                seen[s] = true;
            }
        }
        let mut next = Vec::new();
        let mut children = vec![None; nodes.len()];
        for (s, &id) in frontier.iter().enumerate() {
            if let Some(c) = best[s] {
                let left = nodes.len();
                nodes.push(TreeNode::Leaf(0.0));
                nodes.push(TreeNode::Leaf(0.0));
                stats.push((0.0, 0.0));
                stats.push((0.0, 0.0));
                nodes[id] = TreeNode::Split { feature: c.feature, threshold: c.threshold, left, right: left + 1 };
                children[id] = Some((c.feature, c.threshold, left));
                next.push(left);
                next.push(left + 1);
            }
        }
        for &r in rows {
            let id = node_of[r] as usize;
            if let Some(Some((f, thr, left))) = children.get(id) {
                let child = if x[r * d + f] < *thr { *left } else { left + 1 };
                node_of[r] = child as u32;
                stats[child].0 += g[r];
                stats[child].1 += h[r];
            }
        }
        frontier = next;
    }
    for (i, node) in nodes.iter_mut().enumerate() {
        if let TreeNode::Leaf(v) = node {
            *v = cfg.learning_rate * leaf_weight(stats[i].0, stats[i].1, cfg.reg_lambda);
        }
    }
    Tree { nodes }
}

fn softmax3(s: &[f64]) -> [f64; N_CLASSES] {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = [(s[0] - m).exp(), (s[1] - m).exp(), (s[2] - m).exp()];
    let z = e[0] + e[1] + e[2];
    [e[0] / z, e[1] / z, e[2] / z]
}

fn subsample(rng: &mut Rng, n: usize, frac: f64) -> Vec<usize> {
    if frac >= 1.0 {
        return (0..n).collect();
    }
    let k = ((frac * n as f64).round() as usize).clamp(1, n);
    let mut idx = sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

fn check_data(data: &FeatureMatrix) -> Result<()> {
    if data.n_rows() == 0 || data.n_cols() == 0 {
        return Err(Error::Data("no rows to fit".into()));
    }
    if data.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite feature value".into()));
    }
    if let Some(l) = data.y.iter().find(|&&l| l as usize >= N_CLASSES) {
        return Err(Error::Label(format!("label {l} outside 0..{N_CLASSES}")));
    }
    Ok(())
}

impl GbtEnsemble {
    pub fn fit(data: &FeatureMatrix, config: &GbtConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        check_data(data)?;
        let (n, d) = (data.n_rows(), data.n_cols());
        let x = &data.x;
        let sorted = Presorted::new(x, n, d);
        let mut rng = rng_for(seed, "gbt");
        let base_score = 0.0;
        let mut scores = vec![base_score; n * N_CLASSES];
        let mut rounds = Vec::with_capacity(config.n_estimators);
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n];
        for _ in 0..config.n_estimators {
            let probs: Vec<[f64; N_CLASSES]> = scores.chunks_exact(N_CLASSES).map(softmax3).collect();
            let mut trees = Vec::with_capacity(N_CLASSES);
            for k in 0..N_CLASSES {
                for i in 0..n {
                    let p = probs[i][k];
                    g[i] = p - f64::from(u8::from(data.y[i] as usize == k));
                    h[i] = (2.0 * p * (1.0 - p)).max(MIN_HESSIAN);
                }
                let rows = subsample(&mut rng, n, config.subsample);
                let cols = subsample(&mut rng, d, config.colsample_bytree);
                let tree = fit_tree(x, d, &sorted, &g, &h, &rows, &cols, config);
                for i in 0..n {
                    scores[i * N_CLASSES + k] += tree.predict(&x[i * d..(i + 1) * d]);
                }
                trees.push(tree);
            }
            rounds.push(trees);
        }
        Ok(Self { config: config.clone(), n_features: d, base_score, rounds })
    }

    /// Raw class scores using only the first `n_rounds` rounds.
    pub fn staged_scores(&self, row: &[f64], n_rounds: usize) -> [f64; N_CLASSES] {
        let mut s = [self.base_score; N_CLASSES];
        for trees in self.rounds.iter().take(n_rounds) {
            for (k, t) in trees.iter().enumerate() {
                s[k] += t.predict(row);
            }
        }
        s
    }

    pub fn predict_proba(&self, x: &[f64], n: usize) -> Result<Vec<[f64; N_CLASSES]>> {
        let d = self.n_features;
        if x.len() != n * d {
            return Err(Error::Shape(format!("expected {n} rows of {d} features, got {} values", x.len())));
        }
        Ok(x.chunks_exact(d.max(1))
            .take(n)
            .map(|row| softmax3(&self.staged_scores(row, self.rounds.len())))
            .collect())
    }

    /// Mean cross-entropy on `data` after `n_rounds` rounds.
    pub fn staged_loss(&self, data: &FeatureMatrix, n_rounds: usize) -> f64 {
        let n = data.n_rows();
        (0..n)
            .map(|i| -softmax3(&self.staged_scores(data.row(i), n_rounds))[data.y[i] as usize].max(1e-12).ln())
            .sum::<f64>()
            / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> FeatureMatrix {
        // 8 points, 2 features
        let x = vec![1.0, 5.0, 2.0, 3.0, 3.0, 8.0, 4.0, 1.0, 5.0, 7.0, 6.0, 2.0, 7.0, 6.0, 8.0, 4.0];
        FeatureMatrix::new(1, 2, x, vec![0, 0, 1, 0, 1, 2, 2, 2]).unwrap()
    }

    /// Exhaustive best split over every (feature, midpoint) pair.
    fn brute_best(fm: &FeatureMatrix, rows: &[usize], g: &[f64], h: &[f64], cfg: &GbtConfig) -> Option<(usize, f64)> {
        let gt: f64 = rows.iter().map(|&r| g[r]).sum();
        let ht: f64 = rows.iter().map(|&r| h[r]).sum();
        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..fm.n_cols() {
            let mut vals: Vec<f64> = rows.iter().map(|&r| fm.row(r)[f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let thr = w[0] + (w[1] - w[0]) / 2.0;
                let left: Vec<usize> = rows.iter().copied().filter(|&r| fm.row(r)[f] < thr).collect();
                let gl: f64 = left.iter().map(|&r| g[r]).sum();
                let hl: f64 = left.iter().map(|&r| h[r]).sum();
                if hl < cfg.min_child_weight || ht - hl < cfg.min_child_weight {
                    continue;
                }
                let gain = split_gain(gl, hl, gt, ht, cfg.reg_lambda, cfg.gamma);
                if gain > 0.0 && best.map_or(true, |b| gain > b.0) {
                    best = Some((gain, f, thr));
                }
            }
        }
        best.map(|b| (b.1, b.2))
    }

    #[test]
    fn splits_match_exhaustive_search() {
        let fm = toy();
        let cfg = GbtConfig {
            n_estimators: 1,
            subsample: 1.0,
            colsample_bytree: 1.0,
            max_depth: 2,
            min_child_weight: 0.0,
            ..Default::default()
        };
        let model = GbtEnsemble::fit(&fm, &cfg, 0).unwrap();
        let p = 1.0 / 3.0;
        for (k, tree) in model.rounds[0].iter().enumerate() {
            let g: Vec<f64> = fm.y.iter().map(|&y| p - f64::from(u8::from(y as usize == k))).collect();
            let h = vec![2.0 * p * (1.0 - p); 8];
            // walk the tree, checking each split against brute force on its rows
            let mut stack = vec![(0usize, (0..8).collect::<Vec<_>>(), 0usize)];
            while let Some((id, rows, depth)) = stack.pop() {
                let expect = if depth < 2 { brute_best(&fm, &rows, &g, &h, &cfg) } else { None };
                match tree.nodes[id] {
                    TreeNode::Split { feature, threshold, left, right } => {
                        assert_eq!(expect, Some((feature, threshold)), "class {k} node {id}");
                        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| fm.row(i)[feature] < threshold);
                        stack.push((left, l, depth + 1));
                        stack.push((right, r, depth + 1));
                    }
                    TreeNode::Leaf(v) => {
                        assert_eq!(expect, None, "class {k} node {id}");
                        let gs: f64 = rows.iter().map(|&i| g[i]).sum();
                        let hs: f64 = rows.iter().map(|&i| h[i]).sum();
                        assert!((v - 0.01 * -gs / (hs + 1.0)).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn single_class_probability_approaches_one() {
        let fm = FeatureMatrix::new(1, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0], vec![1, 1, 1]).unwrap();
        let cfg = GbtConfig { n_estimators: 400, learning_rate: 0.3, ..Default::default() };
        let m = GbtEnsemble::fit(&fm, &cfg, 1).unwrap();
        let early = softmax3(&m.staged_scores(fm.row(0), 10))[1];
        let late = m.predict_proba(fm.row(0), 1).unwrap()[0][1];
        assert!(late > early && late > 0.99, "{early} {late}");
    }

    #[test]
    fn constant_features_give_stumps() {
        let fm = FeatureMatrix::new(1, 2, vec![1.0; 8], vec![0, 1, 2, 0]).unwrap();
        let m = GbtEnsemble::fit(&fm, &GbtConfig { n_estimators: 3, ..Default::default() }, 0).unwrap();
        assert!(m.rounds.iter().flatten().all(|t| t.nodes.len() == 1));
    }

    #[test]
    fn staged_scores_are_additive() {
        let fm = toy();
        let m = GbtEnsemble::fit(&fm, &GbtConfig { n_estimators: 20, ..Default::default() }, 3).unwrap();
        for i in 0..8 {
            let row = fm.row(i);
            for k in 1..=20 {
                let prev = m.staged_scores(row, k - 1);
                let cur = m.staged_scores(row, k);
                for c in 0..3 {
                    assert_eq!(cur[c], prev[c] + m.rounds[k - 1][c].predict(row));
                }
            }
        }
    }

    #[test]
    fn tree_tensor_round_trip_and_validation() {
        let fm = toy();
        let m = GbtEnsemble::fit(&fm, &GbtConfig { n_estimators: 2, max_depth: 3, ..Default::default() }, 5).unwrap();
        for t in m.rounds.iter().flatten() {
            assert_eq!(&Tree::from_tensor(&t.to_tensor(), 2).unwrap(), t);
        }
        let bad = Tensor::matrix(1, 5, vec![7.0, 0.5, 1.0, 2.0, 0.0]).unwrap();
        assert!(Tree::from_tensor(&bad, 2).is_err());
    }

    #[test]
    fn empty_data_rejected() {
        let fm = FeatureMatrix::new(1, 2, vec![], vec![]).unwrap();
        assert!(matches!(GbtEnsemble::fit(&fm, &GbtConfig::default(), 0), Err(Error::Data(_))));
    }
}
