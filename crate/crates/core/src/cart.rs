//! Binary regression trees and the greedy least-squares (CART) fitter.
//!
//! [`RegressionTree`] is shared with the Bayesian sampler in [`crate::bcart`]:
//! CART leaves hold the mean of their training responses, sampled trees hold
//! conjugate posterior means and variances.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};

/// Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub feature: usize,
    pub threshold: f64,
}

impl SplitRule {
    #[inline]
    pub fn goes_left(&self, x: &[f64]) -> bool {
        x[self.feature] <= self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub mean: f64,
    pub count: usize,
    pub sigma2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(Leaf),
    Split {
        rule: SplitRule,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn leaf(mean: f64, count: usize) -> Node {
        Node::Leaf(Leaf {
            mean,
            count,
            sigma2: None,
        })
    }

    pub fn split(rule: SplitRule, left: Node, right: Node) -> Node {
        Node::Split {
            rule,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf(_))
    }

    fn visit<'a>(&'a self, depth: usize, f: &mut impl FnMut(&'a Node, usize)) {
        f(self, depth);
        if let Node::Split { left, right, .. } = self {
            left.visit(depth + 1, f);
            right.visit(depth + 1, f);
        }
    }
}

/// A fitted tree together with the input dimension it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    root: Node,
    n_features: usize,
}

impl RegressionTree {
    pub fn new(root: Node, n_features: usize) -> Self {
        RegressionTree { root, n_features }
    }

    pub fn single_leaf(mean: f64, count: usize, n_features: usize) -> Self {
        Self::new(Node::leaf(mean, count), n_features)
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub(crate) fn root_mut(&mut self) -> &mut Node {
        &mut self.root
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Node, usize)) {
        self.root.visit(0, f);
    }

    pub fn n_leaves(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |node, _| n += usize::from(node.is_leaf()));
        n
    }

    pub fn n_internal(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |node, _| n += usize::from(!node.is_leaf()));
        n
    }

    /// Depth of the deepest node (0 for a single leaf).
    pub fn depth(&self) -> usize {
        let mut d = 0;
        self.walk(&mut |_, depth| d = d.max(depth));
        d
    }

    /// Split rules in preorder.
    pub fn rules(&self) -> Vec<SplitRule> {
        let mut out = Vec::new();
        self.walk(&mut |node, _| {
            if let Node::Split { rule, .. } = node {
                out.push(*rule);
            }
        });
        out
    }

    /// Leaves in preorder.
    pub fn leaves(&self) -> Vec<&Leaf> {
        let mut out = Vec::new();
        self.walk(&mut |node, _| {
            if let Node::Leaf(l) = node {
                out.push(l);
            }
        });
        out
    }

    /// Sorted, deduplicated indices of features used by any split.
    pub fn used_features(&self) -> Vec<usize> {
        self.rules()
            .iter()
            .map(|r| r.feature)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Preorder index (among leaves) of the leaf `x` falls into.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        fn go(node: &Node, x: &[f64], offset: usize) -> usize {
            match node {
                Node::Leaf(_) => offset,
                Node::Split { rule, left, right } => {
                    if rule.goes_left(x) {
                        go(left, x, offset)
                    } else {
                        go(right, x, offset + count_leaves(left))
                    }
                }
            }
        }
        go(&self.root, x, 0)
    }

    pub fn leaf_for(&self, x: &[f64]) -> &Leaf {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf(l) => return l,
                Node::Split { rule, left, right } => {
                    node = if rule.goes_left(x) { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.n_features, x.len())?;
        Ok(self.leaf_for(x).mean)
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<f64>> {
        check_dim(self.n_features, ds.d())?;
        Ok(ds.rows().map(|x| self.leaf_for(x).mean).collect())
    }

    /// Indented text dump: one line per node, children indented two spaces.
    pub fn to_text(&self, feature_names: Option<&[String]>) -> String {
        fn go(node: &Node, names: Option<&[String]>, indent: usize, out: &mut String) {
            let pad = "  ".repeat(indent);
            match node {
                Node::Leaf(l) => {
                    let _ = write!(out, "{pad}leaf mean={} count={}", l.mean, l.count);
                    if let Some(s2) = l.sigma2 {
                        let _ = write!(out, " sigma2={s2}");
                    }
                    out.push('\n');
                }
                Node::Split { rule, left, right } => {
                    let name = names
                        .and_then(|n| n.get(rule.feature).cloned())
                        .unwrap_or_else(|| format!("x{}", rule.feature));
                    let _ = writeln!(out, "{pad}{name} <= {}", rule.threshold);
                    go(left, names, indent + 1, out);
                    go(right, names, indent + 1, out);
                }
            }
        }
        let mut out = String::new();
        go(&self.root, feature_names, 0, &mut out);
        out
    }
}

pub(crate) fn count_leaves(node: &Node) -> usize {
    match node {
        Node::Leaf(_) => 1,
        Node::Split { left, right, .. } => count_leaves(left) + count_leaves(right),
    }
}

/// Within-node sum of squared errors around the node mean.
pub fn sse(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let (s, n) = values.clone().into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return 0.0;
    }
    let mean = s / n as f64;
    values.into_iter().map(|v| (v - mean).powi(2)).sum()
}

/// Best split found by [`best_split_with_sse`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub rule: SplitRule,
    /// Total within-child SSE after the split.
    pub sse: f64,
    /// SSE of the unsplit node.
    pub parent_sse: f64,
}

/// The SSE-minimizing split of `rows`, or `None` when nothing strictly reduces SSE.
pub fn best_split(ds: &Dataset, rows: &[usize]) -> Option<SplitRule> {
    best_split_with_sse(ds, rows).map(|c| c.rule)
}

pub fn best_split_with_sse(ds: &Dataset, rows: &[usize]) -> Option<SplitCandidate> {
    if rows.len() < 2 {
        return None;
    }
    let y = ds.response();
    let n = rows.len() as f64;
    let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n;
    let parent_sse: f64 = rows.iter().map(|&i| (y[i] - mean).powi(2)).sum();
    let scale = rows.iter().map(|&i| y[i].abs()).fold(0.0, f64::max);
    // Improvements below this are rounding noise.
    let noise = 1e-12 * parent_sse + n * (64.0 * f64::EPSILON * scale).powi(2);
    if parent_sse <= noise {
        return None;
    }

    let mut best: Option<SplitCandidate> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
    for j in 0..ds.d() {
        pairs.clear();
        pairs.extend(rows.iter().map(|&i| (ds.value(i, j), y[i] - mean)));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total_s: f64 = pairs.iter().map(|p| p.1).sum();
        let total_q: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
        let (mut s_l, mut q_l) = (0.0, 0.0);
        for i in 0..pairs.len() - 1 {
            s_l += pairs[i].1;
            q_l += pairs[i].1 * pairs[i].1;
            if pairs[i].0 == pairs[i + 1].0 {
                continue;
            }
            let n_l = (i + 1) as f64;
            let n_r = n - n_l;
            let s_r = total_s - s_l;
            let q_r = total_q - q_l;
            let child = (q_l - s_l * s_l / n_l).max(0.0) + (q_r - s_r * s_r / n_r).max(0.0);
            if best.is_none_or(|b| child < b.sse) {
                let (lo, hi) = (pairs[i].0, pairs[i + 1].0);
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(SplitCandidate {
                    rule: SplitRule {
                        feature: j,
                        threshold,
                    },
                    sse: child,
                    parent_sse,
                });
            }
        }
    }
    best.filter(|b| parent_sse - b.sse > noise)
}

/// Stopping rules for [`fit_cart_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartParams {
    /// Nodes with fewer rows are not split.
    pub minsplit: usize,
    /// A split must lower SSE by at least `cp` times the root SSE (rpart's
    /// complexity parameter). Zero accepts any strict improvement.
    pub cp: f64,
}

/// Greedy recursive partitioning. A node is split when it holds at least
/// `minsplit` rows and some split strictly lowers its SSE; children may be smaller.
pub fn fit_cart(train: &Dataset, minsplit: usize) -> Result<RegressionTree> {
    fit_cart_with(train, &CartParams { minsplit, cp: 0.0 })
}

pub fn fit_cart_with(train: &Dataset, params: &CartParams) -> Result<RegressionTree> {
    if train.n() == 0 {
        return Err(Error::Degenerate("empty training set".into()));
    }
    if params.minsplit < 2 {
        return Err(Error::invalid(format!("minsplit must be >= 2, got {}", params.minsplit)));
    }
    if !(params.cp >= 0.0 && params.cp < 1.0) {
        return Err(Error::invalid(format!("cp must lie in [0, 1), got {}", params.cp)));
    }
    fn grow(ds: &Dataset, rows: Vec<usize>, minsplit: usize, min_gain: f64) -> Node {
        let y = ds.response();
        let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
        if rows.len() >= minsplit {
            if let Some(c) = best_split_with_sse(ds, &rows) {
                if c.parent_sse - c.sse >= min_gain {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        rows.iter().partition(|&&i| c.rule.goes_left(ds.row(i)));
                    return Node::split(
                        c.rule,
                        grow(ds, l, minsplit, min_gain),
                        grow(ds, r, minsplit, min_gain),
                    );
                }
            }
        }
        Node::leaf(mean, rows.len())
    }
    let root_sse = sse(train.response().iter().copied());
    let root = grow(train, (0..train.n()).collect(), params.minsplit, params.cp * root_sse);
    Ok(RegressionTree::new(root, train.d()))
}

/// `minsplit` as a fraction of the training size, rounded, at least 2.
pub fn minsplit_from_fraction(n_train: usize, fraction: f64) -> usize {
    ((fraction * n_train as f64).round() as usize).max(2)
}
