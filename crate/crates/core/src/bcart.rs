//! Bayesian CART: a depth-penalized tree prior, a conjugate Normal–Inverse-Gamma
//! leaf model integrated out in closed form, and a Metropolis–Hastings search
//! over tree structures.
//!
//! The tree prior is generative. A node at depth `D` splits with probability
//! `alpha * (1 + D)^-beta`; a splitting node picks one of its available features
//! uniformly (a feature is available when it takes at least two distinct values
//! among the node's rows), then one of that feature's observed values uniformly
//! as the threshold. Nodes with no available feature cannot split and contribute
//! nothing to the prior. Draws that would leave a child empty put their mass on
//! trees outside the support, so the prior over valid trees sums to at most one.
//!
//! Leaf responses are `N(mu, sigma2)` with `mu | sigma2 ~ N(mu0, sigma2 / a)`
//! and `sigma2 ~ InvGamma(shape = nu, scale = lambda)`.
//!
//! The sampler proposes one of four moves:
//!
//! * `Grow` splits a uniformly chosen leaf with a rule drawn from the rule prior.
//! * `Prune` collapses a uniformly chosen internal node whose children are leaves.
//! * `Change` replaces the rule of a uniformly chosen internal node with a rule
//!   drawn uniformly from all (available feature, observed value) pairs at that
//!   node, which makes the move symmetric.
//! * `Swap` exchanges the rules of a uniformly chosen parent/child pair of
//!   internal nodes.
//!
//! Proposals that are infeasible or leave the support are rejected outright.

use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::cart::{Node, RegressionTree, SplitRule};
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreePrior {
    pub alpha: f64,
    pub beta: f64,
}

impl TreePrior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be finite and >= 0, got {beta}")));
        }
        Ok(TreePrior { alpha, beta })
    }
}

impl Default for TreePrior {
    fn default() -> Self {
        TreePrior {
            alpha: 0.95,
            beta: 2.0,
        }
    }
}

/// `log(alpha * (1 + depth)^-beta)`.
pub fn log_p_split(depth: usize, prior: &TreePrior) -> f64 {
    prior.alpha.ln() - prior.beta * (1.0 + depth as f64).ln()
}

/// Normal–Inverse-Gamma hyperparameters of the leaf model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafPrior {
    pub mu0: f64,
    pub a: f64,
    pub nu: f64,
    pub lambda: f64,
}

impl LeafPrior {
    pub fn new(mu0: f64, a: f64, nu: f64, lambda: f64) -> Result<Self> {
        if !mu0.is_finite() {
            return Err(Error::invalid("mu0 must be finite"));
        }
        for (name, v) in [("a", a), ("nu", nu), ("lambda", lambda)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(LeafPrior { mu0, a, nu, lambda })
    }

    /// Data-located default: `mu0` at the sample mean, `a = 1`, `nu = 3`, and
    /// `lambda` placing the mode of the variance prior at the sample variance.
    pub fn from_response(y: &[f64]) -> Self {
        let n = y.len().max(1) as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let nu = 3.0;
        // IG(nu, lambda) has mode lambda / (nu + 1).
        let floor = 1e-12 * (1.0 + mean * mean);
        LeafPrior {
            mu0: mean,
            a: 1.0,
            nu,
            lambda: var.max(floor) * (nu + 1.0),
        }
    }

    /// Log marginal density of `n` responses with mean `mean` and centered sum of
    /// squares `sse`, with `mu` and `sigma2` integrated out.
    pub fn log_marginal_stats(&self, n: usize, mean: f64, sse: f64) -> f64 {
        let nf = n as f64;
        let shape_n = self.nu + nf / 2.0;
        let scale_n = self.lambda
            + 0.5 * sse
            + self.a * nf * (mean - self.mu0).powi(2) / (2.0 * (self.a + nf));
        -0.5 * nf * (2.0 * std::f64::consts::PI).ln() + 0.5 * (self.a / (self.a + nf)).ln()
            + self.nu * self.lambda.ln()
            - shape_n * scale_n.ln()
            + ln_gamma(shape_n)
            - ln_gamma(self.nu)
    }

    pub fn log_marginal(&self, y: &[f64]) -> f64 {
        let (n, mean, sse) = moments(y.iter().copied());
        self.log_marginal_stats(n, mean, sse)
    }

    /// Posterior means of `(mu, sigma2)` given `n` responses.
    pub fn posterior_means(&self, n: usize, mean: f64, sse: f64) -> (f64, f64) {
        let nf = n as f64;
        let mu = (self.a * self.mu0 + nf * mean) / (self.a + nf);
        let shape_n = self.nu + nf / 2.0;
        let scale_n = self.lambda
            + 0.5 * sse
            + self.a * nf * (mean - self.mu0).powi(2) / (2.0 * (self.a + nf));
        let sigma2 = if shape_n > 1.0 {
            scale_n / (shape_n - 1.0)
        } else {
            scale_n / (shape_n + 1.0)
        };
        (mu, sigma2)
    }
}

fn moments(values: impl Iterator<Item = f64> + Clone) -> (usize, f64, f64) {
    let (s, n) = values.clone().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return (0, 0.0, 0.0);
    }
    let mean = s / n as f64;
    let sse = values.map(|v| (v - mean).powi(2)).sum();
    (n, mean, sse)
}

#[derive(Debug, Clone)]
struct NodeInfo {
    depth: usize,
    rows: Vec<usize>,
    rule: Option<SplitRule>,
    children: Option<(usize, usize)>,
    parent: Option<usize>,
}

/// A training set prepared for tree-space computations: per-feature sorted
/// distinct values and the rank of every cell within them.
#[derive(Debug, Clone)]
pub struct TreeSpace<'a> {
    ds: &'a Dataset,
    uniques: Vec<Vec<f64>>,
    /// Row-major `n * d`.
    ranks: Vec<u32>,
}

impl<'a> TreeSpace<'a> {
    pub fn new(ds: &'a Dataset) -> Self {
        let d = ds.d();
        let uniques: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                let mut v = ds.column(j);
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            })
            .collect();
        let mut ranks = vec![0u32; ds.n() * d];
        for (i, row) in ds.rows().enumerate() {
            for j in 0..d {
                ranks[i * d + j] = uniques[j]
                    .binary_search_by(|u| u.total_cmp(&row[j]))
                    .expect("value present") as u32;
            }
        }
        TreeSpace { ds, uniques, ranks }
    }

    pub fn dataset(&self) -> &Dataset {
        self.ds
    }

    #[inline]
    fn rank(&self, i: usize, j: usize) -> u32 {
        self.ranks[i * self.ds.d() + j]
    }

    fn available(&self, rows: &[usize]) -> Vec<usize> {
        (0..self.ds.d())
            .filter(|&j| self.is_available(rows, j))
            .collect()
    }

    fn is_available(&self, rows: &[usize], j: usize) -> bool {
        match rows.split_first() {
            Some((&first, rest)) => {
                let r0 = self.rank(first, j);
                rest.iter().any(|&i| self.rank(i, j) != r0)
            }
            None => false,
        }
    }

    fn n_available(&self, rows: &[usize]) -> usize {
        (0..self.ds.d()).filter(|&j| self.is_available(rows, j)).count()
    }

    fn distinct_ranks(&self, rows: &[usize], j: usize) -> Vec<u32> {
        let mut r: Vec<u32> = rows.iter().map(|&i| self.rank(i, j)).collect();
        r.sort_unstable();
        r.dedup();
        r
    }

    fn layout(&self, tree: &RegressionTree) -> Vec<NodeInfo> {
        fn go(
            space: &TreeSpace<'_>,
            node: &Node,
            rows: Vec<usize>,
            depth: usize,
            parent: Option<usize>,
            out: &mut Vec<NodeInfo>,
        ) -> usize {
            let idx = out.len();
            out.push(NodeInfo {
                depth,
                rows: Vec::new(),
                rule: None,
                children: None,
                parent,
            });
            if let Node::Split { rule, left, right } = node {
                let (l, r): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&i| rule.goes_left(space.ds.row(i)));
                let li = go(space, left, l, depth + 1, Some(idx), out);
                let ri = go(space, right, r, depth + 1, Some(idx), out);
                out[idx].rule = Some(*rule);
                out[idx].children = Some((li, ri));
            }
            out[idx].rows = rows;
            idx
        }
        let mut out = Vec::new();
        go(self, tree.root(), (0..self.ds.n()).collect(), 0, None, &mut out);
        out
    }

    /// Checks a split rule against its node: the feature must be available and the
    /// threshold one of its observed values there. Returns the distinct count `v`.
    fn rule_support(&self, rows: &[usize], rule: &SplitRule) -> Result<usize> {
        if rule.feature >= self.ds.d() || !self.is_available(rows, rule.feature) {
            return Err(Error::InvalidTree(format!(
                "feature {} is not available at this node",
                rule.feature
            )));
        }
        let rank = self.uniques[rule.feature]
            .binary_search_by(|u| u.total_cmp(&rule.threshold))
            .map_err(|_| {
                Error::InvalidTree(format!("threshold {} is not an observed value", rule.threshold))
            })? as u32;
        let distinct = self.distinct_ranks(rows, rule.feature);
        if distinct.binary_search(&rank).is_err() {
            return Err(Error::InvalidTree(format!(
                "threshold {} is not observed in the node",
                rule.threshold
            )));
        }
        Ok(distinct.len())
    }

    fn score_layout(
        &self,
        layout: &[NodeInfo],
        tree_prior: &TreePrior,
        leaf_prior: &LeafPrior,
    ) -> Result<(f64, f64)> {
        let y = self.ds.response();
        let (mut lp, mut ll) = (0.0, 0.0);
        for node in layout {
            if node.rows.is_empty() {
                return Err(Error::InvalidTree("empty node".into()));
            }
            match &node.rule {
                Some(rule) => {
                    let v = self.rule_support(&node.rows, rule)?;
                    let avail = self.n_available(&node.rows);
                    lp += log_p_split(node.depth, tree_prior)
                        - (avail as f64).ln()
                        - (v as f64).ln();
                }
                None => {
                    if self.n_available(&node.rows) > 0 {
                        lp += (-log_p_split(node.depth, tree_prior).exp()).ln_1p();
                    }
                    let (n, mean, sse) = moments(node.rows.iter().map(|&i| y[i]));
                    ll += leaf_prior.log_marginal_stats(n, mean, sse);
                }
            }
        }
        Ok((lp, ll))
    }

    pub fn log_tree_prior(&self, tree: &RegressionTree, prior: &TreePrior) -> Result<f64> {
        check_dim(self.ds.d(), tree.n_features())?;
        let layout = self.layout(tree);
        let mut lp = 0.0;
        for node in &layout {
            if node.rows.is_empty() {
                return Err(Error::InvalidTree("empty node".into()));
            }
            match &node.rule {
                Some(rule) => {
                    let v = self.rule_support(&node.rows, rule)?;
                    let avail = self.n_available(&node.rows);
                    lp += log_p_split(node.depth, prior) - (avail as f64).ln() - (v as f64).ln();
                }
                None if self.n_available(&node.rows) > 0 => {
                    lp += (-log_p_split(node.depth, prior).exp()).ln_1p();
                }
                None => {}
            }
        }
        Ok(lp)
    }

    pub fn log_marginal_likelihood(&self, tree: &RegressionTree, leaf_prior: &LeafPrior) -> Result<f64> {
        check_dim(self.ds.d(), tree.n_features())?;
        let y = self.ds.response();
        let mut ll = 0.0;
        for node in self.layout(tree).iter().filter(|n| n.rule.is_none()) {
            if node.rows.is_empty() {
                return Err(Error::InvalidTree("empty leaf".into()));
            }
            ll += leaf_prior.log_marginal(&node.rows.iter().map(|&i| y[i]).collect::<Vec<_>>());
        }
        Ok(ll)
    }

    /// Log marginal likelihood plus log tree prior.
    pub fn log_posterior(
        &self,
        tree: &RegressionTree,
        tree_prior: &TreePrior,
        leaf_prior: &LeafPrior,
    ) -> Result<f64> {
        check_dim(self.ds.d(), tree.n_features())?;
        let (lp, ll) = self.score_layout(&self.layout(tree), tree_prior, leaf_prior)?;
        Ok(lp + ll)
    }

    /// Copies the tree with every leaf set to its conjugate posterior means.
    pub fn with_posterior_leaves(&self, tree: &RegressionTree, leaf_prior: &LeafPrior) -> RegressionTree {
        let y = self.ds.response();
        let layout = self.layout(tree);
        let mut out = tree.clone();
        let mut leaf_rows = layout.iter().filter(|n| n.rule.is_none()).map(|n| &n.rows);
        fn fill<'r>(
            node: &mut Node,
            rows: &mut impl Iterator<Item = &'r Vec<usize>>,
            y: &[f64],
            prior: &LeafPrior,
        ) {
            match node {
                Node::Leaf(leaf) => {
                    let r = rows.next().expect("leaf count matches layout");
                    let (n, mean, sse) = moments(r.iter().map(|&i| y[i]));
                    let (mu, s2) = prior.posterior_means(n, mean, sse);
                    leaf.mean = mu;
                    leaf.count = n;
                    leaf.sigma2 = Some(s2);
                }
                Node::Split { left, right, .. } => {
                    fill(left, rows, y, prior);
                    fill(right, rows, y, prior);
                }
            }
        }
        fill(out.root_mut(), &mut leaf_rows, y, leaf_prior);
        out
    }

    /// Draws one candidate tree from the move kernel.
    pub fn propose<R: Rng + ?Sized>(
        &self,
        tree: &RegressionTree,
        moves: &MoveProbabilities,
        rng: &mut R,
    ) -> Proposal {
        let kind = moves.draw(rng);
        let layout = self.layout(tree);
        let infeasible = |kind| Proposal {
            tree: tree.clone(),
            log_ratio: 0.0,
            kind,
            feasible: false,
        };
        match kind {
            MoveKind::Grow => {
                let leaves: Vec<usize> = (0..layout.len()).filter(|&i| layout[i].rule.is_none()).collect();
                let pick = leaves[rng.random_range(0..leaves.len())];
                let rows = &layout[pick].rows;
                let avail = self.available(rows);
                if avail.is_empty() {
                    return infeasible(kind);
                }
                let feature = avail[rng.random_range(0..avail.len())];
                let distinct = self.distinct_ranks(rows, feature);
                let r = distinct[rng.random_range(0..distinct.len())];
                if r == *distinct.last().unwrap() {
                    // right child would be empty
                    return infeasible(kind);
                }
                let rule = SplitRule {
                    feature,
                    threshold: self.uniques[feature][r as usize],
                };
                let mut cand = tree.clone();
                *node_at_mut(cand.root_mut(), pick) = Node::split(rule, Node::leaf(0.0, 0), Node::leaf(0.0, 0));
                let forward = moves.grow.ln()
                    - (leaves.len() as f64).ln()
                    - (avail.len() as f64).ln()
                    - (distinct.len() as f64).ln();
                let reverse = moves.prune.ln() - (count_prunable(cand.root()) as f64).ln();
                Proposal {
                    tree: cand,
                    log_ratio: reverse - forward,
                    kind,
                    feasible: true,
                }
            }
            MoveKind::Prune => {
                let nogs: Vec<usize> = (0..layout.len())
                    .filter(|&i| {
                        layout[i].children.is_some_and(|(l, r)| {
                            layout[l].rule.is_none() && layout[r].rule.is_none()
                        })
                    })
                    .collect();
                if nogs.is_empty() {
                    return infeasible(kind);
                }
                let pick = nogs[rng.random_range(0..nogs.len())];
                let node = &layout[pick];
                let rule = node.rule.expect("internal node");
                let n_avail = self.n_available(&node.rows);
                let v = self.distinct_ranks(&node.rows, rule.feature).len();
                let mut cand = tree.clone();
                *node_at_mut(cand.root_mut(), pick) = Node::leaf(0.0, 0);
                let leaves_after = cand.n_leaves();
                let forward = moves.prune.ln() - (nogs.len() as f64).ln();
                let reverse = moves.grow.ln()
                    - (leaves_after as f64).ln()
                    - (n_avail as f64).ln()
                    - (v as f64).ln();
                Proposal {
                    tree: cand,
                    log_ratio: reverse - forward,
                    kind,
                    feasible: true,
                }
            }
            MoveKind::Change => {
                let internal: Vec<usize> = (0..layout.len()).filter(|&i| layout[i].rule.is_some()).collect();
                if internal.is_empty() {
                    return infeasible(kind);
                }
                let pick = internal[rng.random_range(0..internal.len())];
                let rows = &layout[pick].rows;
                let pairs: Vec<(usize, u32)> = self
                    .available(rows)
                    .into_iter()
                    .flat_map(|j| self.distinct_ranks(rows, j).into_iter().map(move |r| (j, r)))
                    .collect();
                let &(feature, r) = pairs.choose(rng).expect("internal node has an available feature");
                let mut cand = tree.clone();
                if let Node::Split { rule, .. } = node_at_mut(cand.root_mut(), pick) {
                    *rule = SplitRule {
                        feature,
                        threshold: self.uniques[feature][r as usize],
                    };
                }
                Proposal {
                    tree: cand,
                    log_ratio: 0.0,
                    kind,
                    feasible: true,
                }
            }
            MoveKind::Swap => {
                let pairs: Vec<(usize, usize)> = (0..layout.len())
                    .filter(|&i| layout[i].rule.is_some())
                    .filter_map(|i| layout[i].parent.map(|p| (p, i)))
                    .collect();
                if pairs.is_empty() {
                    return infeasible(kind);
                }
                let (p, c) = pairs[rng.random_range(0..pairs.len())];
                let (rp, rc) = (layout[p].rule.unwrap(), layout[c].rule.unwrap());
                let mut cand = tree.clone();
                set_rule(cand.root_mut(), p, rc);
                set_rule(cand.root_mut(), c, rp);
                Proposal {
                    tree: cand,
                    log_ratio: 0.0,
                    kind,
                    feasible: true,
                }
            }
        }
    }
}

fn set_rule(root: &mut Node, idx: usize, new: SplitRule) {
    if let Node::Split { rule, .. } = node_at_mut(root, idx) {
        *rule = new;
    }
}

/// Node at preorder position `idx`.
fn node_at_mut(root: &mut Node, idx: usize) -> &mut Node {
    fn size(node: &Node) -> usize {
        match node {
            Node::Leaf(_) => 1,
            Node::Split { left, right, .. } => 1 + size(left) + size(right),
        }
    }
    let mut node = root;
    let mut idx = idx;
    loop {
        if idx == 0 {
            return node;
        }
        match node {
            Node::Leaf(_) => panic!("preorder index out of range"),
            Node::Split { left, right, .. } => {
                let ls = size(left);
                if idx <= ls {
                    idx -= 1;
                    node = left;
                } else {
                    idx -= 1 + ls;
                    node = right;
                }
            }
        }
    }
}

/// Internal nodes whose two children are both leaves.
fn count_prunable(node: &Node) -> usize {
    match node {
        Node::Leaf(_) => 0,
        Node::Split { left, right, .. } => {
            if left.is_leaf() && right.is_leaf() {
                1
            } else {
                count_prunable(left) + count_prunable(right)
            }
        }
    }
}

pub fn log_tree_prior(tree: &RegressionTree, prior: &TreePrior, train: &Dataset) -> Result<f64> {
    TreeSpace::new(train).log_tree_prior(tree, prior)
}

pub fn log_marginal_likelihood(tree: &RegressionTree, train: &Dataset, leaf_prior: &LeafPrior) -> Result<f64> {
    TreeSpace::new(train).log_marginal_likelihood(tree, leaf_prior)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
    Swap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveProbabilities {
    pub grow: f64,
    pub prune: f64,
    pub change: f64,
    pub swap: f64,
}

impl Default for MoveProbabilities {
    fn default() -> Self {
        MoveProbabilities {
            grow: 0.4,
            prune: 0.4,
            change: 0.1,
            swap: 0.1,
        }
    }
}

impl MoveProbabilities {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> MoveKind {
        let total = self.grow + self.prune + self.change + self.swap;
        let u = rng.random::<f64>() * total;
        if u < self.grow {
            MoveKind::Grow
        } else if u < self.grow + self.prune {
            MoveKind::Prune
        } else if u < self.grow + self.prune + self.change {
            MoveKind::Change
        } else {
            MoveKind::Swap
        }
    }
}

#[derive(Debug, Clone)]
pub struct Proposal {
    pub tree: RegressionTree,
    /// `log q(candidate -> current) - log q(current -> candidate)`.
    pub log_ratio: f64,
    pub kind: MoveKind,
    /// False when the drawn move cannot be applied; the step is then a rejection.
    pub feasible: bool,
}

pub fn propose<R: Rng + ?Sized>(state: &ChainState, train: &Dataset, rng: &mut R) -> Proposal {
    TreeSpace::new(train).propose(&state.tree, &MoveProbabilities::default(), rng)
}

#[derive(Debug, Clone)]
pub struct ChainState {
    pub tree: RegressionTree,
    pub log_posterior: f64,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            iterations: 7000,
            burn_in: 2000,
            thin: 5,
        }
    }
}

impl ChainConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::invalid(format!(
                "iterations ({}) must exceed burn_in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thin must be >= 1"));
        }
        Ok(())
    }
}

/// One line of the optional chain trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub log_posterior: f64,
    pub n_leaves: usize,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub kind: MoveKind,
    pub accepted: bool,
}

/// A single Metropolis–Hastings chain over tree structures, started at the root-only tree.
pub struct Sampler<'a> {
    space: TreeSpace<'a>,
    tree_prior: TreePrior,
    leaf_prior: LeafPrior,
    moves: MoveProbabilities,
    state: ChainState,
    rng: ChaCha8Rng,
}

impl<'a> Sampler<'a> {
    pub fn new(train: &'a Dataset, tree_prior: TreePrior, leaf_prior: LeafPrior, seed: u64) -> Result<Self> {
        if train.n() == 0 {
            return Err(Error::Degenerate("empty training set".into()));
        }
        let space = TreeSpace::new(train);
        let tree = RegressionTree::single_leaf(0.0, 0, train.d());
        let log_posterior = space.log_posterior(&tree, &tree_prior, &leaf_prior)?;
        Ok(Sampler {
            space,
            tree_prior,
            leaf_prior,
            moves: MoveProbabilities::default(),
            state: ChainState {
                tree,
                log_posterior,
                iteration: 0,
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn with_moves(mut self, moves: MoveProbabilities) -> Self {
        self.moves = moves;
        self
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn space(&self) -> &TreeSpace<'a> {
        &self.space
    }

    pub fn step(&mut self) -> StepOutcome {
        let prop = self.space.propose(&self.state.tree, &self.moves, &mut self.rng);
        let u: f64 = self.rng.random();
        self.state.iteration += 1;
        let mut accepted = false;
        if prop.feasible {
            if let Ok(lp) = self
                .space
                .log_posterior(&prop.tree, &self.tree_prior, &self.leaf_prior)
            {
                let log_accept = lp - self.state.log_posterior + prop.log_ratio;
                if u.ln() < log_accept {
                    self.state.tree = prop.tree;
                    self.state.log_posterior = lp;
                    accepted = true;
                }
            }
        }
        StepOutcome {
            kind: prop.kind,
            accepted,
        }
    }
}

/// Output of [`run_chain`]. Every tree carries conjugate posterior-mean leaves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainOutput {
    pub samples: Vec<RegressionTree>,
    pub best: RegressionTree,
    pub best_log_posterior: f64,
    pub acceptance_rate: f64,
    pub trace: Vec<TraceRow>,
}

impl ChainOutput {
    /// Prediction of the highest-posterior tree.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.best.predict(x)
    }

    /// Average prediction over the retained samples.
    pub fn predict_averaged(&self, x: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for t in &self.samples {
            s += t.predict(x)?;
        }
        Ok(s / self.samples.len() as f64)
    }

    pub fn write_trace(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "iteration,log_posterior,n_leaves,accepted")?;
        for r in &self.trace {
            writeln!(f, "{},{},{},{}", r.iteration, r.log_posterior, r.n_leaves, r.accepted)?;
        }
        Ok(())
    }
}

/// Runs `iterations` MH steps, keeping every `thin`-th state after `burn_in`.
pub fn run_chain(
    train: &Dataset,
    tree_prior: &TreePrior,
    leaf_prior: &LeafPrior,
    cfg: &ChainConfig,
    seed: u64,
) -> Result<ChainOutput> {
    run_chain_traced(train, tree_prior, leaf_prior, cfg, seed, false)
}

pub fn run_chain_traced(
    train: &Dataset,
    tree_prior: &TreePrior,
    leaf_prior: &LeafPrior,
    cfg: &ChainConfig,
    seed: u64,
    trace: bool,
) -> Result<ChainOutput> {
    cfg.validate()?;
    let mut sampler = Sampler::new(train, *tree_prior, *leaf_prior, seed)?;
    let mut best = sampler.state().tree.clone();
    let mut best_lp = sampler.state().log_posterior;
    let mut raw_samples = Vec::new();
    let mut rows = Vec::new();
    let mut accepted = 0usize;
    for it in 0..cfg.iterations {
        let out = sampler.step();
        accepted += usize::from(out.accepted);
        let st = sampler.state();
        if st.log_posterior > best_lp {
            best_lp = st.log_posterior;
            best = st.tree.clone();
        }
        if it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
            raw_samples.push(st.tree.clone());
        }
        if trace {
            rows.push(TraceRow {
                iteration: it,
                log_posterior: st.log_posterior,
                n_leaves: st.tree.n_leaves(),
                accepted: out.accepted,
            });
        }
    }
    let space = sampler.space();
    Ok(ChainOutput {
        samples: raw_samples
            .iter()
            .map(|t| space.with_posterior_leaves(t, leaf_prior))
            .collect(),
        best: space.with_posterior_leaves(&best, leaf_prior),
        best_log_posterior: best_lp,
        acceptance_rate: accepted as f64 / cfg.iterations as f64,
        trace: rows,
    })
}

/// Per-feature split shares, averaged over samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionProportions {
    pub proportions: Vec<f64>,
}

pub fn inclusion_proportions(samples: &[RegressionTree], d: usize) -> Result<InclusionProportions> {
    if samples.is_empty() {
        return Err(Error::invalid("inclusion proportions need at least one sample"));
    }
    let mut acc = vec![0.0; d];
    for tree in samples {
        check_dim(d, tree.n_features())?;
        let rules = tree.rules();
        if rules.is_empty() {
            continue;
        }
        let w = 1.0 / rules.len() as f64;
        for r in rules {
            acc[r.feature] += w;
        }
    }
    let m = samples.len() as f64;
    Ok(InclusionProportions {
        proportions: acc.into_iter().map(|v| v / m).collect(),
    })
}

/// Priors and chain settings for one Bayesian CART fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcartConfig {
    pub tree_prior: TreePrior,
    /// `None` derives the leaf prior from the training response.
    pub leaf_prior: Option<LeafPrior>,
    pub chain: ChainConfig,
}

impl Default for BcartConfig {
    fn default() -> Self {
        BcartConfig {
            tree_prior: TreePrior::default(),
            leaf_prior: None,
            chain: ChainConfig::default(),
        }
    }
}

impl BcartConfig {
    pub fn leaf_prior_for(&self, train: &Dataset) -> LeafPrior {
        self.leaf_prior
            .unwrap_or_else(|| LeafPrior::from_response(train.response()))
    }
}

pub fn fit_bcart(train: &Dataset, cfg: &BcartConfig, seed: u64) -> Result<ChainOutput> {
    let leaf = cfg.leaf_prior_for(train);
    run_chain(train, &cfg.tree_prior, &leaf, &cfg.chain, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub permutations: usize,
    pub level: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            permutations: 50,
            level: 0.05,
        }
    }
}

/// Result of local thresholding, with the real-data chain kept for prediction.
#[derive(Debug, Clone)]
pub struct LocalThresholdSelection {
    pub selected: Vec<usize>,
    pub proportions: InclusionProportions,
    pub thresholds: Vec<f64>,
    /// `null[r][j]`: proportion of feature `j` in permutation replicate `r`.
    pub null: Vec<Vec<f64>>,
    pub chain: ChainOutput,
}

/// Type-7 (linear interpolation) sample quantile.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Selects feature `j` when its inclusion proportion on the real data exceeds the
/// `1 - level` quantile of its own proportions under response permutation.
pub fn local_threshold_select(
    train: &Dataset,
    bcart: &BcartConfig,
    selection: &SelectionConfig,
    seed: u64,
) -> Result<LocalThresholdSelection> {
    if selection.permutations == 0 {
        return Err(Error::invalid("permutations must be >= 1"));
    }
    if !(selection.level > 0.0 && selection.level < 1.0) {
        return Err(Error::invalid(format!("level must lie in (0, 1), got {}", selection.level)));
    }
    let d = train.d();
    let leaf = bcart.leaf_prior_for(train);
    let chain = run_chain(train, &bcart.tree_prior, &leaf, &bcart.chain, seed)?;
    let proportions = inclusion_proportions(&chain.samples, d)?;

    let null: Vec<Vec<f64>> = (0..selection.permutations)
        .into_par_iter()
        .map(|r| {
            let rep_seed = seed.wrapping_add(1 + r as u64);
            let mut y = train.response().to_vec();
            y.shuffle(&mut ChaCha8Rng::seed_from_u64(rep_seed));
            let permuted = train.with_response(y)?;
            let out = run_chain(
                &permuted,
                &bcart.tree_prior,
                &leaf,
                &bcart.chain,
                rep_seed ^ 0x9E37_79B9_7F4A_7C15,
            )?;
            Ok(inclusion_proportions(&out.samples, d)?.proportions)
        })
        .collect::<Result<_>>()?;

    let thresholds: Vec<f64> = (0..d)
        .map(|j| {
            let col: Vec<f64> = null.iter().map(|p| p[j]).collect();
            quantile(&col, 1.0 - selection.level)
        })
        .collect();
    let selected = (0..d)
        .filter(|&j| proportions.proportions[j] > thresholds[j])
        .collect();
    Ok(LocalThresholdSelection {
        selected,
        proportions,
        thresholds,
        null,
        chain,
    })
}
