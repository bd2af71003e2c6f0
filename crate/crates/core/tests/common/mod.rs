//! Oracles and simulators shared by the integration tests. Nothing here calls
//! into the library's numerical kernels; each oracle is written from the
//! model definitions directly.

#![allow(dead_code)]

use bnt::cart::{Node, RegressionTree};
use bnt::data::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one draw per call is plenty here.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log marginal density of `y` under mu | s2 ~ N(mu0, s2 / a), s2 ~ InvGamma(nu, lambda),
/// by trapezoid quadrature over (mu, ln s2). Both integrands are analytic and
/// decay fast, so the trapezoid rule converges geometrically in the step size.
pub fn log_marginal_quadrature(y: &[f64], mu0: f64, a: f64, nu: f64, lambda: f64) -> f64 {
    let n = y.len() as f64;
    let center = (a * mu0 + y.iter().sum::<f64>()) / (a + n);
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let log_integrand = |mu: f64, s: f64| {
        let s2 = s.exp();
        let lik: f64 = y.iter().map(|v| -0.5 * (ln2pi + s + (v - mu).powi(2) / s2)).sum();
        let prior_mu = -0.5 * (ln2pi + s - a.ln() + a * (mu - mu0).powi(2) / s2);
        // InvGamma density in s2, times the Jacobian ds2/ds = s2.
        let prior_s2 = nu * lambda.ln() - ln_gamma(nu) - (nu + 1.0) * s - lambda / s2 + s;
        lik + prior_mu + prior_s2
    };
    let inner = |s: f64| {
        let sd = (s / 2.0).exp() / (a + n).sqrt();
        let h = 0.1 * sd;
        let vals: Vec<f64> = (-120..=120).map(|i| log_integrand(center + i as f64 * h, s)).collect();
        log_sum_exp(&vals) + h.ln()
    };
    // Locate the bulk in s on a coarse grid, then integrate finely around it.
    let coarse: Vec<(f64, f64)> = (-400..=400).map(|i| i as f64 * 0.1).map(|s| (s, inner(s))).collect();
    let peak = coarse.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
    let h = 0.01;
    let vals: Vec<f64> = (-3000..=3000).map(|i| inner(peak + i as f64 * h)).collect();
    log_sum_exp(&vals) + h.ln()
}

/// Preorder structural key of a tree: split rules and leaf markers.
pub fn tree_key(tree: &RegressionTree) -> String {
    fn go(node: &Node, out: &mut String) {
        match node {
            Node::Split { rule, left, right } => {
                out.push_str(&format!("({}<={}", rule.feature, rule.threshold));
                go(left, out);
                go(right, out);
                out.push(')');
            }
            _ => out.push('.'),
        }
    }
    let mut s = String::new();
    go(tree.root(), &mut s);
    s
}

/// Exact posterior over the five trees on x = 1,1,2,2,3,3 (one feature).
/// The prior is written out tree by tree: a node at depth D splits with
/// probability alpha (1 + D)^-beta, picks its rule uniformly among the observed
/// values at the node, and a leaf that still has two distinct x values
/// contributes the no-split probability.
pub fn tiny_space_posterior(y: &[f64; 6], alpha: f64, beta: f64, leaf: (f64, f64, f64, f64)) -> Vec<(String, f64)> {
    let p0 = alpha;
    let p1 = alpha * 2f64.powf(-beta);
    let (mu0, a, nu, lambda) = leaf;
    let ml = |idx: &[usize]| {
        let v: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        log_marginal_quadrature(&v, mu0, a, nu, lambda)
    };
    let all = ml(&[0, 1, 2, 3, 4, 5]);
    let (g1, g2, g3) = (ml(&[0, 1]), ml(&[2, 3]), ml(&[4, 5]));
    let (g12, g23) = (ml(&[0, 1, 2, 3]), ml(&[2, 3, 4, 5]));
    let trees = vec![
        (".".to_string(), (1.0 - p0).ln() + all),
        ("(0<=1.(0<=2..))".to_string(), (p0 / 3.0).ln() + (p1 / 2.0).ln() + g1 + g2 + g3),
        ("(0<=1..)".to_string(), (p0 / 3.0).ln() + (1.0 - p1).ln() + g1 + g23),
        ("(0<=2(0<=1..).)".to_string(), (p0 / 3.0).ln() + (p1 / 2.0).ln() + g1 + g2 + g3),
        ("(0<=2..)".to_string(), (p0 / 3.0).ln() + (1.0 - p1).ln() + g12 + g3),
    ];
    let z = log_sum_exp(&trees.iter().map(|t| t.1).collect::<Vec<_>>());
    trees.into_iter().map(|(k, lp)| (k, (lp - z).exp())).collect()
}

/// Network output from the flat layout: per hidden unit `[bias, weights...]`,
/// then the `k` output weights, then the output bias.
pub fn naive_forward(params: &[f64], d: usize, k: usize, z: &[f64]) -> f64 {
    let mut f = params[k * (d + 1) + k];
    for j in 0..k {
        let mut t = params[j * (d + 1)];
        for h in 0..d {
            t += params[j * (d + 1) + 1 + h] * z[h];
        }
        f += params[k * (d + 1) + j] / (1.0 + (-t).exp());
    }
    f
}

pub fn naive_rss(params: &[f64], d: usize, k: usize, ds: &Dataset) -> f64 {
    ds.rows()
        .zip(ds.response())
        .map(|(z, y)| (naive_forward(params, d, k, z) - y).powi(2))
        .sum()
}

/// Five-point central difference of `f` along every coordinate.
pub fn fd_gradient(theta: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let at = |t: &mut Vec<f64>, delta: f64| {
                t[i] = theta[i] + delta;
                let v = f(t);
                t[i] = theta[i];
                v
            };
            let (p1, m1, p2, m2) = (at(&mut t, h), at(&mut t, -h), at(&mut t, 2.0 * h), at(&mut t, -2.0 * h));
            (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
        })
        .collect()
}

/// Largest componentwise relative error, with `floor` guarding near-zero entries.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub struct BruteMetrics {
    pub mae: f64,
    pub mape: Option<f64>,
    pub rmse: f64,
    pub r2: Option<f64>,
    pub adj_r2: Option<f64>,
}

/// Textbook formulas, one loop per quantity.
pub fn brute_metrics(y: &[f64], yhat: &[f64], d: usize) -> BruteMetrics {
    let n = y.len();
    let mut abs = 0.0;
    let mut sq = 0.0;
    for i in 0..n {
        abs += (y[i] - yhat[i]).abs();
        sq += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    }
    let mut ape = 0.0;
    let mut used = 0;
    for i in 0..n {
        if y[i] != 0.0 {
            ape += ((y[i] - yhat[i]) / y[i]).abs();
            used += 1;
        }
    }
    let mut mean = 0.0;
    for v in y {
        mean += v;
    }
    mean /= n as f64;
    let mut tss = 0.0;
    for v in y {
        tss += (v - mean) * (v - mean);
    }
    let r2 = (tss > 0.0).then(|| 1.0 - sq / tss);
    let adj_r2 = r2.filter(|_| n > d + 1).map(|r| 1.0 - (1.0 - r) * (n as f64 - 1.0) / (n as f64 - d as f64 - 1.0));
    BruteMetrics {
        mae: abs / n as f64,
        mape: (used > 0).then(|| ape / used as f64),
        rmse: (sq / n as f64).sqrt(),
        r2,
        adj_r2,
    }
}

/// Spearman rank correlation for untied samples.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// `y = 1[x_0 > 0.5] + noise` with `d - 1` pure-noise features, all uniform on [0, 1].
pub fn planted_step(n: usize, d: usize, noise_sd: f64, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random()).collect()).collect();
    let y = rows
        .iter()
        .map(|x| if x[0] > 0.5 { 1.0 } else { 0.0 } + noise_sd * normal(&mut r))
        .collect();
    Dataset::from_rows(&rows, y).unwrap()
}

/// Uniform features with a standard normal response unrelated to them.
pub fn pure_noise(n: usize, d: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random()).collect()).collect();
    let y = (0..n).map(|_| normal(&mut r)).collect();
    Dataset::from_rows(&rows, y).unwrap()
}

/// Smooth two-input regression surface plus Gaussian noise.
pub fn smooth_surface(n: usize, noise_sd: f64, seed: u64) -> Dataset {
    smooth_surface_padded(n, 2, noise_sd, seed)
}

/// [`smooth_surface`] with `d - 2` extra inputs that carry no signal.
pub fn smooth_surface_padded(n: usize, d: usize, noise_sd: f64, seed: u64) -> Dataset {
    assert!(d >= 2);
    let mut r = rng(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random()).collect()).collect();
    let y = rows
        .iter()
        .map(|x| (std::f64::consts::PI * x[0]).sin() + x[1] * x[1] + noise_sd * normal(&mut r))
        .collect();
    Dataset::from_rows(&rows, y).unwrap()
}
