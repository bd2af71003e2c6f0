//! Single-hidden-layer regression network with logistic hidden units and a
//! linear output,
//!
//! ```text
//! f(z) = b0 + sum_j b_j * sigmoid(a_j0 + sum_h a_jh * z_h)
//! ```
//!
//! trained by full-batch gradient descent on the mean squared error.
//!
//! Parameters have a fixed flat layout used by training and serialization: for
//! each hidden unit `j`, `[a_j0, a_j1, ..., a_jd]`; then `b_1..b_k`; then `b0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    input_dim: usize,
    hidden_k: usize,
    params: Vec<f64>,
}

/// Logistic function, evaluated without overflow for any finite input.
#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub fn n_params(input_dim: usize, hidden_k: usize) -> usize {
    hidden_k * (input_dim + 2) + 1
}

impl Mlp {
    pub fn zeros(input_dim: usize, hidden_k: usize) -> Result<Self> {
        Self::from_flat(input_dim, hidden_k, vec![0.0; n_params(input_dim, hidden_k)])
    }

    pub fn from_flat(input_dim: usize, hidden_k: usize, params: Vec<f64>) -> Result<Self> {
        if input_dim == 0 || hidden_k == 0 {
            return Err(Error::invalid("input_dim and hidden_k must be >= 1"));
        }
        check_dim(n_params(input_dim, hidden_k), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("network parameters must be finite"));
        }
        Ok(Mlp {
            input_dim,
            hidden_k,
            params,
        })
    }

    /// Builds a network from its named parts; `hidden_weights[j]` is `a_j1..a_jd`.
    pub fn from_parts(
        hidden_weights: &[Vec<f64>],
        hidden_bias: &[f64],
        output_weights: &[f64],
        output_bias: f64,
    ) -> Result<Self> {
        let k = hidden_bias.len();
        let d = hidden_weights.first().map_or(0, Vec::len);
        check_dim(k, hidden_weights.len())?;
        check_dim(k, output_weights.len())?;
        let mut params = Vec::with_capacity(n_params(d, k));
        for (row, &b) in hidden_weights.iter().zip(hidden_bias) {
            check_dim(d, row.len())?;
            params.push(b);
            params.extend_from_slice(row);
        }
        params.extend_from_slice(output_weights);
        params.push(output_bias);
        Self::from_flat(d, k, params)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_k(&self) -> usize {
        self.hidden_k
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn hidden_bias(&self, j: usize) -> f64 {
        self.params[j * (self.input_dim + 1)]
    }

    pub fn hidden_weight(&self, j: usize, h: usize) -> f64 {
        self.params[j * (self.input_dim + 1) + 1 + h]
    }

    pub fn output_weight(&self, j: usize) -> f64 {
        self.params[self.hidden_k * (self.input_dim + 1) + j]
    }

    pub fn output_bias(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    /// Indices of the bias parameters (`a_j0` and `b0`) in the flat layout.
    pub fn bias_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (0..self.hidden_k).map(|j| j * (self.input_dim + 1)).collect();
        v.push(self.params.len() - 1);
        v
    }

    pub fn forward(&self, z: &[f64]) -> Result<f64> {
        check_dim(self.input_dim, z.len())?;
        Ok(forward_flat(&self.params, self.input_dim, self.hidden_k, z))
    }

    /// `d k` on the first line, then one parameter per line in flat order.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.input_dim, self.hidden_k);
        for p in &self.params {
            s.push_str(&format!("{p}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::invalid("empty network text"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::invalid(format!("bad header {header:?}"))))
            .collect::<Result<_>>()?;
        if dims.len() != 2 {
            return Err(Error::invalid(format!("bad header {header:?}")));
        }
        let params = lines
            .map(|l| l.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad parameter {l:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_flat(dims[0], dims[1], params)
    }
}

pub fn forward(net: &Mlp, z: &[f64]) -> Result<f64> {
    net.forward(z)
}

#[inline]
fn forward_flat(params: &[f64], d: usize, k: usize, z: &[f64]) -> f64 {
    let out = &params[k * (d + 1)..];
    let mut f = out[k];
    for j in 0..k {
        let w = &params[j * (d + 1)..(j + 1) * (d + 1)];
        let t = w[0] + w[1..].iter().zip(z).map(|(a, x)| a * x).sum::<f64>();
        f += out[j] * sigmoid(t);
    }
    f
}

/// Mean squared error over row-major `x` and its gradient, written into `grad`.
pub(crate) fn risk_and_grad(
    params: &[f64],
    d: usize,
    k: usize,
    x: &[f64],
    y: &[f64],
    grad: &mut [f64],
    hidden: &mut Vec<f64>,
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    hidden.resize(k, 0.0);
    let n = y.len() as f64;
    let out_off = k * (d + 1);
    let mut risk = 0.0;
    for (z, &yi) in x.chunks_exact(d).zip(y) {
        let mut f = params[out_off + k];
        for j in 0..k {
            let w = &params[j * (d + 1)..(j + 1) * (d + 1)];
            let t = w[0] + w[1..].iter().zip(z).map(|(a, x)| a * x).sum::<f64>();
            hidden[j] = sigmoid(t);
            f += params[out_off + j] * hidden[j];
        }
        let r = f - yi;
        risk += r * r;
        let dr = 2.0 * r / n;
        grad[out_off + k] += dr;
        for j in 0..k {
            let h = hidden[j];
            grad[out_off + j] += dr * h;
            let dt = dr * params[out_off + j] * h * (1.0 - h);
            let g = &mut grad[j * (d + 1)..(j + 1) * (d + 1)];
            g[0] += dt;
            for (gh, zh) in g[1..].iter_mut().zip(z) {
                *gh += dt * zh;
            }
        }
    }
    risk / n
}

/// Mean squared error of the network on a dataset.
pub fn risk(net: &Mlp, data: &Dataset) -> Result<f64> {
    check_dim(net.input_dim, data.d())?;
    let mut s = 0.0;
    for (z, &y) in data.rows().zip(data.response()) {
        let r = forward_flat(&net.params, net.input_dim, net.hidden_k, z) - y;
        s += r * r;
    }
    Ok(s / data.n() as f64)
}

/// Exact gradient of the mean squared error, returned in the shape of the network.
pub fn gradient(net: &Mlp, batch: &Dataset) -> Result<Mlp> {
    check_dim(net.input_dim, batch.d())?;
    if batch.n() == 0 {
        return Err(Error::Degenerate("empty batch".into()));
    }
    let mut g = vec![0.0; net.params.len()];
    risk_and_grad(
        &net.params,
        net.input_dim,
        net.hidden_k,
        batch.features_flat(),
        batch.response(),
        &mut g,
        &mut Vec::new(),
    );
    Ok(Mlp {
        input_dim: net.input_dim,
        hidden_k: net.hidden_k,
        params: g,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5000,
            learning_rate: 0.1,
            seed: 0,
            init_scale: 0.5,
        }
    }
}

impl TrainConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::invalid(format!("init_scale must be > 0, got {}", self.init_scale)));
        }
        Ok(())
    }
}

/// Seeded uniform initialization on `[-init_scale, init_scale]`.
pub fn init_params(d: usize, k: usize, cfg: &TrainConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..n_params(d, k))
        .map(|_| rng.random_range(-cfg.init_scale..=cfg.init_scale))
        .collect()
}

/// Rows and responses in a canonical order, so full-batch sums do not depend on
/// the order rows arrive in.
pub(crate) fn canonical_rows(data: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let mut idx: Vec<usize> = (0..data.n()).collect();
    idx.sort_by(|&a, &b| {
        data.row(a)
            .iter()
            .zip(data.row(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(data.response()[a].total_cmp(&data.response()[b]))
    });
    let x = idx.iter().flat_map(|&i| data.row(i).iter().copied()).collect();
    let y = idx.iter().map(|&i| data.response()[i]).collect();
    (x, y)
}

/// Full-batch gradient descent from a seeded initialization. Returns the
/// parameters with the lowest training risk seen.
pub fn train_ann(train: &Dataset, k: usize, cfg: &TrainConfig) -> Result<Mlp> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if train.n() == 0 {
        return Err(Error::Degenerate("empty training set".into()));
    }
    let d = train.d();
    let (x, y) = canonical_rows(train);
    let mut theta = init_params(d, k, cfg);
    let mut grad = vec![0.0; theta.len()];
    let mut hidden = Vec::new();
    let mut best = (f64::INFINITY, theta.clone());
    for epoch in 0..=cfg.epochs {
        let r = risk_and_grad(&theta, d, k, &x, &y, &mut grad, &mut hidden);
        if !r.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        if r < best.0 {
            best = (r, theta.clone());
        }
        if epoch == cfg.epochs {
            break;
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= cfg.learning_rate * g;
        }
    }
    Mlp::from_flat(d, k, best.1)
}

/// `max(1, round(sqrt(n / (d_m * ln n))))`, rounding halves up.
pub fn optimal_hidden_neurons(n: usize, d_m: usize) -> usize {
    if n < 3 || d_m == 0 {
        return 1;
    }
    let n = n as f64;
    let k = (n / (d_m as f64 * n.ln())).sqrt();
    ((k + 0.5).floor() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_unit(b0: f64, b1: f64, a0: f64, a1: f64) -> Mlp {
        Mlp::from_parts(&[vec![a1]], &[a0], &[b1], b0).unwrap()
    }

    #[test]
    fn forward_examples() {
        let net = Mlp::from_parts(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[0.0, 0.0], &[0.0, 0.0], 2.0).unwrap();
        assert_eq!(net.forward(&[3.0, -7.0]).unwrap(), 2.0);
        assert_eq!(one_unit(0.0, 1.0, 0.0, 0.0).forward(&[4.0]).unwrap(), 0.5);
        let v = one_unit(0.0, 1.0, -1.0, 2.0).forward(&[1.0]).unwrap();
        assert!((v - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        for t in [-1e3, -745.0, 0.0, 745.0, 1e3] {
            let s = sigmoid(t);
            assert!(s.is_finite() && (0.0..=1.0).contains(&s));
        }
        let net = one_unit(0.0, 1.0, 0.0, 1.0);
        assert!(net.forward(&[1e3]).unwrap().is_finite());
        assert!(net.forward(&[-1e3]).unwrap().is_finite());
    }

    #[test]
    fn named_accessors_follow_flat_layout() {
        let net = Mlp::from_parts(&[vec![1.0, 2.0], vec![3.0, 4.0]], &[5.0, 6.0], &[7.0, 8.0], 9.0).unwrap();
        assert_eq!(net.params(), &[5.0, 1.0, 2.0, 6.0, 3.0, 4.0, 7.0, 8.0, 9.0]);
        assert_eq!(net.hidden_weight(1, 0), 3.0);
        assert_eq!(net.hidden_bias(1), 6.0);
        assert_eq!(net.output_weight(0), 7.0);
        assert_eq!(net.output_bias(), 9.0);
        assert_eq!(net.bias_indices(), vec![0, 3, 8]);
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let net = one_unit(0.3, -1.2, 0.4, 0.9);
        let rows = [vec![0.1], vec![0.5], vec![0.9]];
        let y: Vec<f64> = rows.iter().map(|r| net.forward(r).unwrap()).collect();
        let ds = Dataset::from_rows(&rows, y).unwrap();
        assert!(gradient(&net, &ds).unwrap().params().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn output_bias_gradient_is_twice_mean_residual() {
        let net = one_unit(0.3, -1.2, 0.4, 0.9);
        let rows = [vec![0.1], vec![0.5], vec![0.9], vec![0.2]];
        let y = vec![1.0, -0.5, 0.25, 2.0];
        let ds = Dataset::from_rows(&rows, y.clone()).unwrap();
        let mean_r = rows.iter().zip(&y).map(|(r, y)| net.forward(r).unwrap() - y).sum::<f64>() / 4.0;
        let g = gradient(&net, &ds).unwrap();
        assert!((g.output_bias() - 2.0 * mean_r).abs() < 1e-14);
    }

    #[test]
    fn text_round_trip() {
        let net = Mlp::from_flat(2, 1, vec![0.1, -1.0 / 3.0, 2e-300, 7.5, f64::MIN_POSITIVE]).unwrap();
        assert_eq!(Mlp::from_text(&net.to_text()).unwrap(), net);
    }

    #[test]
    fn training_examples() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 19.0]).collect();
        let ds = Dataset::from_rows(&rows, vec![0.7; 20]).unwrap();
        let cfg = TrainConfig { epochs: 500, ..Default::default() };
        let net = train_ann(&ds, 2, &cfg).unwrap();
        assert!(risk(&net, &ds).unwrap() <= 1e-4);

        let rows: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 / 199.0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| sigmoid(2.0 * r[0] - 1.0)).collect();
        let ds = Dataset::from_rows(&rows, y).unwrap();
        let net = train_ann(&ds, 1, &TrainConfig::default()).unwrap();
        assert!(risk(&net, &ds).unwrap().sqrt() < 0.05);

        assert!(train_ann(&ds, 1, &TrainConfig { epochs: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn divergent_learning_rate_reports_epoch() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let ds = Dataset::from_rows(&rows, (0..10).map(|i| 1e3 * i as f64).collect()).unwrap();
        let cfg = TrainConfig { learning_rate: 1e6, epochs: 1000, ..Default::default() };
        assert!(matches!(train_ann(&ds, 3, &cfg), Err(Error::NonFiniteLoss { .. })));
    }

    #[test]
    fn hidden_neuron_examples() {
        assert_eq!(optimal_hidden_neurons(3, 1000), 1);
        // sqrt(354 / (5 ln 354)) = 3.4731...
        assert_eq!(optimal_hidden_neurons(354, 5), 3);
        for n in [10, 50, 354, 1000, 9568] {
            for d in 1..20 {
                assert!(optimal_hidden_neurons(n, 2 * d) <= optimal_hidden_neurons(n, d));
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn net_strategy() -> impl Strategy<Value = Mlp> {
            (1usize..4, 1usize..5).prop_flat_map(|(d, k)| {
                prop::collection::vec(-3.0f64..3.0, n_params(d, k))
                    .prop_map(move |p| Mlp::from_flat(d, k, p).unwrap())
            })
        }

        proptest! {
            #[test]
            fn output_is_bounded(net in net_strategy(), seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let bound = net.output_bias().abs()
                    + (0..net.hidden_k()).map(|j| net.output_weight(j).abs()).sum::<f64>();
                for _ in 0..20 {
                    let z: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-100.0..100.0)).collect();
                    prop_assert!(net.forward(&z).unwrap().abs() <= bound + 1e-12);
                }
            }

            #[test]
            fn row_order_does_not_matter(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let rows: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.random(), rng.random()]).collect();
                let y: Vec<f64> = rows.iter().map(|r| r[0] - r[1] * r[1]).collect();
                let ds = Dataset::from_rows(&rows, y).unwrap();
                let rev: Vec<usize> = (0..12).rev().collect();
                let cfg = TrainConfig { epochs: 50, seed, ..Default::default() };
                let a = train_ann(&ds, 2, &cfg).unwrap();
                let b = train_ann(&ds.subset(&rev), 2, &cfg).unwrap();
                prop_assert_eq!(a, b);
            }

            #[test]
            fn returned_risk_never_exceeds_initial(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
                let rows: Vec<Vec<f64>> = (0..15).map(|_| vec![rng.random()]).collect();
                let y: Vec<f64> = rows.iter().map(|r| (6.0 * r[0]).sin()).collect();
                let ds = Dataset::from_rows(&rows, y).unwrap();
                let cfg = TrainConfig { epochs: 30, seed, learning_rate: 2.0, ..Default::default() };
                let init = Mlp::from_flat(1, 3, init_params(1, 3, &cfg)).unwrap();
                let net = train_ann(&ds, 3, &cfg).unwrap();
                prop_assert!(risk(&net, &ds).unwrap() <= risk(&init, &ds).unwrap());
            }
        }
    }
}
