//! Two-stage tree-then-network regressors.
//!
//! Stage one fits a tree on the scaled training data and yields a set of
//! features `S` plus the tree's in-sample predictions. Stage two trains a
//! network on the selected columns with the tree output appended as one extra
//! input, itself min-max scaled by its training range.
//!
//! * BNT-1: greedy CART with `S` = features used in splits, then a Bayesian
//!   network whose hidden-unit count is chosen under a Geometric prior.
//! * BNT-2: Bayesian CART with `S` from local thresholding of inclusion
//!   proportions, then a plain network with `k = optimal_hidden_neurons(n, |S| + 1)`.
//!
//! When stage one selects nothing, every feature is passed through.

use serde::{Deserialize, Serialize};

use crate::bayes_nn::{choose_k, default_k_max, train_k_grid, BnnHyper, BnnModel, GeometricPrior};
use crate::bcart::{local_threshold_select, BcartConfig, SelectionConfig};
use crate::cart::{fit_cart_with, CartParams, RegressionTree};
use crate::data::{ColumnRange, Dataset, ScalingSpec};
use crate::error::{check_dim, Error, Result};
use crate::neural_net::{optimal_hidden_neurons, train_ann, Mlp, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Bnt1,
    Bnt2,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Bnt1 => "BNT-1",
            Variant::Bnt2 => "BNT-2",
        })
    }
}

/// Layout of the stage-two input: selected columns in ascending order, then the
/// scaled tree output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedFeatureSpec {
    pub selected: Vec<usize>,
    pub tree_output_scaling: ColumnRange,
    /// True when stage one selected nothing and all features were passed through.
    pub fallback: bool,
}

impl AugmentedFeatureSpec {
    pub fn d_m(&self) -> usize {
        self.selected.len() + 1
    }

    pub fn assemble(&self, x_scaled: &[f64], tree_output: f64) -> Vec<f64> {
        let mut v: Vec<f64> = self.selected.iter().map(|&j| x_scaled[j]).collect();
        v.push(self.tree_output_scaling.scale(tree_output));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Stage2 {
    Ann(Mlp),
    Bnn(BnnModel),
}

impl Stage2 {
    pub fn net(&self) -> &Mlp {
        match self {
            Stage2::Ann(m) => m,
            Stage2::Bnn(b) => &b.net,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BntModel {
    pub variant: Variant,
    pub stage1: RegressionTree,
    pub feature_spec: AugmentedFeatureSpec,
    pub stage2: Stage2,
    pub scaler: ScalingSpec,
    pub feature_names: Vec<String>,
}

impl BntModel {
    fn validate(&self) -> Result<()> {
        check_dim(self.feature_spec.d_m(), self.stage2.net().input_dim())?;
        check_dim(self.scaler.features.len(), self.stage1.n_features())?;
        if let Some(&j) = self.feature_spec.selected.iter().find(|&&j| j >= self.scaler.features.len()) {
            return Err(Error::invalid(format!("selected feature {j} out of range")));
        }
        Ok(())
    }

    /// Stage-two input for an original-unit feature vector.
    pub fn augmented(&self, x: &[f64]) -> Result<Vec<f64>> {
        let xs = self.scaler.scale_row(x)?;
        let t = self.stage1.predict(&xs)?;
        Ok(self.feature_spec.assemble(&xs, t))
    }

    /// Prediction in original response units.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let z = self.augmented(x)?;
        Ok(self.scaler.response.unscale(self.stage2.net().forward(&z)?))
    }

    pub fn hidden_k(&self) -> usize {
        self.stage2.net().hidden_k()
    }

    pub fn selected_names(&self) -> Vec<&str> {
        self.feature_spec
            .selected
            .iter()
            .map(|&j| self.feature_names[j].as_str())
            .collect()
    }

    pub fn summary(&self) -> String {
        let objective = match &self.stage2 {
            Stage2::Ann(_) => "-".to_string(),
            Stage2::Bnn(b) => format!("{}", b.objective_at_map),
        };
        format!(
            "variant: {}\nselected ({}): {}\nfallback: {}\nd_m: {}\nk: {}\nstage2_objective: {}\n",
            self.variant,
            self.feature_spec.selected.len(),
            self.selected_names().join(", "),
            self.feature_spec.fallback,
            self.feature_spec.d_m(),
            self.hidden_k(),
            objective
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: BntModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }
}

pub fn predict_bnt(model: &BntModel, x: &[f64]) -> Result<f64> {
    model.predict(x)
}

/// Builds the stage-two training set from a fitted stage-one tree.
fn augment(train: &Dataset, tree: &RegressionTree, selected: Vec<usize>) -> Result<(AugmentedFeatureSpec, Dataset)> {
    let fallback = selected.is_empty();
    let selected = if fallback { (0..train.d()).collect() } else { selected };
    let outputs = tree.predict_dataset(train)?;
    let spec = AugmentedFeatureSpec {
        selected,
        tree_output_scaling: ColumnRange::of(outputs.iter().copied()),
        fallback,
    };
    let rows: Vec<Vec<f64>> = train
        .rows()
        .zip(&outputs)
        .map(|(x, &t)| spec.assemble(x, t))
        .collect();
    let mut names: Vec<String> = spec.selected.iter().map(|&j| train.feature_names()[j].clone()).collect();
    names.push("tree_output".into());
    let ds = Dataset::new(names, train.response_name(), &rows, train.response().to_vec())?;
    Ok((spec, ds))
}

fn check_scaled(train: &Dataset, scaler: &ScalingSpec) -> Result<()> {
    check_dim(scaler.features.len(), train.d())?;
    if train.n() < 2 {
        return Err(Error::Degenerate("need at least 2 training rows".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bnt1Config {
    pub minsplit: usize,
    /// CART complexity threshold; see [`CartParams::cp`].
    pub cp: f64,
    pub geo_p: f64,
    pub hyper: BnnHyper,
    pub train: TrainConfig,
    /// Largest hidden-unit count tried; `None` uses [`default_k_max`].
    pub k_max: Option<usize>,
}

/// Fits BNT-1 on scaled training data.
pub fn fit_bnt1(train: &Dataset, scaler: &ScalingSpec, cfg: &Bnt1Config) -> Result<BntModel> {
    let mut models = fit_bnt1_grid(train, scaler, cfg, &[cfg.geo_p])?;
    Ok(models.remove(0))
}

/// Fits BNT-1 for several Geometric `p` values; the tree and the per-`k`
/// networks are shared, only the choice of `k` differs.
pub fn fit_bnt1_grid(train: &Dataset, scaler: &ScalingSpec, cfg: &Bnt1Config, ps: &[f64]) -> Result<Vec<BntModel>> {
    check_scaled(train, scaler)?;
    let tree = fit_cart_with(train, &CartParams { minsplit: cfg.minsplit, cp: cfg.cp })?;
    let (spec, aug) = augment(train, &tree, tree.used_features())?;
    let k_max = cfg.k_max.unwrap_or_else(|| default_k_max(aug.n(), spec.d_m()));
    let grid = train_k_grid(&aug, k_max, &cfg.hyper, &cfg.train)?;
    ps.iter()
        .map(|&p| {
            let prior = GeometricPrior::new(p, k_max)?;
            let bnn = choose_k(&grid, &prior)?.clone();
            Ok(BntModel {
                variant: Variant::Bnt1,
                stage1: tree.clone(),
                feature_spec: spec.clone(),
                stage2: Stage2::Bnn(bnn),
                scaler: scaler.clone(),
                feature_names: train.feature_names().to_vec(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bnt2Config {
    pub bcart: BcartConfig,
    pub selection: SelectionConfig,
    pub train: TrainConfig,
}

/// Fits BNT-2 on scaled training data. `seed` drives the tree chains; the
/// network uses `cfg.train.seed`.
pub fn fit_bnt2(train: &Dataset, scaler: &ScalingSpec, cfg: &Bnt2Config, seed: u64) -> Result<BntModel> {
    check_scaled(train, scaler)?;
    let sel = local_threshold_select(train, &cfg.bcart, &cfg.selection, seed)?;
    let tree = sel.chain.best;
    let (spec, aug) = augment(train, &tree, sel.selected)?;
    let k = optimal_hidden_neurons(aug.n(), spec.d_m());
    let net = train_ann(&aug, k, &cfg.train)?;
    Ok(BntModel {
        variant: Variant::Bnt2,
        stage1: tree,
        feature_spec: spec,
        stage2: Stage2::Ann(net),
        scaler: scaler.clone(),
        feature_names: train.feature_names().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bcart::ChainConfig;
    use crate::cart::Node;
    use crate::data::{apply_scaler, fit_scaler, shuffle_split};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn step_data(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| rng.random::<f64>()).collect()).collect();
        let y = rows
            .iter()
            .map(|r| if r[1] > 0.5 { 3.0 } else { 1.0 } + 0.1 * rng.random::<f64>())
            .collect();
        Dataset::from_rows(&rows, y).unwrap()
    }

    fn quick_bnt1() -> Bnt1Config {
        Bnt1Config {
            minsplit: 10,
            cp: 0.0,
            geo_p: 0.6,
            hyper: BnnHyper::default(),
            train: TrainConfig { epochs: 300, ..Default::default() },
            k_max: Some(3),
        }
    }

    #[test]
    fn cart_stage_finds_the_step_feature() {
        let mut hits = 0;
        for seed in 0..10 {
            let noisy = step_data(100, seed);
            let y = noisy.rows().map(|r| if r[1] > 0.5 { 3.0 } else { 1.0 }).collect();
            let ds = noisy.with_response(y).unwrap();
            let sc = fit_scaler(&ds);
            let m = fit_bnt1(&apply_scaler(&ds, &sc).unwrap(), &sc, &Bnt1Config { minsplit: 10, ..quick_bnt1() }).unwrap();
            if m.feature_spec.selected == vec![1] {
                hits += 1;
                assert_eq!(m.feature_spec.d_m(), 2);
            }
        }
        assert!(hits >= 9, "S = {{1}} in {hits}/10 seeds");
    }

    #[test]
    fn constant_response_falls_back_to_all_features() {
        let ds = step_data(40, 1).with_response(vec![2.0; 40]).unwrap();
        let sc = fit_scaler(&ds);
        let m = fit_bnt1(&apply_scaler(&ds, &sc).unwrap(), &sc, &quick_bnt1()).unwrap();
        assert!(m.feature_spec.fallback);
        assert_eq!(m.feature_spec.selected, vec![0, 1, 2, 3, 4]);
        assert_eq!(m.feature_spec.d_m(), 6);
    }

    #[test]
    fn zero_network_predicts_the_mean() {
        let ds = step_data(30, 2);
        let sc = fit_scaler(&ds);
        let mean = ds.response().iter().sum::<f64>() / 30.0;
        let scaled_mean = sc.response.scale(mean);
        let mut params = vec![0.0; crate::neural_net::n_params(2, 1)];
        *params.last_mut().unwrap() = scaled_mean;
        let m = BntModel {
            variant: Variant::Bnt2,
            stage1: RegressionTree::single_leaf(0.5, 30, 5),
            feature_spec: AugmentedFeatureSpec {
                selected: vec![3],
                tree_output_scaling: ColumnRange { min: 0.0, max: 1.0 },
                fallback: false,
            },
            stage2: Stage2::Ann(Mlp::from_flat(2, 1, params).unwrap()),
            scaler: sc,
            feature_names: ds.feature_names().to_vec(),
        };
        for x in ds.rows() {
            assert!((m.predict(x).unwrap() - mean).abs() < 1e-12);
        }
        assert!(m.predict(&[0.0; 4]).is_err());
    }

    #[test]
    fn tree_output_column_is_unit_scaled_on_training_rows() {
        let ds = step_data(60, 3);
        let sc = fit_scaler(&ds);
        let m = fit_bnt1(&apply_scaler(&ds, &sc).unwrap(), &sc, &quick_bnt1()).unwrap();
        for x in ds.rows() {
            let z = m.augmented(x).unwrap();
            let t = *z.last().unwrap();
            assert!((-1e-12..=1.0 + 1e-12).contains(&t));
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let ds = step_data(60, 4);
        let sc = fit_scaler(&ds);
        let m = fit_bnt1(&apply_scaler(&ds, &sc).unwrap(), &sc, &quick_bnt1()).unwrap();
        let back = BntModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        for x in ds.rows() {
            assert_eq!(back.predict(x).unwrap().to_bits(), m.predict(x).unwrap().to_bits());
        }
    }

    #[test]
    fn unselected_features_do_not_reach_the_network() {
        let ds = step_data(80, 5);
        let sc = fit_scaler(&ds);
        let m = fit_bnt1(&apply_scaler(&ds, &sc).unwrap(), &sc, &quick_bnt1()).unwrap();
        let used = m.stage1.used_features();
        let free: Vec<usize> = (0..5).filter(|j| !m.feature_spec.selected.contains(j) && !used.contains(j)).collect();
        assert!(!free.is_empty());
        let x = ds.row(0).to_vec();
        let base = m.predict(&x).unwrap();
        for j in free {
            let mut x2 = x.clone();
            x2[j] += 0.37;
            assert_eq!(m.predict(&x2).unwrap(), base);
        }
    }

    #[test]
    fn grid_shares_stage_one() {
        let ds = step_data(60, 6);
        let sc = fit_scaler(&ds);
        let models = fit_bnt1_grid(&apply_scaler(&ds, &sc).unwrap(), &sc, &quick_bnt1(), &[0.3, 0.6, 0.9]).unwrap();
        assert_eq!(models.len(), 3);
        assert!(models.iter().all(|m| m.stage1 == models[0].stage1));
        let ks: Vec<usize> = models.iter().map(BntModel::hidden_k).collect();
        assert!(ks[0] >= ks[2]);
    }

    #[test]
    fn bnt1_beats_the_mean_on_a_step() {
        let ds = step_data(200, 7);
        let split = shuffle_split(&ds, 0.7, 7).unwrap();
        let sc = fit_scaler(&split.train);
        let cfg = Bnt1Config { minsplit: 14, train: TrainConfig { epochs: 2000, ..Default::default() }, ..quick_bnt1() };
        let m = fit_bnt1(&apply_scaler(&split.train, &sc).unwrap(), &sc, &cfg).unwrap();
        let mean = split.train.response().iter().sum::<f64>() / split.train.n() as f64;
        let (mut e_m, mut e_b) = (0.0, 0.0);
        for (x, y) in split.test.rows().zip(split.test.response()) {
            e_m += (mean - y).powi(2);
            e_b += (m.predict(x).unwrap() - y).powi(2);
        }
        assert!(e_b < e_m);
    }

    #[test]
    fn bnt2_uses_formula_hidden_count() {
        let ds = step_data(80, 8);
        let sc = fit_scaler(&ds);
        let cfg = Bnt2Config {
            bcart: BcartConfig {
                chain: ChainConfig { iterations: 400, burn_in: 100, thin: 2 },
                ..Default::default()
            },
            selection: SelectionConfig { permutations: 5, level: 0.05 },
            train: TrainConfig { epochs: 200, ..Default::default() },
        };
        let m = fit_bnt2(&apply_scaler(&ds, &sc).unwrap(), &sc, &cfg, 8).unwrap();
        assert_eq!(m.hidden_k(), optimal_hidden_neurons(80, m.feature_spec.d_m()));
        assert!(m.summary().starts_with("variant: BNT-2\n"));
    }

    #[test]
    fn step_stage_one_tree_drives_prediction() {
        let tree = RegressionTree::new(
            Node::split(crate::cart::SplitRule { feature: 0, threshold: 0.5 }, Node::leaf(0.0, 1), Node::leaf(1.0, 1)),
            1,
        );
        let spec = AugmentedFeatureSpec {
            selected: vec![0],
            tree_output_scaling: ColumnRange { min: 0.0, max: 1.0 },
            fallback: false,
        };
        assert_eq!(spec.assemble(&[0.9], tree.predict(&[0.9]).unwrap()), vec![0.9, 1.0]);
    }
}
