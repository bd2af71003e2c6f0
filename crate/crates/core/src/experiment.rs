//! Repeated train/test benchmark runs and their reports.
//!
//! A run loads one dataset, cleans it, and for each repeat `r` draws a split with
//! seed `base_seed + r`, min-max scales on the training part, fits every
//! requested model, and scores test predictions in original units. Each model
//! gets its own seed hashed from `(base_seed, r, model name)`, so adding or
//! removing a model leaves the others' numbers unchanged.
//!
//! Configuration is plain `key = value` lines; `#` starts a comment.
//!
//! | key | default |
//! |-----|---------|
//! | `dataset` | required, CSV path (relative paths resolve against the config file) |
//! | `response` | required, response column name |
//! | `name` | file stem of `dataset` |
//! | `models` | `CART, BCART, ANN, BNN, BNT1@0.3, BNT1@0.6, BNT1@0.9, BNT2` |
//! | `repeats` | 10 |
//! | `train_fraction` | 0.7 |
//! | `minsplit_fraction` | 0.1 |
//! | `cart.cp` | 0 |
//! | `seed` | 0 |
//! | `chain.iterations`, `chain.burn_in`, `chain.thin` | 7000, 2000, 5 |
//! | `tree.alpha`, `tree.beta` | 0.95, 2 |
//! | `selection.permutations`, `selection.level` | 50, 0.05 |
//! | `epochs`, `learning_rate`, `init_scale` | 5000, 0.1, 0.5 |
//! | `bnn.sigma_p`, `bnn.sigma_l`, `bnn.evidence_updates` | 1, 1, 3 |
//! | `baseline.hidden` | 2 |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes_nn::{train_bnn_fixed_k, BnnHyper};
use crate::bcart::{fit_bcart, BcartConfig, ChainConfig, SelectionConfig, TreePrior};
use crate::cart::{fit_cart_with, minsplit_from_fraction, CartParams};
use crate::data::{apply_scaler, clean, fit_scaler, load_csv, shuffle_split, Dataset, ScalingSpec};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::neural_net::{train_ann, Mlp, TrainConfig};
use crate::pipeline::{fit_bnt1_grid, fit_bnt2, Bnt1Config, Bnt2Config};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelKind {
    Cart,
    Bcart,
    Ann,
    Bnn,
    /// BNT-1 with the Geometric prior parameter `p`.
    Bnt1(f64),
    Bnt2,
}

impl ModelKind {
    pub fn name(&self) -> String {
        match self {
            ModelKind::Cart => "CART".into(),
            ModelKind::Bcart => "BCART".into(),
            ModelKind::Ann => "ANN".into(),
            ModelKind::Bnn => "BNN".into(),
            ModelKind::Bnt1(p) => format!("BNT1@{p}"),
            ModelKind::Bnt2 => "BNT2".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        Ok(match t.to_ascii_uppercase().as_str() {
            "CART" => ModelKind::Cart,
            "BCART" => ModelKind::Bcart,
            "ANN" => ModelKind::Ann,
            "BNN" => ModelKind::Bnn,
            "BNT2" | "BNT-2" => ModelKind::Bnt2,
            u => {
                let p = u
                    .strip_prefix("BNT1@")
                    .or_else(|| u.strip_prefix("BNT-1@"))
                    .and_then(|p| p.parse::<f64>().ok())
                    .filter(|p| *p > 0.0 && *p < 1.0)
                    .ok_or_else(|| Error::Config(format!("unknown model {t:?}")))?;
                ModelKind::Bnt1(p)
            }
        })
    }

    pub fn all() -> Vec<ModelKind> {
        vec![
            ModelKind::Cart,
            ModelKind::Bcart,
            ModelKind::Ann,
            ModelKind::Bnn,
            ModelKind::Bnt1(0.3),
            ModelKind::Bnt1(0.6),
            ModelKind::Bnt1(0.9),
            ModelKind::Bnt2,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: PathBuf,
    pub response: String,
    pub models: Vec<ModelKind>,
    pub repeats: usize,
    pub train_fraction: f64,
    pub minsplit_fraction: f64,
    /// CART complexity threshold for CART and BNT-1.
    pub cart_cp: f64,
    pub base_seed: u64,
    pub tree_prior: TreePrior,
    pub chain: ChainConfig,
    pub selection: SelectionConfig,
    pub train: TrainConfig,
    pub hyper: BnnHyper,
    pub baseline_hidden: usize,
}

impl ExperimentConfig {
    pub fn new(dataset: impl Into<PathBuf>, response: impl Into<String>) -> Self {
        let dataset = dataset.into();
        let name = dataset
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        ExperimentConfig {
            name,
            dataset,
            response: response.into(),
            models: ModelKind::all(),
            repeats: 10,
            train_fraction: 0.7,
            minsplit_fraction: 0.1,
            cart_cp: 0.0,
            base_seed: 0,
            tree_prior: TreePrior::default(),
            chain: ChainConfig::default(),
            selection: SelectionConfig::default(),
            train: TrainConfig::default(),
            hyper: BnnHyper::default(),
            baseline_hidden: 2,
        }
    }

    /// Parses `key = value` text. Relative dataset paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {:?}", i + 1, k.trim())));
            }
        }
        let take = |kv: &mut BTreeMap<String, String>, k: &str| kv.remove(k);
        let dataset = take(&mut kv, "dataset").ok_or_else(|| Error::Config("missing key \"dataset\"".into()))?;
        let response = take(&mut kv, "response").ok_or_else(|| Error::Config("missing key \"response\"".into()))?;
        let path = PathBuf::from(&dataset);
        let path = if path.is_relative() { base_dir.join(path) } else { path };
        let mut cfg = ExperimentConfig::new(path, response);
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value for {k}: {v:?}")))
        }
        for (k, v) in kv {
            let v = v.as_str();
            match k.as_str() {
                "name" => cfg.name = v.to_string(),
                "models" => {
                    cfg.models = v
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(ModelKind::parse)
                        .collect::<Result<_>>()?
                }
                "repeats" => cfg.repeats = num(&k, v)?,
                "train_fraction" => cfg.train_fraction = num(&k, v)?,
                "minsplit_fraction" => cfg.minsplit_fraction = num(&k, v)?,
                "cart.cp" => cfg.cart_cp = num(&k, v)?,
                "seed" => cfg.base_seed = num(&k, v)?,
                "chain.iterations" => cfg.chain.iterations = num(&k, v)?,
                "chain.burn_in" => cfg.chain.burn_in = num(&k, v)?,
                "chain.thin" => cfg.chain.thin = num(&k, v)?,
                "tree.alpha" => cfg.tree_prior.alpha = num(&k, v)?,
                "tree.beta" => cfg.tree_prior.beta = num(&k, v)?,
                "selection.permutations" => cfg.selection.permutations = num(&k, v)?,
                "selection.level" => cfg.selection.level = num(&k, v)?,
                "epochs" => cfg.train.epochs = num(&k, v)?,
                "learning_rate" => cfg.train.learning_rate = num(&k, v)?,
                "init_scale" => cfg.train.init_scale = num(&k, v)?,
                "bnn.sigma_p" => cfg.hyper.sigma_p = num(&k, v)?,
                "bnn.sigma_l" => cfg.hyper.sigma_l = num(&k, v)?,
                "bnn.evidence_updates" => cfg.hyper.evidence_updates = num(&k, v)?,
                "baseline.hidden" => cfg.baseline_hidden = num(&k, v)?,
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.repeats == 0 {
            return bad("repeats must be >= 1".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        if !(self.minsplit_fraction > 0.0 && self.minsplit_fraction < 1.0) {
            return bad(format!("minsplit_fraction must lie in (0, 1), got {}", self.minsplit_fraction));
        }
        if !(self.cart_cp >= 0.0 && self.cart_cp < 1.0) {
            return bad(format!("cart.cp must lie in [0, 1), got {}", self.cart_cp));
        }
        if self.models.is_empty() {
            return bad("models must not be empty".into());
        }
        if self.baseline_hidden == 0 {
            return bad("baseline.hidden must be >= 1".into());
        }
        let to_cfg = |e: Error| Error::Config(e.to_string());
        TreePrior::new(self.tree_prior.alpha, self.tree_prior.beta).map_err(to_cfg)?;
        BnnHyper::new(self.hyper.sigma_p, self.hyper.sigma_l, self.hyper.evidence_updates).map_err(to_cfg)?;
        self.train.validate().map_err(to_cfg)?;
        if self.chain.iterations <= self.chain.burn_in || self.chain.thin == 0 {
            return bad("chain.iterations must exceed chain.burn_in and chain.thin must be >= 1".into());
        }
        if self.selection.permutations == 0 || !(self.selection.level > 0.0 && self.selection.level < 1.0) {
            return bad("selection.permutations must be >= 1 and selection.level in (0, 1)".into());
        }
        Ok(())
    }

    fn bcart(&self) -> BcartConfig {
        BcartConfig {
            tree_prior: self.tree_prior,
            leaf_prior: None,
            chain: self.chain,
        }
    }
}

/// Seed for one model in one repeat: FNV-1a over the inputs, then a splitmix64 finish.
pub fn model_seed(base_seed: u64, repeat: usize, model: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in base_seed
        .to_le_bytes()
        .iter()
        .chain((repeat as u64).to_le_bytes().iter())
        .chain(model.as_bytes())
    {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// One model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub repeat: usize,
    pub features_used: usize,
    pub metrics: std::result::Result<MetricsReport, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub model: String,
    pub features_used: Option<f64>,
    pub mae: Option<f64>,
    pub mape: Option<f64>,
    pub rmse: Option<f64>,
    pub r2: Option<f64>,
    pub adj_r2: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
    pub per_repeat: Vec<RepeatResult>,
}

impl ResultRow {
    fn aggregate(dataset: &str, model: &str, per_repeat: Vec<RepeatResult>) -> Self {
        let ok: Vec<(usize, &MetricsReport)> = per_repeat
            .iter()
            .filter_map(|r| r.metrics.as_ref().ok().map(|m| (r.features_used, m)))
            .collect();
        let mean_of = |vals: Vec<Option<f64>>| -> Option<f64> { mean_defined(&vals) };
        ResultRow {
            dataset: dataset.into(),
            model: model.into(),
            features_used: mean_of(ok.iter().map(|(f, _)| Some(*f as f64)).collect()),
            mae: mean_of(ok.iter().map(|(_, m)| Some(m.mae)).collect()),
            mape: mean_of(ok.iter().map(|(_, m)| m.mape).collect()),
            rmse: mean_of(ok.iter().map(|(_, m)| Some(m.rmse)).collect()),
            r2: mean_of(ok.iter().map(|(_, m)| m.r2).collect()),
            adj_r2: mean_of(ok.iter().map(|(_, m)| m.adj_r2).collect()),
            n_ok: ok.len(),
            n_failed: per_repeat.len() - ok.len(),
            per_repeat,
        }
    }

    pub fn errors(&self) -> Vec<&str> {
        self.per_repeat
            .iter()
            .filter_map(|r| r.metrics.as_ref().err().map(String::as_str))
            .collect()
    }
}

/// Arithmetic mean of the defined values in order; `None` if none is defined.
pub fn mean_defined(vals: &[Option<f64>]) -> Option<f64> {
    let (s, n) = vals.iter().flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

enum Job {
    Single(ModelKind),
    /// All requested BNT-1 variants share one fit per repeat.
    Bnt1(Vec<f64>),
}

struct Prepared {
    train: Dataset,
    test: Dataset,
    scaler: ScalingSpec,
    train_scaled: Dataset,
    minsplit: usize,
}

fn predict_all(test: &Dataset, f: impl Fn(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    test.rows().map(f).collect()
}

fn score(test: &Dataset, yhat: Result<Vec<f64>>, d_used: usize, repeat: usize) -> RepeatResult {
    RepeatResult {
        repeat,
        features_used: d_used,
        metrics: yhat
            .and_then(|p| compute_metrics(test.response(), &p, d_used))
            .map_err(|e| e.to_string()),
    }
}

fn run_single(cfg: &ExperimentConfig, p: &Prepared, kind: ModelKind, repeat: usize) -> RepeatResult {
    let seed = model_seed(cfg.base_seed, repeat, &kind.name());
    let d = p.train.d();
    let unscale = |v: f64| p.scaler.response.unscale(v);
    let scaled = |x: &[f64]| p.scaler.scale_row(x);
    let train_cfg = TrainConfig { seed, ..cfg.train };
    match kind {
        ModelKind::Cart => {
            let params = CartParams { minsplit: p.minsplit, cp: cfg.cart_cp };
            let yhat = fit_cart_with(&p.train_scaled, &params)
                .and_then(|t| predict_all(&p.test, |x| Ok(unscale(t.predict(&scaled(x)?)?))));
            score(&p.test, yhat, d, repeat)
        }
        ModelKind::Bcart => {
            let yhat = fit_bcart(&p.train_scaled, &cfg.bcart(), seed)
                .and_then(|c| predict_all(&p.test, |x| Ok(unscale(c.predict(&scaled(x)?)?))));
            score(&p.test, yhat, d, repeat)
        }
        ModelKind::Ann => {
            let yhat = train_ann(&p.train_scaled, cfg.baseline_hidden, &train_cfg)
                .and_then(|net: Mlp| predict_all(&p.test, |x| Ok(unscale(net.forward(&scaled(x)?)?))));
            score(&p.test, yhat, d, repeat)
        }
        ModelKind::Bnn => {
            let yhat = train_bnn_fixed_k(&p.train_scaled, cfg.baseline_hidden, &cfg.hyper, &train_cfg)
                .and_then(|m| predict_all(&p.test, |x| Ok(unscale(m.predict(&scaled(x)?)?))));
            score(&p.test, yhat, d, repeat)
        }
        ModelKind::Bnt2 => {
            let bcfg = Bnt2Config {
                bcart: cfg.bcart(),
                selection: cfg.selection,
                train: train_cfg,
            };
            match fit_bnt2(&p.train_scaled, &p.scaler, &bcfg, seed) {
                Ok(m) => {
                    let d_m = m.feature_spec.d_m();
                    score(&p.test, predict_all(&p.test, |x| m.predict(x)), d_m, repeat)
                }
                Err(e) => score(&p.test, Err(e), d, repeat),
            }
        }
        ModelKind::Bnt1(_) => unreachable!("BNT-1 runs as a group"),
    }
}

fn run_bnt1(cfg: &ExperimentConfig, p: &Prepared, ps: &[f64], repeat: usize) -> Vec<RepeatResult> {
    let seed = model_seed(cfg.base_seed, repeat, "BNT1");
    let bcfg = Bnt1Config {
        minsplit: p.minsplit,
        cp: cfg.cart_cp,
        geo_p: ps[0],
        hyper: cfg.hyper,
        train: TrainConfig { seed, ..cfg.train },
        k_max: None,
    };
    match fit_bnt1_grid(&p.train_scaled, &p.scaler, &bcfg, ps) {
        Ok(models) => models
            .iter()
            .map(|m| score(&p.test, predict_all(&p.test, |x| m.predict(x)), m.feature_spec.d_m(), repeat))
            .collect(),
        Err(e) => {
            let msg = e.to_string();
            ps.iter()
                .map(|_| RepeatResult {
                    repeat,
                    features_used: p.train.d(),
                    metrics: Err(msg.clone()),
                })
                .collect()
        }
    }
}

/// Runs every (repeat, model) cell and aggregates one row per model, in the
/// order models were requested.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let raw = load_csv(&cfg.dataset)?;
    let ds = clean(&raw, &cfg.response)?;
    run_on_dataset(cfg, &ds)
}

/// As [`run_experiment`] but on an already cleaned dataset.
pub fn run_on_dataset(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut jobs: Vec<Job> = Vec::new();
    let bnt1_ps: Vec<f64> = cfg
        .models
        .iter()
        .filter_map(|m| if let ModelKind::Bnt1(p) = m { Some(*p) } else { None })
        .collect();
    for m in &cfg.models {
        match m {
            ModelKind::Bnt1(_) => {}
            other => jobs.push(Job::Single(*other)),
        }
    }
    if !bnt1_ps.is_empty() {
        jobs.push(Job::Bnt1(bnt1_ps.clone()));
    }

    let prepared: Vec<Prepared> = (0..cfg.repeats)
        .map(|r| {
            let split = shuffle_split(ds, cfg.train_fraction, cfg.base_seed.wrapping_add(r as u64))?;
            let scaler = fit_scaler(&split.train);
            let train_scaled = apply_scaler(&split.train, &scaler)?;
            let minsplit = minsplit_from_fraction(split.train.n(), cfg.minsplit_fraction);
            Ok(Prepared {
                train: split.train,
                test: split.test,
                scaler,
                train_scaled,
                minsplit,
            })
        })
        .collect::<Result<_>>()?;

    let cells: Vec<(usize, usize)> = (0..cfg.repeats).flat_map(|r| (0..jobs.len()).map(move |j| (r, j))).collect();
    let results: Vec<Vec<(String, RepeatResult)>> = cells
        .par_iter()
        .map(|&(r, j)| match &jobs[j] {
            Job::Single(kind) => vec![(kind.name(), run_single(cfg, &prepared[r], *kind, r))],
            Job::Bnt1(ps) => run_bnt1(cfg, &prepared[r], ps, r)
                .into_iter()
                .zip(ps)
                .map(|(res, p)| (ModelKind::Bnt1(*p).name(), res))
                .collect(),
        })
        .collect();

    let mut by_model: BTreeMap<String, Vec<RepeatResult>> = BTreeMap::new();
    for (name, res) in results.into_iter().flatten() {
        by_model.entry(name).or_default().push(res);
    }
    Ok(cfg
        .models
        .iter()
        .map(|m| {
            let name = m.name();
            let mut per = by_model.get(&name).cloned().unwrap_or_default();
            per.sort_by_key(|r| r.repeat);
            ResultRow::aggregate(&cfg.name, &name, per)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.digits$}"))
}

fn exact(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v}"))
}

pub fn render_table(rows: &[ResultRow]) -> String {
    let header = ["Dataset", "Model", "Features", "MAE", "MAPE", "RMSE", "R2", "AdjR2"];
    let body: Vec<[String; 8]> = rows
        .iter()
        .map(|r| {
            [
                r.dataset.clone(),
                r.model.clone(),
                cell(r.features_used, 1),
                cell(r.mae, 3),
                cell(r.mape, 3),
                cell(r.rmse, 3),
                cell(r.r2, 3),
                cell(r.adj_r2, 3),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..8)
        .map(|c| body.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<&str>| -> String {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
            + "\n"
    };
    let mut out = line(header.to_vec());
    for r in &body {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    for r in rows.iter().filter(|r| r.n_failed > 0) {
        out.push_str(&format!(
            "! {} {}: {} of {} repeats failed: {}\n",
            r.dataset,
            r.model,
            r.n_failed,
            r.n_failed + r.n_ok,
            r.errors().first().copied().unwrap_or("")
        ));
    }
    out
}

pub fn summary_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset", "model", "features_used", "mae", "mape", "rmse", "r2", "adj_r2", "n_ok", "n_failed"])?;
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.model.clone(),
            exact(r.features_used),
            exact(r.mae),
            exact(r.mape),
            exact(r.rmse),
            exact(r.r2),
            exact(r.adj_r2),
            r.n_ok.to_string(),
            r.n_failed.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("utf8"))
}

/// Long format: one line per (dataset, model, repeat, metric). Failed repeats
/// carry a single `error` line with the message as value.
pub fn per_repeat_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset", "model", "repeat", "metric", "value"])?;
    for r in rows {
        for rep in &r.per_repeat {
            let base = [r.dataset.clone(), r.model.clone(), rep.repeat.to_string()];
            let mut put = |metric: &str, value: String| {
                w.write_record(base.iter().cloned().chain([metric.to_string(), value]))
            };
            match &rep.metrics {
                Ok(m) => {
                    put("features_used", rep.features_used.to_string())?;
                    put("mae", exact(Some(m.mae)))?;
                    put("mape", exact(m.mape))?;
                    put("rmse", exact(Some(m.rmse)))?;
                    put("r2", exact(m.r2))?;
                    put("adj_r2", exact(m.adj_r2))?;
                }
                Err(e) => put("error", e.clone())?,
            }
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("utf8"))
}

/// Writes `report.txt` (table) or `summary.csv` plus `per_repeat.csv` (csv)
/// into `dir`, returning the paths written.
pub fn emit_report(rows: &[ResultRow], format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::invalid("no rows to report"));
    }
    std::fs::create_dir_all(dir)?;
    let files = match format {
        ReportFormat::Table => vec![("report.txt", render_table(rows))],
        ReportFormat::Csv => vec![("summary.csv", summary_csv(rows)?), ("per_repeat.csv", per_repeat_csv(rows)?)],
    };
    files
        .into_iter()
        .map(|(name, body)| {
            let p = dir.join(name);
            std::fs::write(&p, body)?;
            Ok(p)
        })
        .collect()
}
