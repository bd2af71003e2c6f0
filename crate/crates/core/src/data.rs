//! Loading, cleaning, min-max scaling and train/test splitting.
//!
//! The flow is `load_csv` → [`clean`] → [`shuffle_split`] → [`fit_scaler`] on
//! the training half → [`apply_scaler`] on both halves. Predictions are mapped
//! back to response units with [`invert_response`] before metrics are taken.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// One parsed CSV cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Number(f64),
    Missing,
    Text,
}

impl Cell {
    /// Empty cells, `NA` and `?` are missing; anything that does not parse as a
    /// finite number is text.
    pub fn parse(raw: &str) -> Cell {
        let s = raw.trim();
        if s.is_empty() || s == "NA" || s == "?" {
            return Cell::Missing;
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Cell::Number(v),
            _ => Cell::Text,
        }
    }
}

/// A CSV table before cleaning, in file column order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub names: Vec<String>,
    /// Row-major cells, `rows[i][j]`.
    pub rows: Vec<Vec<Cell>>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    /// True when at least one cell of column `j` failed to parse as a number.
    pub fn is_non_numeric(&self, j: usize) -> bool {
        self.rows.iter().any(|r| r[j] == Cell::Text)
    }

    pub fn missing_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            for (j, c) in r.iter().enumerate() {
                if *c == Cell::Missing {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Numeric design matrix plus response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    feature_names: Vec<String>,
    response_name: String,
    /// Row-major, `n * d`.
    features: Vec<f64>,
    response: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from row vectors. Every row must have `feature_names.len()`
    /// entries and all values must be finite.
    pub fn new(
        feature_names: Vec<String>,
        response_name: impl Into<String>,
        rows: &[Vec<f64>],
        response: Vec<f64>,
    ) -> Result<Self> {
        let d = feature_names.len();
        check_dim(rows.len(), response.len())?;
        let mut features = Vec::with_capacity(rows.len() * d);
        for r in rows {
            check_dim(d, r.len())?;
            features.extend_from_slice(r);
        }
        Self::from_flat(feature_names, response_name, features, response)
    }

    pub fn from_flat(
        feature_names: Vec<String>,
        response_name: impl Into<String>,
        features: Vec<f64>,
        response: Vec<f64>,
    ) -> Result<Self> {
        let d = feature_names.len();
        if d == 0 {
            return Err(Error::Degenerate("dataset has no feature columns".into()));
        }
        check_dim(response.len() * d, features.len())?;
        if features.iter().chain(&response).any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite value in dataset".into()));
        }
        Ok(Dataset {
            feature_names,
            response_name: response_name.into(),
            features,
            response,
        })
    }

    /// Unnamed features `x0..x{d-1}` and response `y`; handy for simulations.
    pub fn from_rows(rows: &[Vec<f64>], response: Vec<f64>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let names = (0..d).map(|j| format!("x{j}")).collect();
        Self::new(names, "y", rows, response)
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn d(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.d())
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.features[i * self.d() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn features_flat(&self) -> &[f64] {
        &self.features
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.d());
        let mut response = Vec::with_capacity(idx.len());
        for &i in idx {
            features.extend_from_slice(self.row(i));
            response.push(self.response[i]);
        }
        Dataset {
            feature_names: self.feature_names.clone(),
            response_name: self.response_name.clone(),
            features,
            response,
        }
    }

    /// Same features, different response.
    pub fn with_response(&self, response: Vec<f64>) -> Result<Dataset> {
        check_dim(self.n(), response.len())?;
        Dataset::from_flat(
            self.feature_names.clone(),
            self.response_name.clone(),
            self.features.clone(),
            response,
        )
    }

    /// Keeps only the feature columns in `cols` (in that order).
    pub fn select_columns(&self, cols: &[usize]) -> Result<Dataset> {
        for &c in cols {
            if c >= self.d() {
                return Err(Error::DimensionMismatch {
                    expected: self.d(),
                    found: c,
                });
            }
        }
        let names = cols.iter().map(|&c| self.feature_names[c].clone()).collect();
        let features = self
            .rows()
            .flat_map(|r| cols.iter().map(move |&c| r[c]))
            .collect();
        Dataset::from_flat(names, self.response_name.clone(), features, self.response.clone())
    }

    /// Back to a raw table with the response as the last column, so that
    /// `clean` can be applied again.
    pub fn to_raw(&self) -> RawTable {
        let mut names = self.feature_names.clone();
        names.push(self.response_name.clone());
        let rows = self
            .rows()
            .zip(&self.response)
            .map(|(r, &y)| r.iter().chain(Some(&y)).map(|&v| Cell::Number(v)).collect())
            .collect();
        RawTable { names, rows }
    }
}

/// Reads a comma-delimited file with a header row.
pub fn load_csv(path: impl AsRef<Path>) -> Result<RawTable> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => {
            return Err(Error::EmptyFile {
                path: path.to_path_buf(),
            })
        }
    };
    let names: Vec<String> = header.iter().map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() == 1 && rec.get(0).is_some_and(|s| s.trim().is_empty()) {
            continue;
        }
        if rec.len() != names.len() {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                // 1-based file line, header is line 1
                row: i + 2,
                expected: names.len(),
                found: rec.len(),
            });
        }
        rows.push(rec.iter().map(Cell::parse).collect());
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    Ok(RawTable { names, rows })
}

/// Drops every column containing a non-numeric cell, then every row with a
/// missing cell. The response column must survive both steps.
pub fn clean(raw: &RawTable, response: &str) -> Result<Dataset> {
    let resp_col = raw
        .names
        .iter()
        .position(|n| n == response)
        .ok_or_else(|| Error::UnknownColumn(response.to_string()))?;
    if raw.is_non_numeric(resp_col) || raw.rows.iter().all(|r| r[resp_col] == Cell::Missing) {
        return Err(Error::BadResponse(response.to_string()));
    }
    let keep: Vec<usize> = (0..raw.n_cols())
        .filter(|&j| j != resp_col && !raw.is_non_numeric(j))
        .collect();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    'rows: for r in &raw.rows {
        let mut vals = Vec::with_capacity(keep.len());
        for &j in &keep {
            match r[j] {
                Cell::Number(v) => vals.push(v),
                _ => continue 'rows,
            }
        }
        match r[resp_col] {
            Cell::Number(v) => y.push(v),
            _ => continue,
        }
        rows.push(vals);
    }
    if rows.len() < 2 {
        return Err(Error::Degenerate(format!(
            "only {} complete rows remain after cleaning",
            rows.len()
        )));
    }
    let names = keep.iter().map(|&j| raw.names[j].clone()).collect();
    Dataset::new(names, response, &rows, y)
}

/// Observed range of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub min: f64,
    pub max: f64,
}

impl ColumnRange {
    pub fn of(values: impl IntoIterator<Item = f64>) -> ColumnRange {
        let (min, max) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        ColumnRange { min, max }
    }

    /// Constant columns map to 0. Values outside the range extrapolate linearly.
    pub fn scale(&self, v: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            (v - self.min) / span
        } else {
            0.0
        }
    }

    pub fn unscale(&self, s: f64) -> f64 {
        self.min + s * (self.max - self.min)
    }
}

/// Per-column min/max for every feature and the response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSpec {
    pub features: Vec<ColumnRange>,
    pub response: ColumnRange,
}

impl ScalingSpec {
    pub fn scale_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.features.len(), x.len())?;
        Ok(x.iter().zip(&self.features).map(|(&v, r)| r.scale(v)).collect())
    }
}

pub fn fit_scaler(ds: &Dataset) -> ScalingSpec {
    ScalingSpec {
        features: (0..ds.d())
            .map(|j| ColumnRange::of(ds.rows().map(|r| r[j])))
            .collect(),
        response: ColumnRange::of(ds.response().iter().copied()),
    }
}

pub fn apply_scaler(ds: &Dataset, spec: &ScalingSpec) -> Result<Dataset> {
    check_dim(spec.features.len(), ds.d())?;
    let features = ds
        .rows()
        .flat_map(|r| r.iter().zip(&spec.features).map(|(&v, c)| c.scale(v)))
        .collect();
    let response = ds.response().iter().map(|&v| spec.response.scale(v)).collect();
    Dataset::from_flat(
        ds.feature_names().to_vec(),
        ds.response_name(),
        features,
        response,
    )
}

/// Maps scaled predictions back to response units.
pub fn invert_response(spec: &ScalingSpec, yhat: &[f64]) -> Vec<f64> {
    yhat.iter().map(|&v| spec.response.unscale(v)).collect()
}

/// Inverse of [`apply_scaler`] for non-constant columns.
pub fn invert_scaler(ds: &Dataset, spec: &ScalingSpec) -> Result<Dataset> {
    check_dim(spec.features.len(), ds.d())?;
    let features = ds
        .rows()
        .flat_map(|r| r.iter().zip(&spec.features).map(|(&v, c)| c.unscale(v)))
        .collect();
    let response = invert_response(spec, ds.response());
    Dataset::from_flat(
        ds.feature_names().to_vec(),
        ds.response_name(),
        features,
        response,
    )
}

#[derive(Debug, Clone)]
pub struct SplitPair {
    pub train: Dataset,
    pub test: Dataset,
    pub seed: u64,
    pub train_fraction: f64,
    /// Parent row indices of each half, in the shuffled order.
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Shuffles rows with `seed` and takes the first `round(train_fraction * n)` for training.
pub fn shuffle_split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<SplitPair> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = ds.n();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Degenerate(format!(
            "split of {n} rows at fraction {train_fraction} leaves an empty half"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let (tr, te) = order.split_at(n_train);
    Ok(SplitPair {
        train: ds.subset(tr),
        test: ds.subset(te),
        seed,
        train_fraction,
        train_rows: tr.to_vec(),
        test_rows: te.to_vec(),
    })
}
