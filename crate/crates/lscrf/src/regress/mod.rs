//! Regressors mapping feature vectors to `(0,1)`: closed-form ridge,
//! iterative least squares, and gradient-boosted oblivious regression trees.

mod gbt;
mod linear;

pub use gbt::{gbt_train, GbtParams, ObliviousLevel, ObliviousTree, TreeEnsemble};
pub use linear::{
    ridge_factorize, ridge_factorize_weighted, ridge_iterative, ridge_solve, ridge_solve_weighted,
    IterativeFit, IterativeMethod, LinearModel, RidgeFactor,
};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp bound applied to regressor outputs consumed as
/// probabilities.
pub const CLAMP_FLOOR: f64 = 1e-9;

/// Dense row-major feature matrix (one row per example).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl FeatureMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * d);
        for row in &rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch(
                    "feature rows have unequal lengths".into(),
                ));
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(data, n, d)
    }

    pub fn from_flat(data: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "flat feature buffer of {} entries for {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix entry".into()));
        }
        Ok(FeatureMatrix { data, rows, cols })
    }

    #[inline]
    pub fn num_rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn num_cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// A regression problem: features, targets in `[0,1]`, and optional
/// per-example weights.
///
/// The feature matrix is shared behind an `Arc` so that the per-label-pair
/// datasets assembled during training reuse one copy of the features.
#[derive(Debug, Clone)]
pub struct RegressionDataset {
    pub features: Arc<FeatureMatrix>,
    pub targets: Vec<f64>,
    /// Per-example weights; `None` means uniform. An integer weight `k` is
    /// equivalent to repeating the example `k` times.
    pub weights: Option<Vec<f64>>,
}

impl RegressionDataset {
    pub fn new(features: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        Self::from_shared(Arc::new(FeatureMatrix::from_rows(features)?), targets)
    }

    pub fn from_shared(features: Arc<FeatureMatrix>, targets: Vec<f64>) -> Result<Self> {
        if features.num_rows() == 0 {
            return Err(Error::InvalidParameter("empty dataset".into()));
        }
        if targets.len() != features.num_rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} targets for {} rows",
                targets.len(),
                features.num_rows()
            )));
        }
        if targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidParameter("targets must lie in [0,1]".into()));
        }
        Ok(RegressionDataset {
            features,
            targets,
            weights: None,
        })
    }

    /// Attaches per-example weights; entries must be finite and positive.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} rows",
                weights.len(),
                self.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidParameter(
                "weights must be finite and positive".into(),
            ));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.features.num_rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.features.num_cols()
    }

    #[inline]
    pub(crate) fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }
}

/// A trained regressor of either parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regressor {
    Linear(LinearModel),
    Tree(TreeEnsemble),
}

impl Regressor {
    /// Raw (unclamped) prediction for one feature vector.
    pub fn predict(&self, phi: &[f64]) -> Result<f64> {
        match self {
            Regressor::Linear(m) => m.predict(phi),
            Regressor::Tree(m) => m.predict(phi),
        }
    }
}

/// Clamps a prediction to the probability interval `[1e-9, 1]`.
pub fn clamp01(p: f64) -> Result<f64> {
    if p.is_nan() {
        return Err(Error::NonFinite("prediction is NaN".into()));
    }
    Ok(p.clamp(CLAMP_FLOOR, 1.0))
}

/// Mean squared error of a regressor over a dataset.
pub fn training_mse(model: &Regressor, dataset: &RegressionDataset) -> Result<f64> {
    let mut sum = 0.0;
    for i in 0..dataset.len() {
        let p = model.predict(dataset.features.row(i))?;
        let d = p - dataset.targets[i];
        sum += d * d;
    }
    Ok(sum / dataset.len() as f64)
}
