use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{clamp_unit, ExtraTrees, ExtraTreesParams, KnnRegressor, Matrix, Ridge};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Version tag written into serialized models.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A fitted weed-fraction regressor.
///
/// `predict*` clamp to `[0, 1]`; the `*_raw` variants expose the unclamped
/// model output.
pub trait Regressor<T: Scalar>: Sync {
    fn n_features(&self) -> usize;

    fn predict_row_raw(&self, x: &[T]) -> T;

    fn predict_raw(&self, x: &Matrix<T>) -> Vec<T> {
        (0..x.rows())
            .into_par_iter()
            .map(|i| self.predict_row_raw(x.row(i)))
            .collect()
    }

    fn predict_row(&self, x: &[T]) -> T {
        clamp_unit(self.predict_row_raw(x))
    }

    fn predict(&self, x: &Matrix<T>) -> Vec<T> {
        self.predict_raw(x).into_iter().map(clamp_unit).collect()
    }
}

/// Hyperparameters of one candidate regressor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Knn { k: usize },
    ExtraTrees(ExtraTreesParams),
    Ridge { lambda: f64 },
}

impl ModelSpec {
    pub fn fit<T: Scalar>(&self, x: &Matrix<T>, y: &[T]) -> Result<Model<T>> {
        Ok(match *self {
            ModelSpec::Knn { k } => Model::Knn(KnnRegressor::fit(x, y, k)?),
            ModelSpec::ExtraTrees(p) => Model::ExtraTrees(ExtraTrees::fit(x, y, p)?),
            ModelSpec::Ridge { lambda } => Model::Ridge(Ridge::fit(x, y, lambda)?),
        })
    }

    /// Ten candidates spanning the three families, used by the CLI `fit`.
    pub fn default_zoo(seed: u64) -> Vec<ModelSpec> {
        let trees = |n_trees, max_depth, min_leaf, max_features, salt: u64| {
            ModelSpec::ExtraTrees(ExtraTreesParams {
                n_trees,
                max_depth,
                min_leaf,
                max_features,
                seed: seed.wrapping_add(salt),
            })
        };
        vec![
            ModelSpec::Knn { k: 5 },
            ModelSpec::Knn { k: 15 },
            ModelSpec::Knn { k: 40 },
            trees(100, 16, 2, None, 1),
            trees(100, 8, 5, None, 2),
            trees(100, 12, 3, Some(3), 3),
            trees(50, 4, 5, None, 4),
            ModelSpec::Ridge { lambda: 0.01 },
            ModelSpec::Ridge { lambda: 1.0 },
            ModelSpec::Ridge { lambda: 100.0 },
        ]
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Knn { k } => write!(f, "knn(k={k})"),
            ModelSpec::ExtraTrees(p) => {
                write!(
                    f,
                    "extra-trees(n={},depth={},leaf={}",
                    p.n_trees, p.max_depth, p.min_leaf
                )?;
                if let Some(m) = p.max_features {
                    write!(f, ",features={m}")?;
                }
                write!(f, ")")
            }
            ModelSpec::Ridge { lambda } => write!(f, "ridge(lambda={lambda})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", tag = "kind", content = "model", rename_all = "kebab-case")]
pub enum Model<T> {
    Knn(KnnRegressor<T>),
    ExtraTrees(ExtraTrees<T>),
    Ridge(Ridge<T>),
}

impl<T: Scalar> Regressor<T> for Model<T> {
    fn n_features(&self) -> usize {
        match self {
            Model::Knn(m) => m.n_features(),
            Model::ExtraTrees(m) => m.n_features(),
            Model::Ridge(m) => m.n_features(),
        }
    }

    fn predict_row_raw(&self, x: &[T]) -> T {
        match self {
            Model::Knn(m) => m.predict_row_raw(x),
            Model::ExtraTrees(m) => m.predict_row_raw(x),
            Model::Ridge(m) => m.predict_row_raw(x),
        }
    }

    fn predict_raw(&self, x: &Matrix<T>) -> Vec<T> {
        match self {
            Model::Knn(m) => m.predict_raw(x),
            Model::ExtraTrees(m) => m.predict_raw(x),
            Model::Ridge(m) => m.predict_raw(x),
        }
    }
}

/// A candidate that could not be fitted; reported and skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub name: String,
    pub error: String,
}

/// Fits every spec on the same training data. Failures are collected rather
/// than aborting the batch.
pub fn fit_candidates<T: Scalar>(
    specs: &[ModelSpec],
    x: &Matrix<T>,
    y: &[T],
) -> (Vec<(ModelSpec, Model<T>)>, Vec<FitFailure>) {
    let mut fitted = Vec::new();
    let mut failed = Vec::new();
    for spec in specs {
        match spec.fit(x, y) {
            Ok(m) => fitted.push((*spec, m)),
            Err(e) => {
                log::warn!("skipping {spec}: {e}");
                failed.push(FitFailure {
                    name: spec.to_string(),
                    error: e.to_string(),
                })
            }
        }
    }
    (fitted, failed)
}

/// Versioned on-disk form of a fitted voting ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SavedEnsemble<T> {
    pub format_version: u32,
    pub names: Vec<String>,
    pub specs: Vec<ModelSpec>,
    pub weights: Vec<T>,
    pub members: Vec<Model<T>>,
}

impl<T: Scalar> SavedEnsemble<T> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let saved: SavedEnsemble<T> = serde_json::from_str(text)?;
        if saved.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                saved.format_version
            )));
        }
        Ok(saved)
    }
}
