//! Per-pixel weed-fraction regression: native regressors, voting ensembles,
//! ensemble subset and weight search, and regression metrics.

mod ensemble;
mod features;
mod knn;
mod linear;
mod metrics;
mod model;
mod trees;

pub use ensemble::{
    combine, optimize_weights, subset_search, Candidate, SubsetEvaluation, SubsetSearch, VotingEnsemble, WeightSearch,
    WeightSearchOptions,
};

pub use features::{predict_raster, FeatureTable, FEATURE_COLUMNS, N_FEATURES};
pub use knn::KnnRegressor;
pub use linear::Ridge;
pub use metrics::{metrics, r2_score, render_metrics_table, MetricsReport, R2Variant};
pub use model::{fit_candidates, FitFailure, Model, ModelSpec, Regressor, SavedEnsemble, MODEL_FORMAT_VERSION};
pub use trees::{ExtraTrees, ExtraTreesParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix of samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Parameter(format!(
                "matrix data length {} != {rows} x {cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Parameter("ragged rows".into()));
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix<T> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Per-column z-score transform fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Standardizer<T> {
    mean: Vec<T>,
    scale: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    /// Population mean and standard deviation; zero-variance columns keep scale 1.
    pub fn fit(x: &Matrix<T>) -> Self {
        let n = x.rows().max(1) as f64;
        let mut mean = vec![0.0f64; x.cols()];
        for i in 0..x.rows() {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v.f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; x.cols()];
        for i in 0..x.rows() {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                let d = v.f64() - m;
                *s += d * d;
            }
        }
        let scale = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    T::of(sd)
                } else {
                    T::one()
                }
            })
            .collect();
        Standardizer {
            mean: mean.into_iter().map(T::of).collect(),
            scale,
        }
    }

    pub fn transform_row(&self, row: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend(
            row.iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .map(|((v, m), s)| (*v - *m) / *s),
        );
    }

    pub fn transform(&self, x: &Matrix<T>) -> Matrix<T> {
        let mut data = Vec::with_capacity(x.data.len());
        let mut buf = Vec::with_capacity(x.cols);
        for i in 0..x.rows() {
            self.transform_row(x.row(i), &mut buf);
            data.extend_from_slice(&buf);
        }
        Matrix {
            rows: x.rows,
            cols: x.cols,
            data,
        }
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn scale(&self) -> &[T] {
        &self.scale
    }
}

pub(crate) fn clamp_unit<T: Scalar>(v: T) -> T {
    if v.is_nan() {
        return T::zero();
    }
    v.max(T::zero()).min(T::one())
}

pub(crate) fn check_training(x: &Matrix<impl Scalar>, y_len: usize) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::Fit("training set is empty".into()));
    }
    if x.rows() != y_len {
        return Err(Error::Fit(format!("{} feature rows but {} targets", x.rows(), y_len)));
    }
    Ok(())
}
