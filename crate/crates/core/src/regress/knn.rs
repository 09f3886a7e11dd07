use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_training, Matrix, Regressor, Standardizer};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Brute-force k-nearest-neighbour regressor on standardized features.
///
/// Prediction is the mean target of the `k` training rows closest in
/// Euclidean distance; equal distances are resolved by lower row index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct KnnRegressor<T> {
    k: usize,
    scaler: Standardizer<T>,
    train: Matrix<T>,
    target: Vec<T>,
}

impl<T: Scalar> KnnRegressor<T> {
    pub fn fit(x: &Matrix<T>, y: &[T], k: usize) -> Result<Self> {
        check_training(x, y.len())?;
        if k == 0 || k > x.rows() {
            return Err(Error::Fit(format!("k = {k} must be in 1..={}", x.rows())));
        }
        let scaler = Standardizer::fit(x);
        Ok(KnnRegressor {
            k,
            train: scaler.transform(x),
            scaler,
            target: y.to_vec(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Indices of the `k` nearest training rows, nearest first.
    pub fn neighbors(&self, x: &[T]) -> Vec<usize> {
        let mut q = Vec::with_capacity(x.len());
        self.scaler.transform_row(x, &mut q);
        let mut d: Vec<(T, usize)> = (0..self.train.rows())
            .map(|i| {
                let dist = self
                    .train
                    .row(i)
                    .iter()
                    .zip(&q)
                    .map(|(a, b)| (*a - *b) * (*a - *b))
                    .fold(T::zero(), |acc, v| acc + v);
                (dist, i)
            })
            .collect();
        let cmp = |a: &(T, usize), b: &(T, usize)| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        };
        if self.k < d.len() {
            d.select_nth_unstable_by(self.k - 1, cmp);
            d.truncate(self.k);
        }
        d.sort_by(cmp);
        d.into_iter().map(|(_, i)| i).collect()
    }
}

impl<T: Scalar> Regressor<T> for KnnRegressor<T> {
    fn n_features(&self) -> usize {
        self.train.cols()
    }

    fn predict_row_raw(&self, x: &[T]) -> T {
        let idx = self.neighbors(x);
        let sum: f64 = idx.iter().map(|&i| self.target[i].f64()).sum();
        T::of(sum / self.k as f64)
    }

    fn predict_raw(&self, x: &Matrix<T>) -> Vec<T> {
        (0..x.rows())
            .into_par_iter()
            .map(|i| self.predict_row_raw(x.row(i)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn self_neighbor_with_k_one() {
        let x = m(&[&[0.0, 0.0], &[1.0, 5.0], &[3.0, 2.0]]);
        let y = [0.1, 0.7, 0.3];
        let knn = KnnRegressor::fit(&x, &y, 1).unwrap();
        for i in 0..3 {
            assert_eq!(knn.predict_row(x.row(i)), y[i]);
        }
    }

    #[test]
    fn three_nearest_of_four_points() {
        // both features share the same spread, so standardization keeps
        // the geometry up to a common scale
        let x = m(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[3.0, 3.0]]);
        let y = [0.2, 0.4, 0.6, 1.0];
        let knn = KnnRegressor::fit(&x, &y, 3).unwrap();
        let q = [0.4, 0.3];
        // brute-force oracle in standardized space
        let mean = [1.0, 1.0];
        let sd = [(((1.0f64).powi(2) + 0.0 + 1.0 + 4.0) / 4.0).sqrt(); 2];
        let z = |r: &[f64]| [(r[0] - mean[0]) / sd[0], (r[1] - mean[1]) / sd[1]];
        let zq = z(&q);
        let mut d: Vec<(f64, usize)> = (0..4)
            .map(|i| {
                let zr = z(x.row(i));
                ((zr[0] - zq[0]).powi(2) + (zr[1] - zq[1]).powi(2), i)
            })
            .collect();
        d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let expected: f64 = d[..3].iter().map(|(_, i)| y[*i]).sum::<f64>() / 3.0;
        assert!((knn.predict_row(&q) - expected).abs() < 1e-15);
        assert!((expected - 0.4).abs() < 1e-15);
    }

    #[test]
    fn duplicates_average_and_ties_prefer_low_index() {
        let x = m(&[&[1.0], &[1.0], &[1.0], &[9.0]]);
        let y = [0.1, 0.2, 0.6, 0.0];
        let knn = KnnRegressor::fit(&x, &y, 3).unwrap();
        assert!((knn.predict_row(&[1.0]) - 0.3).abs() < 1e-15);
        let knn2 = KnnRegressor::fit(&x, &y, 2).unwrap();
        assert_eq!(knn2.neighbors(&[1.0]), vec![0, 1]);
    }

    #[test]
    fn fit_errors() {
        let x = m(&[&[1.0]]);
        assert!(KnnRegressor::fit(&x, &[0.5], 2).is_err());
        assert!(KnnRegressor::fit(&x, &[0.5], 0).is_err());
        let empty = Matrix::<f64>::new(0, 1, vec![]).unwrap();
        assert!(matches!(KnnRegressor::fit(&empty, &[], 1), Err(Error::Fit(_))));
    }

    proptest! {
        #[test]
        fn k_equals_n_gives_global_mean(
            pts in proptest::collection::vec((0.0f64..10.0, 0.0f64..10.0, 0.0f64..1.0), 1..30),
            q in (0.0f64..10.0, 0.0f64..10.0),
        ) {
            let rows: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0, p.1]).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.2).collect();
            let x = Matrix::from_rows(&rows).unwrap();
            let knn = KnnRegressor::fit(&x, &y, y.len()).unwrap();
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            prop_assert!((knn.predict_row(&[q.0, q.1]) - mean).abs() < 1e-12);
        }
    }
}
