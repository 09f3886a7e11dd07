use serde::{Deserialize, Serialize};

use super::{check_training, Matrix, Regressor, Standardizer};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ridge regression on standardized features with an unpenalized intercept,
/// solved through the normal equations with a Cholesky factorization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Ridge<T> {
    lambda: f64,
    scaler: Standardizer<T>,
    coef: Vec<T>,
    intercept: T,
}

impl<T: Scalar> Ridge<T> {
    pub fn fit(x: &Matrix<T>, y: &[T], lambda: f64) -> Result<Self> {
        check_training(x, y.len())?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Fit(format!(
                "ridge lambda must be finite and >= 0, got {lambda}"
            )));
        }
        let scaler = Standardizer::fit(x);
        let z = scaler.transform(x);
        let (n, p) = (z.rows(), z.cols());

        let mut zmean = vec![0.0f64; p];
        for i in 0..n {
            for (m, v) in zmean.iter_mut().zip(z.row(i)) {
                *m += v.f64();
            }
        }
        zmean.iter_mut().for_each(|m| *m /= n as f64);
        let ymean = y.iter().map(|v| v.f64()).sum::<f64>() / n as f64;

        let mut a = vec![0.0f64; p * p];
        let mut b = vec![0.0f64; p];
        let mut zc = vec![0.0f64; p];
        for i in 0..n {
            for (c, (v, m)) in zc.iter_mut().zip(z.row(i).iter().zip(&zmean)) {
                *c = v.f64() - m;
            }
            let yc = y[i].f64() - ymean;
            for r in 0..p {
                b[r] += zc[r] * yc;
                for c in 0..=r {
                    a[r * p + c] += zc[r] * zc[c];
                }
            }
        }
        for r in 0..p {
            for c in 0..r {
                a[c * p + r] = a[r * p + c];
            }
            a[r * p + r] += lambda;
        }
        let w = cholesky_solve(&mut a, &b, p)?;
        let intercept = ymean - w.iter().zip(&zmean).map(|(w, m)| w * m).sum::<f64>();
        Ok(Ridge {
            lambda,
            scaler,
            coef: w.into_iter().map(T::of).collect(),
            intercept: T::of(intercept),
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Slopes and intercept in original feature units.
    pub fn coefficients(&self) -> (Vec<f64>, f64) {
        let slopes: Vec<f64> = self
            .coef
            .iter()
            .zip(self.scaler.scale())
            .map(|(w, s)| w.f64() / s.f64())
            .collect();
        let shift: f64 = slopes.iter().zip(self.scaler.mean()).map(|(s, m)| s * m.f64()).sum();
        (slopes, self.intercept.f64() - shift)
    }
}

/// Solves `A w = b` for symmetric positive-definite `A` (row-major, overwritten).
fn cholesky_solve(a: &mut [f64], b: &[f64], p: usize) -> Result<Vec<f64>> {
    let max_diag = (0..p).map(|i| a[i * p + i]).fold(0.0f64, f64::max).max(1.0);
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if d <= 1e-10 * max_diag {
            return Err(Error::Solver(
                "normal equations are rank-deficient; use ridge_lambda > 0".into(),
            ));
        }
        let d = d.sqrt();
        a[j * p + j] = d;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / d;
        }
    }
    let mut z = vec![0.0; p];
    for i in 0..p {
        let s: f64 = (0..i).map(|k| a[i * p + k] * z[k]).sum();
        z[i] = (b[i] - s) / a[i * p + i];
    }
    let mut w = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|k| a[k * p + i] * w[k]).sum();
        w[i] = (z[i] - s) / a[i * p + i];
    }
    Ok(w)
}

impl<T: Scalar> Regressor<T> for Ridge<T> {
    fn n_features(&self) -> usize {
        self.coef.len()
    }

    fn predict_row_raw(&self, x: &[T]) -> T {
        let mut z = Vec::with_capacity(x.len());
        self.scaler.transform_row(x, &mut z);
        let s: f64 = z.iter().zip(&self.coef).map(|(a, w)| a.f64() * w.f64()).sum();
        T::of(self.intercept.f64() + s)
    }
}
