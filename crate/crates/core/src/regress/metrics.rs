use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which quantity is reported as R².
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum R2Variant {
    /// `1 - SSE / SST`.
    #[default]
    Determination,
    /// Squared Pearson correlation between prediction and truth.
    PearsonSquared,
}

impl fmt::Display for R2Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            R2Variant::Determination => "determination",
            R2Variant::PearsonSquared => "pearson-squared",
        })
    }
}

impl FromStr for R2Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "determination" | "cod" => Ok(R2Variant::Determination),
            "pearson" | "pearson-squared" => Ok(R2Variant::PearsonSquared),
            _ => Err(Error::Parameter(format!("unknown R² variant '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
    pub r2_variant: R2Variant,
    pub n: usize,
}

fn check_lengths<T>(pred: &[T], truth: &[T]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Parameter(format!(
            "prediction has {} values, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::Parameter("metrics need at least two samples".into()));
    }
    Ok(())
}

/// R² of `pred` against `truth` under the chosen variant.
///
/// Constant truth is an error for both variants. Under the Pearson variant a
/// constant prediction has no correlation and scores 0.
pub fn r2_score<T: Scalar>(pred: &[T], truth: &[T], variant: R2Variant) -> Result<f64> {
    check_lengths(pred, truth)?;
    let n = truth.len() as f64;
    let ty = truth.iter().map(|v| v.f64()).sum::<f64>() / n;
    let sst: f64 = truth.iter().map(|v| (v.f64() - ty).powi(2)).sum();
    if sst == 0.0 {
        return Err(Error::UndefinedMetric("R² is undefined for constant truth".into()));
    }
    match variant {
        R2Variant::Determination => {
            let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p.f64() - t.f64()).powi(2)).sum();
            Ok(1.0 - sse / sst)
        }
        R2Variant::PearsonSquared => {
            let py = pred.iter().map(|v| v.f64()).sum::<f64>() / n;
            let spp: f64 = pred.iter().map(|v| (v.f64() - py).powi(2)).sum();
            if spp == 0.0 {
                return Ok(0.0);
            }
            let spt: f64 = pred
                .iter()
                .zip(truth)
                .map(|(p, t)| (p.f64() - py) * (t.f64() - ty))
                .sum();
            Ok(spt * spt / (spp * sst))
        }
    }
}

pub fn metrics<T: Scalar>(pred: &[T], truth: &[T], variant: R2Variant) -> Result<MetricsReport> {
    check_lengths(pred, truth)?;
    let n = truth.len() as f64;
    let mut se = 0.0f64;
    let mut ae = 0.0f64;
    for (p, t) in pred.iter().zip(truth) {
        let e = p.f64() - t.f64();
        se += e * e;
        ae += e.abs();
    }
    let mae = ae / n;
    // power-mean inequality; max() only absorbs rounding when all |e| are equal
    let rmse = (se / n).sqrt().max(mae);
    Ok(MetricsReport {
        rmse,
        mae,
        r2: r2_score(pred, truth, variant)?,
        r2_variant: variant,
        n: truth.len(),
    })
}

/// Aligned `Model  RMSE  MAE  R²` table.
pub fn render_metrics_table(rows: &[(String, MetricsReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<width$}  {:>8}  {:>8}  {:>8}\n", "Model", "RMSE", "MAE", "R²");
    out.push_str(&"-".repeat(width + 30));
    out.push('\n');
    for (name, m) in rows {
        out.push_str(&format!(
            "{:<width$}  {:>8.4}  {:>8.4}  {:>8.4}\n",
            name, m.rmse, m.mae, m.r2
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction() {
        let t = [0.1, 0.5, 0.2];
        let m = metrics(&t, &t, R2Variant::Determination).unwrap();
        assert_eq!((m.rmse, m.mae, m.r2), (0.0, 0.0, 1.0));
    }

    #[test]
    fn mean_prediction_scores_zero() {
        let t = [0.1, 0.5, 0.2, 0.4];
        let mean = t.iter().sum::<f64>() / 4.0;
        let m = metrics(&[mean; 4], &t, R2Variant::Determination).unwrap();
        assert_eq!(m.r2, 0.0);
        assert_eq!(r2_score(&[mean; 4], &t, R2Variant::PearsonSquared).unwrap(), 0.0);
    }

    #[test]
    fn hand_worked_example() {
        // errors 0.1, -0.1, 0.1 -> rmse = mae = 0.1 ; SST = 0.06, SSE = 0.03
        // Pearson: Spt = 0.04, Spp = 0.14/3, r² = 0.0016 / 0.0028 = 4/7
        let pred = [0.1, 0.2, 0.4];
        let truth = [0.0, 0.3, 0.3];
        let m = metrics(&pred, &truth, R2Variant::Determination).unwrap();
        assert!((m.rmse - 0.1).abs() < 1e-12);
        assert!((m.mae - 0.1).abs() < 1e-12);
        assert!((m.r2 - 0.5).abs() < 1e-12);
        let p = r2_score(&pred, &truth, R2Variant::PearsonSquared).unwrap();
        assert!((p - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn error_cases() {
        assert!(matches!(
            metrics(&[0.1, 0.2], &[0.3, 0.3], R2Variant::Determination),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            metrics(&[0.1], &[0.3], R2Variant::Determination),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            metrics(&[0.1, 0.2], &[0.3, 0.3, 0.1], R2Variant::Determination),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn table_has_one_line_per_model() {
        let m = metrics(&[0.1, 0.2, 0.4], &[0.0, 0.3, 0.3], R2Variant::Determination).unwrap();
        let t = render_metrics_table(&[("knn".into(), m), ("ridge".into(), m)]);
        assert_eq!(t.lines().count(), 4);
        assert!(t.contains("0.5000"));
    }

    proptest! {
        #[test]
        fn rmse_bounds_mae(pairs in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..60)) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assume!(t.iter().any(|v| *v != t[0]));
            let m = metrics(&p, &t, R2Variant::Determination).unwrap();
            prop_assert!(m.rmse >= m.mae && m.mae >= 0.0 && m.r2 <= 1.0);
        }

        #[test]
        fn pearson_is_scale_invariant(pairs in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 3..60), c in 0.01f64..100.0) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assume!(t.iter().any(|v| (v - t[0]).abs() > 1e-6));
            let a = r2_score(&p, &t, R2Variant::PearsonSquared).unwrap();
            let ps: Vec<f64> = p.iter().map(|v| v * c).collect();
            let ts: Vec<f64> = t.iter().map(|v| v * c).collect();
            let b = r2_score(&ps, &ts, R2Variant::PearsonSquared).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
