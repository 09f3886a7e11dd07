use std::fmt::Write;

use super::{coverage_curve, CoverageCurve, PlanSummary, ThresholdSource};
use crate::error::Result;
use crate::raster::GeoRaster;
use crate::scalar::Scalar;

/// Coverage targets of the standard sweep, in percent.
pub const DEFAULT_TARGETS: [f64; 4] = [90.0, 95.0, 98.0, 99.0];

pub type SweepRow = PlanSummary;

/// One plan per target. Thresholds are selected on `select` and evaluated on
/// `eval`; pass the same curve twice for same-data selection.
pub fn sweep<T: Scalar>(select: &CoverageCurve<T>, eval: &CoverageCurve<T>, targets: &[f64]) -> Result<Vec<SweepRow>> {
    targets
        .iter()
        .map(|&target| {
            if std::ptr::eq(select, eval) {
                eval.plan(target, ThresholdSource::SameData)
            } else {
                eval.plan(target, ThresholdSource::Transfer(select.select_threshold(target)?))
            }
        })
        .collect()
}

/// Same-data sweep over the whole grid.
pub fn table3_sweep<T: Scalar>(pred: &GeoRaster<T>, truth: &GeoRaster<T>, targets: &[f64]) -> Result<Vec<SweepRow>> {
    let curve = coverage_curve(pred, truth)?;
    sweep(&curve, &curve, targets)
}

/// Aligned text table: Threshold, Weed %, Land %, Land Acres, Excess %.
pub fn render_sweep_table(rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{:>10}  {:>8}  {:>8}  {:>12}  {:>10}\n",
        "Threshold", "Weed %", "Land %", "Land Acres", "Excess %"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>10.4}  {:>8.2}  {:>8.2}  {:>12.4}  {:>10.2}{}",
            r.threshold,
            r.achieved_coverage_pct,
            r.land_pct,
            r.land_sprayed_acres,
            r.excess_pct,
            if r.below_target { "  (below target)" } else { "" }
        );
    }
    out
}

pub fn render_sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "target_pct,threshold,weed_pct,land_pct,land_acres,weed_acres,field_acres,excess_pct,below_target\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.target_coverage_pct,
            r.threshold,
            r.achieved_coverage_pct,
            r.land_pct,
            r.land_sprayed_acres,
            r.weed_acres,
            r.field_acres,
            r.excess_pct,
            r.below_target
        );
    }
    out
}
