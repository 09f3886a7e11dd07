//! Threshold selection against a weed-coverage target, spray plans and the
//! excess-spraying metric.

mod export;
mod sweep;

pub use export::{export_plan, spray_runs, PlanExport, SprayRect};
pub use sweep::{render_sweep_csv, render_sweep_table, sweep, table3_sweep, SweepRow, DEFAULT_TARGETS};

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{DataType, GeoRaster};
use crate::scalar::Scalar;
use crate::softmask::{binary_encoding, pixel_area_m2};
use crate::SQ_METRES_PER_ACRE;

/// Weed weights are accumulated as integers in units of 2^-52 so that sums
/// do not depend on pixel order or chunking.
const WEIGHT_SCALE: f64 = (1u64 << 52) as f64;
const CHUNK: usize = 1 << 16;

/// Excess spraying in percent of the weed area: `(land - weed) / weed * 100`.
pub fn excess_pct(land_sprayed: f64, weed_area: f64) -> f64 {
    (land_sprayed - weed_area) / weed_area * 100.0
}

/// One distinct prediction value and everything sprayed at or above it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint<T> {
    pub threshold: T,
    /// Fraction of the total weed area covered, in `[0, 1]`.
    pub weed_covered: f64,
    pub land_pixels: u64,
    weed_units: u128,
}

/// Cumulative weed coverage and sprayed land over all distinct prediction
/// thresholds, highest threshold first.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageCurve<T> {
    points: Vec<CurvePoint<T>>,
    total_units: u128,
    unsprayable_units: u128,
    field_pixels: u64,
    pixel_area_m2: Option<f64>,
}

#[derive(Clone, Copy)]
struct Bin {
    key: f64,
    units: u128,
    count: u64,
}

#[derive(Default)]
struct Histogram {
    bins: Vec<Bin>,
    unsprayable: u128,
    field: u64,
}

impl Histogram {
    fn merge(self, other: Histogram) -> Histogram {
        let mut bins = Vec::with_capacity(self.bins.len() + other.bins.len());
        let (mut a, mut b) = (self.bins.into_iter().peekable(), other.bins.into_iter().peekable());
        loop {
            let next = match (a.peek(), b.peek()) {
                (Some(x), Some(y)) => match y.key.total_cmp(&x.key) {
                    Ordering::Less => a.next(),
                    Ordering::Greater => b.next(),
                    Ordering::Equal => {
                        let (x, y) = (a.next().unwrap(), b.next().unwrap());
                        Some(Bin {
                            key: x.key,
                            units: x.units + y.units,
                            count: x.count + y.count,
                        })
                    }
                },
                (Some(_), None) => a.next(),
                (None, Some(_)) => b.next(),
                (None, None) => break,
            };
            bins.extend(next);
        }
        Histogram {
            bins,
            unsprayable: self.unsprayable + other.unsprayable,
            field: self.field + other.field,
        }
    }
}

fn weight_units(f: f64) -> u128 {
    (f * WEIGHT_SCALE).round() as u128
}

/// Divisor turning truth values into weed fractions: 255 for `{0,255}` masks,
/// otherwise 1 (fractions or `{0,1}` masks).
fn truth_scale<T: Scalar>(truth: &GeoRaster<T>) -> Result<f64> {
    if truth.data().iter().any(|&v| !truth.is_nodata(v) && v > T::one()) {
        Ok(binary_encoding(truth)?.weed_value())
    } else {
        Ok(1.0)
    }
}

impl<T: Scalar> CoverageCurve<T> {
    pub fn points(&self) -> &[CurvePoint<T>] {
        &self.points
    }

    /// Weed area in pixel units lying under nodata predictions.
    pub fn unsprayable_weed_pixels(&self) -> f64 {
        self.unsprayable_units as f64 / WEIGHT_SCALE
    }

    pub fn field_pixels(&self) -> u64 {
        self.field_pixels
    }

    pub fn pixel_area_m2(&self) -> Option<f64> {
        self.pixel_area_m2
    }

    /// Weed area in pixel units (sum of weed fractions over the field).
    pub fn total_weed_pixels(&self) -> f64 {
        self.total_units as f64 / WEIGHT_SCALE
    }

    /// Largest coverage any threshold can reach; below 1 when weed lies
    /// under nodata predictions.
    pub fn max_coverage(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.weed_covered)
    }

    fn reaches(&self, units: u128, target_pct: f64) -> bool {
        units as f64 / self.total_units as f64 >= target_pct / 100.0
    }

    /// The largest threshold whose coverage is at least `target_pct` percent.
    pub fn select_threshold(&self, target_pct: f64) -> Result<T> {
        check_target(target_pct)?;
        self.points
            .iter()
            .find(|p| self.reaches(p.weed_units, target_pct))
            .map(|p| p.threshold)
            .ok_or_else(|| {
                Error::Infeasible(format!(
                    "target {target_pct}% is unreachable; at most {:.4}% of the weed lies under valid predictions",
                    self.max_coverage() * 100.0
                ))
            })
    }

    fn at(&self, threshold: T) -> Option<&CurvePoint<T>> {
        let idx = self.points.partition_point(|p| p.threshold >= threshold);
        idx.checked_sub(1).map(|i| &self.points[i])
    }

    /// Coverage fraction and land pixels of the sprayed set `{pred >= threshold}`.
    pub fn evaluate(&self, threshold: T) -> (f64, u64) {
        self.at(threshold).map_or((0.0, 0), |p| (p.weed_covered, p.land_pixels))
    }

    fn acres_per_pixel(&self) -> Result<f64> {
        self.pixel_area_m2
            .map(|a| a / SQ_METRES_PER_ACRE)
            .ok_or_else(|| Error::Parameter("acreage needs a projected metric CRS on the prediction grid".into()))
    }

    /// Plan summary for `target_pct`, selecting the threshold on this curve
    /// or taking it from `source`.
    pub fn plan(&self, target_pct: f64, source: ThresholdSource<T>) -> Result<PlanSummary> {
        check_target(target_pct)?;
        let threshold = match source {
            ThresholdSource::SameData => self.select_threshold(target_pct)?,
            ThresholdSource::Transfer(t) => t,
        };
        let (covered, land_pixels) = self.evaluate(threshold);
        let units = self.at(threshold).map_or(0, |p| p.weed_units);
        let acres = self.acres_per_pixel()?;
        let weed_acres = self.total_weed_pixels() * acres;
        let land_sprayed_acres = land_pixels as f64 * acres;
        let achieved = covered * 100.0;
        Ok(PlanSummary {
            threshold: threshold.f64(),
            threshold_source: source.kind(),
            target_coverage_pct: target_pct,
            achieved_coverage_pct: achieved,
            below_target: !self.reaches(units, target_pct),
            land_sprayed_acres,
            land_pct: land_pixels as f64 / self.field_pixels as f64 * 100.0,
            field_acres: self.field_pixels as f64 * acres,
            weed_acres,
            excess_pct: excess_pct(land_sprayed_acres, weed_acres),
            sprayed_pixels: land_pixels,
        })
    }
}

fn check_target(target_pct: f64) -> Result<()> {
    if target_pct > 0.0 && target_pct <= 100.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "coverage target {target_pct}% must lie in (0, 100]"
        )))
    }
}

/// Coverage curve of `pred` against a fraction mask or a binary
/// `{0,1}` / `{0,255}` truth mask on the same grid.
pub fn coverage_curve<T: Scalar>(pred: &GeoRaster<T>, truth: &GeoRaster<T>) -> Result<CoverageCurve<T>> {
    coverage_curve_masked(pred, truth, None)
}

/// As [`coverage_curve`], restricted to pixels where `include` is true.
///
/// Pixels with nodata truth are outside the field. Pixels with valid truth
/// but nodata prediction belong to the field and their weed counts toward
/// the total, but they can never be sprayed.
pub fn coverage_curve_masked<T: Scalar>(
    pred: &GeoRaster<T>,
    truth: &GeoRaster<T>,
    include: Option<&[bool]>,
) -> Result<CoverageCurve<T>> {
    if pred.bands() != 1 || truth.bands() != 1 {
        return Err(Error::Validation("prediction and truth must be single-band".into()));
    }
    if !pred.grid().same_as(&truth.grid()) {
        return Err(Error::Alignment("prediction and truth are on different grids".into()));
    }
    let n = pred.data().len();
    if include.is_some_and(|m| m.len() != n) {
        return Err(Error::Alignment("include mask does not match the grid".into()));
    }
    let scale = truth_scale(truth)?;
    let (p, t) = (pred.data(), truth.data());
    let hist = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| -> Result<Histogram> {
            let mut entries: Vec<(f64, u128)> = Vec::new();
            let mut h = Histogram::default();
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                if truth.is_nodata(t[i]) || include.is_some_and(|m| !m[i]) {
                    continue;
                }
                let f = t[i].f64() / scale;
                if !(0.0..=1.0).contains(&f) {
                    return Err(Error::Validation(format!(
                        "truth value {} is not a weed fraction",
                        t[i]
                    )));
                }
                h.field += 1;
                let units = weight_units(f);
                if pred.is_nodata(p[i]) {
                    h.unsprayable += units;
                } else {
                    // -0.0 + 0.0 == +0.0
                    entries.push((p[i].f64() + 0.0, units));
                }
            }
            entries.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
            for (key, units) in entries {
                match h.bins.last_mut() {
                    Some(last) if last.key == key => {
                        last.units += units;
                        last.count += 1;
                    }
                    _ => h.bins.push(Bin { key, units, count: 1 }),
                }
            }
            Ok(h)
        })
        .try_reduce(Histogram::default, |a, b| Ok(a.merge(b)))?;

    let total_units = hist.bins.iter().map(|b| b.units).sum::<u128>() + hist.unsprayable;
    if total_units == 0 {
        return Err(Error::UndefinedCoverage);
    }
    let (mut units, mut land) = (0u128, 0u64);
    let points = hist
        .bins
        .iter()
        .map(|b| {
            units += b.units;
            land += b.count;
            CurvePoint {
                threshold: T::of(b.key),
                weed_covered: units as f64 / total_units as f64,
                land_pixels: land,
                weed_units: units,
            }
        })
        .collect();
    Ok(CoverageCurve {
        points,
        total_units,
        unsprayable_units: hist.unsprayable,
        field_pixels: hist.field,
        pixel_area_m2: pixel_area_m2(&pred.grid()).ok(),
    })
}

/// Where a plan's threshold comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThresholdSource<T> {
    /// Selected on the same pixels the plan is evaluated on.
    SameData,
    /// Selected elsewhere (e.g. on held-out pixels) and applied as-is.
    Transfer(T),
}

impl<T> ThresholdSource<T> {
    fn kind(&self) -> ThresholdKind {
        match self {
            ThresholdSource::SameData => ThresholdKind::SameData,
            ThresholdSource::Transfer(_) => ThresholdKind::Transfer,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdKind {
    SameData,
    Transfer,
}

/// Scalar outcome of a spray plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub threshold: f64,
    pub threshold_source: ThresholdKind,
    pub target_coverage_pct: f64,
    pub achieved_coverage_pct: f64,
    /// Only possible for transferred thresholds.
    pub below_target: bool,
    pub land_sprayed_acres: f64,
    pub land_pct: f64,
    pub field_acres: f64,
    pub weed_acres: f64,
    pub excess_pct: f64,
    pub sprayed_pixels: u64,
}

/// A plan summary with its spray mask.
///
/// The mask is 1 exactly where the prediction is valid and `>= threshold`,
/// over the whole prediction grid; acreages refer to the evaluated field.
#[derive(Clone, Debug, PartialEq)]
pub struct SprayPlan<T> {
    pub summary: PlanSummary,
    pub spray_mask: GeoRaster<T>,
}

/// Binary u8 mask of `pred >= threshold`.
pub fn spray_mask<T: Scalar>(pred: &GeoRaster<T>, threshold: T) -> Result<GeoRaster<T>> {
    let data = pred
        .data()
        .iter()
        .map(|&v| {
            if !pred.is_nodata(v) && v >= threshold {
                T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    GeoRaster::new(pred.grid(), 1, DataType::U8, data, None)?.with_band_names(vec!["spray".into()])
}

/// Builds the curve, selects or applies the threshold and renders the mask.
pub fn make_plan<T: Scalar>(
    pred: &GeoRaster<T>,
    truth: &GeoRaster<T>,
    target_pct: f64,
    source: ThresholdSource<T>,
    include: Option<&[bool]>,
) -> Result<SprayPlan<T>> {
    let curve = coverage_curve_masked(pred, truth, include)?;
    let summary = curve.plan(target_pct, source)?;
    let spray_mask = spray_mask(pred, T::of(summary.threshold))?;
    Ok(SprayPlan { summary, spray_mask })
}
