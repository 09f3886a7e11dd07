//! Weed-fraction targets from binary drone annotations, area accounting and
//! spatial-block train/held-out/test splits.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{metres_per_unit_sq, resample, DataType, GeoRaster, Grid, ResampleMethod};
use crate::scalar::Scalar;
use crate::SQ_METRES_PER_ACRE;

/// Single-band raster of per-pixel weed fractions in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FractionMask<T> {
    raster: GeoRaster<T>,
}

impl<T: Scalar> FractionMask<T> {
    pub fn new(raster: GeoRaster<T>) -> Result<Self> {
        if raster.bands() != 1 {
            return Err(Error::Validation(format!(
                "fraction mask must be single-band, got {} bands",
                raster.bands()
            )));
        }
        for &v in raster.data() {
            if !raster.is_nodata(v) && !(v >= T::zero() && v <= T::one()) {
                return Err(Error::Validation(format!("weed fraction {v} outside [0, 1]")));
            }
        }
        Ok(FractionMask { raster })
    }

    pub fn raster(&self) -> &GeoRaster<T> {
        &self.raster
    }

    pub fn into_raster(self) -> GeoRaster<T> {
        self.raster
    }

    pub fn values(&self) -> &[T] {
        self.raster.data()
    }

    /// Block-averages an existing fraction mask by a further integer factor.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let target = self.raster.grid().coarsened(factor)?;
        FractionMask::new(resample(&self.raster, &target, ResampleMethod::BlockAverage)?)
    }

    pub fn area_report(&self) -> Result<AreaReport> {
        area_report(&self.raster)
    }
}

/// Value convention of a binary mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryEncoding {
    /// 0 = crop, 1 = weed.
    ZeroOne,
    /// 0 = crop, 255 = weed (8-bit PNG convention).
    ZeroMax,
}

impl BinaryEncoding {
    pub fn weed_value(self) -> f64 {
        match self {
            BinaryEncoding::ZeroOne => 1.0,
            BinaryEncoding::ZeroMax => 255.0,
        }
    }
}

/// Detects whether a single-band mask uses `{0,1}` or `{0,255}`.
pub fn binary_encoding<T: Scalar>(mask: &GeoRaster<T>) -> Result<BinaryEncoding> {
    let mut saw_one = false;
    let mut saw_max = false;
    for &v in mask.data() {
        if mask.is_nodata(v) {
            continue;
        }
        match v.f64() {
            x if x == 0.0 => {}
            x if x == 1.0 => saw_one = true,
            x if x == 255.0 => saw_max = true,
            x => return Err(Error::Validation(format!("mask value {x} is not binary"))),
        }
    }
    match (saw_one, saw_max) {
        (true, true) => Err(Error::Validation("mask mixes 1 and 255 as weed values".into())),
        (_, true) => Ok(BinaryEncoding::ZeroMax),
        _ => Ok(BinaryEncoding::ZeroOne),
    }
}

/// Fraction of weed pixels in each `factor x factor` block of a binary mask.
///
/// The output grid has the same origin and `factor`-times larger pixels. A
/// block touching any nodata pixel is nodata (NaN) in the output.
pub fn block_fraction<T: Scalar>(mask: &GeoRaster<T>, factor: usize) -> Result<FractionMask<T>> {
    if mask.bands() != 1 {
        return Err(Error::Validation("binary mask must be single-band".into()));
    }
    if factor == 0 {
        return Err(Error::Parameter("factor must be at least 1".into()));
    }
    let target = mask.grid().coarsened(factor)?;
    let weed = T::of(binary_encoding(mask)?.weed_value());
    let (w, ow) = (mask.width(), target.width);
    let denom = T::of_usize(factor * factor);
    let src = mask.data();
    let mut data = vec![T::nan(); target.len()];
    let missing: usize = data
        .par_chunks_mut(ow)
        .enumerate()
        .map(|(orow, out)| {
            let mut missing = 0;
            for (ocol, o) in out.iter_mut().enumerate() {
                let mut count = 0usize;
                let mut nodata = false;
                for r in orow * factor..(orow + 1) * factor {
                    for &v in &src[r * w + ocol * factor..r * w + (ocol + 1) * factor] {
                        if mask.is_nodata(v) {
                            nodata = true;
                        } else if v == weed {
                            count += 1;
                        }
                    }
                }
                if nodata {
                    missing += 1;
                } else {
                    *o = T::of_usize(count) / denom;
                }
            }
            missing
        })
        .sum();
    let nodata = (missing > 0 || mask.nodata().is_some()).then(T::nan);
    let raster =
        GeoRaster::new(target, 1, DataType::F32, data, nodata)?.with_band_names(vec!["weed_fraction".into()])?;
    Ok(FractionMask { raster })
}

/// Land and weed areas in acres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaReport {
    pub total_land_acres: f64,
    pub weed_acres: f64,
    pub weed_pct: f64,
}

impl AreaReport {
    pub fn from_areas_m2(total_land_m2: f64, weed_m2: f64) -> Result<Self> {
        if !(total_land_m2 > 0.0) {
            return Err(Error::Parameter("raster has no valid land pixels".into()));
        }
        Ok(AreaReport {
            total_land_acres: total_land_m2 / SQ_METRES_PER_ACRE,
            weed_acres: weed_m2 / SQ_METRES_PER_ACRE,
            weed_pct: weed_m2 / total_land_m2 * 100.0,
        })
    }
}

/// Pixel area in square metres, or a parameter error when the CRS does not
/// carry metric units.
pub fn pixel_area_m2(grid: &Grid) -> Result<f64> {
    let unit = metres_per_unit_sq(&grid.crs).ok_or_else(|| {
        Error::Parameter(format!(
            "pixel size in metres is unknown for CRS '{}'; a projected metric CRS is required",
            grid.crs
        ))
    })?;
    Ok(grid.transform.pixel_area() * unit)
}

/// Area accounting for a fraction mask or a binary `{0,1}` / `{0,255}` mask.
pub fn area_report<T: Scalar>(raster: &GeoRaster<T>) -> Result<AreaReport> {
    if raster.bands() != 1 {
        return Err(Error::Validation("area report needs a single-band mask".into()));
    }
    let area = pixel_area_m2(&raster.grid())?;
    let scale = if raster.data().iter().any(|&v| !raster.is_nodata(v) && v > T::one()) {
        binary_encoding(raster)?.weed_value()
    } else {
        1.0
    };
    let mut land = 0usize;
    let mut weed = 0.0f64;
    for &v in raster.data() {
        if raster.is_nodata(v) {
            continue;
        }
        let f = v.f64() / scale;
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Validation(format!("weed fraction {f} outside [0, 1]")));
        }
        land += 1;
        weed += f;
    }
    AreaReport::from_areas_m2(land as f64 * area, weed * area)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Heldout,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Heldout, Split::Test];

    pub fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Heldout => 1,
            Split::Test => 2,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Split::Train),
            1 => Ok(Split::Heldout),
            2 => Ok(Split::Test),
            _ => Err(Error::Validation(format!("split code {c} is not 0, 1 or 2"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Heldout => "heldout",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "heldout" | "held-out" | "held_out" => Ok(Split::Heldout),
            "test" => Ok(Split::Test),
            other => Err(Error::Parameter(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub heldout: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, heldout: f64, test: f64) -> Result<Self> {
        let s = SplitFractions { train, heldout, test };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.heldout, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Parameter(format!(
                "split fractions must be non-negative, got {parts:?}"
            )));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "split fractions must sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    pub fn get(&self, s: Split) -> f64 {
        match s {
            Split::Train => self.train,
            Split::Heldout => self.heldout,
            Split::Test => self.test,
        }
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.45,
            heldout: 0.25,
            test: 0.30,
        }
    }
}

/// Per-pixel split labels, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Split>,
}

impl SplitMap {
    pub fn get(&self, col: usize, row: usize) -> Split {
        self.labels[row * self.width + col]
    }

    pub fn realized_fractions(&self) -> SplitFractions {
        let n = self.labels.len() as f64;
        let count = |s: Split| self.labels.iter().filter(|&&l| l == s).count() as f64 / n;
        SplitFractions {
            train: count(Split::Train),
            heldout: count(Split::Heldout),
            test: count(Split::Test),
        }
    }

    /// Boolean membership mask for one split.
    pub fn mask(&self, split: Split) -> Vec<bool> {
        self.labels.iter().map(|&l| l == split).collect()
    }

    /// Repeats every label over a `factor x factor` block (e.g. satellite
    /// labels onto the drone grid).
    pub fn upsample(&self, factor: usize) -> SplitMap {
        let (w, h) = (self.width * factor, self.height * factor);
        let labels = (0..h)
            .flat_map(|r| (0..w).map(move |c| (c, r)))
            .map(|(c, r)| self.get(c / factor, r / factor))
            .collect();
        SplitMap {
            width: w,
            height: h,
            labels,
        }
    }

    pub fn to_raster<T: Scalar>(&self, grid: Grid) -> Result<GeoRaster<T>> {
        if grid.width != self.width || grid.height != self.height {
            return Err(Error::Alignment("split map and grid dimensions differ".into()));
        }
        let data = self.labels.iter().map(|s| T::of(s.code() as f64)).collect();
        GeoRaster::new(grid, 1, DataType::U8, data, None)?.with_band_names(vec!["split".into()])
    }

    pub fn from_raster<T: Scalar>(raster: &GeoRaster<T>) -> Result<Self> {
        if raster.bands() != 1 {
            return Err(Error::Validation("split raster must be single-band".into()));
        }
        let labels = raster
            .data()
            .iter()
            .map(|v| {
                let x = v.f64();
                if x.fract() != 0.0 || !(0.0..=2.0).contains(&x) {
                    Err(Error::Validation(format!("split code {x} is not 0, 1 or 2")))
                } else {
                    Split::from_code(x as u8)
                }
            })
            .collect::<Result<_>>()?;
        Ok(SplitMap {
            width: raster.width(),
            height: raster.height(),
            labels,
        })
    }
}

/// Assigns square `block x block` tiles (edge tiles may be partial) to
/// train/held-out/test.
///
/// Tiles are shuffled with a seeded ChaCha8 stream, then walked in order; a
/// tile goes to the split whose cumulative pixel quota contains the tile's
/// midpoint. Realized pixel fractions therefore deviate from the targets by
/// at most about half a tile per split boundary.
pub fn split_assign(
    width: usize,
    height: usize,
    block: usize,
    fractions: SplitFractions,
    seed: u64,
) -> Result<SplitMap> {
    fractions.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::Parameter("grid is empty".into()));
    }
    if block == 0 || block > width || block > height {
        return Err(Error::Parameter(format!(
            "block size {block} must be between 1 and the grid size {width}x{height}"
        )));
    }
    let bw = width.div_ceil(block);
    let bh = height.div_ceil(block);
    let mut order: Vec<usize> = (0..bw * bh).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let tile_pixels = |t: usize| {
        let (bx, by) = (t % bw, t / bw);
        let tw = block.min(width - bx * block);
        let th = block.min(height - by * block);
        tw * th
    };
    let total = (width * height) as f64;
    let cut_train = fractions.train;
    let cut_heldout = fractions.train + fractions.heldout;
    let mut tile_split = vec![Split::Train; bw * bh];
    let mut cum = 0usize;
    for &t in &order {
        let n = tile_pixels(t);
        let mid = (cum as f64 + n as f64 / 2.0) / total;
        tile_split[t] = if mid < cut_train {
            Split::Train
        } else if mid < cut_heldout {
            Split::Heldout
        } else {
            Split::Test
        };
        cum += n;
    }
    let labels = (0..height)
        .flat_map(|r| (0..width).map(move |c| (c, r)))
        .map(|(c, r)| tile_split[(r / block) * bw + c / block])
        .collect();
    Ok(SplitMap { width, height, labels })
}
