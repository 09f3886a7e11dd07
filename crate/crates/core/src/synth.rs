//! Seeded synthetic fields: a drone-resolution weed mask made of random
//! elliptical patches, the matching weed-fraction mask, ten Sentinel-2-like
//! bands mixed from per-class Gaussian spectra, and a noisy prediction.
//!
//! Spectra are statistical stand-ins, not radiative-transfer output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BandRole, DataType, GeoRaster, GeoTransform, Grid};
use crate::scalar::Scalar;
use crate::softmask::{area_report, block_fraction, AreaReport, FractionMask};

const STREAM_PATCHES: u64 = 0;
const STREAM_PREDICTION: u64 = 1;
const STREAM_SPECTRA: u64 = 1 << 32;

/// Tolerance of the radius-scale search, in percentage points.
const FIT_TOLERANCE_PCT: f64 = 0.05;
/// Largest accepted gap between generated and target weed percentage.
pub const MAX_DEVIATION_PCT: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadiusDist {
    pub mean_m: f64,
    pub sd_m: f64,
    /// Cap on any semi-axis after scaling to the target fraction.
    pub max_m: f64,
}

/// Crop and weed reflectance for one band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandProfile {
    pub band: BandRole,
    pub crop_mean: f64,
    pub weed_mean: f64,
    pub sd: f64,
}

/// Default spectra; weed and crop differ most in vre2 and nir.
pub fn default_profiles() -> Vec<BandProfile> {
    use BandRole::*;
    [
        (Blue, 0.040, 0.046),
        (Green, 0.080, 0.095),
        (Red, 0.050, 0.058),
        (Nir, 0.300, 0.450),
        (Vre1, 0.120, 0.135),
        (Vre2, 0.250, 0.390),
        (Vre3, 0.300, 0.380),
        (Nnir, 0.320, 0.400),
        (Swir1, 0.200, 0.210),
        (Swir2, 0.120, 0.118),
    ]
    .into_iter()
    .map(|(band, crop_mean, weed_mean)| BandProfile {
        band,
        crop_mean,
        weed_mean,
        sd: 0.02,
    })
    .collect()
}

/// Parameters of a synthetic field. Unlisted JSON fields take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSpec {
    pub width_m: f64,
    pub height_m: f64,
    pub drone_pixel_m: f64,
    pub sat_pixel_m: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub crs: String,
    pub weed_patch_count: usize,
    pub patch_radius: RadiusDist,
    /// Smallest minor/major axis ratio of a patch.
    pub min_aspect: f64,
    pub target_weed_pct: f64,
    pub bands: Vec<BandProfile>,
    /// Standard deviation of the additive prediction noise, in fraction units.
    pub prediction_noise_sd: f64,
    pub seed: u64,
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec {
            width_m: 200.0,
            height_m: 200.0,
            drone_pixel_m: 0.05,
            sat_pixel_m: 10.0,
            origin_x: 500_000.0,
            origin_y: 4_000_000.0,
            crs: "EPSG:32614".into(),
            weed_patch_count: 30,
            patch_radius: RadiusDist {
                mean_m: 4.0,
                sd_m: 1.5,
                max_m: 60.0,
            },
            min_aspect: 0.4,
            target_weed_pct: 4.85,
            bands: default_profiles(),
            prediction_noise_sd: 0.05,
            seed: 0,
        }
    }
}

impl FieldSpec {
    /// A 50-acre field (450 m square) with 4.85% weed at 0.5 m drone pixels.
    pub fn demo() -> Self {
        FieldSpec {
            width_m: 450.0,
            height_m: 450.0,
            drone_pixel_m: 0.5,
            weed_patch_count: 60,
            ..FieldSpec::default()
        }
    }

    /// Drone pixels per satellite pixel edge.
    pub fn ratio(&self) -> Result<usize> {
        integer_ratio(self.sat_pixel_m, self.drone_pixel_m, "satellite pixel / drone pixel")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("width_m", self.width_m),
            ("height_m", self.height_m),
            ("drone_pixel_m", self.drone_pixel_m),
            ("sat_pixel_m", self.sat_pixel_m),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive")));
            }
        }
        self.ratio()?;
        integer_ratio(self.width_m, self.sat_pixel_m, "width / satellite pixel")?;
        integer_ratio(self.height_m, self.sat_pixel_m, "height / satellite pixel")?;
        if !(0.0..100.0).contains(&self.target_weed_pct) {
            return Err(Error::Parameter("target_weed_pct must be in [0, 100)".into()));
        }
        let r = self.patch_radius;
        if !(r.mean_m > 0.0 && r.sd_m >= 0.0 && r.max_m > 0.0) {
            return Err(Error::Parameter("patch radius needs mean > 0, sd >= 0, max > 0".into()));
        }
        if !(self.min_aspect > 0.0 && self.min_aspect <= 1.0) {
            return Err(Error::Parameter("min_aspect must be in (0, 1]".into()));
        }
        if !(self.prediction_noise_sd >= 0.0 && self.prediction_noise_sd.is_finite()) {
            return Err(Error::Parameter("prediction_noise_sd must be non-negative".into()));
        }
        let mut seen: Vec<BandRole> = self.bands.iter().map(|b| b.band).collect();
        seen.sort();
        if seen != BandRole::ALL.to_vec() {
            return Err(Error::Parameter(
                "bands must list each of the ten band roles once".into(),
            ));
        }
        if self
            .bands
            .iter()
            .any(|b| !(b.sd >= 0.0) || !b.crop_mean.is_finite() || !b.weed_mean.is_finite())
        {
            return Err(Error::Parameter("band profiles need finite means and sd >= 0".into()));
        }
        Ok(())
    }
}

fn integer_ratio(num: f64, den: f64, what: &str) -> Result<usize> {
    let r = num / den;
    let k = r.round();
    if k < 1.0 || (r - k).abs() > 1e-6 {
        return Err(Error::Parameter(format!("{what} = {r} is not a positive integer")));
    }
    Ok(k as usize)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Patch {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Patch {
    fn half_height(&self, s: f64) -> f64 {
        s * (self.a * self.a * self.sin * self.sin + self.b * self.b * self.cos * self.cos).sqrt()
    }

    /// x-interval covered on the horizontal line at `y`, at radius scale `s`.
    fn span(&self, y: f64, s: f64) -> Option<(f64, f64)> {
        let (a2, b2) = ((s * self.a).powi(2), (s * self.b).powi(2));
        let dy = y - self.cy;
        let (c, sn) = (self.cos, self.sin);
        let qa = c * c / a2 + sn * sn / b2;
        let qb = 2.0 * dy * c * sn * (1.0 / a2 - 1.0 / b2);
        let qc = dy * dy * (sn * sn / a2 + c * c / b2) - 1.0;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return None;
        }
        let root = disc.sqrt();
        Some((self.cx + (-qb - root) / (2.0 * qa), self.cx + (-qb + root) / (2.0 * qa)))
    }
}

fn draw_patches(spec: &FieldSpec) -> Vec<Patch> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(STREAM_PATCHES);
    let r = spec.patch_radius;
    let radius = Normal::new(r.mean_m, r.sd_m).unwrap();
    (0..spec.weed_patch_count)
        .map(|_| {
            let cx = rng.random::<f64>() * spec.width_m;
            let cy = rng.random::<f64>() * spec.height_m;
            let a = radius.sample(&mut rng).max(0.1 * r.mean_m);
            let aspect = spec.min_aspect + (1.0 - spec.min_aspect) * rng.random::<f64>();
            let theta = rng.random::<f64>() * std::f64::consts::PI;
            Patch {
                cx,
                cy,
                a,
                b: a * aspect,
                cos: theta.cos(),
                sin: theta.sin(),
            }
        })
        .collect()
}

/// Column ranges `[start, end)` of weed pixels in one drone row, merged.
fn row_runs(patches: &[Patch], s: f64, row: usize, px: f64, width: usize) -> Vec<(usize, usize)> {
    let y = (row as f64 + 0.5) * px;
    let mut runs: Vec<(usize, usize)> = patches
        .iter()
        .filter(|p| (y - p.cy).abs() <= p.half_height(s))
        .filter_map(|p| p.span(y, s))
        .filter_map(|(x0, x1)| {
            let first = (x0 / px - 0.5).ceil().max(0.0);
            let last = (x1 / px - 0.5).floor().min(width as f64 - 1.0);
            (first <= last).then_some((first as usize, last as usize + 1))
        })
        .collect();
    runs.sort_unstable();
    let mut merged: Vec<(usize, usize)> = Vec::with_capacity(runs.len());
    for (a, b) in runs {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    merged
}

fn weed_pixels(patches: &[Patch], s: f64, px: f64, width: usize, height: usize) -> usize {
    (0..height)
        .into_par_iter()
        .map(|r| {
            row_runs(patches, s, r, px, width)
                .iter()
                .map(|(a, b)| b - a)
                .sum::<usize>()
        })
        .sum()
}

/// Finds the radius scale whose weed cover is closest to the target.
fn fit_scale(spec: &FieldSpec, patches: &[Patch], width: usize, height: usize) -> Result<(f64, f64)> {
    let total = (width * height) as f64;
    let pct = |s: f64| weed_pixels(patches, s, spec.drone_pixel_m, width, height) as f64 / total * 100.0;
    let target = spec.target_weed_pct;
    if patches.is_empty() || target == 0.0 {
        if target > MAX_DEVIATION_PCT {
            return Err(Error::Generation(format!(
                "no weed patches cannot produce {target}% weed"
            )));
        }
        return Ok((0.0, 0.0));
    }
    let largest = patches.iter().map(|p| p.a).fold(0.0, f64::max);
    let hi_scale = spec.patch_radius.max_m / largest;
    let hi_pct = pct(hi_scale);
    if hi_pct < target - MAX_DEVIATION_PCT {
        return Err(Error::Generation(format!(
            "{} patches capped at {} m radius cover at most {hi_pct:.2}%, below the {target}% target",
            patches.len(),
            spec.patch_radius.max_m
        )));
    }
    let (mut lo, mut hi) = (0.0, hi_scale);
    let mut best = (hi_scale, hi_pct);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let p = pct(mid);
        if (p - target).abs() < (best.1 - target).abs() {
            best = (mid, p);
        }
        if (p - target).abs() <= FIT_TOLERANCE_PCT {
            break;
        }
        if p < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (best.1 - target).abs() > MAX_DEVIATION_PCT {
        return Err(Error::Generation(format!(
            "closest achievable weed cover is {:.2}% for a {target}% target",
            best.1
        )));
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub drone_width: usize,
    pub drone_height: usize,
    pub sat_width: usize,
    pub sat_height: usize,
    pub ratio: usize,
    pub patches: usize,
    pub radius_scale: f64,
    pub weed_pct: f64,
    pub area: AreaReport,
}

#[derive(Clone, Debug)]
pub struct SyntheticField<T> {
    /// Binary `{0,1}` drone mask.
    pub drone_mask: GeoRaster<T>,
    /// Ten bands in canonical order with band names set.
    pub satellite: GeoRaster<T>,
    pub fraction: FractionMask<T>,
    /// Truth fraction plus Gaussian noise, clamped to `[0, 1]`.
    pub prediction: GeoRaster<T>,
    pub summary: SynthSummary,
}

/// Samples one satellite raster with per-pixel mixtures of crop and weed
/// spectra: `(1 - f) * crop + f * weed`, each draw Gaussian per band.
pub fn synth_spectra<T: Scalar>(fraction: &GeoRaster<T>, profiles: &[BandProfile], seed: u64) -> Result<GeoRaster<T>> {
    let (w, h) = (fraction.width(), fraction.height());
    let mut ordered = profiles.to_vec();
    ordered.sort_by_key(|p| p.band);
    let dists: Vec<(Normal<f64>, Normal<f64>)> = ordered
        .iter()
        .map(|p| {
            (
                Normal::new(p.crop_mean, p.sd).unwrap(),
                Normal::new(p.weed_mean, p.sd).unwrap(),
            )
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(STREAM_SPECTRA + r as u64);
            let mut out = vec![0.0; dists.len() * w];
            for c in 0..w {
                let f = fraction.get(0, c, r).f64();
                for (b, (crop, weed)) in dists.iter().enumerate() {
                    let (vc, vw) = (crop.sample(&mut rng), weed.sample(&mut rng));
                    out[b * w + c] = ((1.0 - f) * vc + f * vw).max(0.0) as f32 as f64;
                }
            }
            out
        })
        .collect();
    let mut data = vec![T::zero(); dists.len() * w * h];
    for (r, row) in rows.iter().enumerate() {
        for b in 0..dists.len() {
            for c in 0..w {
                data[b * w * h + r * w + c] = T::of(row[b * w + c]);
            }
        }
    }
    let names = ordered.iter().map(|p| p.band.short_name().to_string()).collect();
    GeoRaster::new(fraction.grid(), dists.len(), DataType::F32, data, None)?.with_band_names(names)
}

/// `clamp(truth + N(0, sd))`, rounded through f32.
pub fn noisy_prediction<T: Scalar>(truth: &GeoRaster<T>, sd: f64, seed: u64) -> Result<GeoRaster<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_PREDICTION);
    let noise = Normal::new(0.0, sd).map_err(|e| Error::Parameter(e.to_string()))?;
    let data = truth
        .data()
        .iter()
        .map(|&v| {
            let z = noise.sample(&mut rng);
            if truth.is_nodata(v) {
                v
            } else {
                T::of((v.f64() + z).clamp(0.0, 1.0) as f32 as f64)
            }
        })
        .collect();
    GeoRaster::new(truth.grid(), 1, DataType::F32, data, truth.nodata())?.with_band_names(vec!["weed_fraction".into()])
}

/// Generates a complete synthetic field from `spec`.
pub fn generate<T: Scalar>(spec: &FieldSpec) -> Result<SyntheticField<T>> {
    spec.validate()?;
    let ratio = spec.ratio()?;
    let sat_w = integer_ratio(spec.width_m, spec.sat_pixel_m, "width")?;
    let sat_h = integer_ratio(spec.height_m, spec.sat_pixel_m, "height")?;
    let (w, h) = (sat_w * ratio, sat_h * ratio);
    let patches = draw_patches(spec);
    let (scale, weed_pct) = fit_scale(spec, &patches, w, h)?;
    log::info!(
        "radius scale {scale:.4} gives {weed_pct:.3}% weed ({} patches)",
        patches.len()
    );

    let mut bits = vec![T::zero(); w * h];
    if scale > 0.0 {
        bits.par_chunks_mut(w).enumerate().for_each(|(r, row)| {
            for (a, b) in row_runs(&patches, scale, r, spec.drone_pixel_m, w) {
                row[a..b].fill(T::one());
            }
        });
    }
    let drone_grid = Grid::new(
        GeoTransform::new(spec.origin_x, spec.origin_y, spec.drone_pixel_m, spec.drone_pixel_m)?,
        w,
        h,
        spec.crs.clone(),
    )?;
    let drone_mask = GeoRaster::new(drone_grid, 1, DataType::U8, bits, None)?.with_band_names(vec!["weed".into()])?;
    let fraction = block_fraction(&drone_mask, ratio)?;
    let satellite = synth_spectra(fraction.raster(), &spec.bands, spec.seed)?;
    let prediction = noisy_prediction(fraction.raster(), spec.prediction_noise_sd, spec.seed)?;
    let summary = SynthSummary {
        drone_width: w,
        drone_height: h,
        sat_width: sat_w,
        sat_height: sat_h,
        ratio,
        patches: patches.len(),
        radius_scale: scale,
        weed_pct,
        area: area_report(&drone_mask)?,
    };
    Ok(SyntheticField {
        drone_mask,
        satellite,
        fraction,
        prediction,
        summary,
    })
}
