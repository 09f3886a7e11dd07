use serde::{Deserialize, Serialize};

use super::{BandRole, BandSet, DataType, GeoRaster};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Linear stretch bounds for one channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stretch {
    pub lo: f64,
    pub hi: f64,
}

impl Stretch {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Parameter(format!(
                "stretch bounds need lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Stretch { lo, hi })
    }

    /// Maps `v` to `0..=255`: `(v - lo) / (hi - lo) * 255`, clamped, then
    /// rounded half away from zero (so the exact midpoint gives 128).
    pub fn apply(&self, v: f64) -> u8 {
        let s = (v - self.lo) / (self.hi - self.lo) * 255.0;
        s.clamp(0.0, 255.0).round() as u8
    }
}

/// Which band role feeds each output channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositeMapping {
    pub red: BandRole,
    pub green: BandRole,
    pub blue: BandRole,
}

impl CompositeMapping {
    pub fn roles(&self) -> [BandRole; 3] {
        [self.red, self.green, self.blue]
    }
}

impl Default for CompositeMapping {
    /// NIR, green and the second red-edge band, the vegetation false-color view.
    fn default() -> Self {
        CompositeMapping {
            red: BandRole::Nir,
            green: BandRole::Green,
            blue: BandRole::Vre2,
        }
    }
}

/// Percentile with linear interpolation between order statistics
/// (`p` in `0..=100`). Returns `None` for an empty input.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(v.len() - 1);
    let t = pos - i as f64;
    Some(v[i] + (v[j] - v[i]) * t)
}

/// Builds a 3-band `U8` composite. Without explicit `stretch`, each channel
/// is stretched between the 2nd and 98th percentiles of its source band.
/// Nodata source pixels become 0 in every channel.
pub fn false_color_composite<T: Scalar>(
    sat: &GeoRaster<T>,
    bands: &BandSet,
    mapping: CompositeMapping,
    stretch: Option<[Stretch; 3]>,
) -> Result<GeoRaster<T>> {
    let n = sat.width() * sat.height();
    let mut data = Vec::with_capacity(3 * n);
    for (ch, role) in mapping.roles().into_iter().enumerate() {
        let b = bands.index(role);
        if b >= sat.bands() {
            return Err(Error::Parameter(format!(
                "band role {role} maps to band {b} but raster has {} bands",
                sat.bands()
            )));
        }
        let src = sat.band(b);
        let s = match stretch {
            Some(s) => Stretch::new(s[ch].lo, s[ch].hi)?,
            None => {
                let valid: Vec<f64> = src.iter().filter(|v| !sat.is_nodata(**v)).map(|v| v.f64()).collect();
                let lo = percentile(&valid, 2.0);
                let hi = percentile(&valid, 98.0);
                match (lo, hi) {
                    (Some(lo), Some(hi)) => Stretch::new(lo, hi)?,
                    _ => return Err(Error::Parameter(format!("band {role} has no valid pixels"))),
                }
            }
        };
        data.extend(src.iter().map(|&v| {
            if sat.is_nodata(v) {
                T::zero()
            } else {
                T::of(s.apply(v.f64()) as f64)
            }
        }));
    }
    let out = GeoRaster::new(sat.grid(), 3, DataType::U8, data, None)?;
    out.with_band_names(vec!["red".into(), "green".into(), "blue".into()])
}
