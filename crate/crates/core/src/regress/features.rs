use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use super::{Matrix, Regressor};
use crate::error::{Error, Result};
use crate::raster::{BandRole, BandSet, DataType, GeoRaster};
use crate::scalar::Scalar;
use crate::softmask::{Split, SplitMap};

pub const N_FEATURES: usize = 10;

pub const FEATURE_COLUMNS: [&str; N_FEATURES] =
    ["b", "g", "r", "nir", "vre1", "vre2", "vre3", "nnir", "swir1", "swir2"];

const CACHE_MAGIC: &[u8; 4] = b"SGFT";
const CACHE_VERSION: u32 = 1;

/// Pixel samples: ten reflectances in canonical band order, the weed
/// fraction target and the split label.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable<T> {
    features: Matrix<T>,
    target: Vec<T>,
    split: Vec<Split>,
}

impl<T: Scalar> FeatureTable<T> {
    pub fn new(features: Matrix<T>, target: Vec<T>, split: Vec<Split>) -> Result<Self> {
        if features.cols() != N_FEATURES {
            return Err(Error::Validation(format!(
                "feature table needs {N_FEATURES} columns, got {}",
                features.cols()
            )));
        }
        if target.len() != features.rows() || split.len() != features.rows() {
            return Err(Error::Validation("feature, target and split lengths differ".into()));
        }
        if features.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("feature table contains non-finite values".into()));
        }
        if let Some(t) = target.iter().find(|t| !(t.f64() >= 0.0 && t.f64() <= 1.0)) {
            return Err(Error::Validation(format!("target {t} outside [0, 1]")));
        }
        Ok(FeatureTable {
            features,
            target,
            split,
        })
    }

    /// One row per satellite pixel where neither the bands nor the fraction
    /// are nodata, in row-major pixel order.
    pub fn from_rasters(
        satellite: &GeoRaster<T>,
        bands: &BandSet,
        fraction: &GeoRaster<T>,
        split: &SplitMap,
    ) -> Result<Self> {
        if !satellite.grid().same_as(&fraction.grid()) {
            return Err(Error::Alignment(
                "satellite and fraction rasters are on different grids".into(),
            ));
        }
        if split.width != satellite.width() || split.height != satellite.height() {
            return Err(Error::Alignment("split map does not match the satellite grid".into()));
        }
        if bands.max_index() >= satellite.bands() {
            return Err(Error::Validation(format!(
                "band set needs {} bands, raster has {}",
                bands.max_index() + 1,
                satellite.bands()
            )));
        }
        if fraction.bands() != 1 {
            return Err(Error::Validation("fraction raster must be single-band".into()));
        }
        let order = bands.ordered_indices();
        let mut data = Vec::new();
        let mut target = Vec::new();
        let mut labels = Vec::new();
        let mut skipped = 0usize;
        for row in 0..satellite.height() {
            for col in 0..satellite.width() {
                let t = fraction.get(0, col, row);
                let px: Vec<T> = order.iter().map(|&b| satellite.get(b, col, row)).collect();
                if fraction.is_nodata(t) || px.iter().any(|&v| satellite.is_nodata(v)) {
                    skipped += 1;
                    continue;
                }
                data.extend(px);
                target.push(t);
                labels.push(split.get(col, row));
            }
        }
        if skipped > 0 {
            log::info!("skipped {skipped} nodata pixels while building the feature table");
        }
        let rows = target.len();
        FeatureTable::new(Matrix::new(rows, N_FEATURES, data)?, target, labels)
    }

    pub fn rows(&self) -> usize {
        self.target.len()
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn target(&self) -> &[T] {
        &self.target
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    /// Features and targets of the rows labelled `split`.
    pub fn subset(&self, split: Split) -> (Matrix<T>, Vec<T>) {
        let idx: Vec<usize> = (0..self.rows()).filter(|&i| self.split[i] == split).collect();
        let target = idx.iter().map(|&i| self.target[i]).collect();
        (self.features.select_rows(&idx), target)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let mut header: Vec<&str> = FEATURE_COLUMNS.to_vec();
        header.extend(["target", "split"]);
        w.write_record(&header)?;
        for i in 0..self.rows() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| v.f64().to_string()).collect();
            rec.push(self.target[i].f64().to_string());
            rec.push(self.split[i].name().to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::Reader::from_reader(BufReader::new(file));
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let expected: Vec<&str> = FEATURE_COLUMNS.iter().copied().chain(["target", "split"]).collect();
        if header != expected {
            return Err(Error::Format(format!("unexpected feature CSV header {header:?}")));
        }
        let mut data = Vec::new();
        let mut target = Vec::new();
        let mut split = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let num = |s: &str| {
                s.parse::<f64>()
                    .map(T::of)
                    .map_err(|_| Error::Format(format!("bad number {s:?} in feature CSV")))
            };
            for s in rec.iter().take(N_FEATURES) {
                data.push(num(s)?);
            }
            target.push(num(&rec[N_FEATURES])?);
            split.push(rec[N_FEATURES + 1].parse()?);
        }
        let rows = target.len();
        FeatureTable::new(Matrix::new(rows, N_FEATURES, data)?, target, split)
    }

    /// Compact binary cache: magic, version, row and column counts, then the
    /// features, targets (all little-endian f64) and split codes.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut buf = Vec::with_capacity(20 + self.rows() * (8 * (N_FEATURES + 1) + 1));
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(N_FEATURES as u32).to_le_bytes());
        for v in self.features.data().iter().chain(&self.target) {
            buf.extend_from_slice(&v.f64().to_le_bytes());
        }
        buf.extend(self.split.iter().map(|s| s.code()));
        w.write_all(&buf)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 20 || &bytes[..4] != CACHE_MAGIC {
            return Err(Error::Format("not a feature-table cache".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CACHE_VERSION {
            return Err(Error::Format(format!("unsupported feature cache version {version}")));
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        let n_floats = rows * (cols + 1);
        if bytes.len() != 20 + n_floats * 8 + rows {
            return Err(Error::Format("feature cache length does not match its header".into()));
        }
        let floats: Vec<T> = bytes[20..20 + n_floats * 8]
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let split = bytes[20 + n_floats * 8..]
            .iter()
            .map(|&c| Split::from_code(c))
            .collect::<Result<_>>()?;
        let (features, target) = floats.split_at(rows * cols);
        FeatureTable::new(Matrix::new(rows, cols, features.to_vec())?, target.to_vec(), split)
    }
}

/// Runs a regressor over every satellite pixel. Pixels with any nodata band
/// become NaN nodata; the result is a single `weed_fraction` band in f32.
pub fn predict_raster<T: Scalar, R: Regressor<T> + ?Sized>(
    model: &R,
    satellite: &GeoRaster<T>,
    bands: &BandSet,
) -> Result<GeoRaster<T>> {
    if model.n_features() != N_FEATURES {
        return Err(Error::Parameter(format!(
            "model expects {} features, satellite pixels have {N_FEATURES}",
            model.n_features()
        )));
    }
    if bands.max_index() >= satellite.bands() {
        return Err(Error::Validation("band set does not fit the satellite raster".into()));
    }
    let order = bands.ordered_indices();
    let (w, h) = (satellite.width(), satellite.height());
    let out: Vec<T> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (col, row) = (i % w, i / w);
            let px: Vec<T> = order.iter().map(|&b| satellite.get(b, col, row)).collect();
            if px.iter().any(|&v| satellite.is_nodata(v)) {
                T::nan()
            } else {
                T::of(model.predict_row(&px).f64() as f32 as f64)
            }
        })
        .collect();
    GeoRaster::new(satellite.grid(), 1, DataType::F32, out, Some(T::nan()))?
        .with_band_names(vec!["weed_fraction".into()])
}

impl BandRole {
    /// Column index of this band in a [`FeatureTable`].
    pub fn feature_column(self) -> usize {
        BandRole::ALL.iter().position(|&r| r == self).unwrap()
    }
}
