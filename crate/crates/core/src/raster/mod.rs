//! Gridded raster model with axis-aligned geotransforms.
//!
//! Coordinates follow the pixel-center convention: pixel `(col, row)` covers
//! `[origin_x + col*pixel_w, origin_x + (col+1)*pixel_w)` horizontally and its
//! center sits half a pixel in from that corner. Rows run south, so ground `y`
//! decreases with increasing row index.

mod bands;
mod composite;
pub mod grf;
mod resample;

pub use bands::{BandRole, BandSet};
pub use composite::{false_color_composite, percentile, CompositeMapping, Stretch};
pub use resample::{align, resample, ResampleMethod};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative tolerance when comparing grid geometry.
pub(crate) const GRID_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_w: f64,
    pub pixel_h: f64,
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, pixel_w: f64, pixel_h: f64) -> Result<Self> {
        let t = GeoTransform {
            origin_x,
            origin_y,
            pixel_w,
            pixel_h,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_w > 0.0 && self.pixel_h > 0.0) || !self.pixel_w.is_finite() || !self.pixel_h.is_finite() {
            return Err(Error::Parameter(format!(
                "pixel sizes must be positive and finite, got {} x {}",
                self.pixel_w, self.pixel_h
            )));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::Parameter("origin must be finite".into()));
        }
        Ok(())
    }

    /// Ground coordinates of the center of pixel `(col, row)`.
    pub fn pixel_center(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.origin_x + (col + 0.5) * self.pixel_w,
            self.origin_y - (row + 0.5) * self.pixel_h,
        )
    }

    /// Inverse of [`pixel_center`](Self::pixel_center): fractional pixel index
    /// whose center is at `(x, y)`.
    pub fn ground_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_x) / self.pixel_w - 0.5,
            (self.origin_y - y) / self.pixel_h - 0.5,
        )
    }

    /// Six-term affine in the `[origin_x, pixel_w, 0, origin_y, 0, -pixel_h]` layout.
    pub fn to_affine(&self) -> [f64; 6] {
        [self.origin_x, self.pixel_w, 0.0, self.origin_y, 0.0, -self.pixel_h]
    }

    pub fn from_affine(a: [f64; 6]) -> Result<Self> {
        if a[2] != 0.0 || a[4] != 0.0 {
            return Err(Error::Parameter("rotated geotransforms are not supported".into()));
        }
        if !(a[5] < 0.0) {
            return Err(Error::Parameter(
                "row axis must point south (negative sixth affine term)".into(),
            ));
        }
        GeoTransform::new(a[0], a[3], a[1], -a[5])
    }

    /// Same origin, pixels `factor` times larger.
    pub fn coarsened(&self, factor: usize) -> Self {
        GeoTransform {
            pixel_w: self.pixel_w * factor as f64,
            pixel_h: self.pixel_h * factor as f64,
            ..*self
        }
    }

    /// Shifted by whole pixels (positive `dcol` moves east, positive `drow` south).
    pub fn shifted(&self, dcol: f64, drow: f64) -> Self {
        GeoTransform {
            origin_x: self.origin_x + dcol * self.pixel_w,
            origin_y: self.origin_y - drow * self.pixel_h,
            ..*self
        }
    }

    pub fn pixel_area(&self) -> f64 {
        self.pixel_w * self.pixel_h
    }

    pub fn approx_eq(&self, other: &GeoTransform) -> bool {
        let close = |a: f64, b: f64, scale: f64| (a - b).abs() <= GRID_EPS * scale;
        let scale = self.pixel_w.min(self.pixel_h);
        close(self.pixel_w, other.pixel_w, self.pixel_w)
            && close(self.pixel_h, other.pixel_h, self.pixel_h)
            && close(self.origin_x, other.origin_x, scale)
            && close(self.origin_y, other.origin_y, scale)
    }
}

/// Target grid description: transform, dimensions and CRS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub transform: GeoTransform,
    pub width: usize,
    pub height: usize,
    pub crs: String,
}

impl Grid {
    pub fn new(transform: GeoTransform, width: usize, height: usize, crs: impl Into<String>) -> Result<Self> {
        transform.validate()?;
        if width == 0 || height == 0 {
            return Err(Error::Parameter("grid dimensions must be at least 1x1".into()));
        }
        Ok(Grid {
            transform,
            width,
            height,
            crs: crs.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ground extent as `(min_x, min_y, max_x, max_y)`.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        let t = &self.transform;
        (
            t.origin_x,
            t.origin_y - self.height as f64 * t.pixel_h,
            t.origin_x + self.width as f64 * t.pixel_w,
            t.origin_y,
        )
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.crs == other.crs
            && self.transform.approx_eq(&other.transform)
    }

    /// Same ground footprint with pixels `factor` times larger.
    pub fn coarsened(&self, factor: usize) -> Result<Grid> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::Parameter(format!(
                "grid {}x{} is not divisible by factor {}",
                self.width, self.height, factor
            )));
        }
        Grid::new(
            self.transform.coarsened(factor),
            self.width / factor,
            self.height / factor,
            self.crs.clone(),
        )
    }
}

/// On-disk sample type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    U8,
    F32,
}

impl DataType {
    pub fn size_bytes(self) -> usize {
        match self {
            DataType::U8 => 1,
            DataType::F32 => 4,
        }
    }
}

/// N-band raster stored band-sequentially.
///
/// Values are held as `T` regardless of the on-disk `dtype`; a `U8` raster
/// only ever holds integers in `0..=255`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeoRaster<T> {
    width: usize,
    height: usize,
    bands: usize,
    dtype: DataType,
    data: Vec<T>,
    transform: GeoTransform,
    crs: String,
    nodata: Option<T>,
    band_names: Vec<String>,
}

impl<T: Scalar> GeoRaster<T> {
    pub fn new(grid: Grid, bands: usize, dtype: DataType, data: Vec<T>, nodata: Option<T>) -> Result<Self> {
        let r = GeoRaster {
            width: grid.width,
            height: grid.height,
            bands,
            dtype,
            data,
            transform: grid.transform,
            crs: grid.crs,
            nodata,
            band_names: Vec::new(),
        };
        r.validate()?;
        Ok(r)
    }

    pub fn filled(grid: Grid, bands: usize, dtype: DataType, value: T) -> Result<Self> {
        let n = grid.len() * bands;
        GeoRaster::new(grid, bands, dtype, vec![value; n], None)
    }

    /// Single-band raster from a closure over `(col, row)`.
    pub fn from_fn(grid: Grid, dtype: DataType, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(grid.len());
        for row in 0..grid.height {
            for col in 0..grid.width {
                data.push(f(col, row));
            }
        }
        GeoRaster::new(grid, 1, dtype, data, None)
    }

    pub fn with_band_names(mut self, names: Vec<String>) -> Result<Self> {
        if !names.is_empty() && names.len() != self.bands {
            return Err(Error::Parameter(format!(
                "{} band names for {} bands",
                names.len(),
                self.bands
            )));
        }
        self.band_names = names;
        Ok(self)
    }

    pub fn with_nodata(mut self, nodata: Option<T>) -> Result<Self> {
        self.nodata = nodata;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.bands == 0 {
            return Err(Error::Parameter(format!(
                "raster must have positive dimensions, got {}x{}x{}",
                self.width, self.height, self.bands
            )));
        }
        self.transform.validate()?;
        let expected = self.width * self.height * self.bands;
        if self.data.len() != expected {
            return Err(Error::Validation(format!(
                "data length {} != width*height*bands = {}",
                self.data.len(),
                expected
            )));
        }
        if let Some(nd) = self.nodata {
            if self.dtype == DataType::U8 && !is_u8_value(nd) {
                return Err(Error::Validation(format!("nodata {nd} is not representable as u8")));
            }
        }
        for &v in &self.data {
            if self.is_nodata(v) {
                continue;
            }
            let ok = match self.dtype {
                DataType::U8 => is_u8_value(v),
                DataType::F32 => v.is_finite(),
            };
            if !ok {
                return Err(Error::Validation(format!(
                    "value {v} is invalid for dtype {:?}",
                    self.dtype
                )));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn dtype(&self) -> DataType {
        self.dtype
    }

    pub fn transform(&self) -> &GeoTransform {
        &self.transform
    }

    pub fn crs(&self) -> &str {
        &self.crs
    }

    pub fn nodata(&self) -> Option<T> {
        self.nodata
    }

    pub fn band_names(&self) -> &[String] {
        &self.band_names
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grid(&self) -> Grid {
        Grid {
            transform: self.transform,
            width: self.width,
            height: self.height,
            crs: self.crs.clone(),
        }
    }

    pub fn band(&self, b: usize) -> &[T] {
        let n = self.width * self.height;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn get(&self, band: usize, col: usize, row: usize) -> T {
        self.data[band * self.width * self.height + row * self.width + col]
    }

    pub fn is_nodata(&self, v: T) -> bool {
        match self.nodata {
            Some(nd) => v == nd || (nd.is_nan() && v.is_nan()),
            None => false,
        }
    }

    /// Value used to mark missing output pixels: declared nodata, else NaN.
    pub(crate) fn nodata_or_nan(&self) -> T {
        self.nodata.unwrap_or_else(T::nan)
    }

    /// Copy of band `b` as a single-band raster.
    pub fn extract_band(&self, b: usize) -> Result<GeoRaster<T>> {
        if b >= self.bands {
            return Err(Error::Parameter(format!(
                "band {b} out of range ({} bands)",
                self.bands
            )));
        }
        let mut out = GeoRaster::new(self.grid(), 1, self.dtype, self.band(b).to_vec(), self.nodata)?;
        if let Some(name) = self.band_names.get(b) {
            out.band_names = vec![name.clone()];
        }
        Ok(out)
    }

    /// Stacks single- or multi-band rasters on an identical grid.
    pub fn stack(parts: &[GeoRaster<T>]) -> Result<GeoRaster<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Parameter("nothing to stack".into()))?;
        let grid = first.grid();
        let mut data = Vec::new();
        let mut names = Vec::new();
        let mut bands = 0;
        for p in parts {
            if !p.grid().same_as(&grid) {
                return Err(Error::Alignment("stacked rasters must share a grid".into()));
            }
            if p.dtype != first.dtype || p.nodata.map(Scalar::f64) != first.nodata.map(Scalar::f64) {
                return Err(Error::Parameter("stacked rasters must share dtype and nodata".into()));
            }
            data.extend_from_slice(&p.data);
            bands += p.bands;
            if p.band_names.len() == p.bands {
                names.extend(p.band_names.iter().cloned());
            }
        }
        let out = GeoRaster::new(grid, bands, first.dtype, data, first.nodata)?;
        if names.len() == bands {
            out.with_band_names(names)
        } else {
            Ok(out)
        }
    }

    /// Converts every value, keeping geometry and metadata.
    pub fn cast<U: Scalar>(&self) -> GeoRaster<U> {
        GeoRaster {
            width: self.width,
            height: self.height,
            bands: self.bands,
            dtype: self.dtype,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
            transform: self.transform,
            crs: self.crs.clone(),
            nodata: self.nodata.map(|v| U::of(v.f64())),
            band_names: self.band_names.clone(),
        }
    }
}

pub(crate) fn is_u8_value<T: Scalar>(v: T) -> bool {
    v.is_finite() && v.fract() == T::zero() && v >= T::zero() && v <= T::of(255.0)
}

/// Square metres per ground unit squared, or `None` for angular CRSs and
/// rasters with no CRS at all.
pub fn metres_per_unit_sq(crs: &str) -> Option<f64> {
    let c = crs.trim().to_ascii_uppercase();
    const GEOGRAPHIC: [&str; 5] = ["EPSG:4326", "EPSG:4269", "EPSG:4258", "OGC:CRS84", "CRS84"];
    if c.is_empty() || GEOGRAPHIC.contains(&c.as_str()) {
        None
    } else {
        Some(1.0)
    }
}
