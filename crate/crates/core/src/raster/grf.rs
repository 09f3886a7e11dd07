//! GRF container: a JSON sidecar (`*.grf`) next to a little-endian,
//! band-sequential flat binary (`*.bin`), plus 8-bit PNG masks with a small
//! JSON sidecar (`*.json`) carrying the transform.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataType, GeoRaster, GeoTransform, Grid};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Nodata {
    Number(f64),
    Text(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    width: usize,
    height: usize,
    bands: usize,
    dtype: DataType,
    transform: [f64; 6],
    crs: String,
    nodata: Option<Nodata>,
    #[serde(default)]
    band_names: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PngSidecar {
    transform: [f64; 6],
    crs: String,
}

/// Path of the binary payload belonging to a `.grf` sidecar.
pub fn data_path(grf: &Path) -> PathBuf {
    grf.with_extension("bin")
}

fn png_sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("json")
}

fn encode_nodata(v: f64, dtype: DataType) -> Nodata {
    if v.is_nan() {
        return Nodata::Text("nan".into());
    }
    match dtype {
        DataType::F32 => Nodata::Number(v as f32 as f64),
        DataType::U8 => Nodata::Number(v),
    }
}

fn decode_nodata(n: &Nodata, dtype: DataType) -> Result<f64> {
    match n {
        Nodata::Number(v) => Ok(match dtype {
            DataType::F32 => *v as f32 as f64,
            DataType::U8 => *v,
        }),
        Nodata::Text(s) if s.eq_ignore_ascii_case("nan") => Ok(f64::NAN),
        Nodata::Text(s) => Err(Error::Format(format!("unrecognised nodata value '{s}'"))),
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

/// Writes `raster` to `path` (the sidecar) and its `.bin` payload.
pub fn write_grf<T: Scalar>(raster: &GeoRaster<T>, path: &Path) -> Result<()> {
    create_parent(path)?;
    let dtype = raster.dtype();
    let sidecar = Sidecar {
        width: raster.width(),
        height: raster.height(),
        bands: raster.bands(),
        dtype,
        transform: raster.transform().to_affine(),
        crs: raster.crs().to_string(),
        nodata: raster.nodata().map(|v| encode_nodata(v.f64(), dtype)),
        band_names: raster.band_names().to_vec(),
    };
    let mut bytes = Vec::with_capacity(raster.data().len() * dtype.size_bytes());
    match dtype {
        DataType::U8 => bytes.extend(raster.data().iter().map(|v| v.f64() as u8)),
        DataType::F32 => {
            for v in raster.data() {
                bytes.extend_from_slice(&(v.f64() as f32).to_le_bytes());
            }
        }
    }
    let bin = data_path(path);
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    write_json(path, &sidecar)
}

pub fn read_grf<T: Scalar>(path: &Path) -> Result<GeoRaster<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sidecar: Sidecar =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let bin = data_path(path);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let n = sidecar.width * sidecar.height * sidecar.bands;
    let expected = n * sidecar.dtype.size_bytes();
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: payload is {} bytes, sidecar implies {}",
            bin.display(),
            bytes.len(),
            expected
        )));
    }
    let data: Vec<T> = match sidecar.dtype {
        DataType::U8 => bytes.iter().map(|&b| T::of(b as f64)).collect(),
        DataType::F32 => bytes
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect(),
    };
    let nodata = sidecar
        .nodata
        .as_ref()
        .map(|n| decode_nodata(n, sidecar.dtype))
        .transpose()?
        .map(T::of);
    let grid = Grid::new(
        GeoTransform::from_affine(sidecar.transform)?,
        sidecar.width,
        sidecar.height,
        sidecar.crs,
    )?;
    GeoRaster::new(grid, sidecar.bands, sidecar.dtype, data, nodata)?.with_band_names(sidecar.band_names)
}

/// Reads an 8-bit grayscale PNG mask (0 = crop, 255 = weed) and its
/// `.json` transform sidecar. Values are kept as stored.
pub fn read_png_mask<T: Scalar>(path: &Path) -> Result<GeoRaster<T>> {
    let side_path = png_sidecar_path(path);
    let text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let side: PngSidecar =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", side_path.display())))?;
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "{}: masks must be 8-bit grayscale, got {:?}/{:?}",
            path.display(),
            info.color_type,
            info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(w * h)];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let data: Vec<T> = buf[..frame.buffer_size()].iter().map(|&b| T::of(b as f64)).collect();
    let grid = Grid::new(GeoTransform::from_affine(side.transform)?, w, h, side.crs)?;
    GeoRaster::new(grid, 1, DataType::U8, data, None)
}

/// Writes a single-band `U8` raster as 8-bit grayscale PNG plus sidecar.
pub fn write_png_mask<T: Scalar>(raster: &GeoRaster<T>, path: &Path) -> Result<()> {
    if raster.bands() != 1 || raster.dtype() != DataType::U8 {
        return Err(Error::Parameter("PNG masks must be single-band u8".into()));
    }
    let bytes: Vec<u8> = raster.data().iter().map(|v| v.f64() as u8).collect();
    write_png(path, raster.width(), raster.height(), png::ColorType::Grayscale, &bytes)?;
    let side = PngSidecar {
        transform: raster.transform().to_affine(),
        crs: raster.crs().to_string(),
    };
    write_json(&png_sidecar_path(path), &side)
}

/// Writes a 3-band `U8` raster as an RGB PNG (no sidecar).
pub fn write_png_rgb<T: Scalar>(raster: &GeoRaster<T>, path: &Path) -> Result<()> {
    if raster.bands() != 3 || raster.dtype() != DataType::U8 {
        return Err(Error::Parameter("RGB PNG output needs a 3-band u8 raster".into()));
    }
    let n = raster.width() * raster.height();
    let mut bytes = Vec::with_capacity(3 * n);
    for i in 0..n {
        for b in 0..3 {
            bytes.push(raster.band(b)[i].f64() as u8);
        }
    }
    write_png(path, raster.width(), raster.height(), png::ColorType::Rgb, &bytes)
}

fn write_png(path: &Path, w: usize, h: usize, color: png::ColorType, bytes: &[u8]) -> Result<()> {
    create_parent(path)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let fmt_err = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = encoder.write_header().map_err(fmt_err)?;
    writer.write_image_data(bytes).map_err(fmt_err)?;
    writer.finish().map_err(fmt_err)
}

/// Reads a `.grf` raster or a `.png` mask, by extension.
pub fn read_raster<T: Scalar>(path: &Path) -> Result<GeoRaster<T>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("png") => read_png_mask(path),
        _ => read_grf(path),
    }
}
