use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DataType, GeoRaster, Grid, GRID_EPS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Slack, in source pixels, allowed when a target pixel center falls just
/// outside the source extent. Such pixels take the nearest edge value.
const EDGE_TOLERANCE_PX: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleMethod {
    Nearest,
    Bilinear,
    BlockAverage,
}

impl fmt::Display for ResampleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResampleMethod::Nearest => "nearest",
            ResampleMethod::Bilinear => "bilinear",
            ResampleMethod::BlockAverage => "block-average",
        })
    }
}

impl FromStr for ResampleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(ResampleMethod::Nearest),
            "bilinear" => Ok(ResampleMethod::Bilinear),
            "block-average" | "average" => Ok(ResampleMethod::BlockAverage),
            _ => Err(Error::Parameter(format!("unknown resampling method '{s}'"))),
        }
    }
}

/// Resamples `src` onto `target`.
///
/// Nearest keeps the source dtype; bilinear and block-average produce `F32`.
/// Block-average needs an integer downscale ratio and a target origin that
/// sits on a source pixel corner; any nodata inside a block makes the output
/// pixel nodata.
pub fn resample<T: Scalar>(src: &GeoRaster<T>, target: &Grid, method: ResampleMethod) -> Result<GeoRaster<T>> {
    if src.crs() != target.crs {
        return Err(Error::Alignment(format!(
            "CRS mismatch: source '{}' vs target '{}'",
            src.crs(),
            target.crs
        )));
    }
    target.transform.validate()?;
    if target.width == 0 || target.height == 0 {
        return Err(Error::Parameter("target grid is empty".into()));
    }
    if src.grid().same_as(target) {
        let mut out = src.clone();
        if method != ResampleMethod::Nearest {
            out.dtype = DataType::F32;
        }
        return Ok(out);
    }
    match method {
        ResampleMethod::Nearest | ResampleMethod::Bilinear => interpolate(src, target, method),
        ResampleMethod::BlockAverage => block_average(src, target),
    }
}

/// Resamples `src` onto the grid of `reference` after checking that the
/// source covers it.
pub fn align<T: Scalar>(src: &GeoRaster<T>, reference: &GeoRaster<T>, method: ResampleMethod) -> Result<GeoRaster<T>> {
    let target = reference.grid();
    if src.crs() != target.crs {
        return Err(Error::Alignment(format!(
            "CRS mismatch: source '{}' vs reference '{}'",
            src.crs(),
            target.crs
        )));
    }
    if src.grid().same_as(&target) {
        return Ok(src.clone());
    }
    let cols = axis_map(
        src.width(),
        src.transform().origin_x,
        src.transform().pixel_w,
        &target,
        Axis::X,
    );
    let rows = axis_map(
        src.height(),
        src.transform().origin_y,
        src.transform().pixel_h,
        &target,
        Axis::Y,
    );
    let covered = cols.iter().filter(|c| c.is_some()).count() * rows.iter().filter(|r| r.is_some()).count();
    if covered < target.len() {
        return Err(Error::Coverage {
            uncovered_fraction: 1.0 - covered as f64 / target.len() as f64,
        });
    }
    resample(src, &target, method)
}

#[derive(Clone, Copy)]
enum Axis {
    X,
    Y,
}

/// Per target column (or row): the source edge-space coordinate of the
/// target pixel center, or `None` when it is outside the tolerated extent.
fn axis_map(src_len: usize, src_origin: f64, src_pixel: f64, target: &Grid, axis: Axis) -> Vec<Option<f64>> {
    let (n, origin, pixel, sign) = match axis {
        Axis::X => (target.width, target.transform.origin_x, target.transform.pixel_w, 1.0),
        Axis::Y => (target.height, target.transform.origin_y, target.transform.pixel_h, -1.0),
    };
    (0..n)
        .map(|i| {
            let center = origin + sign * (i as f64 + 0.5) * pixel;
            let e = sign * (center - src_origin) / src_pixel;
            if e >= -EDGE_TOLERANCE_PX && e < src_len as f64 + EDGE_TOLERANCE_PX {
                Some(e)
            } else {
                None
            }
        })
        .collect()
}

fn nearest_index(e: f64, len: usize) -> usize {
    let i = (e + GRID_EPS).floor();
    i.clamp(0.0, (len - 1) as f64) as usize
}

/// Two source indices and the weight of the second.
fn linear_taps(e: f64, len: usize) -> (usize, usize, f64) {
    let u = e - 0.5;
    if u <= 0.0 {
        (0, 0, 0.0)
    } else if u >= (len - 1) as f64 {
        (len - 1, len - 1, 0.0)
    } else {
        let i0 = u.floor();
        let t = u - i0;
        let i0 = i0 as usize;
        (i0, (i0 + 1).min(len - 1), t)
    }
}

fn interpolate<T: Scalar>(src: &GeoRaster<T>, target: &Grid, method: ResampleMethod) -> Result<GeoRaster<T>> {
    let st = src.transform();
    let cols = axis_map(src.width(), st.origin_x, st.pixel_w, target, Axis::X);
    let rows = axis_map(src.height(), st.origin_y, st.pixel_h, target, Axis::Y);
    let uncovered = cols.iter().any(Option::is_none) || rows.iter().any(Option::is_none);
    if uncovered && src.nodata().is_none() {
        let covered = cols.iter().flatten().count() * rows.iter().flatten().count();
        return Err(Error::Coverage {
            uncovered_fraction: 1.0 - covered as f64 / target.len() as f64,
        });
    }
    let fill = src.nodata_or_nan();
    let (sw, sh) = (src.width(), src.height());
    let tw = target.width;
    let n_out = target.len();
    let mut data = vec![fill; n_out * src.bands()];

    for b in 0..src.bands() {
        let band = src.band(b);
        data[b * n_out..(b + 1) * n_out]
            .par_chunks_mut(tw)
            .enumerate()
            .for_each(|(r, out_row)| {
                let Some(ey) = rows[r] else { return };
                match method {
                    ResampleMethod::Nearest => {
                        let sy = nearest_index(ey, sh);
                        for (c, out) in out_row.iter_mut().enumerate() {
                            if let Some(ex) = cols[c] {
                                *out = band[sy * sw + nearest_index(ex, sw)];
                            }
                        }
                    }
                    _ => {
                        let (y0, y1, fy) = linear_taps(ey, sh);
                        for (c, out) in out_row.iter_mut().enumerate() {
                            let Some(ex) = cols[c] else { continue };
                            let (x0, x1, fx) = linear_taps(ex, sw);
                            let v00 = band[y0 * sw + x0];
                            let v10 = band[y0 * sw + x1];
                            let v01 = band[y1 * sw + x0];
                            let v11 = band[y1 * sw + x1];
                            let used = [
                                (v00, true),
                                (v10, fx > 0.0),
                                (v01, fy > 0.0),
                                (v11, fx > 0.0 && fy > 0.0),
                            ];
                            if used.iter().any(|&(v, u)| u && src.is_nodata(v)) {
                                continue;
                            }
                            // lerp form keeps constant inputs exact
                            let (fx, fy) = (T::of(fx), T::of(fy));
                            let top = v00 + (v10 - v00) * fx;
                            let bottom = v01 + (v11 - v01) * fx;
                            *out = top + (bottom - top) * fy;
                        }
                    }
                }
            });
    }
    let dtype = if method == ResampleMethod::Nearest {
        src.dtype()
    } else {
        DataType::F32
    };
    let nodata = if uncovered || src.nodata().is_some() {
        Some(fill)
    } else {
        None
    };
    let out = GeoRaster::new(target.clone(), src.bands(), dtype, data, nodata)?;
    out.with_band_names(src.band_names().to_vec())
}

fn integer_ratio(value: f64, what: &str) -> Result<usize> {
    let k = value.round();
    if k < 1.0 || (value - k).abs() > 1e-6 * k.max(1.0) {
        return Err(Error::Parameter(format!(
            "block-average needs an integer {what}, got {value}"
        )));
    }
    Ok(k as usize)
}

fn block_average<T: Scalar>(src: &GeoRaster<T>, target: &Grid) -> Result<GeoRaster<T>> {
    let st = src.transform();
    let tt = &target.transform;
    let kx = integer_ratio(tt.pixel_w / st.pixel_w, "horizontal downscale ratio")?;
    let ky = integer_ratio(tt.pixel_h / st.pixel_h, "vertical downscale ratio")?;
    let off_x = (tt.origin_x - st.origin_x) / st.pixel_w;
    let off_y = (st.origin_y - tt.origin_y) / st.pixel_h;
    let snap = |v: f64| -> Result<i64> {
        let r = v.round();
        if (v - r).abs() > 1e-6 {
            return Err(Error::Parameter(format!(
                "block-average needs a target origin on a source pixel corner (offset {v} px)"
            )));
        }
        Ok(r as i64)
    };
    let (ox, oy) = (snap(off_x)?, snap(off_y)?);
    let (sw, sh) = (src.width() as i64, src.height() as i64);
    let col_ok = |c: usize| ox + (c as i64) * kx as i64 >= 0 && ox + (c as i64 + 1) * kx as i64 <= sw;
    let row_ok = |r: usize| oy + (r as i64) * ky as i64 >= 0 && oy + (r as i64 + 1) * ky as i64 <= sh;
    let covered = (0..target.width).filter(|&c| col_ok(c)).count() * (0..target.height).filter(|&r| row_ok(r)).count();
    if covered < target.len() {
        return Err(Error::Coverage {
            uncovered_fraction: 1.0 - covered as f64 / target.len() as f64,
        });
    }

    let fill = src.nodata_or_nan();
    let n_out = target.len();
    let tw = target.width;
    let sw = src.width();
    let area = (kx * ky) as f64;
    let mut data = vec![fill; n_out * src.bands()];
    let mut any_nodata = false;
    for b in 0..src.bands() {
        let band = src.band(b);
        let nodata_hits: usize = data[b * n_out..(b + 1) * n_out]
            .par_chunks_mut(tw)
            .enumerate()
            .map(|(r, out_row)| {
                let y0 = (oy + (r * ky) as i64) as usize;
                let mut hits = 0;
                for (c, out) in out_row.iter_mut().enumerate() {
                    let x0 = (ox + (c * kx) as i64) as usize;
                    let mut sum = 0.0f64;
                    let mut missing = false;
                    'block: for y in y0..y0 + ky {
                        for &v in &band[y * sw + x0..y * sw + x0 + kx] {
                            if src.is_nodata(v) {
                                missing = true;
                                break 'block;
                            }
                            sum += v.f64();
                        }
                    }
                    if missing {
                        hits += 1;
                    } else {
                        *out = T::of(sum / area);
                    }
                }
                hits
            })
            .sum();
        any_nodata |= nodata_hits > 0;
    }
    let nodata = if any_nodata || src.nodata().is_some() {
        Some(fill)
    } else {
        None
    };
    let out = GeoRaster::new(target.clone(), src.bands(), DataType::F32, data, nodata)?;
    out.with_band_names(src.band_names().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;
    use proptest::prelude::*;

    const CRS: &str = "EPSG:32614";

    fn grid(ox: f64, oy: f64, px: f64, w: usize, h: usize) -> Grid {
        Grid::new(GeoTransform::new(ox, oy, px, px).unwrap(), w, h, CRS).unwrap()
    }

    fn raster(g: Grid, data: Vec<f64>) -> GeoRaster<f64> {
        GeoRaster::new(g, 1, DataType::F32, data, None).unwrap()
    }

    #[test]
    fn block_average_of_one_to_sixteen() {
        let src = raster(grid(0.0, 40.0, 10.0, 4, 4), (1..=16).map(f64::from).collect());
        let out = resample(&src, &grid(0.0, 40.0, 20.0, 2, 2), ResampleMethod::BlockAverage).unwrap();
        assert_eq!(out.data(), &[3.5, 5.5, 11.5, 13.5]);
    }

    #[test]
    fn nearest_upsample_duplicates_pixels() {
        let src = raster(grid(0.0, 40.0, 20.0, 2, 2), vec![1.0, 2.0, 3.0, 4.0]);
        let out = resample(&src, &grid(0.0, 40.0, 10.0, 4, 4), ResampleMethod::Nearest).unwrap();
        #[rustfmt::skip]
        let expected = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(out.data(), &expected);
    }

    #[test]
    fn bilinear_midpoint() {
        let src = raster(grid(0.0, 10.0, 10.0, 2, 1), vec![0.0, 1.0]);
        let out = resample(&src, &grid(0.0, 10.0, 5.0, 4, 2), ResampleMethod::Bilinear).unwrap();
        // centers at x = 2.5, 7.5, 12.5, 17.5 -> source pixel-center coords -0.25, 0.25, 0.75, 1.25
        assert_eq!(&out.data()[..4], &[0.0, 0.25, 0.75, 1.0]);
        assert_eq!(out.dtype(), DataType::F32);
    }

    #[test]
    fn block_average_rejects_non_integer_ratio() {
        let src = raster(grid(0.0, 30.0, 10.0, 3, 3), vec![0.0; 9]);
        let err = resample(&src, &grid(0.0, 30.0, 15.0, 2, 2), ResampleMethod::BlockAverage).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
        let err = resample(&src, &grid(5.0, 30.0, 20.0, 1, 1), ResampleMethod::BlockAverage).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }

    #[test]
    fn block_average_nodata_propagates() {
        let g = grid(0.0, 20.0, 10.0, 2, 2);
        let src = GeoRaster::new(g, 1, DataType::F32, vec![1.0, -1.0, 1.0, 1.0], Some(-1.0)).unwrap();
        let out = resample(&src, &grid(0.0, 20.0, 20.0, 1, 1), ResampleMethod::BlockAverage).unwrap();
        assert_eq!(out.data(), &[-1.0]);
        assert_eq!(out.nodata(), Some(-1.0));
    }

    #[test]
    fn crs_mismatch_is_alignment_error() {
        let src = raster(grid(0.0, 10.0, 10.0, 1, 1), vec![0.0]);
        let mut g = grid(0.0, 10.0, 10.0, 1, 1);
        g.crs = "EPSG:32615".into();
        assert!(matches!(
            resample(&src, &g, ResampleMethod::Nearest),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn align_identity_on_same_grid() {
        let src = raster(grid(0.0, 20.0, 10.0, 2, 2), vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(align(&src, &src, ResampleMethod::Bilinear).unwrap(), src);
    }

    #[test]
    fn align_reports_uncovered_fraction() {
        let src = raster(grid(0.0, 20.0, 10.0, 2, 2), vec![0.0; 4]);
        let reference = raster(grid(0.0, 20.0, 10.0, 8, 2), vec![0.0; 16]);
        match align(&src, &reference, ResampleMethod::Nearest) {
            Err(Error::Coverage { uncovered_fraction }) => {
                // columns 0..3 fall within one source pixel of the extent
                assert!((uncovered_fraction - 5.0 / 8.0).abs() < 1e-12);
            }
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    #[test]
    fn drone_mask_to_five_cm_nearest() {
        // 2.9 cm binary drone pixels onto a 5 cm grid
        let drone_px = 0.029;
        let n = 100;
        let data: Vec<f64> = (0..n * n).map(|i| ((i / n + i % n) % 3 == 0) as u8 as f64).collect();
        let src = GeoRaster::new(
            grid(0.0, n as f64 * drone_px, drone_px, n, n),
            1,
            DataType::U8,
            data.clone(),
            None,
        )
        .unwrap();
        let m = (n as f64 * drone_px / 0.05).floor() as usize;
        let reference = raster(grid(0.0, n as f64 * drone_px, 0.05, m, m), vec![0.0; m * m]);
        let out = align(&src, &reference, ResampleMethod::Nearest).unwrap();
        assert_eq!(out.dtype(), DataType::U8);
        for r in 0..m {
            for c in 0..m {
                let (x, y) = reference.transform().pixel_center(c as f64, r as f64);
                let sc = (x / drone_px).floor() as usize;
                let sr = ((n as f64 * drone_px - y) / drone_px).floor() as usize;
                assert_eq!(out.get(0, c, r), data[sr * n + sc]);
            }
        }
    }

    #[test]
    fn align_shift_by_whole_pixels() {
        let n = 12;
        let data: Vec<f64> = (0..n * n).map(|i| (i * 7 % 13) as f64).collect();
        let src = raster(grid(0.0, 120.0, 10.0, n, n), data);
        let reference = raster(grid(20.0, 100.0, 5.0, 8, 8), vec![0.0; 64]);
        let base = align(&src, &reference, ResampleMethod::Nearest).unwrap();
        // move the source east by k whole reference pixels
        let k = 2usize;
        let shifted_src = raster(grid(k as f64 * 5.0, 120.0, 10.0, n, n), src.data().to_vec());
        let shifted = align(&shifted_src, &reference, ResampleMethod::Nearest).unwrap();
        for r in 0..8 {
            for c in k..8 {
                assert_eq!(shifted.get(0, c, r), base.get(0, c - k, r));
            }
        }
    }

    proptest! {
        #[test]
        fn constant_stays_constant(
            v in -100.0f64..100.0, w in 2usize..9, h in 2usize..9,
            method in prop_oneof![Just(ResampleMethod::Nearest), Just(ResampleMethod::Bilinear)],
            px in 1.0f64..30.0, ox in 0.0f64..5.0,
        ) {
            let src = raster(grid(0.0, 100.0, 10.0, 10, 10), vec![v; 100]);
            let target = grid(ox, 100.0 - ox, px, w, h);
            prop_assume!(ox + w as f64 * px <= 100.0 && ox + h as f64 * px <= 100.0);
            let out = resample(&src, &target, method).unwrap();
            prop_assert!(out.data().iter().all(|&x| x == v));
        }

        #[test]
        fn block_average_conserves_mass(
            vals in proptest::collection::vec(0.0f64..1000.0, 36),
            k in prop_oneof![Just(1usize), Just(2), Just(3), Just(6)],
        ) {
            let src = raster(grid(0.0, 6.0, 1.0, 6, 6), vals.clone());
            let out = resample(&src, &grid(0.0, 6.0, k as f64, 6 / k, 6 / k), ResampleMethod::BlockAverage).unwrap();
            let mass_in: f64 = vals.iter().sum();
            let mass_out: f64 = out.data().iter().sum::<f64>() * (k * k) as f64;
            prop_assert!((mass_in - mass_out).abs() <= 1e-6 * mass_in.max(1e-12));
        }

        #[test]
        fn nearest_values_come_from_input(
            vals in proptest::collection::vec(0u8..20, 25),
            px in 0.7f64..4.0,
        ) {
            let data: Vec<f64> = vals.iter().map(|&v| v as f64).collect();
            let src = raster(grid(0.0, 50.0, 10.0, 5, 5), data.clone());
            let n = (50.0 / px).floor() as usize;
            let out = resample(&src, &grid(0.0, 50.0, px, n, n), ResampleMethod::Nearest).unwrap();
            prop_assert!(out.data().iter().all(|v| data.contains(v)));
        }

        #[test]
        fn align_is_idempotent(
            vals in proptest::collection::vec(0.0f64..1.0, 64),
            method in prop_oneof![Just(ResampleMethod::Nearest), Just(ResampleMethod::Bilinear)],
        ) {
            let src = raster(grid(0.0, 80.0, 10.0, 8, 8), vals);
            let reference = raster(grid(3.0, 77.0, 7.0, 10, 10), vec![0.0; 100]);
            let once = align(&src, &reference, method).unwrap();
            let twice = align(&once, &reference, method).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
