use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PlanSummary, SprayPlan};
use crate::error::{Error, Result};
use crate::raster::grf::write_grf;
use crate::raster::GeoRaster;
use crate::scalar::Scalar;

/// Axis-aligned sprayer rectangle in pixel and ground coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SprayRect {
    pub col: usize,
    pub row: usize,
    pub width: usize,
    pub height: usize,
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

/// Greedy row-run decomposition: maximal horizontal runs of sprayed pixels,
/// merged downward while the next row has a run with the same extent.
/// Rectangles are ordered by top row, then column.
pub fn spray_runs<T: Scalar>(mask: &GeoRaster<T>) -> Vec<SprayRect> {
    let (w, h) = (mask.width(), mask.height());
    let t = *mask.transform();
    let on = |c: usize, r: usize| {
        let v = mask.get(0, c, r);
        !mask.is_nodata(v) && v != T::zero()
    };
    let mut done: Vec<(usize, usize, usize, usize)> = Vec::new();
    // open rectangles from the previous row: (col, width, top_row)
    let mut open: Vec<(usize, usize, usize)> = Vec::new();
    for r in 0..h {
        let mut runs = Vec::new();
        let mut c = 0;
        while c < w {
            if on(c, r) {
                let start = c;
                while c < w && on(c, r) {
                    c += 1;
                }
                runs.push((start, c - start));
            } else {
                c += 1;
            }
        }
        let mut next = Vec::with_capacity(runs.len());
        for (col, width) in runs {
            match open.iter().position(|&(oc, ow, _)| oc == col && ow == width) {
                Some(i) => next.push(open.swap_remove(i)),
                None => next.push((col, width, r)),
            }
        }
        done.extend(open.drain(..).map(|(c, w, top)| (c, w, top, r - top)));
        open = next;
    }
    done.extend(open.into_iter().map(|(c, w, top)| (c, w, top, h - top)));
    done.sort_by_key(|&(c, _, top, _)| (top, c));
    done.into_iter()
        .map(|(col, width, row, height)| SprayRect {
            col,
            row,
            width,
            height,
            min_x: t.origin_x + col as f64 * t.pixel_w,
            max_x: t.origin_x + (col + width) as f64 * t.pixel_w,
            max_y: t.origin_y - row as f64 * t.pixel_h,
            min_y: t.origin_y - (row + height) as f64 * t.pixel_h,
        })
        .collect()
}

/// JSON document written next to the exported spray mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanExport {
    #[serde(flatten)]
    pub summary: PlanSummary,
    pub mask_file: String,
    pub rectangles: Vec<SprayRect>,
}

/// Writes `spray_mask.grf` (+ `.bin`) and `plan.json` into `dir`.
pub fn export_plan<T: Scalar>(plan: &SprayPlan<T>, dir: &Path) -> Result<PlanExport> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mask_file = "spray_mask.grf".to_string();
    write_grf(&plan.spray_mask, &dir.join(&mask_file))?;
    let export = PlanExport {
        summary: plan.summary.clone(),
        mask_file,
        rectangles: spray_runs(&plan.spray_mask),
    };
    let path = dir.join("plan.json");
    let text = serde_json::to_string_pretty(&export)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(export)
}
