use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{rank_cmp, ModelRecord};
use crate::error::{Error, Result};

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];
const SHAPES: [&str; 5] = ["circle", "square", "triangle", "diamond", "cross"];

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 560.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 220.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const R_MIN: f64 = 4.0;
const R_SPAN: f64 = 14.0;

/// A plotted record with its resolved styling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapePoint {
    pub name: String,
    pub architecture: String,
    pub encoder: String,
    pub encoder_group: String,
    pub loss: String,
    pub size_mb: f64,
    pub relative_speed: f64,
    pub excess_pct: f64,
    pub radius: f64,
    pub color: String,
    pub shape: String,
}

fn first_appearance(values: impl Iterator<Item = String>) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    for v in values {
        if !seen.contains(&v) {
            seen.push(v);
        }
    }
    seen
}

/// Points of the size/excess landscape at `target_pct`, in ranking order.
///
/// Marker area grows with inference time (`1 / relative_speed`); colors
/// follow encoder groups and shapes follow architectures, both assigned in
/// order of first appearance.
pub fn landscape_plot(records: &[ModelRecord], target_pct: f64) -> Result<Vec<LandscapePoint>> {
    let mut rows: Vec<&ModelRecord> = records.iter().filter(|r| r.excess_at(target_pct).is_some()).collect();
    if rows.is_empty() {
        return Err(Error::Parameter(format!(
            "no record has an excess value at {target_pct}%"
        )));
    }
    rows.sort_by(|a, b| rank_cmp(a, b, target_pct));
    let groups = first_appearance(rows.iter().map(|r| r.group()));
    let archs = first_appearance(rows.iter().map(|r| r.architecture.clone()));
    let max_time = rows.iter().map(|r| 1.0 / r.relative_speed).fold(0.0, f64::max);
    Ok(rows
        .into_iter()
        .map(|r| {
            let g = groups.iter().position(|x| *x == r.group()).unwrap();
            let a = archs.iter().position(|x| *x == r.architecture).unwrap();
            LandscapePoint {
                name: r.name(),
                architecture: r.architecture.clone(),
                encoder: r.encoder.clone(),
                encoder_group: r.group(),
                loss: r.loss.clone(),
                size_mb: r.size_mb,
                relative_speed: r.relative_speed,
                excess_pct: r.excess_at(target_pct).unwrap(),
                radius: R_MIN + R_SPAN * (1.0 / r.relative_speed / max_time).sqrt(),
                color: PALETTE[g % PALETTE.len()].to_string(),
                shape: SHAPES[a % SHAPES.len()].to_string(),
            }
        })
        .collect())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn landscape_csv(points: &[LandscapePoint]) -> String {
    let mut out = String::from(
        "name,architecture,encoder,encoder_group,loss,size_mb,relative_speed,excess_pct,radius,color,shape\n",
    );
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.4},{},{}",
            csv_field(&p.name),
            csv_field(&p.architecture),
            csv_field(&p.encoder),
            csv_field(&p.encoder_group),
            csv_field(&p.loss),
            p.size_mb,
            p.relative_speed,
            p.excess_pct,
            p.radius,
            p.color,
            p.shape
        );
    }
    out
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Tick step from {1, 2, 5} x 10^k giving about six intervals.
fn nice_step(span: f64) -> f64 {
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap()
}

fn axis(lo: f64, hi: f64) -> (f64, f64, f64) {
    let (lo, hi) = if hi - lo < 1e-9 { (lo - 1.0, hi + 1.0) } else { (lo, hi) };
    let step = nice_step(hi - lo);
    ((lo / step).floor() * step, (hi / step).ceil() * step, step)
}

fn marker(shape: &str, x: f64, y: f64, r: f64, fill: &str) -> String {
    let style = format!("fill=\"{fill}\" fill-opacity=\"0.75\" stroke=\"#222\" stroke-width=\"0.8\"");
    match shape {
        "square" => format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" {style}/>",
            x - r,
            y - r,
            2.0 * r,
            2.0 * r
        ),
        "triangle" => format!(
            "<polygon points=\"{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}\" {style}/>",
            x,
            y - r,
            x - r,
            y + r,
            x + r,
            y + r
        ),
        "diamond" => format!(
            "<polygon points=\"{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}\" {style}/>",
            x,
            y - r,
            x + r,
            y,
            x,
            y + r,
            x - r,
            y
        ),
        "cross" => format!(
            "<path d=\"M{:.2},{:.2}L{:.2},{:.2}M{:.2},{:.2}L{:.2},{:.2}\" stroke=\"{fill}\" stroke-width=\"3\"/>",
            x - r,
            y - r,
            x + r,
            y + r,
            x - r,
            y + r,
            x + r,
            y - r
        ),
        _ => format!("<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r:.2}\" {style}/>"),
    }
}

/// Deterministic SVG scatter: size (MB) against excess at `target_pct`.
pub fn landscape_svg(points: &[LandscapePoint], target_pct: f64) -> String {
    let (x0, x1, xs) = axis(0.0, points.iter().map(|p| p.size_mb).fold(0.0, f64::max));
    let (y0, y1, ys) = axis(
        points
            .iter()
            .map(|p| p.excess_pct)
            .fold(f64::INFINITY, f64::min)
            .min(0.0),
        points.iter().map(|p| p.excess_pct).fold(f64::NEG_INFINITY, f64::max),
    );
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |v: f64| LEFT + (v - x0) / (x1 - x0) * pw;
    let py = |v: f64| TOP + (y1 - v) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">Excess spraying at {target_pct}% weed coverage vs model size</text>",
        LEFT + pw / 2.0
    );
    let _ = writeln!(s, "<g stroke=\"#ccc\" stroke-width=\"0.5\">");
    let nx = ((x1 - x0) / xs).round() as usize;
    let ny = ((y1 - y0) / ys).round() as usize;
    for i in 0..=nx {
        let x = px(x0 + i as f64 * xs);
        let _ = writeln!(
            s,
            "<line x1=\"{x:.2}\" y1=\"{TOP:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\"/>",
            TOP + ph
        );
    }
    for i in 0..=ny {
        let y = py(y0 + i as f64 * ys);
        let _ = writeln!(
            s,
            "<line x1=\"{LEFT:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\"/>",
            LEFT + pw
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        "<rect x=\"{LEFT:.2}\" y=\"{TOP:.2}\" width=\"{pw:.2}\" height=\"{ph:.2}\" fill=\"none\" stroke=\"#222\"/>"
    );
    for i in 0..=nx {
        let v = x0 + i as f64 * xs;
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            px(v),
            TOP + ph + 18.0,
            fmt_tick(v)
        );
    }
    for i in 0..=ny {
        let v = y0 + i as f64 * ys;
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            LEFT - 8.0,
            py(v) + 4.0,
            fmt_tick(v)
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">Model size (MB)</text>",
        LEFT + pw / 2.0,
        HEIGHT - 18.0
    );
    let _ = writeln!(
        s,
        "<text x=\"18\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.2})\">Excess at {target_pct}% (%)</text>",
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    let _ = writeln!(s, "<g>");
    for p in points {
        let _ = writeln!(
            s,
            "{}<title>{}</title>",
            marker(&p.shape, px(p.size_mb), py(p.excess_pct), p.radius, &p.color),
            xml(&format!(
                "{}: {} MB, speed {}, excess {}%",
                p.name, p.size_mb, p.relative_speed, p.excess_pct
            ))
        );
    }
    let _ = writeln!(s, "</g>");

    let lx = WIDTH - RIGHT + 20.0;
    let mut ly = TOP + 10.0;
    let _ = writeln!(
        s,
        "<text x=\"{lx:.2}\" y=\"{ly:.2}\" font-weight=\"bold\">Encoder group</text>"
    );
    for (group, color) in first_appearance(points.iter().map(|p| p.encoder_group.clone()))
        .into_iter()
        .map(|g| {
            let c = points.iter().find(|p| p.encoder_group == g).unwrap().color.clone();
            (g, c)
        })
    {
        ly += 20.0;
        let _ = writeln!(
            s,
            "{}<text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
            marker("circle", lx + 6.0, ly - 4.0, 6.0, &color),
            lx + 18.0,
            ly,
            xml(&group)
        );
    }
    ly += 30.0;
    let _ = writeln!(
        s,
        "<text x=\"{lx:.2}\" y=\"{ly:.2}\" font-weight=\"bold\">Architecture</text>"
    );
    for (arch, shape) in first_appearance(points.iter().map(|p| p.architecture.clone()))
        .into_iter()
        .map(|a| {
            let sh = points.iter().find(|p| p.architecture == a).unwrap().shape.clone();
            (a, sh)
        })
    {
        ly += 20.0;
        let _ = writeln!(
            s,
            "{}<text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
            marker(&shape, lx + 6.0, ly - 4.0, 6.0, "#999999"),
            lx + 18.0,
            ly,
            xml(&arch)
        );
    }
    ly += 30.0;
    let _ = writeln!(
        s,
        "<text x=\"{lx:.2}\" y=\"{ly:.2}\" fill=\"#555\">Marker size: inference time</text>"
    );
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    let r = (v * 1000.0).round() / 1000.0;
    if r == 0.0 {
        "0".into()
    } else {
        format!("{r}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(arch: &str, enc: &str, loss: &str, size: f64, speed: f64, e99: f64) -> ModelRecord {
        ModelRecord::new(arch, enc, loss, size, speed).with_excess(&[(99.0, e99)])
    }

    #[test]
    fn one_record_one_marker() {
        let pts = landscape_plot(&[rec("UNET", "VGG19", "BCE", 116.0, 4.4, 29.22)], 99.0).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!((pts[0].size_mb, pts[0].excess_pct), (116.0, 29.22));
        assert_eq!(pts[0].radius, R_MIN + R_SPAN);
        let svg = landscape_svg(&pts, 99.0);
        assert_eq!(svg.matches("<title>").count(), 1);
        assert_eq!(landscape_csv(&pts).lines().count(), 2);
    }

    #[test]
    fn styling_follows_first_appearance() {
        let recs = [
            rec("FPN", "MIT_b0", "Focal", 20.0, 2.55, 35.11),
            rec("UNET", "VGG19", "BCE", 116.0, 4.4, 29.22),
            rec("UNET", "VGG16", "Focal", 100.0, 1.0, 30.0),
        ];
        let pts = landscape_plot(&recs, 99.0).unwrap();
        assert_eq!(pts[0].name, "UNET/VGG19/BCE");
        assert_eq!(pts[0].color, PALETTE[0]);
        assert_eq!(pts[1].color, PALETTE[0]);
        assert_eq!(pts[2].color, PALETTE[1]);
        assert_eq!(pts[2].shape, SHAPES[1]);
        assert!(pts[1].radius > pts[0].radius);
    }

    #[test]
    fn output_is_independent_of_input_order() {
        let mut recs = vec![
            rec("FPN", "MIT_b0", "Focal", 20.0, 2.55, 35.11),
            rec("UNET", "VGG19", "BCE", 116.0, 4.4, 29.22),
            rec("UNET++", "VGG16", "Focal", 158.0, 1.3, 28.36),
        ];
        let a = landscape_plot(&recs, 99.0).unwrap();
        recs.reverse();
        let b = landscape_plot(&recs, 99.0).unwrap();
        assert_eq!(landscape_svg(&a, 99.0), landscape_svg(&b, 99.0));
        assert_eq!(landscape_csv(&a), landscape_csv(&b));
    }

    #[test]
    fn ticks() {
        assert_eq!(nice_step(179.0), 50.0);
        assert_eq!(axis(0.0, 179.0), (0.0, 200.0, 50.0));
        assert_eq!(axis(-4.0, 40.0).2, 10.0);
        assert_eq!(fmt_tick(-0.0), "0");
    }

    #[test]
    fn csv_quotes_when_needed() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("UNET++"), "UNET++");
    }
}
