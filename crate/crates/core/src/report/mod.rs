//! Registry of externally trained segmentation models and the comparison
//! views built from it: best model per loss, the full ranking and the
//! size/excess landscape plot.

mod plot;

pub use plot::{landscape_csv, landscape_plot, landscape_svg, LandscapePoint};

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::GeoRaster;
use crate::scalar::Scalar;
use crate::softmask::{Split, SplitMap};
use crate::spray::{coverage_curve_masked, sweep, DEFAULT_TARGETS};

pub const SCHEMA_VERSION: u32 = 1;

/// Recomputed excess must agree with declared excess to this many points.
pub const INTEGRITY_TOLERANCE: f64 = 0.01;

/// Encoder families whose names do not split cleanly at the first digit.
const GROUP_OVERRIDES: [(&str, &str); 6] = [
    ("mit_b", "MIT"),
    ("timm_regnetx", "TIMM_REGNETX"),
    ("timm_regnety", "TIMM_REGNETY"),
    ("timm-regnetx", "TIMM_REGNETX"),
    ("timm-regnety", "TIMM_REGNETY"),
    ("efficientnet-b", "EfficientNet"),
];

/// Family of an encoder: `VGG` for `VGG16`, `DenseNet` for `DenseNet169`,
/// `MIT` for `MIT_b0`, `TIMM_REGNETX` for `TIMM_REGNETX_002`.
pub fn encoder_group(encoder: &str) -> String {
    let lower = encoder.to_ascii_lowercase();
    if let Some((_, group)) = GROUP_OVERRIDES.iter().find(|(p, _)| lower.starts_with(p)) {
        return (*group).to_string();
    }
    let cut = encoder.find(|c: char| c.is_ascii_digit()).unwrap_or(encoder.len());
    let prefix = encoder[..cut].trim_end_matches(['_', '-']);
    if prefix.is_empty() {
        encoder.to_string()
    } else {
        prefix.to_string()
    }
}

/// Key of a coverage target in the excess map (`90`, `99.5`).
pub fn target_key(target_pct: f64) -> String {
    format!("{target_pct}")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Declared,
    Recomputed,
}

/// One trained model with its declared or recomputed excess spraying.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRecord {
    pub schema_version: u32,
    pub architecture: String,
    pub encoder: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_group: Option<String>,
    pub loss: String,
    pub size_mb: f64,
    pub relative_speed: f64,
    /// Excess spraying in percent, keyed by coverage target.
    #[serde(default)]
    pub excess: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_path: Option<PathBuf>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl ModelRecord {
    pub fn new(architecture: &str, encoder: &str, loss: &str, size_mb: f64, relative_speed: f64) -> Self {
        ModelRecord {
            schema_version: SCHEMA_VERSION,
            architecture: architecture.into(),
            encoder: encoder.into(),
            encoder_group: None,
            loss: loss.into(),
            size_mb,
            relative_speed,
            excess: BTreeMap::new(),
            prediction_path: None,
            provenance: Provenance::Declared,
        }
    }

    pub fn with_excess(mut self, pairs: &[(f64, f64)]) -> Self {
        for &(t, e) in pairs {
            self.excess.insert(target_key(t), e);
        }
        self
    }

    pub fn name(&self) -> String {
        format!("{}/{}/{}", self.architecture, self.encoder, self.loss)
    }

    pub fn group(&self) -> String {
        self.encoder_group
            .clone()
            .unwrap_or_else(|| encoder_group(&self.encoder))
    }

    pub fn excess_at(&self, target_pct: f64) -> Option<f64> {
        self.excess.get(&target_key(target_pct)).copied()
    }

    /// Targets present in the excess map, numerically ascending.
    pub fn targets(&self) -> Result<Vec<f64>> {
        let mut out = self
            .excess
            .keys()
            .map(|k| {
                k.parse::<f64>()
                    .map_err(|_| Error::Validation(format!("excess key {k:?} is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.sort_by(f64::total_cmp);
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(format!("{}: {m}", self.name())));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema version {}", self.schema_version));
        }
        if [&self.architecture, &self.encoder, &self.loss]
            .iter()
            .any(|s| s.trim().is_empty())
        {
            return bad("architecture, encoder and loss must be non-empty".into());
        }
        if !(self.size_mb > 0.0 && self.size_mb.is_finite()) {
            return bad(format!("size {} MB must be positive", self.size_mb));
        }
        if !(self.relative_speed > 0.0 && self.relative_speed.is_finite()) {
            return bad(format!("relative speed {} must be positive", self.relative_speed));
        }
        for t in self.targets()? {
            if !(t > 0.0 && t <= 100.0) {
                return bad(format!("target {t} outside (0, 100]"));
            }
        }
        if self.excess.values().any(|v| !v.is_finite()) {
            return bad("excess values must be finite".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: ModelRecord =
            serde_json::from_str(text).map_err(|e| Error::Validation(format!("record schema: {e}")))?;
        record.validate()?;
        Ok(record)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// File name used in a registry directory.
    pub fn file_name(&self) -> String {
        let slug: String = self
            .name()
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() {
                    c.to_ascii_lowercase()
                } else if c == '+' {
                    'p'
                } else {
                    '_'
                }
            })
            .collect();
        format!("{slug}.json")
    }
}

/// Prediction, truth and split rasters for recomputing a record's excess:
/// thresholds are selected on held-out pixels and evaluated on test pixels.
pub struct Evaluation<'a, T> {
    pub prediction: &'a GeoRaster<T>,
    pub truth: &'a GeoRaster<T>,
    pub split: &'a SplitMap,
}

/// Validates a record and, when an evaluation is supplied, recomputes its
/// excess map. Declared values must then match within
/// [`INTEGRITY_TOLERANCE`]; missing targets default to 90/95/98/99.
pub fn ingest_record<T: Scalar>(mut record: ModelRecord, eval: Option<Evaluation<'_, T>>) -> Result<ModelRecord> {
    record.validate()?;
    let Some(eval) = eval else {
        record.provenance = Provenance::Declared;
        return Ok(record);
    };
    if eval.split.width != eval.prediction.width() || eval.split.height != eval.prediction.height() {
        return Err(Error::Alignment("split map does not match the prediction grid".into()));
    }
    let targets = match record.targets()? {
        t if t.is_empty() => DEFAULT_TARGETS.to_vec(),
        t => t,
    };
    let heldout = eval.split.mask(Split::Heldout);
    let test = eval.split.mask(Split::Test);
    let select = coverage_curve_masked(eval.prediction, eval.truth, Some(&heldout))?;
    let evaluate = coverage_curve_masked(eval.prediction, eval.truth, Some(&test))?;
    let rows = sweep(&select, &evaluate, &targets)?;
    for (t, row) in targets.iter().zip(&rows) {
        if let Some(declared) = record.excess_at(*t) {
            if (declared - row.excess_pct).abs() > INTEGRITY_TOLERANCE {
                return Err(Error::Integrity(format!(
                    "{}: declared excess {declared}% at {t}% differs from recomputed {:.4}%",
                    record.name(),
                    row.excess_pct
                )));
            }
        }
        record.excess.insert(target_key(*t), row.excess_pct);
    }
    record.provenance = Provenance::Recomputed;
    Ok(record)
}

/// Reads every `*.json` record in `dir`, in file-name order.
pub fn load_registry(dir: &Path) -> Result<Vec<ModelRecord>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            ModelRecord::from_json(&text).map_err(|e| match e {
                Error::Validation(m) => Error::Validation(format!("{}: {m}", p.display())),
                other => other,
            })
        })
        .collect()
}

/// Writes one record into the registry directory and returns its path.
pub fn write_record(dir: &Path, record: &ModelRecord) -> Result<PathBuf> {
    record.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(record.file_name());
    std::fs::write(&path, record.to_json()?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Ranking order at a target: excess ascending, then size, then name.
/// Records without a value at the target sort last.
pub fn rank_cmp(a: &ModelRecord, b: &ModelRecord, target_pct: f64) -> Ordering {
    let key = |r: &ModelRecord| r.excess_at(target_pct).unwrap_or(f64::INFINITY);
    key(a)
        .total_cmp(&key(b))
        .then(a.size_mb.total_cmp(&b.size_mb))
        .then_with(|| a.name().cmp(&b.name()))
}

/// All records in ranking order (Table-5 shape).
pub fn rank_records(records: &[ModelRecord], target_pct: f64) -> Vec<ModelRecord> {
    let mut out = records.to_vec();
    out.sort_by(|a, b| rank_cmp(a, b, target_pct));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetWinner {
    pub target_pct: f64,
    pub loss: String,
    pub model: String,
    pub excess_pct: f64,
}

/// Best record per loss at the primary target (Table-4 shape) and, for each
/// target, the loss whose best record sprays least.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub target_pct: f64,
    pub architecture: Option<String>,
    pub best_per_loss: Vec<ModelRecord>,
    pub winners: Vec<TargetWinner>,
}

pub fn best_per_loss(records: &[ModelRecord], target_pct: f64, architecture: Option<&str>) -> Result<SweepReport> {
    if records.is_empty() {
        return Err(Error::Parameter("registry is empty".into()));
    }
    let mut best: BTreeMap<&str, &ModelRecord> = BTreeMap::new();
    for r in records {
        if architecture.is_some_and(|a| !r.architecture.eq_ignore_ascii_case(a)) {
            continue;
        }
        if r.excess_at(target_pct).is_none() {
            log::warn!("{} has no excess at {target_pct}%; skipped", r.name());
            continue;
        }
        best.entry(&r.loss)
            .and_modify(|cur| {
                if rank_cmp(r, cur, target_pct) == Ordering::Less {
                    *cur = r;
                }
            })
            .or_insert(r);
    }
    let mut rows: Vec<ModelRecord> = best.into_values().cloned().collect();
    rows.sort_by(|a, b| rank_cmp(a, b, target_pct));
    if rows.is_empty() {
        return Err(Error::Parameter(format!(
            "no record{} has an excess value at {target_pct}%",
            architecture
                .map(|a| format!(" with architecture {a}"))
                .unwrap_or_default()
        )));
    }

    let mut targets: Vec<f64> = Vec::new();
    for r in &rows {
        for t in r.targets()? {
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
    }
    targets.sort_by(f64::total_cmp);
    let winners = targets
        .into_iter()
        .filter_map(|t| {
            rows.iter()
                .filter(|r| r.excess_at(t).is_some())
                .min_by(|a, b| rank_cmp(a, b, t))
                .map(|r| TargetWinner {
                    target_pct: t,
                    loss: r.loss.clone(),
                    model: r.name(),
                    excess_pct: r.excess_at(t).unwrap(),
                })
        })
        .collect();
    Ok(SweepReport {
        target_pct,
        architecture: architecture.map(str::to_string),
        best_per_loss: rows,
        winners,
    })
}

fn union_targets(records: &[ModelRecord]) -> Vec<f64> {
    let mut out: Vec<f64> = records.iter().flat_map(|r| r.targets().unwrap_or_default()).collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

fn excess_cells(r: &ModelRecord, targets: &[f64]) -> String {
    targets
        .iter()
        .map(|t| match r.excess_at(*t) {
            Some(e) => format!("{:>9}", format!("{e:.2}%")),
            None => format!("{:>9}", "-"),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn target_header(targets: &[f64]) -> String {
    targets
        .iter()
        .map(|t| format!("{:>9}", format!("{t}%")))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Aligned text table: Loss, Encoder and excess per target.
pub fn render_best_table(report: &SweepReport) -> String {
    let targets = union_targets(&report.best_per_loss);
    let mut out = format!("{:<10} {:<18} {}\n", "Loss", "Encoder", target_header(&targets));
    for r in &report.best_per_loss {
        let _ = writeln!(out, "{:<10} {:<18} {}", r.loss, r.encoder, excess_cells(r, &targets));
    }
    for w in &report.winners {
        let _ = writeln!(
            out,
            "best at {}%: {} ({}) {:.2}%",
            w.target_pct, w.loss, w.model, w.excess_pct
        );
    }
    out
}

/// Aligned text table: Model, Encoder, Loss, Size, Speed and excess per target.
pub fn render_full_table(records: &[ModelRecord]) -> String {
    let targets = union_targets(records);
    let mut out = format!(
        "{:<8} {:<18} {:<10} {:>7} {:>6} {}\n",
        "Model",
        "Encoder",
        "Loss",
        "Size",
        "Speed",
        target_header(&targets)
    );
    for r in records {
        let _ = writeln!(
            out,
            "{:<8} {:<18} {:<10} {:>7} {:>6} {}",
            r.architecture,
            r.encoder,
            r.loss,
            format!("{}MB", r.size_mb),
            r.relative_speed,
            excess_cells(r, &targets)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{DataType, GeoTransform, Grid};

    #[test]
    fn encoder_groups() {
        assert_eq!(encoder_group("VGG16"), "VGG");
        assert_eq!(encoder_group("VGG19"), "VGG");
        assert_eq!(encoder_group("MIT_b0"), "MIT");
        assert_eq!(encoder_group("TIMM_REGNETX_002"), "TIMM_REGNETX");
        assert_eq!(encoder_group("DenseNet169"), "DenseNet");
        assert_eq!(encoder_group("resnet34"), "resnet");
        assert_eq!(encoder_group("efficientnet-b3"), "EfficientNet");
        assert_eq!(encoder_group("42"), "42");
    }

    #[test]
    fn record_json_round_trip_and_schema() {
        let r = ModelRecord::new("UNET++", "VGG19", "BCE", 179.0, 1.0).with_excess(&[(99.0, 28.09), (90.0, -4.11)]);
        let text = r.to_json().unwrap();
        assert!(text.contains("\"99\": 28.09"));
        assert_eq!(ModelRecord::from_json(&text).unwrap(), r);
        assert_eq!(r.targets().unwrap(), vec![90.0, 99.0]);
        assert!(ModelRecord::from_json(&text.replace("\"loss\"", "\"los\"")).is_err());
        let bad = ModelRecord {
            relative_speed: 0.0,
            ..r.clone()
        };
        assert!(bad.validate().is_err());
        let bad = ModelRecord { schema_version: 2, ..r };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_record_is_its_own_best() {
        let r = ModelRecord::new("UNET", "VGG19", "BCE", 116.0, 4.4).with_excess(&[(99.0, 29.22)]);
        let rep = best_per_loss(std::slice::from_ref(&r), 99.0, None).unwrap();
        assert_eq!(rep.best_per_loss, vec![r]);
        assert_eq!(rep.winners.len(), 1);
        assert!(best_per_loss(&[], 99.0, None).is_err());
    }

    #[test]
    fn ties_go_to_the_smaller_model() {
        let a = ModelRecord::new("UNET", "VGG19", "BCE", 116.0, 1.0).with_excess(&[(99.0, 30.0)]);
        let b = ModelRecord::new("UNET", "VGG11", "BCE", 73.0, 1.0).with_excess(&[(99.0, 30.0)]);
        let rep = best_per_loss(&[a, b.clone()], 99.0, None).unwrap();
        assert_eq!(rep.best_per_loss, vec![b]);
    }

    #[test]
    fn architecture_filter() {
        let a = ModelRecord::new("UNET++", "VGG19", "BCE", 179.0, 1.0).with_excess(&[(99.0, 28.0)]);
        let b = ModelRecord::new("UNET", "VGG19", "BCE", 116.0, 4.4).with_excess(&[(99.0, 29.0)]);
        let rep = best_per_loss(&[a.clone(), b.clone()], 99.0, Some("unet")).unwrap();
        assert_eq!(rep.best_per_loss, vec![b]);
        assert_eq!(
            best_per_loss(&[a.clone()], 99.0, None).unwrap().best_per_loss,
            vec![a.clone()]
        );
        assert!(best_per_loss(&[a], 99.0, Some("FPN")).is_err());
    }

    #[test]
    fn registry_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = ModelRecord::new("UNET++", "VGG19", "BCE", 179.0, 1.0).with_excess(&[(99.0, 28.09)]);
        let b = ModelRecord::new("FPN", "MIT_b0", "Focal", 20.0, 2.55).with_excess(&[(99.0, 35.11)]);
        let pa = write_record(dir.path(), &a).unwrap();
        write_record(dir.path(), &b).unwrap();
        assert_eq!(pa.file_name().unwrap(), "unetpp_vgg19_bce.json");
        let loaded = load_registry(dir.path()).unwrap();
        assert_eq!(loaded, vec![b, a]);
        std::fs::write(dir.path().join("broken.json"), "{}").unwrap();
        assert!(matches!(load_registry(dir.path()), Err(Error::Validation(_))));
    }

    fn eval_fixture() -> (GeoRaster<f64>, GeoRaster<f64>, SplitMap) {
        let g = Grid::new(GeoTransform::new(0.0, 0.0, 1.0, 1.0).unwrap(), 8, 2, "EPSG:32614").unwrap();
        let truth: Vec<f64> = (0..16).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let t = GeoRaster::new(g.clone(), 1, DataType::U8, truth.clone(), None).unwrap();
        let p = GeoRaster::new(g, 1, DataType::F32, truth, None).unwrap();
        let labels = (0..16)
            .map(|i| if i < 8 { Split::Heldout } else { Split::Test })
            .collect();
        (
            p,
            t,
            SplitMap {
                width: 8,
                height: 2,
                labels,
            },
        )
    }

    #[test]
    fn perfect_prediction_recomputes_to_zero() {
        let (p, t, s) = eval_fixture();
        let r = ModelRecord::new("UNET", "VGG16", "BCE", 10.0, 1.0);
        let out = ingest_record(
            r,
            Some(Evaluation {
                prediction: &p,
                truth: &t,
                split: &s,
            }),
        )
        .unwrap();
        assert_eq!(out.provenance, Provenance::Recomputed);
        assert_eq!(out.excess_at(99.0), Some(0.0));
        assert_eq!(out.excess.len(), 4);
    }

    #[test]
    fn declared_mismatch_is_an_integrity_error() {
        let (p, t, s) = eval_fixture();
        let ok = ModelRecord::new("UNET", "VGG16", "BCE", 10.0, 1.0).with_excess(&[(99.0, 0.005)]);
        assert!(ingest_record(
            ok,
            Some(Evaluation {
                prediction: &p,
                truth: &t,
                split: &s
            })
        )
        .is_ok());
        let bad = ModelRecord::new("UNET", "VGG16", "BCE", 10.0, 1.0).with_excess(&[(99.0, 28.09)]);
        assert!(matches!(
            ingest_record(
                bad,
                Some(Evaluation {
                    prediction: &p,
                    truth: &t,
                    split: &s
                })
            ),
            Err(Error::Integrity(_))
        ));
        let declared = ModelRecord::new("UNET", "VGG16", "BCE", 10.0, 1.0).with_excess(&[(99.0, 28.09)]);
        let out = ingest_record::<f64>(declared, None).unwrap();
        assert_eq!(out.provenance, Provenance::Declared);
        assert_eq!(out.excess_at(99.0), Some(28.09));
    }
}
