use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use spraygrid::raster::grf::{read_grf, read_raster, write_grf, write_png_rgb};
use spraygrid::raster::{false_color_composite, resample, BandRole, BandSet, CompositeMapping};
use spraygrid::regress::{
    fit_candidates, metrics, optimize_weights, predict_raster, render_metrics_table, subset_search, Candidate,
    MetricsReport, ModelSpec, R2Variant, Regressor, SavedEnsemble, WeightSearchOptions,
};
use spraygrid::report::{
    best_per_loss, ingest_record, landscape_csv, landscape_plot, landscape_svg, load_registry, rank_records,
    render_best_table, render_full_table, write_record, Evaluation, ModelRecord,
};
use spraygrid::softmask::{area_report, block_fraction, split_assign, Split, SplitFractions, SplitMap};
use spraygrid::spray::{
    coverage_curve, coverage_curve_masked, export_plan, render_sweep_csv, render_sweep_table, spray_mask, sweep,
    SprayPlan,
};
use spraygrid::synth::{generate, FieldSpec};
use spraygrid::{Error, FeatureTable, Raster, Result, VotingEnsemble};

use crate::output::{emit, ensure_parent, write_json, write_text};
use crate::{
    Cli, Command, CompositeArgs, EvalArgs, FeaturesArgs, FitArgs, PlanArgs, ReportArgs, SoftmaskArgs, SplitArg,
    SplitArgs, SynthArgs,
};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Softmask(a) => softmask(cli, a),
        Command::Features(a) => features(cli, a),
        Command::Fit(a) => fit(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Plan(a) => plan(cli, a),
        Command::Report(a) => report(cli, a),
        Command::Composite(a) => composite(cli, a),
    }
}

fn seed(cli: &Cli) -> u64 {
    cli.seed.unwrap_or(0)
}

fn read(path: &Path) -> Result<Raster> {
    read_raster(path)
}

/// Writes `config.json` into `dir` recording the command, its arguments and the seed.
fn echo_config<A: Serialize>(dir: &Path, command: &str, args: &A, seed: u64) -> Result<()> {
    write_json(
        &dir.join("config.json"),
        &json!({"command": command, "seed": seed, "args": args}),
    )
}

/// Config echo for commands whose output is a single file: `<stem>.config.json`.
fn echo_config_beside<A: Serialize>(file: &Path, command: &str, args: &A, seed: u64) -> Result<()> {
    let stem = file
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let path = file.with_file_name(format!("{stem}.config.json"));
    write_json(&path, &json!({"command": command, "seed": seed, "args": args}))
}

fn fractions(a: &SplitArgs) -> Result<SplitFractions> {
    SplitFractions::new(a.train, a.heldout, a.test)
}

fn band_set(sat: &Raster) -> Result<BandSet> {
    match BandSet::from_band_names(sat.band_names()) {
        Ok(b) => Ok(b),
        Err(_) if sat.bands() == 10 => {
            log::info!("band names missing or incomplete; assuming canonical band order");
            Ok(BandSet::canonical())
        }
        Err(e) => Err(e),
    }
}

/// Split labels on `grid_w x grid_h`, upsampling coarser labels by an integer factor.
fn split_for(split: &Raster, grid_w: usize, grid_h: usize) -> Result<SplitMap> {
    let map = SplitMap::from_raster(split)?;
    if map.width == grid_w && map.height == grid_h {
        return Ok(map);
    }
    let k = grid_w / map.width.max(1);
    if k > 1 && map.width * k == grid_w && map.height * k == grid_h {
        return Ok(map.upsample(k));
    }
    Err(Error::Alignment(format!(
        "split raster is {}x{}, target grid is {grid_w}x{grid_h}",
        map.width, map.height
    )))
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<FieldSpec>(&text).map_err(|e| Error::Validation(format!("field spec: {e}")))?
        }
        None if a.demo => FieldSpec::demo(),
        None => FieldSpec::default(),
    };
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    let field = generate::<f64>(&spec)?;
    let out = &a.out;
    write_grf(&field.drone_mask, &out.join("drone_mask.grf"))?;
    write_grf(&field.satellite, &out.join("satellite.grf"))?;
    write_grf(field.fraction.raster(), &out.join("fraction.grf"))?;
    write_grf(&field.prediction, &out.join("prediction.grf"))?;
    let s = &field.summary;
    let split = split_assign(
        s.sat_width,
        s.sat_height,
        a.split.block,
        fractions(&a.split)?,
        spec.seed,
    )?;
    write_grf(&split.to_raster::<f64>(field.satellite.grid())?, &out.join("split.grf"))?;
    write_json(&out.join("spec.json"), &spec)?;
    let summary = json!({
        "field": field.summary,
        "split_fractions": split.realized_fractions(),
        "files": ["drone_mask.grf", "satellite.grf", "fraction.grf", "prediction.grf", "split.grf", "spec.json"],
    });
    write_json(&out.join("summary.json"), &summary)?;
    echo_config(out, "synth", a, spec.seed)?;
    let table = format!(
        "drone grid      {} x {} ({} m)\nsatellite grid  {} x {} ({} m)\nweed            {:.3}% ({:.3} of {:.3} acres)\noutput          {}\n",
        s.drone_width,
        s.drone_height,
        spec.drone_pixel_m,
        s.sat_width,
        s.sat_height,
        spec.sat_pixel_m,
        s.weed_pct,
        s.area.weed_acres,
        s.area.total_land_acres,
        out.display()
    );
    emit(cli.format, &summary, &table)
}

fn softmask(cli: &Cli, a: &SoftmaskArgs) -> Result<()> {
    let mask = read(&a.mask)?;
    let reference = a.reference.as_deref().map(read).transpose()?;
    let factor = match (&reference, a.factor) {
        (_, Some(f)) => f,
        (Some(r), None) => {
            let ratio = r.transform().pixel_w / mask.transform().pixel_w;
            if (ratio - ratio.round()).abs() > 1e-6 || ratio < 1.0 {
                return Err(Error::Alignment(format!(
                    "reference pixel is {ratio} mask pixels, not an integer"
                )));
            }
            ratio.round() as usize
        }
        (None, None) => return Err(Error::Parameter("either --factor or --reference is required".into())),
    };
    let fraction = block_fraction(&mask, factor)?;
    if let Some(r) = &reference {
        if !fraction.raster().grid().same_as(&r.grid()) {
            return Err(Error::Alignment(
                "fraction mask does not land on the reference grid".into(),
            ));
        }
    }
    write_grf(fraction.raster(), &a.out)?;
    echo_config_beside(&a.out, "softmask", a, seed(cli))?;
    let mask_area = area_report(&mask)?;
    let frac_area = fraction.area_report()?;
    let summary = json!({
        "factor": factor,
        "width": fraction.raster().width(),
        "height": fraction.raster().height(),
        "mask_area": mask_area,
        "fraction_area": frac_area,
    });
    let table = format!(
        "factor {factor}: {} x {} fraction pixels\nland {:.4} acres, weed {:.4} acres ({:.3}%)\n",
        fraction.raster().width(),
        fraction.raster().height(),
        frac_area.total_land_acres,
        frac_area.weed_acres,
        frac_area.weed_pct
    );
    emit(cli.format, &summary, &table)
}

fn features(cli: &Cli, a: &FeaturesArgs) -> Result<()> {
    let sat = read(&a.satellite)?;
    let frac = read(&a.fraction)?;
    let bands = band_set(&sat)?;
    let split = match &a.split {
        Some(p) => split_for(&read(p)?, sat.width(), sat.height())?,
        None => {
            let s = split_assign(
                sat.width(),
                sat.height(),
                a.fractions.block,
                fractions(&a.fractions)?,
                seed(cli),
            )?;
            write_grf(&s.to_raster::<f64>(sat.grid())?, &a.out.with_file_name("split.grf"))?;
            s
        }
    };
    let table = FeatureTable::from_rasters(&sat, &bands, &frac, &split)?;
    ensure_parent(&a.out)?;
    table.write_csv(&a.out)?;
    if let Some(c) = &a.cache {
        ensure_parent(c)?;
        table.write_cache(c)?;
    }
    echo_config_beside(&a.out, "features", a, seed(cli))?;
    let count = |s: Split| table.split().iter().filter(|&&x| x == s).count();
    let summary = json!({
        "rows": table.rows(),
        "train": count(Split::Train),
        "heldout": count(Split::Heldout),
        "test": count(Split::Test),
    });
    let text = format!(
        "{} rows (train {}, held-out {}, test {}) -> {}\n",
        table.rows(),
        count(Split::Train),
        count(Split::Heldout),
        count(Split::Test),
        a.out.display()
    );
    emit(cli.format, &summary, &text)
}

fn read_features(path: &Path) -> Result<FeatureTable> {
    if path.extension().is_some_and(|e| e == "sgft") {
        FeatureTable::read_cache(path)
    } else {
        FeatureTable::read_csv(path)
    }
}

#[derive(Serialize)]
struct CandidateReport {
    name: String,
    heldout: MetricsReport,
}

fn fit(cli: &Cli, a: &FitArgs) -> Result<()> {
    let table = read_features(&a.features)?;
    let variant: R2Variant = a.r2.into();
    let (xt, yt) = table.subset(Split::Train);
    let (xh, yh) = table.subset(Split::Heldout);
    let (xs, ys) = table.subset(Split::Test);
    if xt.rows() == 0 || xh.rows() == 0 {
        return Err(Error::Fit("training and held-out rows are both required".into()));
    }
    let specs = ModelSpec::default_zoo(seed(cli));
    let (fitted, failures) = fit_candidates(&specs, &xt, &yt);
    if fitted.is_empty() {
        return Err(Error::Fit("no candidate model could be fitted".into()));
    }
    let mut scored = fitted
        .iter()
        .map(|(spec, m)| {
            let p = m.predict(&xh);
            Ok((spec.to_string(), metrics(&p, &yh, variant)?, p))
        })
        .collect::<Result<Vec<_>>>()?;
    let order: Vec<usize> = {
        let mut idx: Vec<usize> = (0..scored.len()).collect();
        idx.sort_by(|&i, &j| scored[j].1.r2.total_cmp(&scored[i].1.r2).then(i.cmp(&j)));
        idx
    };
    let candidates: Vec<Candidate<f64>> = scored
        .iter()
        .map(|(name, _, p)| Candidate {
            name: name.clone(),
            predictions: p.clone(),
        })
        .collect();
    let size = a.ensemble_size.min(candidates.len());
    let subset = subset_search(&candidates, size, &yh, variant)?;
    let members: Vec<_> = subset.best.iter().map(|&i| fitted[i].clone()).collect();
    let uniform = VotingEnsemble::new(members, None)?;

    let member_preds: Vec<Vec<f64>> = subset.best.iter().map(|&i| scored[i].2.clone()).collect();
    let opts = WeightSearchOptions {
        variant,
        ..Default::default()
    };
    let (weights, weight_search) = if member_preds.len() < 2 {
        (uniform.weights().to_vec(), json!({"skipped": "single-member ensemble"}))
    } else {
        match optimize_weights(&member_preds, &yh, opts) {
            Ok(ws) => (ws.weights.clone(), serde_json::to_value(&ws)?),
            Err(Error::HeldoutTooSmall { rows }) => {
                log::warn!("held-out set has {rows} rows; keeping uniform weights");
                (
                    uniform.weights().to_vec(),
                    json!({"skipped": format!("held-out set has {rows} rows")}),
                )
            }
            Err(e) => return Err(e),
        }
    };
    let weighted = uniform.clone().with_weights(weights)?;

    let mut test_rows: Vec<(String, MetricsReport)> = Vec::new();
    if xs.rows() > 0 {
        test_rows.push(("uniform ensemble".into(), metrics(&uniform.predict(&xs), &ys, variant)?));
        test_rows.push((
            "weighted ensemble".into(),
            metrics(&weighted.predict(&xs), &ys, variant)?,
        ));
        let best = order[0];
        test_rows.push((
            format!("best single: {}", scored[best].0),
            metrics(&fitted[best].1.predict(&xs), &ys, variant)?,
        ));
    }
    let chosen = if a.uniform { &uniform } else { &weighted };
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let saved: SavedEnsemble<f64> = chosen.to_saved();
    write_text(&a.out.join("model.json"), &(saved.to_json()? + "\n"))?;

    if let Some(sat_path) = &a.satellite {
        let sat = read(sat_path)?;
        let pred = predict_raster(chosen, &sat, &band_set(&sat)?)?;
        write_grf(&pred, &a.out.join("prediction.grf"))?;
    }

    let heldout_table: Vec<(String, MetricsReport)> =
        order.iter().map(|&i| (scored[i].0.clone(), scored[i].1)).collect();
    let report = json!({
        "r2_variant": variant,
        "rows": {"train": yt.len(), "heldout": yh.len(), "test": ys.len()},
        "candidates": order.iter().map(|&i| CandidateReport { name: scored[i].0.clone(), heldout: scored[i].1 }).collect::<Vec<_>>(),
        "failures": failures,
        "subset": {
            "size": size,
            "members": subset.best_names,
            "heldout_r2": subset.r2,
            "evaluated": subset.evaluations.len(),
        },
        "weights": {"members": chosen.names(), "values": chosen.weights(), "search": weight_search},
        "saved": if a.uniform { "uniform" } else { "weighted" },
        "test": test_rows.iter().map(|(n, m)| json!({"name": n, "metrics": m})).collect::<Vec<_>>(),
    });
    write_json(&a.out.join("fit_report.json"), &report)?;
    echo_config(&a.out, "fit", a, seed(cli))?;
    scored.clear();

    let mut text = String::from("Held-out metrics\n");
    text.push_str(&render_metrics_table(&heldout_table));
    let _ = writeln!(
        text,
        "\nBest {size}-member ensemble: {} (held-out R² {:.4}, {} subsets)",
        subset.best_names.join(", "),
        subset.r2,
        subset.evaluations.len()
    );
    let _ = writeln!(text, "Weights: {:?}\n", chosen.weights());
    if !test_rows.is_empty() {
        text.push_str("Test metrics\n");
        text.push_str(&render_metrics_table(&test_rows));
    }
    emit(cli.format, &report, &text)
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let pred = read(&a.pred)?;
    let truth = read(&a.truth)?;
    if !pred.grid().same_as(&truth.grid()) {
        return Err(Error::Alignment("prediction and truth are on different grids".into()));
    }
    let include = match &a.split {
        Some(p) => {
            let s = split_for(&read(p)?, pred.width(), pred.height())?;
            let which = match a.on {
                SplitArg::Train => Split::Train,
                SplitArg::Heldout => Split::Heldout,
                SplitArg::Test => Split::Test,
            };
            Some(s.mask(which))
        }
        None => None,
    };
    let (mut p, mut t) = (Vec::new(), Vec::new());
    for (i, (&pv, &tv)) in pred.data().iter().zip(truth.data()).enumerate() {
        if pred.is_nodata(pv) || truth.is_nodata(tv) || include.as_ref().is_some_and(|m| !m[i]) {
            continue;
        }
        p.push(pv);
        t.push(tv);
    }
    let m = metrics(&p, &t, a.r2.into())?;
    if let Some(out) = &a.out {
        write_json(out, &m)?;
    }
    let text = render_metrics_table(&[(a.pred.display().to_string(), m)]);
    emit(cli.format, &m, &text)
}

fn plan(cli: &Cli, a: &PlanArgs) -> Result<()> {
    let pred = read(&a.pred)?;
    let truth = read(&a.truth)?;
    let rows = match &a.select_on {
        Some(p) => {
            let split = split_for(&read(p)?, pred.width(), pred.height())?;
            let select = coverage_curve_masked(&pred, &truth, Some(&split.mask(Split::Heldout)))?;
            let evaluate = coverage_curve_masked(&pred, &truth, Some(&split.mask(Split::Test)))?;
            sweep(&select, &evaluate, &a.targets)?
        }
        None => {
            let curve = coverage_curve(&pred, &truth)?;
            sweep(&curve, &curve, &a.targets)?
        }
    };
    let mut plans = Vec::new();
    for row in &rows {
        let dir = a.out.join(format!("target_{}", row.target_coverage_pct));
        let plan = SprayPlan {
            summary: row.clone(),
            spray_mask: spray_mask(&pred, row.threshold)?,
        };
        let export = export_plan(&plan, &dir)?;
        plans.push(json!({
            "target_pct": row.target_coverage_pct,
            "dir": dir.strip_prefix(&a.out).unwrap_or(&dir),
            "rectangles": export.rectangles.len(),
        }));
    }
    let summary = json!({
        "selection": if a.select_on.is_some() { "heldout->test" } else { "same-data" },
        "rows": rows,
        "plans": plans,
    });
    write_json(&a.out.join("sweep.json"), &summary)?;
    write_text(&a.out.join("sweep.csv"), &render_sweep_csv(&rows))?;
    echo_config(&a.out, "plan", a, seed(cli))?;
    emit(cli.format, &summary, &render_sweep_table(&rows))
}

fn report(cli: &Cli, a: &ReportArgs) -> Result<()> {
    if let Some(meta) = &a.ingest {
        let text = std::fs::read_to_string(meta).map_err(|e| Error::io(meta, e))?;
        let mut record = ModelRecord::from_json(&text)?;
        let record = match (&a.pred, &a.truth, &a.split) {
            (Some(p), Some(t), Some(s)) => {
                let pred = read(p)?;
                let truth = read(t)?;
                let split = split_for(&read(s)?, pred.width(), pred.height())?;
                record.prediction_path = Some(PathBuf::from(p));
                ingest_record(
                    record,
                    Some(Evaluation {
                        prediction: &pred,
                        truth: &truth,
                        split: &split,
                    }),
                )?
            }
            _ => ingest_record::<f64>(record, None)?,
        };
        let path = write_record(&a.registry, &record)?;
        log::info!("ingested {} into {}", record.name(), path.display());
    }
    let records = load_registry(&a.registry)?;
    let best = best_per_loss(&records, a.target, a.architecture.as_deref())?;
    let ranking = rank_records(&records, a.target);
    if a.plot.is_some() || a.csv.is_some() {
        let points = landscape_plot(&records, a.target)?;
        if let Some(p) = &a.plot {
            write_text(p, &landscape_svg(&points, a.target))?;
        }
        if let Some(c) = &a.csv {
            write_text(c, &landscape_csv(&points))?;
        }
    }
    let summary = json!({
        "target_pct": a.target,
        "architecture": a.architecture,
        "records": records.len(),
        "best_per_loss": best.best_per_loss,
        "winners": best.winners,
        "ranking": ranking.iter().map(|r| json!({"model": r.name(), "excess_pct": r.excess_at(a.target)})).collect::<Vec<_>>(),
    });
    if let Some(out) = &a.out {
        write_json(out, &summary)?;
    }
    let text = format!(
        "Best model per loss at {}%{}\n{}\nAll models\n{}",
        a.target,
        a.architecture.as_deref().map(|x| format!(" ({x})")).unwrap_or_default(),
        render_best_table(&best),
        render_full_table(&ranking)
    );
    emit(cli.format, &summary, &text)
}

fn composite(cli: &Cli, a: &CompositeArgs) -> Result<()> {
    let mut sat = read(&a.satellite)?;
    let bands = band_set(&sat)?;
    if let Some(r) = &a.reference {
        let reference = read_grf::<f64>(r).or_else(|_| read(r))?;
        sat = resample(&sat, &reference.grid(), a.method.into())?;
    }
    let role = |s: &str| s.parse::<BandRole>();
    let mapping = CompositeMapping {
        red: role(&a.red)?,
        green: role(&a.green)?,
        blue: role(&a.blue)?,
    };
    let rgb = false_color_composite(&sat, &bands, mapping, None)?;
    write_png_rgb(&rgb, &a.out)?;
    echo_config_beside(&a.out, "composite", a, seed(cli))?;
    let summary = json!({"width": rgb.width(), "height": rgb.height(), "mapping": mapping, "out": a.out});
    let text = format!(
        "{} x {} composite (R={}, G={}, B={}) -> {}\n",
        rgb.width(),
        rgb.height(),
        mapping.red,
        mapping.green,
        mapping.blue,
        a.out.display()
    );
    emit(cli.format, &summary, &text)
}
