use spraygrid::raster::grf::{read_grf, write_grf};
use spraygrid::softmask::{block_fraction, split_assign, Split, SplitFractions};
use spraygrid::spray::{coverage_curve_masked, make_plan, sweep, ThresholdSource, DEFAULT_TARGETS};
use spraygrid::synth::{generate, FieldSpec};
use spraygrid::Raster;

fn small_field(seed: u64) -> spraygrid::synth::SyntheticField<f64> {
    generate(&FieldSpec {
        width_m: 300.0,
        height_m: 300.0,
        drone_pixel_m: 1.0,
        weed_patch_count: 20,
        seed,
        ..FieldSpec::default()
    })
    .unwrap()
}

#[test]
fn rasters_survive_a_disk_round_trip() {
    let field = small_field(1);
    let dir = tempfile::tempdir().unwrap();
    for (name, r) in [
        ("mask", &field.drone_mask),
        ("sat", &field.satellite),
        ("pred", &field.prediction),
    ] {
        let path = dir.path().join(format!("{name}.grf"));
        write_grf(r, &path).unwrap();
        let back: Raster = read_grf(&path).unwrap();
        assert_eq!(back.data(), r.data(), "{name}");
        assert!(back.grid().same_as(&r.grid()));
        assert_eq!(back.band_names(), r.band_names());
    }
}

#[test]
fn fraction_mask_is_the_block_average_of_the_drone_mask() {
    let field = small_field(2);
    let frac = block_fraction(&field.drone_mask, field.summary.ratio).unwrap();
    assert_eq!(frac.values(), field.fraction.values());
    let weed_pixels = field.drone_mask.data().iter().filter(|&&v| v == 1.0).count() as f64;
    let from_fraction: f64 = frac.values().iter().sum::<f64>() * (field.summary.ratio * field.summary.ratio) as f64;
    assert!((weed_pixels - from_fraction).abs() < 1e-6);
}

#[test]
fn held_out_thresholds_transfer_to_test_pixels() {
    let field = small_field(3);
    let truth = field.fraction.raster();
    let split = split_assign(
        truth.width(),
        truth.height(),
        1,
        SplitFractions::new(0.45, 0.25, 0.30).unwrap(),
        3,
    )
    .unwrap();
    let heldout = split.mask(Split::Heldout);
    let test = split.mask(Split::Test);
    let select = coverage_curve_masked(&field.prediction, truth, Some(&heldout)).unwrap();
    let evaluate = coverage_curve_masked(&field.prediction, truth, Some(&test)).unwrap();
    let rows = sweep(&select, &evaluate, &DEFAULT_TARGETS).unwrap();
    for (row, target) in rows.iter().zip(DEFAULT_TARGETS) {
        assert_eq!(row.threshold, select.select_threshold(target).unwrap());
        let (covered, land) = evaluate.evaluate(row.threshold);
        assert_eq!(row.sprayed_pixels, land);
        assert!((row.achieved_coverage_pct - covered * 100.0).abs() < 1e-9);
        assert_eq!(row.below_target, row.achieved_coverage_pct < target);
    }
    for w in rows.windows(2) {
        assert!(w[0].threshold >= w[1].threshold);
    }
}

#[test]
fn perfect_drone_prediction_sprays_exactly_the_weed() {
    let field = small_field(4);
    let plan = make_plan(
        &field.drone_mask,
        &field.drone_mask,
        95.0,
        ThresholdSource::SameData,
        None,
    )
    .unwrap();
    assert_eq!(plan.spray_mask.data(), field.drone_mask.data());
    assert_eq!(plan.summary.excess_pct, 0.0);
}
