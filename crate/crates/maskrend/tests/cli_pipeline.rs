//! End-to-end subcommand behavior on the bundled fixtures: round-trips,
//! the documented exit codes and the pipeline semantics.

mod common;

use std::path::Path;

use maskrend::cli::dispatch;
use maskrend::formats::{
    read_json, read_predictions, GtFile, PredictionJson, RleJson, StatsReport,
};
use maskrend::mask::{BinaryMask, Rle};
use maskrend::synth::rasterize_disk;

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn run(args: &[&str]) -> i32 {
    dispatch(args.iter().map(|s| s.to_string()))
}

#[test]
fn eval_on_ground_truth_scores_exactly_one() {
    let dir = tempfile::tempdir().unwrap();
    // Detections = ground truths, scores arbitrary.
    let gt: GtFile = read_json(Path::new(&fixture("gt.json"))).unwrap();
    let dets: Vec<PredictionJson> = gt
        .annotations
        .iter()
        .map(|ann| PredictionJson {
            image_id: ann.image_id,
            category_id: ann.category_id,
            score: 0.5 + 0.05 * (ann.id as f64 % 7.0),
            segmentation: ann.segmentation.clone(),
        })
        .collect();
    let pred_path = dir.path().join("perfect.json");
    maskrend::formats::write_json(&pred_path, &dets).unwrap();

    let out = dir.path().join("eval.json");
    let code = run(&[
        "eval",
        "--gt",
        &fixture("gt.json"),
        "--pred",
        pred_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    let result: maskrend::eval::EvalResult = read_json(&out).unwrap();
    assert_eq!(result.map, 1.0);
    assert_eq!(result.ap50, 1.0);
    assert_eq!(result.ap75, 1.0);
    assert!(result.per_category.iter().all(|c| c.ap == 1.0));
}

#[test]
fn ensemble_single_file_is_semantic_identity() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("merged.json");
    let code = run(&[
        "ensemble",
        "--pred",
        &fixture("preds_a.json"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    let input = read_predictions(Path::new(&fixture("preds_a.json"))).unwrap();
    let merged = read_predictions(&out).unwrap();
    assert_eq!(merged.len(), input.len());

    // Same (image, category, score, mask) multisets.
    let key = |p: &maskrend::fusion::InstancePrediction| {
        (
            p.image_id,
            p.category_id,
            (p.score * 1e12).round() as i64,
            p.mask.to_rle(0.5).counts().to_vec(),
        )
    };
    let mut got: Vec<_> = merged.iter().map(key).collect();
    let mut want: Vec<_> = input.iter().map(key).collect();
    got.sort();
    want.sort();
    assert_eq!(got, want);
}

#[test]
fn correct_restores_the_clean_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("corrected.json");
    let code = run(&[
        "correct",
        "--gt",
        &fixture("gt_dirty.json"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    let clean: GtFile = read_json(Path::new(&fixture("gt.json"))).unwrap();
    let corrected: GtFile = read_json(&out).unwrap();
    assert_eq!(corrected.annotations.len(), clean.annotations.len());
    for (got, want) in corrected.annotations.iter().zip(&clean.annotations) {
        assert_eq!(got.id, want.id);
        let got_mask = got.segmentation.to_rle().unwrap().to_mask();
        let want_mask = want.segmentation.to_rle().unwrap().to_mask();
        assert_eq!(got_mask, want_mask, "annotation {} not restored", got.id);
        assert_eq!(got.area, Some(want_mask.area()));
    }
}

#[test]
fn correct_output_roundtrips_through_the_reader() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("corrected.json");
    assert_eq!(
        run(&[
            "correct",
            "--gt",
            &fixture("gt.json"),
            "--out",
            out.to_str().unwrap()
        ]),
        0
    );
    // A clean file is a fixed point of correction.
    let clean: GtFile = read_json(Path::new(&fixture("gt.json"))).unwrap();
    let output: GtFile = read_json(&out).unwrap();
    for (got, want) in output.annotations.iter().zip(&clean.annotations) {
        assert_eq!(
            got.segmentation.to_rle().unwrap(),
            want.segmentation.to_rle().unwrap()
        );
    }
}

#[test]
fn tta_fuse_of_identity_and_unflipped_flip_matches_identity_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tta.json");
    let code = run(&[
        "tta-fuse",
        "--config",
        &fixture("maskrend.conf"),
        "--pred",
        &fixture("preds_tta_identity.json"),
        "--pred",
        &fixture("preds_tta_hflip.json"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    let identity = read_predictions(Path::new(&fixture("preds_tta_identity.json"))).unwrap();
    let fused = read_predictions(&out).unwrap();
    assert_eq!(fused.len(), identity.len());
    for (got, want) in fused.iter().zip(&identity) {
        assert_eq!(got.image_id, want.image_id);
        assert_eq!(got.category_id, want.category_id);
        assert!((got.score - want.score).abs() < 1e-12);
        assert_eq!(got.mask.to_rle(0.5), want.mask.to_rle(0.5));
    }
}

#[test]
fn tta_fuse_transform_count_mismatch_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tta.json");
    // Config lists two transforms; only one file given.
    let code = run(&[
        "tta-fuse",
        "--config",
        &fixture("maskrend.conf"),
        "--pred",
        &fixture("preds_tta_identity.json"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn refine_produces_full_resolution_masks_that_follow_the_disk() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("refined.json");
    let code = run(&[
        "refine",
        "--pred",
        &fixture("coarse.json"),
        "--features",
        &fixture("features.json"),
        "--model",
        &fixture("model.json"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    let refined = read_predictions(&out).unwrap();
    assert_eq!(refined.len(), 2);
    for pred in &refined {
        let (w, h) = pred.mask.dimensions();
        assert_eq!((w, h), (28, 28));
    }

    // The first fixture instance is a disk at (0.45, 0.5), radius 0.32; the
    // hand-written model keys on the signed-distance feature channel, so
    // the refined mask must beat plain coarse upsampling.
    let disk = rasterize_disk((0.45, 0.5), 0.32, 28);
    let refined_mask = refined[0].mask.to_rle(0.5).to_mask();
    let refined_iou = refined_mask.iou(&disk).unwrap();

    let coarse: Vec<maskrend::formats::CoarsePredictionJson> =
        read_json(Path::new(&fixture("coarse.json"))).unwrap();
    let coarse_map = maskrend::mask::ProbabilityMask::new(
        coarse[0].width,
        coarse[0].height,
        coarse[0].probs.clone(),
    )
    .unwrap();
    let baseline = maskrend::refine::bilinear_chain(&coarse_map, 2)
        .threshold(0.5)
        .iou(&disk)
        .unwrap();
    assert!(
        refined_iou > baseline,
        "refined IoU {refined_iou:.4} not above bilinear {baseline:.4}"
    );
    assert!(refined_iou > 0.9, "refined IoU too low: {refined_iou:.4}");
}

#[test]
fn train_demo_improves_over_bilinear_by_more_than_three_points() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(&[
        "train-demo",
        "--seed",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    let report: maskrend::synth::RefinementReport =
        read_json(&dir.path().join("report.json")).unwrap();
    assert!(
        report.improvement() > 0.03,
        "improvement {:.4} not above 0.03",
        report.improvement()
    );

    let losses: Vec<f64> = read_json(&dir.path().join("loss_trace.json")).unwrap();
    assert!(losses.last().unwrap() < losses.first().unwrap());

    // The written model loads and refines.
    let model: maskrend::refine::PointHeadModel =
        read_json(&dir.path().join("model.json")).unwrap();
    assert!(model.parameter_count() > 0);
}

#[test]
fn stats_outputs_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("stats.json");
    let csv = dir.path().join("stats");
    let code = run(&[
        "stats",
        "--gt",
        &fixture("gt.json"),
        "--out",
        out.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    let report: StatsReport = read_json(&out).unwrap();
    assert_eq!(report.num_images, 3);
    assert_eq!(report.num_instances, 6);
    assert_eq!(report.category_histogram.len(), 3);
    let total: u64 = report.category_histogram.iter().map(|c| c.count).sum();
    assert_eq!(total, 6);
    assert!((report.area_bucket_fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let categories_csv = std::fs::read_to_string(dir.path().join("stats.categories.csv")).unwrap();
    assert!(categories_csv.starts_with("id,name,count\n"));
    assert_eq!(categories_csv.lines().count(), 4);
    let aspect_csv = std::fs::read_to_string(dir.path().join("stats.aspect.csv")).unwrap();
    assert!(aspect_csv.starts_with("log_low,log_high,count\n"));
}

#[test]
fn malformed_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = dir.path().join("out.json");

    assert_eq!(
        run(&["stats", "--gt", bad.to_str().unwrap()]),
        2,
        "syntactically broken file"
    );
    assert_eq!(
        run(&[
            "eval",
            "--gt",
            &fixture("gt.json"),
            "--pred",
            bad.to_str().unwrap(),
        ]),
        2
    );

    // Well-formed JSON with an impossible RLE total.
    let impossible = dir.path().join("impossible.json");
    std::fs::write(
        &impossible,
        r#"[{"image_id":1,"category_id":1,"score":0.5,"segmentation":{"size":[4,4],"counts":[3]}}]"#,
    )
    .unwrap();
    assert_eq!(
        run(&[
            "ensemble",
            "--pred",
            impossible.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]),
        2
    );

    // Config with an unknown key.
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "definitely_not_a_key = 1\n").unwrap();
    assert_eq!(
        run(&[
            "stats",
            "--config",
            conf.to_str().unwrap(),
            "--gt",
            &fixture("gt.json")
        ]),
        2
    );
}

#[test]
fn inconsistent_prediction_files_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // Same image id, different mask resolution than preds_a.
    let other = dir.path().join("other.json");
    let mask = BinaryMask::zeros(10, 10).unwrap();
    let records = vec![PredictionJson {
        image_id: 1,
        category_id: 1,
        score: 0.9,
        segmentation: RleJson::from_rle(&Rle::from_mask(&mask)),
    }];
    maskrend::formats::write_json(&other, &records).unwrap();

    let out = dir.path().join("out.json");
    assert_eq!(
        run(&[
            "ensemble",
            "--pred",
            &fixture("preds_a.json"),
            "--pred",
            other.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]),
        2
    );
}

#[test]
fn broken_library_invariant_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    // `inf` parses as a number, so the config file itself is well-formed;
    // the training loop then rejects the non-finite learning rate as an
    // invariant violation.
    let conf = dir.path().join("hot.conf");
    std::fs::write(
        &conf,
        "train_instances = 4\neval_instances = 4\ntrain_epochs = 5\nlearning_rate = inf\nhidden_widths = 8\npoints_per_instance = 16\n",
    )
    .unwrap();
    let code = run(&[
        "train-demo",
        "--config",
        conf.to_str().unwrap(),
        "--out",
        dir.path().join("demo").to_str().unwrap(),
    ]);
    assert_eq!(code, 3);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]), 1);
    assert_eq!(run(&["eval"]), 1); // missing required flags
    assert_eq!(run(&["--help"]), 0);
}
