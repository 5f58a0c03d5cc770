//! Batch command-line front end: analyze, correct, refine, fuse, evaluate
//! and a training demo, all file-based and deterministic under a single
//! seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::eval::{coco_map_with_max_dets, GroundTruthInstance};
use crate::formats::{
    read_json, read_predictions, write_json, write_predictions, CategoryCount,
    CoarsePredictionJson, FeatureGridJson, GtFile, RleJson, StatsReport,
};
use crate::fusion::{
    ensemble_merge, invert_prediction, tta_average, InstancePrediction, PredictionMask,
    TtaTransform,
};
use crate::loss::FocalLossParams;
use crate::mask::ProbabilityMask;
use crate::refine::{
    subdivision_refine, train_point_head, PointHeadModel, SubdivisionConfig, TrainConfig,
};
use crate::synth::{evaluate_refinement, generate_disks, training_instances, DiskBenchmarkConfig};
use crate::{Error, Result};

/// Runtime configuration, loaded from a plain `key = value` file.
///
/// Unknown keys are rejected; every default matches the corresponding
/// library default.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub focal_alpha: Vec<f64>,
    pub focal_gamma: f64,
    pub weight_cls: f64,
    pub weight_box: f64,
    pub weight_mask: f64,
    pub weight_point: f64,
    pub coarse_size: usize,
    pub subdivision_steps: usize,
    pub points_per_step: usize,
    pub mask_threshold: f64,
    /// One transform per `--pred` file for tta-fuse; empty means identity.
    pub tta: Vec<TtaTransform>,
    pub ensemble_iou: f64,
    pub max_detections: usize,
    pub speckle_fraction: f64,
    pub hole_fraction: f64,
    pub seed: u64,
    pub threads: usize,
    pub train_instances: usize,
    pub eval_instances: usize,
    pub train_epochs: usize,
    pub learning_rate: f64,
    pub points_per_instance: usize,
    pub hidden_widths: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let subdiv = SubdivisionConfig::default();
        Self {
            focal_alpha: Vec::new(),
            focal_gamma: 2.0,
            weight_cls: 1.0,
            weight_box: 1.0,
            weight_mask: 1.1,
            weight_point: 1.0,
            coarse_size: subdiv.coarse_size,
            subdivision_steps: subdiv.steps,
            points_per_step: subdiv.points_per_step,
            mask_threshold: subdiv.threshold,
            tta: Vec::new(),
            ensemble_iou: 0.5,
            max_detections: crate::eval::DEFAULT_MAX_DETECTIONS,
            speckle_fraction: 0.05,
            hole_fraction: 0.05,
            seed: 0,
            threads: 1,
            train_instances: 40,
            eval_instances: 50,
            train_epochs: 80,
            learning_rate: train.learning_rate,
            points_per_instance: train.points_per_instance,
            hidden_widths: train.hidden_widths,
        }
    }
}

impl RunConfig {
    pub fn subdivision(&self) -> SubdivisionConfig {
        SubdivisionConfig {
            coarse_size: self.coarse_size,
            steps: self.subdivision_steps,
            points_per_step: self.points_per_step,
            threshold: self.mask_threshold,
        }
    }

    pub fn focal(&self) -> Result<FocalLossParams> {
        FocalLossParams::new(self.focal_alpha.clone(), self.focal_gamma)
    }

    /// Parse a config file: `key = value` lines, `#` comments.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |detail: String| Error::MalformedFile {
                path: path.display().to_string(),
                detail: format!("line {}: {}", lineno + 1, detail),
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let value = value.trim();
            let parse_f64 = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| bad(format!("`{v}` is not a number")))
            };
            let parse_usize = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| bad(format!("`{v}` is not a non-negative integer")))
            };
            match key {
                "focal_alpha" => {
                    cfg.focal_alpha = if value.is_empty() {
                        Vec::new()
                    } else {
                        value
                            .split(',')
                            .map(|v| parse_f64(v.trim()))
                            .collect::<Result<Vec<_>>>()?
                    };
                }
                "focal_gamma" => cfg.focal_gamma = parse_f64(value)?,
                "weight_cls" => cfg.weight_cls = parse_f64(value)?,
                "weight_box" => cfg.weight_box = parse_f64(value)?,
                "weight_mask" => cfg.weight_mask = parse_f64(value)?,
                "weight_point" => cfg.weight_point = parse_f64(value)?,
                "coarse_size" => cfg.coarse_size = parse_usize(value)?,
                "subdivision_steps" => cfg.subdivision_steps = parse_usize(value)?,
                "points_per_step" => cfg.points_per_step = parse_usize(value)?,
                "mask_threshold" => cfg.mask_threshold = parse_f64(value)?,
                "tta" => {
                    cfg.tta = if value.is_empty() {
                        Vec::new()
                    } else {
                        value
                            .split(',')
                            .map(|spec| parse_transform(spec.trim()).map_err(&bad))
                            .collect::<Result<Vec<_>>>()?
                    };
                }
                "ensemble_iou" => cfg.ensemble_iou = parse_f64(value)?,
                "max_detections" => cfg.max_detections = parse_usize(value)?,
                "speckle_fraction" => cfg.speckle_fraction = parse_f64(value)?,
                "hole_fraction" => cfg.hole_fraction = parse_f64(value)?,
                "seed" => {
                    cfg.seed = value
                        .parse::<u64>()
                        .map_err(|_| bad(format!("`{value}` is not a valid seed")))?;
                }
                "threads" => cfg.threads = parse_usize(value)?,
                "train_instances" => cfg.train_instances = parse_usize(value)?,
                "eval_instances" => cfg.eval_instances = parse_usize(value)?,
                "train_epochs" => cfg.train_epochs = parse_usize(value)?,
                "learning_rate" => cfg.learning_rate = parse_f64(value)?,
                "points_per_instance" => cfg.points_per_instance = parse_usize(value)?,
                "hidden_widths" => {
                    cfg.hidden_widths = value
                        .split(',')
                        .map(|v| parse_usize(v.trim()))
                        .collect::<Result<Vec<_>>>()?;
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        Ok(cfg)
    }
}

fn parse_transform(spec: &str) -> std::result::Result<TtaTransform, String> {
    match spec {
        "none" => Ok(TtaTransform::identity()),
        "hflip" => Ok(TtaTransform::HorizontalFlip),
        other => match other.strip_prefix("scale:") {
            Some(s) => {
                let scale: f64 = s
                    .parse()
                    .map_err(|_| format!("`{s}` is not a valid scale factor"))?;
                if scale <= 0.0 || !scale.is_finite() {
                    return Err(format!("scale must be positive, got {scale}"));
                }
                Ok(TtaTransform::Rescale { scale })
            }
            None => Err(format!(
                "unknown transform `{other}` (expected none, hflip or scale:<factor>)"
            )),
        },
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "maskrend",
    version,
    about = "Instance-mask pipeline: analyze, correct, refine, fuse and evaluate"
)]
struct Cli {
    /// Plain-text key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores); overrides the config.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dataset analysis: histograms, area buckets, anchor recommendation.
    Stats {
        #[arg(long)]
        gt: PathBuf,
        /// JSON report destination (text report always goes to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// CSV prefix: writes <prefix>.categories.csv and <prefix>.aspect.csv.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Apply mask correction to every annotation.
    Correct {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine coarse probability maps with a trained point head.
    Refine {
        /// Coarse prediction file.
        #[arg(long)]
        pred: PathBuf,
        /// Per-instance feature grids.
        #[arg(long)]
        features: PathBuf,
        /// Point head model JSON.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average aligned predictions from test-time-augmented runs.
    TtaFuse {
        /// One prediction file per transform, aligned instance-by-instance.
        #[arg(long = "pred", required = true)]
        preds: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge predictions from several models into consensus instances.
    Ensemble {
        #[arg(long = "pred", required = true)]
        preds: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// COCO-style mask mAP of predictions against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// JSON result destination (table always goes to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the point head on the synthetic disk benchmark.
    TrainDemo {
        /// Output directory for model, loss trace and report.
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Input(Error),
    Internal(Error),
}

impl Failure {
    fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Input(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) => format!("usage error: {m}"),
            Failure::Input(e) => format!("malformed input: {e}"),
            Failure::Internal(e) => format!("internal error: {e}"),
        }
    }
}

/// Classify a library error: file-level problems are the caller's inputs,
/// anything else is an internal invariant violation.
fn auto(e: Error) -> Failure {
    match e {
        Error::MalformedFile { .. } | Error::Io { .. } => Failure::Input(e),
        other => Failure::Internal(other),
    }
}

/// Data inconsistencies inside otherwise well-formed files.
fn input_data(path: &Path, e: Error) -> Failure {
    Failure::Input(Error::MalformedFile {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Run one subcommand; returns the process exit code.
///
/// `argv` excludes the program name. Exit codes: 0 success, 1 usage error,
/// 2 malformed input file, 3 internal invariant violation.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args = std::iter::once("maskrend".to_string()).chain(argv.into_iter().map(Into::into));
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Let clap print its rendered help/usage; version/help requests
            // exit cleanly.
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help { 0 } else { 1 };
        }
    };

    match run(cli) {
        Ok(()) => 0,
        Err(failure) => {
            eprintln!("{}", failure.message());
            failure.exit_code()
        }
    }
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(auto)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Failure::Internal(Error::InvalidParameter(e.to_string())))?;

    pool.install(|| match cli.command {
        Command::Stats { gt, out, csv } => cmd_stats(&cfg, &gt, out.as_deref(), csv.as_deref()),
        Command::Correct { gt, out } => cmd_correct(&cfg, &gt, &out),
        Command::Refine {
            pred,
            features,
            model,
            out,
        } => cmd_refine(&cfg, &pred, &features, &model, &out),
        Command::TtaFuse { preds, out } => cmd_tta_fuse(&cfg, &preds, &out),
        Command::Ensemble { preds, out } => cmd_ensemble(&cfg, &preds, &out),
        Command::Eval { gt, pred, out } => cmd_eval(&cfg, &gt, &pred, out.as_deref()),
        Command::TrainDemo { out } => cmd_train_demo(&cfg, &out),
    })
}

fn cmd_stats(
    _cfg: &RunConfig,
    gt_path: &Path,
    out: Option<&Path>,
    csv: Option<&Path>,
) -> std::result::Result<(), Failure> {
    let file: GtFile = read_json(gt_path).map_err(auto)?;
    let set = file
        .to_annotation_set()
        .map_err(|e| input_data(gt_path, e))?;

    let histogram = crate::stats::category_histogram(&set);
    let names: BTreeMap<u64, &str> = set
        .categories
        .iter()
        .map(|c| (c.id, c.name.as_str()))
        .collect();
    let category_histogram: Vec<CategoryCount> = histogram
        .iter()
        .map(|(&id, &count)| CategoryCount {
            id,
            name: names.get(&id).unwrap_or(&"?").to_string(),
            count,
        })
        .collect();

    let edges = crate::stats::DEFAULT_AREA_EDGES.to_vec();
    let fractions = crate::stats::area_buckets(&set, &edges).map_err(|e| input_data(gt_path, e))?;
    let aspect = crate::stats::aspect_ratio_histogram(&set, &crate::stats::default_aspect_edges())
        .map_err(|e| input_data(gt_path, e))?;
    let anchors = crate::stats::recommend_anchors(&set, 0.9).map_err(|e| input_data(gt_path, e))?;

    let report = StatsReport {
        num_images: set.images.len(),
        num_instances: set.instances.len(),
        category_histogram,
        area_bucket_edges: edges,
        area_bucket_fractions: fractions,
        aspect_histogram: aspect,
        anchors,
    };

    print!("{}", render_stats_table(&report));
    if let Some(path) = out {
        write_json(path, &report).map_err(auto)?;
    }
    if let Some(prefix) = csv {
        write_stats_csv(prefix, &report).map_err(auto)?;
    }
    Ok(())
}

fn render_stats_table(report: &StatsReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "images: {}\ninstances: {}\n\ncategory            count\n",
        report.num_images, report.num_instances
    ));
    for row in &report.category_histogram {
        out.push_str(&format!(
            "{:<4} {:<12} {:>8}\n",
            row.id, row.name, row.count
        ));
    }
    out.push_str("\narea bucket        fraction\n");
    let mut labels = Vec::new();
    for (i, &e) in report.area_bucket_edges.iter().enumerate() {
        if i == 0 {
            labels.push(format!("<= {e}"));
        } else {
            labels.push(format!("({}, {e}]", report.area_bucket_edges[i - 1]));
        }
    }
    labels.push(format!("> {}", report.area_bucket_edges.last().unwrap()));
    for (label, frac) in labels.iter().zip(&report.area_bucket_fractions) {
        out.push_str(&format!("{label:<18} {frac:>8.4}\n"));
    }
    out.push_str("\naspect log-bin     count\n");
    let edges = &report.aspect_histogram.log_edges;
    for (i, count) in report.aspect_histogram.counts.iter().enumerate() {
        out.push_str(&format!(
            "[{:>6.3}, {:>6.3})  {count:>6}\n",
            edges[i],
            edges[i + 1]
        ));
    }
    if report.aspect_histogram.degenerate > 0 {
        out.push_str(&format!(
            "degenerate boxes:  {}\n",
            report.aspect_histogram.degenerate
        ));
    }
    let ratios: Vec<String> = report
        .anchors
        .ratios
        .iter()
        .map(|&r| {
            if r >= 1.0 {
                format!("{}:1", r.round() as u64)
            } else {
                format!("1:{}", (1.0 / r).round() as u64)
            }
        })
        .collect();
    out.push_str(&format!(
        "\nanchor sizes: {:?}\nanchor ratios (h:w): {}\n",
        report.anchors.sizes,
        ratios.join(", ")
    ));
    out
}

fn write_stats_csv(prefix: &Path, report: &StatsReport) -> Result<()> {
    let write = |path: PathBuf, content: String| -> Result<()> {
        std::fs::write(&path, content).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    };
    let mut categories = String::from("id,name,count\n");
    for row in &report.category_histogram {
        categories.push_str(&format!("{},{},{}\n", row.id, row.name, row.count));
    }
    write(prefix.with_extension("categories.csv"), categories)?;

    let mut aspect = String::from("log_low,log_high,count\n");
    let edges = &report.aspect_histogram.log_edges;
    for (i, count) in report.aspect_histogram.counts.iter().enumerate() {
        aspect.push_str(&format!("{},{},{}\n", edges[i], edges[i + 1], count));
    }
    write(prefix.with_extension("aspect.csv"), aspect)
}

fn cmd_correct(cfg: &RunConfig, gt_path: &Path, out: &Path) -> std::result::Result<(), Failure> {
    let mut file: GtFile = read_json(gt_path).map_err(auto)?;
    let corrected: Vec<Result<(RleJson, u64)>> = file
        .annotations
        .par_iter()
        .map(|ann| {
            let mask = ann.segmentation.to_rle()?.to_mask();
            let fixed = mask.correct(cfg.speckle_fraction, cfg.hole_fraction)?;
            let rle = crate::mask::Rle::from_mask(&fixed);
            let area = rle.area();
            Ok((RleJson::from_rle(&rle), area))
        })
        .collect();
    for (ann, result) in file.annotations.iter_mut().zip(corrected) {
        let (segmentation, area) = result.map_err(|e| input_data(gt_path, e))?;
        ann.segmentation = segmentation;
        ann.area = Some(area);
    }
    write_json(out, &file).map_err(auto)?;
    println!(
        "corrected {} annotations -> {}",
        file.annotations.len(),
        out.display()
    );
    Ok(())
}

fn cmd_refine(
    cfg: &RunConfig,
    pred_path: &Path,
    features_path: &Path,
    model_path: &Path,
    out: &Path,
) -> std::result::Result<(), Failure> {
    let coarse: Vec<CoarsePredictionJson> = read_json(pred_path).map_err(auto)?;
    let features: Vec<FeatureGridJson> = read_json(features_path).map_err(auto)?;
    let model: PointHeadModel = read_json(model_path).map_err(auto)?;

    let mut grids: BTreeMap<u64, crate::refine::FeatureGrid> = BTreeMap::new();
    for f in features {
        let grid = crate::refine::FeatureGrid::new(f.channels, f.width, f.height, f.values)
            .map_err(|e| input_data(features_path, e))?;
        if grids.insert(f.instance_id, grid).is_some() {
            return Err(input_data(
                features_path,
                Error::InvalidParameter(format!("duplicate instance_id {}", f.instance_id)),
            ));
        }
    }

    let subdiv = cfg.subdivision();
    let mut items: Vec<(u64, CoarsePredictionJson)> =
        coarse.into_iter().map(|c| (c.instance_id, c)).collect();
    items.sort_by_key(|(id, _)| *id);

    let refined: Vec<std::result::Result<PredictionJsonOut, Failure>> = items
        .par_iter()
        .map(|(instance_id, c)| {
            let grid = grids.get(instance_id).ok_or_else(|| {
                input_data(
                    pred_path,
                    Error::InvalidParameter(format!(
                        "no feature grid for instance_id {instance_id}"
                    )),
                )
            })?;
            let prob = ProbabilityMask::new(c.width, c.height, c.probs.clone())
                .map_err(|e| input_data(pred_path, e))?;
            let out_mask = subdivision_refine(&model, &prob, grid, &subdiv)
                .map_err(|e| input_data(pred_path, e))?;
            let rle = crate::mask::Rle::from_mask(&out_mask.threshold(subdiv.threshold));
            Ok(PredictionJsonOut {
                image_id: c.image_id,
                category_id: c.category_id,
                score: c.score,
                segmentation: RleJson::from_rle(&rle),
            })
        })
        .collect();

    let mut records = Vec::with_capacity(refined.len());
    for r in refined {
        records.push(r?);
    }
    write_json(out, &records).map_err(auto)?;
    println!("refined {} instances -> {}", records.len(), out.display());
    Ok(())
}

// The prediction record shape, re-declared locally so refine can emit
// without round-tripping through InstancePrediction.
#[derive(serde::Serialize)]
struct PredictionJsonOut {
    image_id: u64,
    category_id: u64,
    score: f64,
    segmentation: RleJson,
}

fn cmd_tta_fuse(
    cfg: &RunConfig,
    pred_paths: &[PathBuf],
    out: &Path,
) -> std::result::Result<(), Failure> {
    if pred_paths.is_empty() {
        return Err(Failure::Usage(
            "tta-fuse needs at least one --pred file".into(),
        ));
    }
    let transforms: Vec<TtaTransform> = if cfg.tta.is_empty() {
        vec![TtaTransform::identity(); pred_paths.len()]
    } else if cfg.tta.len() == pred_paths.len() {
        cfg.tta.clone()
    } else {
        return Err(Failure::Usage(format!(
            "config lists {} tta transforms but {} --pred files were given",
            cfg.tta.len(),
            pred_paths.len()
        )));
    };

    let runs: Vec<Vec<InstancePrediction>> = pred_paths
        .iter()
        .map(|p| read_predictions(p))
        .collect::<Result<_>>()
        .map_err(auto)?;
    let reference = &runs[0];
    for (k, run) in runs.iter().enumerate().skip(1) {
        if run.len() != reference.len() {
            return Err(input_data(
                &pred_paths[k],
                Error::InconsistentPredictions(format!(
                    "file lists {} instances, expected {} (instance-aligned runs required)",
                    run.len(),
                    reference.len()
                )),
            ));
        }
        for (i, (a, b)) in reference.iter().zip(run).enumerate() {
            if a.image_id != b.image_id || a.category_id != b.category_id {
                return Err(input_data(
                    &pred_paths[k],
                    Error::InconsistentPredictions(format!(
                        "instance {i} does not match the first file's image/category"
                    )),
                ));
            }
        }
    }

    let fused: Vec<std::result::Result<InstancePrediction, Failure>> = (0..reference.len())
        .into_par_iter()
        .map(|i| {
            let (ref_w, ref_h) = reference[i].mask.dimensions();
            let mut aligned = Vec::with_capacity(runs.len());
            let mut scores = Vec::with_capacity(runs.len());
            for (run, transform) in runs.iter().zip(&transforms) {
                let prob = run[i].mask.to_probability();
                aligned.push(invert_prediction(&prob, transform, ref_w, ref_h));
                scores.push(run[i].score);
            }
            let (mean_mask, mean_score) =
                tta_average(&aligned, &scores).map_err(Failure::Internal)?;
            let bbox = mean_mask.threshold(cfg.mask_threshold).bbox();
            Ok(InstancePrediction {
                image_id: reference[i].image_id,
                category_id: reference[i].category_id,
                score: mean_score,
                bbox,
                mask: PredictionMask::Probability(mean_mask),
            })
        })
        .collect();

    let mut merged = Vec::with_capacity(fused.len());
    for f in fused {
        merged.push(f?);
    }
    write_predictions(out, &merged, cfg.mask_threshold).map_err(auto)?;
    println!(
        "fused {} runs x {} instances -> {}",
        runs.len(),
        merged.len(),
        out.display()
    );
    Ok(())
}

fn cmd_ensemble(
    cfg: &RunConfig,
    pred_paths: &[PathBuf],
    out: &Path,
) -> std::result::Result<(), Failure> {
    if pred_paths.is_empty() {
        return Err(Failure::Usage(
            "ensemble needs at least one --pred file".into(),
        ));
    }
    let models: Vec<Vec<InstancePrediction>> = pred_paths
        .iter()
        .map(|p| read_predictions(p))
        .collect::<Result<_>>()
        .map_err(auto)?;

    // Group per image; every model contributes a (possibly empty) list.
    let mut images: std::collections::BTreeSet<u64> = std::collections::BTreeSet::new();
    for preds in &models {
        images.extend(preds.iter().map(|p| p.image_id));
    }
    let image_list: Vec<u64> = images.into_iter().collect();

    // Masks for one image must agree on resolution across files.
    let mut dims: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for (k, preds) in models.iter().enumerate() {
        for p in preds {
            let d = p.mask.dimensions();
            if let Some(&prev) = dims.get(&p.image_id) {
                if prev != d {
                    return Err(input_data(
                        &pred_paths[k],
                        Error::InconsistentPredictions(format!(
                            "image {} has masks of {}x{} and {}x{}",
                            p.image_id, prev.0, prev.1, d.0, d.1
                        )),
                    ));
                }
            } else {
                dims.insert(p.image_id, d);
            }
        }
    }

    let per_image: Vec<std::result::Result<Vec<InstancePrediction>, Failure>> = image_list
        .par_iter()
        .map(|&image_id| {
            let per_model: Vec<Vec<InstancePrediction>> = models
                .iter()
                .map(|preds| {
                    preds
                        .iter()
                        .filter(|p| p.image_id == image_id)
                        .cloned()
                        .collect()
                })
                .collect();
            ensemble_merge(&per_model, cfg.ensemble_iou, models.len()).map_err(Failure::Internal)
        })
        .collect();

    let mut all = Vec::new();
    for group in per_image {
        all.extend(group?);
    }
    write_predictions(out, &all, cfg.mask_threshold).map_err(auto)?;
    println!(
        "merged {} models -> {} instances -> {}",
        models.len(),
        all.len(),
        out.display()
    );
    Ok(())
}

fn cmd_eval(
    cfg: &RunConfig,
    gt_path: &Path,
    pred_path: &Path,
    out: Option<&Path>,
) -> std::result::Result<(), Failure> {
    let gt_file: GtFile = read_json(gt_path).map_err(auto)?;
    let gts: Vec<GroundTruthInstance> = gt_file
        .annotations
        .iter()
        .map(|ann| {
            Ok(GroundTruthInstance::new(
                ann.image_id,
                ann.category_id,
                ann.segmentation.to_rle()?,
            ))
        })
        .collect::<Result<_>>()
        .map_err(|e| input_data(gt_path, e))?;
    let categories: Vec<u64> = gt_file.categories.iter().map(|c| c.id).collect();
    let dets = read_predictions(pred_path).map_err(auto)?;

    let result = coco_map_with_max_dets(&gts, &dets, &categories, cfg.max_detections)
        .map_err(|e| input_data(pred_path, e))?;
    print!("{}", result.to_table());
    if let Some(path) = out {
        write_json(path, &result).map_err(auto)?;
    }
    Ok(())
}

fn cmd_train_demo(cfg: &RunConfig, out_dir: &Path) -> std::result::Result<(), Failure> {
    std::fs::create_dir_all(out_dir).map_err(|source| {
        Failure::Input(Error::Io {
            path: out_dir.display().to_string(),
            source,
        })
    })?;

    let bench = DiskBenchmarkConfig {
        coarse_size: cfg.coarse_size,
        steps: cfg.subdivision_steps,
        ..DiskBenchmarkConfig::default()
    };
    let train_disks = generate_disks(cfg.train_instances, cfg.seed, &bench);
    let held_out = generate_disks(cfg.eval_instances, cfg.seed ^ 0x9e3779b97f4a7c15, &bench);

    let train_cfg = TrainConfig {
        loss: cfg.focal().map_err(Failure::Internal)?,
        learning_rate: cfg.learning_rate,
        epochs: cfg.train_epochs,
        points_per_instance: cfg.points_per_instance,
        hidden_widths: cfg.hidden_widths.clone(),
        seed: cfg.seed,
    };
    let outcome = train_point_head(&training_instances(&train_disks), &train_cfg)
        .map_err(Failure::Internal)?;

    let mut subdiv = bench.subdivision();
    subdiv.points_per_step = cfg.points_per_step;
    subdiv.threshold = cfg.mask_threshold;
    let report =
        evaluate_refinement(&outcome.model, &held_out, &subdiv).map_err(Failure::Internal)?;

    write_json(&out_dir.join("model.json"), &outcome.model).map_err(auto)?;
    write_json(&out_dir.join("loss_trace.json"), &outcome.epoch_losses).map_err(auto)?;
    write_json(&out_dir.join("report.json"), &report).map_err(auto)?;

    println!(
        "trained {} epochs on {} disks; loss {:.4} -> {:.4}",
        cfg.train_epochs,
        cfg.train_instances,
        outcome.epoch_losses.first().copied().unwrap_or(f64::NAN),
        outcome.epoch_losses.last().copied().unwrap_or(f64::NAN),
    );
    println!(
        "held-out mean IoU: bilinear {:.4}, refined {:.4} (improvement {:+.4})",
        report.bilinear_mean_iou,
        report.refined_mean_iou,
        report.improvement()
    );
    Ok(())
}
