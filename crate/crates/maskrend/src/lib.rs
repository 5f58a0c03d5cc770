//! Instance-mask toolkit built around point-based mask refinement.
//!
//! The crate bundles the pieces of a segmentation post-processing pipeline
//! that do not require a GPU or a trained backbone:
//!
//! - [`mask`] — binary/probability masks, bit-exact COCO run-length codecs,
//!   IoU, bilinear resizing, connected components and mask correction.
//! - [`refine`] — uncertainty-driven point sampling, an MLP point classifier
//!   and coarse-to-fine subdivision refinement, plus desk-scale training of
//!   the point head.
//! - [`loss`] — binary/multi-class/mask focal losses with analytic gradients
//!   and the composite detector loss.
//! - [`fusion`] — test-time-augmentation averaging and cross-model ensemble
//!   merging of instance predictions.
//! - [`eval`] — a COCO-style mask mAP evaluator (mAP, AP50, AP75, APs, APm,
//!   APl and per-category AP).
//! - [`stats`] — dataset analysis: category histogram, area buckets, aspect
//!   ratios and anchor recommendation.
//! - [`formats`] — the JSON file schemas shared by the CLI and external
//!   tools.
//! - [`synth`] — the seeded synthetic-disk benchmark used by the training
//!   demo.
//!
//! Each capability has a runnable example under `examples/`; the `maskrend`
//! binary wires them into a batch pipeline (`stats`, `correct`, `refine`,
//! `tta-fuse`, `ensemble`, `eval`, `train-demo`).

pub mod cli;
pub mod eval;
pub mod formats;
pub mod fusion;
pub mod loss;
pub mod mask;
pub mod refine;
pub mod stats;
pub mod synth;

pub use eval::{coco_map, EvalResult, GroundTruthInstance};
pub use fusion::{ensemble_merge, tta_average, InstancePrediction, TtaTransform};
pub use loss::{
    composite_loss, focal_binary, focal_binary_grad, focal_mask, focal_multiclass,
    CompositeLossWeights, FocalLossParams,
};
pub use mask::{BBox, BinaryMask, Component, ProbabilityMask, Rle};
pub use refine::{
    subdivision_refine, train_point_head, uncertain_points, FeatureGrid, PointClassifier,
    PointHeadModel, PointSet, SubdivisionConfig,
};

/// Errors shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {}x{}, got {}x{}", expected.0, expected.1, got.0, got.1)]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("invalid run-length encoding: {0}")]
    InvalidRle(String),
    #[error("codec error: {0}")]
    Codec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },
    #[error("inconsistent predictions: {0}")]
    InconsistentPredictions(String),
    #[error("{path}: {detail}")]
    MalformedFile { path: String, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
