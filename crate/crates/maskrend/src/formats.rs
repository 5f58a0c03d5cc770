//! JSON file schemas shared by the CLI and external tooling.
//!
//! Ground truth follows the COCO layout (`images` / `annotations` /
//! `categories` with RLE segmentations); predictions are the COCO results
//! convention: a flat list of `{image_id, category_id, score, segmentation}`
//! objects. RLE objects carry `{"size": [height, width], "counts": ...}`
//! where counts are either the compressed codec string or a raw integer
//! list.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::eval::GroundTruthInstance;
use crate::fusion::{InstancePrediction, PredictionMask};
use crate::mask::Rle;
use crate::stats::{AnnotationSet, CategoryInfo, ImageInfo};
use crate::{Error, Result};

/// RLE in its JSON object form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RleJson {
    /// [height, width]
    pub size: [usize; 2],
    pub counts: RleCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RleCounts {
    Text(String),
    Raw(Vec<u32>),
}

impl RleJson {
    pub fn from_rle(rle: &Rle) -> Self {
        Self {
            size: [rle.height(), rle.width()],
            counts: RleCounts::Text(rle.to_codec_string()),
        }
    }

    pub fn to_rle(&self) -> Result<Rle> {
        let [height, width] = self.size;
        match &self.counts {
            RleCounts::Text(s) => Rle::from_codec_string(s, width, height),
            RleCounts::Raw(counts) => Rle::new(width, height, counts.clone()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationJson {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub segmentation: RleJson,
    /// Foreground pixel count; recomputed from the mask on load.
    #[serde(default)]
    pub area: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GtFile {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<AnnotationJson>,
    pub categories: Vec<CategoryInfo>,
}

impl GtFile {
    pub fn to_annotation_set(&self) -> Result<AnnotationSet> {
        let instances = self
            .annotations
            .iter()
            .map(|ann| {
                Ok(GroundTruthInstance::new(
                    ann.image_id,
                    ann.category_id,
                    ann.segmentation.to_rle()?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        AnnotationSet::new(self.images.clone(), instances, self.categories.clone())
    }
}

/// One prediction record in the results-file convention.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionJson {
    pub image_id: u64,
    pub category_id: u64,
    pub score: f64,
    pub segmentation: RleJson,
}

impl PredictionJson {
    pub fn from_prediction(pred: &InstancePrediction, threshold: f64) -> Self {
        Self {
            image_id: pred.image_id,
            category_id: pred.category_id,
            score: pred.score,
            segmentation: RleJson::from_rle(&pred.mask.to_rle(threshold)),
        }
    }

    pub fn to_prediction(&self) -> Result<InstancePrediction> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidParameter(format!(
                "prediction score {} outside [0, 1]",
                self.score
            )));
        }
        let rle = self.segmentation.to_rle()?;
        Ok(InstancePrediction {
            image_id: self.image_id,
            category_id: self.category_id,
            score: self.score,
            bbox: rle.to_mask().bbox(),
            mask: PredictionMask::Encoded(rle),
        })
    }
}

/// Per-instance feature grid for the refine stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureGridJson {
    pub instance_id: u64,
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// Per-instance coarse probability map for the refine stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoarsePredictionJson {
    pub instance_id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub score: f64,
    pub width: usize,
    pub height: usize,
    pub probs: Vec<f64>,
}

/// The stats subcommand's JSON report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsReport {
    pub num_images: usize,
    pub num_instances: usize,
    pub category_histogram: Vec<CategoryCount>,
    pub area_bucket_edges: Vec<u64>,
    pub area_bucket_fractions: Vec<f64>,
    pub aspect_histogram: crate::stats::AspectHistogram,
    pub anchors: crate::stats::AnchorConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryCount {
    pub id: u64,
    pub name: String,
    pub count: u64,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
        path: path.display().to_string(),
        // serde_json errors already carry "at line L column C".
        detail: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::MalformedFile {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Load a prediction file into in-memory instances (RLE form, boxes derived
/// from the masks), wrapping schema violations with the file path.
pub fn read_predictions(path: &Path) -> Result<Vec<InstancePrediction>> {
    let records: Vec<PredictionJson> = read_json(path)?;
    records
        .iter()
        .map(|r| {
            r.to_prediction().map_err(|e| Error::MalformedFile {
                path: path.display().to_string(),
                detail: e.to_string(),
            })
        })
        .collect()
}

/// Write predictions, binarizing probability masks at `threshold`.
pub fn write_predictions(path: &Path, preds: &[InstancePrediction], threshold: f64) -> Result<()> {
    let records: Vec<PredictionJson> = preds
        .iter()
        .map(|p| PredictionJson::from_prediction(p, threshold))
        .collect();
    write_json(path, &records)
}
