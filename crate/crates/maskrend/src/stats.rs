//! Dataset analysis: category distribution, object-area buckets,
//! aspect-ratio histogram and an anchor-configuration recommendation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::eval::GroundTruthInstance;
use crate::{Error, Result};

/// Default area bucket edges: 96x96 and 256x256 pixels.
pub const DEFAULT_AREA_EDGES: [u64; 2] = [96 * 96, 256 * 256];

/// The factor between the anchor design scale and the native image scale
/// (midpoint of the 1200-1500 px training resize over the native 1200 px).
pub const RESIZE_FACTOR: f64 = 1350.0 / 1200.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryInfo {
    pub id: u64,
    pub name: String,
}

/// A full annotation set: images, instances and the category universe.
#[derive(Debug, Clone)]
pub struct AnnotationSet {
    pub images: Vec<ImageInfo>,
    pub instances: Vec<GroundTruthInstance>,
    pub categories: Vec<CategoryInfo>,
}

impl AnnotationSet {
    /// Validates that every instance references a known image and category.
    pub fn new(
        images: Vec<ImageInfo>,
        instances: Vec<GroundTruthInstance>,
        categories: Vec<CategoryInfo>,
    ) -> Result<Self> {
        let image_ids: std::collections::BTreeSet<u64> = images.iter().map(|i| i.id).collect();
        let cat_ids: std::collections::BTreeSet<u64> = categories.iter().map(|c| c.id).collect();
        for inst in &instances {
            if !image_ids.contains(&inst.image_id) {
                return Err(Error::InvalidParameter(format!(
                    "instance references unknown image {}",
                    inst.image_id
                )));
            }
            if !cat_ids.contains(&inst.category_id) {
                return Err(Error::InvalidParameter(format!(
                    "instance references unknown category {}",
                    inst.category_id
                )));
            }
        }
        Ok(Self {
            images,
            instances,
            categories,
        })
    }
}

/// Recommended region-proposal anchors: a power-of-two size ladder and a
/// symmetric set of h:w aspect ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub sizes: Vec<u32>,
    pub ratios: Vec<f64>,
}

/// Exact instance counts per category id; categories with no instances are
/// present with count 0.
pub fn category_histogram(set: &AnnotationSet) -> BTreeMap<u64, u64> {
    let mut counts: BTreeMap<u64, u64> = set.categories.iter().map(|c| (c.id, 0)).collect();
    for inst in &set.instances {
        *counts.entry(inst.category_id).or_insert(0) += 1;
    }
    counts
}

/// Fraction of instances per mask-area bucket.
///
/// With edges `[e1, e2, ..]` the buckets are `(-inf, e1]`, `(e1, e2]`, ...,
/// `(ek, inf)`; the fractions sum to 1.
pub fn area_buckets(set: &AnnotationSet, edges: &[u64]) -> Result<Vec<f64>> {
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "area bucket edges must be strictly increasing".into(),
        ));
    }
    if set.instances.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot bucket an empty annotation set".into(),
        ));
    }
    let mut counts = vec![0u64; edges.len() + 1];
    for inst in &set.instances {
        let bucket = edges.partition_point(|&e| e < inst.area);
        counts[bucket] += 1;
    }
    let total = set.instances.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / total).collect())
}

/// Histogram of box aspect ratios h/w over bins in log-ratio space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectHistogram {
    /// Bin edges in log(h/w) space, strictly increasing.
    pub log_edges: Vec<f64>,
    /// One count per bin; out-of-range ratios clamp into the end bins.
    pub counts: Vec<u64>,
    /// Instances whose tight box has zero width or height.
    pub degenerate: u64,
}

/// Default bin edges: nine bins spanning ratios 1:4 to 4:1.
pub fn default_aspect_edges() -> Vec<f64> {
    let lo = (0.25f64).ln();
    let hi = 4.0f64.ln();
    (0..=9).map(|i| lo + (hi - lo) * i as f64 / 9.0).collect()
}

/// Count box aspect ratios (from each instance's tight mask box) into
/// log-spaced bins. Non-degenerate instances always land in some bin, so
/// the counts sum to `instances - degenerate`.
pub fn aspect_ratio_histogram(set: &AnnotationSet, log_edges: &[f64]) -> Result<AspectHistogram> {
    if log_edges.len() < 2 || log_edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "need at least two strictly increasing bin edges".into(),
        ));
    }
    let bins = log_edges.len() - 1;
    let mut counts = vec![0u64; bins];
    let mut degenerate = 0u64;
    for inst in &set.instances {
        let bbox = inst.mask.to_mask().bbox();
        if bbox.w == 0 || bbox.h == 0 {
            degenerate += 1;
            continue;
        }
        let log_ratio = (bbox.h as f64 / bbox.w as f64).ln();
        // Bin i covers [edge[i], edge[i+1]); out-of-range values clamp into
        // the end bins.
        let below_or_on = log_edges.partition_point(|&e| e <= log_ratio);
        let bin = below_or_on.saturating_sub(1).min(bins - 1);
        counts[bin] += 1;
    }
    Ok(AspectHistogram {
        log_edges: log_edges.to_vec(),
        counts,
        degenerate,
    })
}

/// Candidate h:w ratios, tried smallest symmetric set first.
const RATIO_SETS: [&[f64]; 3] = [&[1.0], &[0.5, 1.0, 2.0], &[1.0 / 3.0, 0.5, 1.0, 2.0, 3.0]];

/// Recommend an anchor ladder and ratio set from the instance geometry.
///
/// Sizes are consecutive powers of two spanning the 5th-95th percentile of
/// sqrt(mask area), scaled by the resize factor. Ratios are the smallest
/// symmetric candidate set whose nearest-ratio bins (in log space) cover at
/// least `coverage` of the non-degenerate instances.
pub fn recommend_anchors(set: &AnnotationSet, coverage: f64) -> Result<AnchorConfig> {
    if set.instances.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot recommend anchors for an empty annotation set".into(),
        ));
    }
    if !(0.0..=1.0).contains(&coverage) {
        return Err(Error::InvalidParameter(format!(
            "coverage must lie in [0, 1], got {coverage}"
        )));
    }

    let mut scaled_sides: Vec<f64> = set
        .instances
        .iter()
        .map(|inst| (inst.area as f64).sqrt() * RESIZE_FACTOR)
        .filter(|&s| s > 0.0)
        .collect();
    if scaled_sides.is_empty() {
        return Err(Error::InvalidParameter(
            "all instances have empty masks".into(),
        ));
    }
    scaled_sides.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |frac: f64| -> f64 {
        // Nearest-rank quantile.
        let rank = ((frac * scaled_sides.len() as f64).ceil() as usize).max(1);
        scaled_sides[rank - 1]
    };
    let lo = q(0.05).max(1.0);
    let hi = q(0.95).max(lo);
    let lo_pow = lo.log2().round() as i32;
    let hi_pow = hi.log2().round().max(lo_pow as f64) as i32;
    let sizes: Vec<u32> = (lo_pow..=hi_pow).map(|p| 1u32 << p.clamp(0, 31)).collect();

    // Assign each instance to its nearest candidate ratio in log space and
    // grow the set until the requested coverage is reached.
    let full = RATIO_SETS[RATIO_SETS.len() - 1];
    let mut mass: BTreeMap<i64, u64> = BTreeMap::new();
    let mut total = 0u64;
    for inst in &set.instances {
        let bbox = inst.mask.to_mask().bbox();
        if bbox.w == 0 || bbox.h == 0 {
            continue;
        }
        let log_ratio = (bbox.h as f64 / bbox.w as f64).ln();
        let nearest = full
            .iter()
            .min_by(|a, b| {
                (a.ln() - log_ratio)
                    .abs()
                    .partial_cmp(&(b.ln() - log_ratio).abs())
                    .unwrap()
            })
            .unwrap();
        *mass.entry((nearest.ln() * 1e9).round() as i64).or_insert(0) += 1;
        total += 1;
    }

    let mut ratios = full.to_vec();
    if total > 0 {
        for candidate in RATIO_SETS {
            let covered: u64 = candidate
                .iter()
                .map(|r| {
                    mass.get(&((r.ln() * 1e9).round() as i64))
                        .copied()
                        .unwrap_or(0)
                })
                .sum();
            if covered as f64 / total as f64 >= coverage {
                ratios = candidate.to_vec();
                break;
            }
        }
    } else {
        // Only degenerate boxes: fall back to the square anchor.
        ratios = vec![1.0];
    }

    Ok(AnchorConfig { sizes, ratios })
}
