//! COCO-style mask mAP evaluator.
//!
//! AP is computed per category and IoU threshold (0.50 to 0.95 in steps of
//! 0.05) with 101-point interpolation, detections capped at 100 per image by
//! score. The size-restricted columns (APs/APm/APl) use the ignore
//! mechanism: ground truth outside the bucket can absorb detections without
//! scoring them, and unmatched detections only count as false positives
//! when their own area falls inside the bucket.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fusion::InstancePrediction;
use crate::mask::{BinaryMask, Rle};
use crate::Result;

pub const NUM_IOU_THRESHOLDS: usize = 10;
pub const DEFAULT_MAX_DETECTIONS: usize = 100;

/// The evaluation thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; NUM_IOU_THRESHOLDS] {
    std::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

const BUCKET_ALL: usize = 0;
const BUCKET_SMALL: usize = 1;
const BUCKET_MEDIUM: usize = 2;
const BUCKET_LARGE: usize = 3;
const NUM_BUCKETS: usize = 4;

fn bucket_contains(bucket: usize, area: u64) -> bool {
    const SMALL_EDGE: u64 = 32 * 32;
    const LARGE_EDGE: u64 = 96 * 96;
    match bucket {
        BUCKET_ALL => true,
        BUCKET_SMALL => area < SMALL_EDGE,
        BUCKET_MEDIUM => (SMALL_EDGE..=LARGE_EDGE).contains(&area),
        BUCKET_LARGE => area > LARGE_EDGE,
        _ => unreachable!(),
    }
}

/// One annotated instance; `area` is derived from the mask at construction.
#[derive(Debug, Clone)]
pub struct GroundTruthInstance {
    pub image_id: u64,
    pub category_id: u64,
    pub mask: Rle,
    pub area: u64,
}

impl GroundTruthInstance {
    pub fn new(image_id: u64, category_id: u64, mask: Rle) -> Self {
        let area = mask.area();
        Self {
            image_id,
            category_id,
            mask,
            area,
        }
    }
}

/// Per-category AP (mean over IoU thresholds), -1 when the category has no
/// ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAp {
    pub category_id: u64,
    pub ap: f64,
}

/// The metric columns: overall mAP, the two fixed-threshold APs, the three
/// size-restricted APs and the per-category table. Every value lies in
/// [0, 1] or is the sentinel -1 for "no ground truth in bucket".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub map: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ap_small: f64,
    pub ap_medium: f64,
    pub ap_large: f64,
    pub per_category: Vec<CategoryAp>,
    /// Detections whose category id was not in the evaluation set.
    pub unknown_category_detections: usize,
}

impl EvalResult {
    /// Aligned plain-text rendering of the headline metrics and the
    /// per-category table.
    pub fn to_table(&self) -> String {
        fn cell(v: f64) -> String {
            format!("{v:>8.4}")
        }
        let mut out = String::new();
        out.push_str("metric      value\n");
        for (name, v) in [
            ("mAP   ", self.map),
            ("AP50  ", self.ap50),
            ("AP75  ", self.ap75),
            ("APs   ", self.ap_small),
            ("APm   ", self.ap_medium),
            ("APl   ", self.ap_large),
        ] {
            out.push_str(&format!("{name}   {}\n", cell(v)));
        }
        out.push_str("\ncategory        AP\n");
        for row in &self.per_category {
            out.push_str(&format!("{:<10} {}\n", row.category_id, cell(row.ap)));
        }
        if self.unknown_category_detections > 0 {
            out.push_str(&format!(
                "\nwarning: {} detection(s) with unknown category ignored\n",
                self.unknown_category_detections
            ));
        }
        out
    }
}

/// Greedy matching of score-sorted detections against ground truths of one
/// image and category: each detection takes the unmatched ground truth with
/// the highest IoU at or above `iou_thresh`, ties by input order; each
/// ground truth matches at most once.
pub fn match_detections(dets: &[Rle], gts: &[Rle], iou_thresh: f64) -> Result<Vec<bool>> {
    let det_masks: Vec<BinaryMask> = dets.iter().map(Rle::to_mask).collect();
    let gt_masks: Vec<BinaryMask> = gts.iter().map(Rle::to_mask).collect();
    let mut ious = vec![vec![0.0; gt_masks.len()]; det_masks.len()];
    for (d, dm) in det_masks.iter().enumerate() {
        for (g, gm) in gt_masks.iter().enumerate() {
            ious[d][g] = dm.iou(gm)?;
        }
    }
    let outcomes = greedy_match(
        &ious,
        &vec![false; gt_masks.len()],
        &vec![true; det_masks.len()],
        iou_thresh,
    );
    Ok(outcomes.into_iter().map(|o| o == Outcome::Tp).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Tp,
    Fp,
    Ignored,
}

fn greedy_match(
    ious: &[Vec<f64>],
    gt_ignored: &[bool],
    det_in_bucket: &[bool],
    thresh: f64,
) -> Vec<Outcome> {
    let num_gt = gt_ignored.len();
    // Visit order: in-bucket ground truths first, keeping input order.
    let mut gt_order: Vec<usize> = (0..num_gt).filter(|&g| !gt_ignored[g]).collect();
    let ignored_start = gt_order.len();
    gt_order.extend((0..num_gt).filter(|&g| gt_ignored[g]));

    let mut gt_matched = vec![false; num_gt];
    let mut outcomes = Vec::with_capacity(ious.len());
    for (d, row) in ious.iter().enumerate() {
        let mut best: Option<usize> = None;
        let mut best_iou = f64::NEG_INFINITY;
        for &g in &gt_order[..ignored_start] {
            if !gt_matched[g] && row[g] >= thresh && row[g] > best_iou {
                best = Some(g);
                best_iou = row[g];
            }
        }
        if best.is_none() {
            for &g in &gt_order[ignored_start..] {
                if !gt_matched[g] && row[g] >= thresh && row[g] > best_iou {
                    best = Some(g);
                    best_iou = row[g];
                }
            }
        }
        match best {
            Some(g) => {
                gt_matched[g] = true;
                outcomes.push(if gt_ignored[g] {
                    Outcome::Ignored
                } else {
                    Outcome::Tp
                });
            }
            None => {
                outcomes.push(if det_in_bucket[d] {
                    Outcome::Fp
                } else {
                    Outcome::Ignored
                });
            }
        }
    }
    outcomes
}

/// 101-point interpolated average precision over an ordered TP/FP list.
///
/// Returns the sentinel -1 when there is no ground truth.
pub fn average_precision(flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return -1.0;
    }
    let mut precisions = Vec::with_capacity(flags.len());
    let mut recalls = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (i, &hit) in flags.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precisions.push(tp as f64 / (i + 1) as f64);
        recalls.push(tp as f64 / num_gt as f64);
    }
    // Precision envelope: max precision at any recall >= this point's.
    for i in (0..precisions.len().saturating_sub(1)).rev() {
        precisions[i] = precisions[i].max(precisions[i + 1]);
    }
    let mut total = 0.0;
    for level in 0..=100 {
        let level = level as f64 / 100.0;
        let idx = recalls.partition_point(|&r| r < level);
        if idx < precisions.len() {
            total += precisions[idx];
        }
    }
    total / 101.0
}

struct PairEval {
    cat_pos: usize,
    /// Capped detections in score order: (score, global input index).
    dets: Vec<(f64, usize)>,
    /// outcomes[bucket][threshold] runs parallel to `dets`.
    outcomes: Vec<Vec<Vec<Outcome>>>,
    gt_counts: [usize; NUM_BUCKETS],
}

/// Evaluate detections against ground truth over an explicit category set.
///
/// Uses the standard 100-detections-per-image cap; see
/// [`coco_map_with_max_dets`] to change it. Probability masks are binarized
/// at 0.5. Detections for categories outside `categories` are skipped and
/// counted in the result's warning field.
pub fn coco_map(
    gts: &[GroundTruthInstance],
    dets: &[InstancePrediction],
    categories: &[u64],
) -> Result<EvalResult> {
    coco_map_with_max_dets(gts, dets, categories, DEFAULT_MAX_DETECTIONS)
}

pub fn coco_map_with_max_dets(
    gts: &[GroundTruthInstance],
    dets: &[InstancePrediction],
    categories: &[u64],
    max_dets_per_image: usize,
) -> Result<EvalResult> {
    let mut cats: Vec<u64> = categories.to_vec();
    cats.sort_unstable();
    cats.dedup();
    let cat_set: BTreeSet<u64> = cats.iter().copied().collect();

    // Binarize and index detections, dropping unknown categories.
    let mut unknown = 0usize;
    let mut det_rles: Vec<Option<Rle>> = Vec::with_capacity(dets.len());
    for det in dets {
        if cat_set.contains(&det.category_id) {
            det_rles.push(Some(det.mask.to_rle(0.5)));
        } else {
            unknown += 1;
            det_rles.push(None);
        }
    }

    // Per-image score cap.
    let mut by_image: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (idx, det) in dets.iter().enumerate() {
        if det_rles[idx].is_some() {
            by_image.entry(det.image_id).or_default().push(idx);
        }
    }
    let mut det_groups: BTreeMap<(u64, u64), Vec<usize>> = BTreeMap::new();
    for indices in by_image.values_mut() {
        indices.sort_by(|&a, &b| {
            dets[b]
                .score
                .partial_cmp(&dets[a].score)
                .unwrap()
                .then(a.cmp(&b))
        });
        indices.truncate(max_dets_per_image);
        for &idx in indices.iter() {
            det_groups
                .entry((dets[idx].image_id, dets[idx].category_id))
                .or_default()
                .push(idx);
        }
    }

    let mut gt_groups: BTreeMap<(u64, u64), Vec<usize>> = BTreeMap::new();
    for (idx, gt) in gts.iter().enumerate() {
        gt_groups
            .entry((gt.image_id, gt.category_id))
            .or_default()
            .push(idx);
    }

    let images: BTreeSet<u64> = gts
        .iter()
        .map(|g| g.image_id)
        .chain(by_image.keys().copied())
        .collect();

    // One work item per (category, image) pair that has anything to match.
    let mut pairs: Vec<(usize, u64, u64)> = Vec::new();
    for (cat_pos, &cat) in cats.iter().enumerate() {
        for &image in &images {
            let key = (image, cat);
            if gt_groups.contains_key(&key) || det_groups.contains_key(&key) {
                pairs.push((cat_pos, image, cat));
            }
        }
    }

    let thresholds = iou_thresholds();
    let pair_evals: Vec<Result<PairEval>> = pairs
        .par_iter()
        .map(|&(cat_pos, image, cat)| {
            let empty = Vec::new();
            let gt_idx = gt_groups.get(&(image, cat)).unwrap_or(&empty);
            let det_idx = det_groups.get(&(image, cat)).unwrap_or(&empty);

            let gt_masks: Vec<BinaryMask> = gt_idx.iter().map(|&i| gts[i].mask.to_mask()).collect();
            let det_masks: Vec<BinaryMask> = det_idx
                .iter()
                .map(|&i| det_rles[i].as_ref().expect("known category").to_mask())
                .collect();

            let mut ious = vec![vec![0.0; gt_masks.len()]; det_masks.len()];
            for (d, dm) in det_masks.iter().enumerate() {
                for (g, gm) in gt_masks.iter().enumerate() {
                    ious[d][g] = dm.iou(gm)?;
                }
            }

            let det_areas: Vec<u64> = det_idx
                .iter()
                .map(|&i| det_rles[i].as_ref().expect("known category").area())
                .collect();

            let mut outcomes = vec![vec![Vec::new(); NUM_IOU_THRESHOLDS]; NUM_BUCKETS];
            let mut gt_counts = [0usize; NUM_BUCKETS];
            for bucket in 0..NUM_BUCKETS {
                let gt_ignored: Vec<bool> = gt_idx
                    .iter()
                    .map(|&i| !bucket_contains(bucket, gts[i].area))
                    .collect();
                gt_counts[bucket] = gt_ignored.iter().filter(|&&x| !x).count();
                let det_in: Vec<bool> = det_areas
                    .iter()
                    .map(|&a| bucket_contains(bucket, a))
                    .collect();
                for (t, &thresh) in thresholds.iter().enumerate() {
                    outcomes[bucket][t] = greedy_match(&ious, &gt_ignored, &det_in, thresh);
                }
            }

            Ok(PairEval {
                cat_pos,
                dets: det_idx.iter().map(|&i| (dets[i].score, i)).collect(),
                outcomes,
                gt_counts,
            })
        })
        .collect();

    let mut evals = Vec::with_capacity(pair_evals.len());
    for e in pair_evals {
        evals.push(e?);
    }

    // Aggregate per category: concatenate detections across images in
    // global score order, then run the 101-point AP per bucket/threshold.
    let mut ap = vec![[[0.0f64; NUM_IOU_THRESHOLDS]; NUM_BUCKETS]; cats.len()];
    let mut has_gt = vec![[false; NUM_BUCKETS]; cats.len()];
    for (cat_pos, _) in cats.iter().enumerate() {
        let cat_evals: Vec<&PairEval> = evals.iter().filter(|e| e.cat_pos == cat_pos).collect();
        for bucket in 0..NUM_BUCKETS {
            let num_gt: usize = cat_evals.iter().map(|e| e.gt_counts[bucket]).sum();
            has_gt[cat_pos][bucket] = num_gt > 0;
            for t in 0..NUM_IOU_THRESHOLDS {
                let mut scored: Vec<(f64, usize, Outcome)> = Vec::new();
                for e in &cat_evals {
                    for (d, &(score, idx)) in e.dets.iter().enumerate() {
                        scored.push((score, idx, e.outcomes[bucket][t][d]));
                    }
                }
                scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
                let flags: Vec<bool> = scored
                    .iter()
                    .filter(|(_, _, o)| *o != Outcome::Ignored)
                    .map(|(_, _, o)| *o == Outcome::Tp)
                    .collect();
                ap[cat_pos][bucket][t] = average_precision(&flags, num_gt);
            }
        }
    }

    let bucket_mean = |bucket: usize, threshold: Option<usize>| -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for cat_pos in 0..cats.len() {
            if !has_gt[cat_pos][bucket] {
                continue;
            }
            match threshold {
                Some(t) => {
                    total += ap[cat_pos][bucket][t];
                    count += 1;
                }
                None => {
                    for t in 0..NUM_IOU_THRESHOLDS {
                        total += ap[cat_pos][bucket][t];
                        count += 1;
                    }
                }
            }
        }
        if count == 0 {
            -1.0
        } else {
            total / count as f64
        }
    };

    let per_category = cats
        .iter()
        .enumerate()
        .map(|(cat_pos, &category_id)| CategoryAp {
            category_id,
            ap: if has_gt[cat_pos][BUCKET_ALL] {
                ap[cat_pos][BUCKET_ALL].iter().sum::<f64>() / NUM_IOU_THRESHOLDS as f64
            } else {
                -1.0
            },
        })
        .collect();

    Ok(EvalResult {
        map: bucket_mean(BUCKET_ALL, None),
        ap50: bucket_mean(BUCKET_ALL, Some(0)),
        ap75: bucket_mean(BUCKET_ALL, Some(5)),
        ap_small: bucket_mean(BUCKET_SMALL, None),
        ap_medium: bucket_mean(BUCKET_MEDIUM, None),
        ap_large: bucket_mean(BUCKET_LARGE, None),
        per_category,
        unknown_category_detections: unknown,
    })
}
