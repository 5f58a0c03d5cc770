//! Test-time-augmentation fusion and cross-model ensemble merging of
//! instance predictions.

use crate::mask::{BBox, ProbabilityMask, Rle};
use crate::{Error, Result};

/// One detected instance.
#[derive(Debug, Clone)]
pub struct InstancePrediction {
    pub image_id: u64,
    pub category_id: u64,
    pub score: f64,
    pub bbox: BBox,
    pub mask: PredictionMask,
}

/// A prediction's mask: full-resolution probabilities in memory, RLE once
/// binarized for interchange.
#[derive(Debug, Clone)]
pub enum PredictionMask {
    Probability(ProbabilityMask),
    Encoded(Rle),
}

impl PredictionMask {
    /// View as probabilities; a binarized mask decodes to a {0, 1} map.
    pub fn to_probability(&self) -> ProbabilityMask {
        match self {
            PredictionMask::Probability(p) => p.clone(),
            PredictionMask::Encoded(rle) => {
                let mask = rle.to_mask();
                let probs = mask.bits().iter().map(|&b| b as f64).collect();
                ProbabilityMask::new(mask.width(), mask.height(), probs)
                    .expect("decoded mask dimensions are valid")
            }
        }
    }

    /// Binarize at `threshold` and run-length encode.
    pub fn to_rle(&self, threshold: f64) -> Rle {
        match self {
            PredictionMask::Encoded(rle) => rle.clone(),
            PredictionMask::Probability(p) => Rle::from_mask(&p.threshold(threshold)),
        }
    }

    pub fn dimensions(&self) -> (usize, usize) {
        match self {
            PredictionMask::Probability(p) => (p.width(), p.height()),
            PredictionMask::Encoded(r) => (r.width(), r.height()),
        }
    }
}

/// A test-time transform of the input image, mirrored onto prediction maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TtaTransform {
    HorizontalFlip,
    Rescale { scale: f64 },
}

impl TtaTransform {
    pub fn identity() -> Self {
        TtaTransform::Rescale { scale: 1.0 }
    }
}

/// Apply a transform to a probability map: flip reverses column order,
/// rescale resizes each dimension to `round(dim * scale)`.
pub fn apply_transform(mask: &ProbabilityMask, t: &TtaTransform) -> ProbabilityMask {
    match *t {
        TtaTransform::HorizontalFlip => mask.flip_horizontal(),
        TtaTransform::Rescale { scale } => {
            let w = ((mask.width() as f64 * scale).round() as usize).max(1);
            let h = ((mask.height() as f64 * scale).round() as usize).max(1);
            mask.resize(w, h)
        }
    }
}

/// Map a prediction made under transform `t` back to the original
/// resolution and orientation.
pub fn invert_prediction(
    mask: &ProbabilityMask,
    t: &TtaTransform,
    original_width: usize,
    original_height: usize,
) -> ProbabilityMask {
    let unflipped = match t {
        TtaTransform::HorizontalFlip => mask.flip_horizontal(),
        TtaTransform::Rescale { .. } => mask.clone(),
    };
    if unflipped.width() == original_width && unflipped.height() == original_height {
        unflipped
    } else {
        unflipped.resize(original_width, original_height)
    }
}

/// Unweighted pixelwise mean of aligned maps and the mean of their scores.
pub fn tta_average(aligned: &[ProbabilityMask], scores: &[f64]) -> Result<(ProbabilityMask, f64)> {
    if aligned.is_empty() {
        return Err(Error::InconsistentPredictions(
            "cannot average an empty set of maps".into(),
        ));
    }
    if aligned.len() != scores.len() {
        return Err(Error::InconsistentPredictions(format!(
            "{} maps but {} scores",
            aligned.len(),
            scores.len()
        )));
    }
    let (w, h) = (aligned[0].width(), aligned[0].height());
    for m in aligned {
        if m.width() != w || m.height() != h {
            return Err(Error::DimensionMismatch {
                expected: (w, h),
                got: (m.width(), m.height()),
            });
        }
    }
    // Mean as first-value-plus-mean-difference: identical inputs come back
    // bit-exactly, so averaging is idempotent.
    let k = aligned.len() as f64;
    let mut probs = Vec::with_capacity(w * h);
    for (idx, &v0) in aligned[0].values().iter().enumerate() {
        let diff_sum: f64 = aligned[1..].iter().map(|m| m.values()[idx] - v0).sum();
        probs.push((v0 + diff_sum / k).clamp(0.0, 1.0));
    }
    let mean_score = scores[0] + scores[1..].iter().map(|s| s - scores[0]).sum::<f64>() / k;
    Ok((ProbabilityMask::new(w, h, probs)?, mean_score))
}

/// Greedy cross-model clustering of one image's predictions.
///
/// Predictions are visited by descending score. Each unclustered prediction
/// seeds a cluster and absorbs, from every *other* model, the unused
/// same-category prediction with the highest box IoU at or above
/// `iou_thresh` (at most one per model). Each cluster merges to the
/// pixelwise-mean mask; its score is the member sum divided by
/// `total_models`, so instances missed by some models are voted down; the
/// box is recomputed from the mean mask thresholded at 0.5.
pub fn ensemble_merge(
    per_model: &[Vec<InstancePrediction>],
    iou_thresh: f64,
    total_models: usize,
) -> Result<Vec<InstancePrediction>> {
    if total_models == 0 {
        return Err(Error::InvalidParameter(
            "total_models must be positive".into(),
        ));
    }
    let mut image_id: Option<u64> = None;
    for preds in per_model {
        for p in preds {
            match image_id {
                None => image_id = Some(p.image_id),
                Some(id) if id != p.image_id => {
                    return Err(Error::InconsistentPredictions(format!(
                        "mixed image ids {id} and {}",
                        p.image_id
                    )));
                }
                _ => {}
            }
        }
    }

    // Flatten with stable (model, index) identity.
    struct Entry<'a> {
        model: usize,
        index: usize,
        pred: &'a InstancePrediction,
    }
    let mut entries: Vec<Entry> = Vec::new();
    for (model, preds) in per_model.iter().enumerate() {
        for (index, pred) in preds.iter().enumerate() {
            entries.push(Entry { model, index, pred });
        }
    }
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| {
        entries[b]
            .pred
            .score
            .partial_cmp(&entries[a].pred.score)
            .unwrap()
            .then(entries[a].model.cmp(&entries[b].model))
            .then(entries[a].index.cmp(&entries[b].index))
    });

    let mut used = vec![false; entries.len()];
    let mut merged = Vec::new();
    for &seed_idx in &order {
        if used[seed_idx] {
            continue;
        }
        used[seed_idx] = true;
        let seed = &entries[seed_idx];
        let mut members = vec![seed_idx];
        for model in 0..per_model.len() {
            if model == seed.model {
                continue;
            }
            let mut best: Option<(f64, usize)> = None;
            for (i, entry) in entries.iter().enumerate() {
                if entry.model != model
                    || used[i]
                    || entry.pred.category_id != seed.pred.category_id
                {
                    continue;
                }
                let iou = seed.pred.bbox.iou(&entry.pred.bbox);
                if iou < iou_thresh {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((best_iou, best_i)) => {
                        iou > best_iou
                            || (iou == best_iou && entry.pred.score > entries[best_i].pred.score)
                    }
                };
                if better {
                    best = Some((iou, i));
                }
            }
            if let Some((_, i)) = best {
                used[i] = true;
                members.push(i);
            }
        }

        let maps: Vec<ProbabilityMask> = members
            .iter()
            .map(|&i| entries[i].pred.mask.to_probability())
            .collect();
        let member_scores: Vec<f64> = members.iter().map(|&i| entries[i].pred.score).collect();
        let (mean_mask, _) = tta_average(&maps, &member_scores)?;
        let score = member_scores.iter().sum::<f64>() / total_models as f64;
        let bbox = mean_mask.threshold(0.5).bbox();
        merged.push(InstancePrediction {
            image_id: seed.pred.image_id,
            category_id: seed.pred.category_id,
            score,
            bbox,
            mask: PredictionMask::Probability(mean_mask),
        });
    }

    merged.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.category_id.cmp(&b.category_id))
    });
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BinaryMask;

    fn map(w: usize, h: usize, values: &[f64]) -> ProbabilityMask {
        ProbabilityMask::new(w, h, values.to_vec()).unwrap()
    }

    #[test]
    fn flip_is_an_involution() {
        let m = map(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let t = TtaTransform::HorizontalFlip;
        assert_eq!(apply_transform(&apply_transform(&m, &t), &t), m);
    }

    #[test]
    fn flip_reverses_columns() {
        let m = map(3, 1, &[0.1, 0.5, 0.9]);
        let flipped = apply_transform(&m, &TtaTransform::HorizontalFlip);
        assert_eq!(flipped.values(), &[0.9, 0.5, 0.1]);
    }

    #[test]
    fn unit_scale_is_identity() {
        let m = map(4, 3, &(0..12).map(|i| i as f64 / 11.0).collect::<Vec<_>>());
        assert_eq!(apply_transform(&m, &TtaTransform::identity()), m);
    }

    #[test]
    fn rescale_rounds_dimensions() {
        let m = map(10, 4, &[0.5; 40]);
        let scaled = apply_transform(&m, &TtaTransform::Rescale { scale: 0.75 });
        assert_eq!((scaled.width(), scaled.height()), (8, 3));
    }

    #[test]
    fn invert_flip_is_exact() {
        let m = map(5, 3, &(0..15).map(|i| i as f64 / 14.0).collect::<Vec<_>>());
        let t = TtaTransform::HorizontalFlip;
        let transformed = apply_transform(&m, &t);
        assert_eq!(invert_prediction(&transformed, &t, 5, 3), m);
    }

    #[test]
    fn invert_identity_is_unchanged() {
        let m = map(5, 3, &[0.25; 15]);
        let t = TtaTransform::identity();
        assert_eq!(invert_prediction(&m, &t, 5, 3), m);
    }

    #[test]
    fn invert_scale_roundtrip_stays_close_on_smooth_maps() {
        // Smooth horizontal+vertical gradient.
        let (w, h) = (16, 12);
        let values: Vec<f64> = (0..w * h)
            .map(|i| {
                let row = i / w;
                let col = i % w;
                0.5 * (col as f64 / (w - 1) as f64) + 0.5 * (row as f64 / (h - 1) as f64)
            })
            .collect();
        let m = map(w, h, &values);
        let t = TtaTransform::Rescale { scale: 1.5 };
        let transformed = apply_transform(&m, &t);
        let back = invert_prediction(&transformed, &t, w, h);
        let max_dev = m
            .values()
            .iter()
            .zip(back.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_dev < 0.1, "max deviation {max_dev}");
    }

    #[test]
    fn tta_average_idempotent_on_identical_maps() {
        let m = map(3, 3, &[0.3; 9]);
        let (avg, score) =
            tta_average(&[m.clone(), m.clone(), m.clone()], &[0.9, 0.9, 0.9]).unwrap();
        assert_eq!(avg, m);
        assert!((score - 0.9).abs() < 1e-15);
    }

    #[test]
    fn tta_average_of_two_constants() {
        let a = map(2, 2, &[0.2; 4]);
        let b = map(2, 2, &[0.8; 4]);
        let (avg, score) = tta_average(&[a, b], &[0.4, 0.6]).unwrap();
        assert!(avg.values().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert!((score - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tta_average_rejects_empty_and_mismatched() {
        assert!(tta_average(&[], &[]).is_err());
        let a = map(2, 2, &[0.2; 4]);
        let b = map(3, 2, &[0.8; 6]);
        assert!(tta_average(&[a.clone(), b], &[0.5, 0.5]).is_err());
        assert!(tta_average(&[a], &[0.5, 0.5]).is_err());
    }

    #[allow(clippy::too_many_arguments)]
    fn rect_prediction(
        image_id: u64,
        category_id: u64,
        score: f64,
        w: usize,
        h: usize,
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
    ) -> InstancePrediction {
        let mut mask = BinaryMask::zeros(w, h).unwrap();
        for row in y0..y1 {
            for col in x0..x1 {
                mask.set(row, col, true);
            }
        }
        let probs = mask.bits().iter().map(|&b| b as f64).collect();
        let prob = ProbabilityMask::new(w, h, probs).unwrap();
        InstancePrediction {
            image_id,
            category_id,
            score,
            bbox: mask.bbox(),
            mask: PredictionMask::Probability(prob),
        }
    }

    #[test]
    fn single_model_passthrough() {
        let preds = vec![
            rect_prediction(1, 2, 0.6, 12, 12, 1, 1, 5, 5),
            rect_prediction(1, 3, 0.9, 12, 12, 6, 6, 10, 10),
        ];
        let merged = ensemble_merge(&[preds.clone()], 0.5, 1).unwrap();
        assert_eq!(merged.len(), 2);
        // Re-ordered by score.
        assert_eq!(merged[0].category_id, 3);
        assert!((merged[0].score - 0.9).abs() < 1e-15);
        assert_eq!(
            merged[0].mask.to_probability(),
            preds[1].mask.to_probability()
        );
        assert!((merged[1].score - 0.6).abs() < 1e-15);
    }

    #[test]
    fn two_model_soft_vote() {
        let a = rect_prediction(7, 1, 0.8, 12, 12, 2, 2, 8, 8);
        let b = rect_prediction(7, 1, 0.6, 12, 12, 2, 2, 8, 8);
        let merged = ensemble_merge(&[vec![a], vec![b]], 0.5, 2).unwrap();
        assert_eq!(merged.len(), 1);
        assert!((merged[0].score - 0.7).abs() < 1e-15);
    }

    #[test]
    fn disjoint_instances_are_vote_penalized() {
        let a = rect_prediction(7, 1, 0.8, 16, 16, 0, 0, 5, 5);
        let b = rect_prediction(7, 1, 0.6, 16, 16, 10, 10, 15, 15);
        let merged = ensemble_merge(&[vec![a], vec![b]], 0.5, 2).unwrap();
        assert_eq!(merged.len(), 2);
        assert!((merged[0].score - 0.4).abs() < 1e-15);
        assert!((merged[1].score - 0.3).abs() < 1e-15);
    }

    #[test]
    fn different_categories_never_cluster() {
        let a = rect_prediction(7, 1, 0.8, 12, 12, 2, 2, 8, 8);
        let b = rect_prediction(7, 2, 0.6, 12, 12, 2, 2, 8, 8);
        let merged = ensemble_merge(&[vec![a], vec![b]], 0.5, 2).unwrap();
        assert_eq!(merged.len(), 2);
    }

    #[test]
    fn mixed_image_ids_error() {
        let a = rect_prediction(1, 1, 0.8, 12, 12, 2, 2, 8, 8);
        let b = rect_prediction(2, 1, 0.6, 12, 12, 2, 2, 8, 8);
        assert!(ensemble_merge(&[vec![a], vec![b]], 0.5, 2).is_err());
    }

    #[test]
    fn merged_outputs_stay_in_range() {
        let a = rect_prediction(3, 1, 0.9, 10, 10, 1, 1, 6, 6);
        let b = rect_prediction(3, 1, 0.7, 10, 10, 2, 2, 7, 7);
        let c = rect_prediction(3, 1, 0.5, 10, 10, 1, 2, 6, 7);
        let merged = ensemble_merge(&[vec![a], vec![b], vec![c]], 0.5, 3).unwrap();
        for m in &merged {
            assert!((0.0..=1.0).contains(&m.score));
            let prob = m.mask.to_probability();
            assert!(prob.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    /// Naive re-implementation of the greedy clustering (no ordering index,
    /// quadratic rescans) used to cross-check membership decisions.
    fn brute_force_clusters(
        per_model: &[Vec<InstancePrediction>],
        iou_thresh: f64,
    ) -> Vec<Vec<(usize, usize)>> {
        let mut remaining: Vec<(usize, usize)> = per_model
            .iter()
            .enumerate()
            .flat_map(|(m, preds)| (0..preds.len()).map(move |i| (m, i)))
            .collect();
        let mut clusters = Vec::new();
        while !remaining.is_empty() {
            // Highest score wins; ties by (model, index).
            let mut seed_pos = 0;
            for k in 1..remaining.len() {
                let (sm, si) = remaining[seed_pos];
                let (cm, ci) = remaining[k];
                let s = per_model[sm][si].score;
                let c = per_model[cm][ci].score;
                if c > s || (c == s && (cm, ci) < (sm, si)) {
                    seed_pos = k;
                }
            }
            let (sm, si) = remaining.remove(seed_pos);
            let seed = &per_model[sm][si];
            let mut cluster = vec![(sm, si)];
            for model in 0..per_model.len() {
                if model == sm {
                    continue;
                }
                let mut best: Option<(f64, f64, usize)> = None;
                for &(cm, ci) in &remaining {
                    if cm != model {
                        continue;
                    }
                    let cand = &per_model[cm][ci];
                    if cand.category_id != seed.category_id {
                        continue;
                    }
                    let iou = seed.bbox.iou(&cand.bbox);
                    if iou < iou_thresh {
                        continue;
                    }
                    let key = (iou, cand.score, ci);
                    let take = match best {
                        None => true,
                        Some((bi, bs, _)) => iou > bi || (iou == bi && cand.score > bs),
                    };
                    let _ = key;
                    if take {
                        best = Some((iou, cand.score, ci));
                    }
                }
                if let Some((_, _, ci)) = best {
                    remaining.retain(|&e| e != (model, ci));
                    cluster.push((model, ci));
                }
            }
            clusters.push(cluster);
        }
        clusters
    }

    #[test]
    fn greedy_clustering_matches_naive_reimplementation() {
        let mut state = 31u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let models = 2 + (next() * 2.0) as usize;
            let per_model: Vec<Vec<InstancePrediction>> = (0..models)
                .map(|_| {
                    let count = 1 + (next() * 3.0) as usize;
                    (0..count)
                        .map(|_| {
                            let x0 = (next() * 8.0) as usize;
                            let y0 = (next() * 8.0) as usize;
                            let w = 2 + (next() * 6.0) as usize;
                            let h = 2 + (next() * 6.0) as usize;
                            rect_prediction(
                                1,
                                1 + (next() * 2.0) as u64,
                                (next() * 1000.0).round() / 1000.0,
                                16,
                                16,
                                x0,
                                y0,
                                (x0 + w).min(16),
                                (y0 + h).min(16),
                            )
                        })
                        .collect()
                })
                .collect();

            let merged = ensemble_merge(&per_model, 0.5, models).unwrap();
            let clusters = brute_force_clusters(&per_model, 0.5);
            assert_eq!(merged.len(), clusters.len());

            // Scores identify clusters: compare the sorted multiset of
            // member-score sums.
            let mut got: Vec<i64> = merged
                .iter()
                .map(|m| (m.score * models as f64 * 1e9).round() as i64)
                .collect();
            let mut want: Vec<i64> = clusters
                .iter()
                .map(|c| {
                    let s: f64 = c.iter().map(|&(m, i)| per_model[m][i].score).sum();
                    (s * 1e9).round() as i64
                })
                .collect();
            got.sort_unstable();
            want.sort_unstable();
            assert_eq!(got, want);

            // Membership is a partition.
            let total: usize = clusters.iter().map(|c| c.len()).sum();
            let expect: usize = per_model.iter().map(|p| p.len()).sum();
            assert_eq!(total, expect);
        }
    }
}
