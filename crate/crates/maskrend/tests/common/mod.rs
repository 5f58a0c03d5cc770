//! Independent oracles and generators shared by the integration suites.
//!
//! Everything here deliberately avoids the library's internal code paths:
//! the string encoder is a direct transliteration of the public C codec,
//! and the evaluator recomputes every quantity with naive pixel loops and
//! literal scans.

#![allow(dead_code)]

use maskrend::mask::BinaryMask;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Reference implementation of the compressed-count text codec, kept as
/// close to the published C routine as Rust allows.
pub fn reference_codec_string(counts: &[u32]) -> String {
    let m = counts.len();
    let mut s: Vec<u8> = Vec::with_capacity(m * 6);
    for i in 0..m {
        let mut x: i64 = counts[i] as i64;
        if i > 2 {
            x -= counts[i - 2] as i64;
        }
        let mut more = true;
        while more {
            let mut c: u8 = (x & 0x1f) as u8;
            x >>= 5;
            more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
            if more {
                c |= 0x20;
            }
            c += 48;
            s.push(c);
        }
    }
    String::from_utf8(s).expect("codec alphabet is ASCII")
}

/// Random binary mask with clustered structure (random rectangles over a
/// noise floor) so IoU values are non-trivial.
pub fn random_mask(rng: &mut ChaCha8Rng, width: usize, height: usize) -> BinaryMask {
    let mut mask = BinaryMask::zeros(width, height).unwrap();
    let rects = rng.random_range(0..3);
    for _ in 0..rects {
        let x0 = rng.random_range(0..width);
        let y0 = rng.random_range(0..height);
        let w = rng.random_range(1..=(width - x0));
        let h = rng.random_range(1..=(height - y0));
        for row in y0..(y0 + h).min(height) {
            for col in x0..(x0 + w).min(width) {
                mask.set(row, col, true);
            }
        }
    }
    if rng.random_bool(0.3) {
        for _ in 0..rng.random_range(0..width * height / 8) {
            let row = rng.random_range(0..height);
            let col = rng.random_range(0..width);
            mask.set(row, col, rng.random_bool(0.5));
        }
    }
    mask
}

// ---------------------------------------------------------------------------
// Brute-force mask mAP evaluator.
// ---------------------------------------------------------------------------

#[derive(Clone)]
pub struct SceneGt {
    pub image_id: u64,
    pub category_id: u64,
    pub mask: BinaryMask,
}

#[derive(Clone)]
pub struct SceneDet {
    pub image_id: u64,
    pub category_id: u64,
    pub score: f64,
    pub mask: BinaryMask,
}

pub struct BruteResult {
    pub map: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ap_small: f64,
    pub ap_medium: f64,
    pub ap_large: f64,
    pub per_category: Vec<(u64, f64)>,
}

fn pixel_count(mask: &BinaryMask) -> u64 {
    let mut n = 0;
    for row in 0..mask.height() {
        for col in 0..mask.width() {
            if mask.get(row, col) {
                n += 1;
            }
        }
    }
    n
}

fn pixel_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let mut inter = 0u64;
    let mut union = 0u64;
    for row in 0..a.height() {
        for col in 0..a.width() {
            let pa = a.get(row, col);
            let pb = b.get(row, col);
            if pa && pb {
                inter += 1;
            }
            if pa || pb {
                union += 1;
            }
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn in_bucket(bucket: usize, area: u64) -> bool {
    match bucket {
        0 => true,
        1 => area < 1024,
        2 => (1024..=9216).contains(&area),
        3 => area > 9216,
        _ => unreachable!(),
    }
}

/// 101-point AP by the literal definition: for each recall level, scan all
/// curve points with recall at or above the level and take the best
/// precision.
fn literal_ap(flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return -1.0;
    }
    let mut curve: Vec<(f64, f64)> = Vec::new(); // (recall, precision)
    let mut tp = 0usize;
    for (i, &f) in flags.iter().enumerate() {
        if f {
            tp += 1;
        }
        curve.push((tp as f64 / num_gt as f64, tp as f64 / (i + 1) as f64));
    }
    let mut total = 0.0;
    for k in 0..=100 {
        let level = k as f64 / 100.0;
        let mut best = 0.0f64;
        for &(recall, precision) in &curve {
            if recall >= level && precision > best {
                best = precision;
            }
        }
        total += best;
    }
    total / 101.0
}

/// Full evaluation, recomputed from first principles with flat scans.
pub fn brute_force_eval(
    gts: &[SceneGt],
    dets: &[SceneDet],
    categories: &[u64],
    max_dets_per_image: usize,
) -> BruteResult {
    let mut cats: Vec<u64> = categories.to_vec();
    cats.sort_unstable();
    cats.dedup();

    // Per-image cap by score (ties by input position), unknown categories
    // dropped first.
    let known = |d: &SceneDet| cats.contains(&d.category_id);
    let mut images: Vec<u64> = gts
        .iter()
        .map(|g| g.image_id)
        .chain(dets.iter().filter(|d| known(d)).map(|d| d.image_id))
        .collect();
    images.sort_unstable();
    images.dedup();

    let mut kept: Vec<usize> = Vec::new();
    for &img in &images {
        let mut here: Vec<usize> = (0..dets.len())
            .filter(|&i| dets[i].image_id == img && known(&dets[i]))
            .collect();
        here.sort_by(|&a, &b| {
            dets[b]
                .score
                .partial_cmp(&dets[a].score)
                .unwrap()
                .then(a.cmp(&b))
        });
        here.truncate(max_dets_per_image);
        kept.extend(here);
    }

    let gt_areas: Vec<u64> = gts.iter().map(|g| pixel_count(&g.mask)).collect();
    let det_areas: Vec<u64> = dets.iter().map(|d| pixel_count(&d.mask)).collect();

    // Pairwise IoUs from the naive pixel loops, computed once up front.
    let mut iou_of = std::collections::HashMap::new();
    for d in 0..dets.len() {
        for g in 0..gts.len() {
            if dets[d].image_id == gts[g].image_id && dets[d].category_id == gts[g].category_id {
                iou_of.insert((d, g), pixel_iou(&dets[d].mask, &gts[g].mask));
            }
        }
    }

    // ap[cat][bucket][thresh]
    let mut ap = vec![[[f64::NAN; 10]; 4]; cats.len()];
    let mut gt_count = vec![[0usize; 4]; cats.len()];

    for (ci, &cat) in cats.iter().enumerate() {
        for bucket in 0..4 {
            gt_count[ci][bucket] = (0..gts.len())
                .filter(|&g| gts[g].category_id == cat && in_bucket(bucket, gt_areas[g]))
                .count();
            for t in 0..10 {
                let thresh = 0.5 + 0.05 * t as f64;
                // (score, input index, is_tp, ignored)
                let mut records: Vec<(f64, usize, bool, bool)> = Vec::new();
                for &img in &images {
                    let gt_here: Vec<usize> = (0..gts.len())
                        .filter(|&g| gts[g].image_id == img && gts[g].category_id == cat)
                        .collect();
                    let det_here: Vec<usize> = kept
                        .iter()
                        .copied()
                        .filter(|&d| dets[d].image_id == img && dets[d].category_id == cat)
                        .collect();

                    let mut taken = vec![false; gt_here.len()];
                    for &d in &det_here {
                        // Pass 1: in-bucket ground truth.
                        let mut best: Option<usize> = None;
                        let mut best_iou = -1.0f64;
                        for (k, &g) in gt_here.iter().enumerate() {
                            if taken[k] || !in_bucket(bucket, gt_areas[g]) {
                                continue;
                            }
                            let iou = iou_of[&(d, g)];
                            if iou >= thresh && iou > best_iou {
                                best = Some(k);
                                best_iou = iou;
                            }
                        }
                        // Pass 2: out-of-bucket (ignored) ground truth.
                        if best.is_none() {
                            for (k, &g) in gt_here.iter().enumerate() {
                                if taken[k] || in_bucket(bucket, gt_areas[g]) {
                                    continue;
                                }
                                let iou = iou_of[&(d, g)];
                                if iou >= thresh && iou > best_iou {
                                    best = Some(k);
                                    best_iou = iou;
                                }
                            }
                        }
                        match best {
                            Some(k) => {
                                taken[k] = true;
                                let ignored = !in_bucket(bucket, gt_areas[gt_here[k]]);
                                records.push((dets[d].score, d, !ignored, ignored));
                            }
                            None => {
                                let ignored = !in_bucket(bucket, det_areas[d]);
                                records.push((dets[d].score, d, false, ignored));
                            }
                        }
                    }
                }
                records.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
                let flags: Vec<bool> = records.iter().filter(|r| !r.3).map(|r| r.2).collect();
                ap[ci][bucket][t] = literal_ap(&flags, gt_count[ci][bucket]);
            }
        }
    }

    let mean_over = |bucket: usize, thresh: Option<usize>| -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for ci in 0..cats.len() {
            if gt_count[ci][bucket] == 0 {
                continue;
            }
            match thresh {
                Some(t) => {
                    total += ap[ci][bucket][t];
                    n += 1;
                }
                None => {
                    for t in 0..10 {
                        total += ap[ci][bucket][t];
                        n += 1;
                    }
                }
            }
        }
        if n == 0 {
            -1.0
        } else {
            total / n as f64
        }
    };

    BruteResult {
        map: mean_over(0, None),
        ap50: mean_over(0, Some(0)),
        ap75: mean_over(0, Some(5)),
        ap_small: mean_over(1, None),
        ap_medium: mean_over(2, None),
        ap_large: mean_over(3, None),
        per_category: cats
            .iter()
            .enumerate()
            .map(|(ci, &cat)| {
                let v = if gt_count[ci][0] == 0 {
                    -1.0
                } else {
                    ap[ci][0].iter().sum::<f64>() / 10.0
                };
                (cat, v)
            })
            .collect(),
    }
}
