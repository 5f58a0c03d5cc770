//! Seeded synthetic-disk benchmark.
//!
//! Each instance is a disk with a known rasterization, a soft (deliberately
//! imperfect) coarse probability map and a fine feature grid whose first
//! channel carries a noisy signed boundary distance. The point head can
//! learn the boundary from these features, so refinement measurably beats
//! plain bilinear upsampling; the disk rasterizer doubles as the ground
//! truth oracle.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mask::{BinaryMask, ProbabilityMask};
use crate::refine::{
    bilinear_chain, subdivision_refine, FeatureGrid, PointClassifier, SubdivisionConfig,
    TrainingInstance,
};
use crate::Result;

/// Geometry of one synthetic disk and its derived grids.
#[derive(Debug, Clone)]
pub struct DiskInstance {
    pub center: (f64, f64),
    pub radius: f64,
    pub features: FeatureGrid,
    pub coarse: ProbabilityMask,
    /// Ground truth at feature resolution (training targets).
    pub gt_fine: BinaryMask,
    /// Ground truth at the refined output resolution (scoring).
    pub gt_eval: BinaryMask,
}

#[derive(Debug, Clone)]
pub struct DiskBenchmarkConfig {
    pub coarse_size: usize,
    pub steps: usize,
    /// Side of the feature grid and the fine ground truth.
    pub feature_size: usize,
    /// Logit sharpness of the soft coarse boundary.
    pub boundary_sharpness: f64,
    /// Uniform logit noise on the coarse map.
    pub coarse_noise: f64,
    /// Uniform noise on the signed-distance feature channel.
    pub feature_noise: f64,
}

impl Default for DiskBenchmarkConfig {
    fn default() -> Self {
        Self {
            coarse_size: 7,
            steps: 2,
            feature_size: 56,
            boundary_sharpness: 12.0,
            coarse_noise: 0.5,
            feature_noise: 0.05,
        }
    }
}

impl DiskBenchmarkConfig {
    pub fn output_size(&self) -> usize {
        self.coarse_size << self.steps
    }

    pub fn subdivision(&self) -> SubdivisionConfig {
        SubdivisionConfig {
            coarse_size: self.coarse_size,
            steps: self.steps,
            points_per_step: 196,
            threshold: 0.5,
        }
    }
}

fn cell_uv(row: usize, col: usize, side: usize) -> (f64, f64) {
    let u = if side == 1 {
        0.0
    } else {
        col as f64 / (side - 1) as f64
    };
    let v = if side == 1 {
        0.0
    } else {
        row as f64 / (side - 1) as f64
    };
    (u, v)
}

/// Exact disk rasterization on an `side x side` corner-aligned grid.
pub fn rasterize_disk(center: (f64, f64), radius: f64, side: usize) -> BinaryMask {
    let mut mask = BinaryMask::zeros(side, side).expect("positive side");
    for row in 0..side {
        for col in 0..side {
            let (u, v) = cell_uv(row, col, side);
            let d2 = (u - center.0).powi(2) + (v - center.1).powi(2);
            if d2 <= radius * radius {
                mask.set(row, col, true);
            }
        }
    }
    mask
}

/// Generate `count` disks, deterministic in `seed`.
pub fn generate_disks(count: usize, seed: u64, cfg: &DiskBenchmarkConfig) -> Vec<DiskInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let center = (rng.random_range(0.35..0.65), rng.random_range(0.35..0.65));
            let radius = rng.random_range(0.16..0.30);
            let distance =
                |u: f64, v: f64| ((u - center.0).powi(2) + (v - center.1).powi(2)).sqrt();

            let cs = cfg.coarse_size;
            let mut coarse_vals = Vec::with_capacity(cs * cs);
            for row in 0..cs {
                for col in 0..cs {
                    let (u, v) = cell_uv(row, col, cs);
                    let logit = cfg.boundary_sharpness * (radius - distance(u, v))
                        + rng.random_range(-cfg.coarse_noise..cfg.coarse_noise);
                    coarse_vals.push(1.0 / (1.0 + (-logit).exp()));
                }
            }
            let coarse = ProbabilityMask::new(cs, cs, coarse_vals).expect("values in range");

            let fs = cfg.feature_size;
            let mut values = Vec::with_capacity(3 * fs * fs);
            // Channel 0: noisy signed distance to the boundary.
            for row in 0..fs {
                for col in 0..fs {
                    let (u, v) = cell_uv(row, col, fs);
                    values.push(
                        8.0 * (radius - distance(u, v))
                            + rng.random_range(-cfg.feature_noise..cfg.feature_noise),
                    );
                }
            }
            // Channel 1: distance from the disk center.
            for row in 0..fs {
                for col in 0..fs {
                    let (u, v) = cell_uv(row, col, fs);
                    values.push(distance(u, v));
                }
            }
            // Channel 2: pure distractor noise.
            for _ in 0..fs * fs {
                values.push(rng.random_range(-0.5..0.5));
            }
            let features = FeatureGrid::new(3, fs, fs, values).expect("shape is consistent");

            DiskInstance {
                center,
                radius,
                features,
                coarse,
                gt_fine: rasterize_disk(center, radius, fs),
                gt_eval: rasterize_disk(center, radius, cfg.output_size()),
            }
        })
        .collect()
}

/// Borrow the training view of a disk set.
pub fn training_instances(disks: &[DiskInstance]) -> Vec<TrainingInstance> {
    disks
        .iter()
        .map(|d| TrainingInstance {
            features: d.features.clone(),
            coarse: d.coarse.clone(),
            target: d.gt_fine.clone(),
        })
        .collect()
}

/// Mean IoU of the refined masks and of the plain bilinear baseline against
/// the disk rasterization.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RefinementReport {
    pub instances: usize,
    pub bilinear_mean_iou: f64,
    pub refined_mean_iou: f64,
}

impl RefinementReport {
    pub fn improvement(&self) -> f64 {
        self.refined_mean_iou - self.bilinear_mean_iou
    }
}

pub fn evaluate_refinement<M: PointClassifier>(
    model: &M,
    disks: &[DiskInstance],
    cfg: &SubdivisionConfig,
) -> Result<RefinementReport> {
    let mut bilinear_sum = 0.0;
    let mut refined_sum = 0.0;
    for disk in disks {
        let baseline = bilinear_chain(&disk.coarse, cfg.steps)
            .threshold(cfg.threshold)
            .iou(&disk.gt_eval)?;
        let refined = subdivision_refine(model, &disk.coarse, &disk.features, cfg)?
            .threshold(cfg.threshold)
            .iou(&disk.gt_eval)?;
        bilinear_sum += baseline;
        refined_sum += refined;
    }
    Ok(RefinementReport {
        instances: disks.len(),
        bilinear_mean_iou: bilinear_sum / disks.len() as f64,
        refined_mean_iou: refined_sum / disks.len() as f64,
    })
}
