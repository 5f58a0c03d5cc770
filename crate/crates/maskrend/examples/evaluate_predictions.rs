//! Mask mAP evaluation of a small two-image scene, including the effect of
//! a boundary-sloppy detection on the higher IoU thresholds.
//!
//! ```bash
//! cargo run -p maskrend --example evaluate_predictions
//! ```

use maskrend::eval::{average_precision, coco_map, match_detections, GroundTruthInstance};
use maskrend::fusion::{InstancePrediction, PredictionMask};
use maskrend::mask::{BinaryMask, Rle};

fn rect_rle(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Rle {
    let mut mask = BinaryMask::zeros(w, h).unwrap();
    for row in y0..y1 {
        for col in x0..x1 {
            mask.set(row, col, true);
        }
    }
    Rle::from_mask(&mask)
}

fn det(image_id: u64, category_id: u64, score: f64, rle: Rle) -> InstancePrediction {
    InstancePrediction {
        image_id,
        category_id,
        score,
        bbox: rle.to_mask().bbox(),
        mask: PredictionMask::Encoded(rle),
    }
}

fn main() -> maskrend::Result<()> {
    let gts = vec![
        GroundTruthInstance::new(1, 1, rect_rle(64, 64, 4, 4, 40, 40)),
        GroundTruthInstance::new(1, 2, rect_rle(64, 64, 44, 44, 60, 60)),
        GroundTruthInstance::new(2, 1, rect_rle(64, 64, 10, 10, 30, 50)),
    ];

    let dets = vec![
        // Exact hit.
        det(1, 1, 0.95, rect_rle(64, 64, 4, 4, 40, 40)),
        // Two columns off: fine at IoU 0.5, dies at high thresholds.
        det(2, 1, 0.90, rect_rle(64, 64, 12, 10, 32, 50)),
        // Near miss on the small table.
        det(1, 2, 0.60, rect_rle(64, 64, 45, 45, 61, 61)),
        // Low-score junk.
        det(2, 1, 0.10, rect_rle(64, 64, 50, 2, 62, 12)),
    ];

    // The per-image matcher on its own.
    let flags = match_detections(
        &[rect_rle(8, 8, 0, 0, 4, 8), rect_rle(8, 8, 0, 0, 4, 7)],
        &[rect_rle(8, 8, 0, 0, 4, 8)],
        0.5,
    )?;
    println!("greedy matcher flags (two dets, one gt): {flags:?}");
    println!(
        "AP of [TP, FP] with one gt: {:.4}",
        average_precision(&flags, 1)
    );

    let result = coco_map(&gts, &dets, &[1, 2])?;
    println!("\n{}", result.to_table());
    println!("JSON: {}", serde_json::to_string_pretty(&result).unwrap());
    Ok(())
}
