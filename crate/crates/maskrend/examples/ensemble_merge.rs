//! Cross-model ensemble: cluster overlapping same-category instances from
//! several models, average their masks, soft-vote the scores.
//!
//! ```bash
//! cargo run -p maskrend --example ensemble_merge
//! ```

use maskrend::fusion::{ensemble_merge, InstancePrediction, PredictionMask};
use maskrend::mask::{BinaryMask, ProbabilityMask};

fn rect(
    image_id: u64,
    category_id: u64,
    score: f64,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
) -> InstancePrediction {
    let (w, h) = (20, 20);
    let mut mask = BinaryMask::zeros(w, h).unwrap();
    for row in y0..y1 {
        for col in x0..x1 {
            mask.set(row, col, true);
        }
    }
    let probs = mask.bits().iter().map(|&b| b as f64).collect();
    InstancePrediction {
        image_id,
        category_id,
        score,
        bbox: mask.bbox(),
        mask: PredictionMask::Probability(ProbabilityMask::new(w, h, probs).unwrap()),
    }
}

fn main() -> maskrend::Result<()> {
    // Three models look at image 1. They agree on a chair (category 1) with
    // slightly different extents; model 2 also hallucinates a table.
    let model_a = vec![rect(1, 1, 0.92, 3, 3, 11, 11)];
    let model_b = vec![
        rect(1, 1, 0.88, 4, 3, 12, 11),
        rect(1, 2, 0.40, 14, 14, 19, 19),
    ];
    let model_c = vec![rect(1, 1, 0.90, 3, 4, 11, 12)];

    let merged = ensemble_merge(&[model_a, model_b, model_c], 0.5, 3)?;
    println!("{} consensus instances:", merged.len());
    for inst in &merged {
        println!(
            "  category {} score {:.4} box (x={}, y={}, {}x{})",
            inst.category_id, inst.score, inst.bbox.x, inst.bbox.y, inst.bbox.w, inst.bbox.h
        );
    }

    // The agreed chair keeps a high soft vote: (0.92 + 0.88 + 0.90) / 3.
    assert!((merged[0].score - (0.92 + 0.88 + 0.90) / 3.0).abs() < 1e-12);
    // The lone table is down-voted: 0.40 / 3.
    assert!((merged[1].score - 0.40 / 3.0).abs() < 1e-12);

    // The merged mask is the pixel mean; disagreement shows as fractions.
    let prob = merged[0].mask.to_probability();
    let mut histogram = std::collections::BTreeMap::new();
    for &v in prob.values() {
        *histogram.entry(format!("{v:.3}")).or_insert(0usize) += 1;
    }
    println!("\nmerged chair mask value histogram:");
    for (value, count) in histogram {
        println!("  p = {value}: {count} px");
    }
    Ok(())
}
