//! Test-time augmentation: transform probability maps, map the transformed
//! predictions back, average the aligned stack.
//!
//! ```bash
//! cargo run -p maskrend --example tta_fusion
//! ```

use maskrend::fusion::{apply_transform, invert_prediction, tta_average, TtaTransform};
use maskrend::mask::ProbabilityMask;

fn main() -> maskrend::Result<()> {
    // A soft blob, brighter towards the top-left.
    let (w, h) = (12, 8);
    let values: Vec<f64> = (0..w * h)
        .map(|i| {
            let row = (i / w) as f64 / (h - 1) as f64;
            let col = (i % w) as f64 / (w - 1) as f64;
            (1.2 - 0.8 * row - 0.6 * col).clamp(0.0, 1.0)
        })
        .collect();
    let original = ProbabilityMask::new(w, h, values)?;

    let transforms = [
        TtaTransform::identity(),
        TtaTransform::HorizontalFlip,
        TtaTransform::Rescale { scale: 0.75 },
        TtaTransform::Rescale { scale: 1.5 },
    ];

    // Simulate per-transform inference: the "model" sees the transformed
    // image, so its prediction lives in transformed space.
    let mut aligned = Vec::new();
    let mut scores = Vec::new();
    for (k, t) in transforms.iter().enumerate() {
        let predicted = apply_transform(&original, t);
        println!(
            "run {k}: {:?} -> prediction grid {}x{}",
            t,
            predicted.width(),
            predicted.height()
        );
        aligned.push(invert_prediction(&predicted, t, w, h));
        scores.push(0.9 - 0.05 * k as f64);
    }

    let (fused, score) = tta_average(&aligned, &scores)?;
    println!("\nfused score: {score:.4}");

    let max_dev = original
        .values()
        .iter()
        .zip(fused.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("max |fused - original| over the grid: {max_dev:.4}");

    // Flip is an involution, so fusing only flip+unflip is exact.
    let (flip_only, _) = tta_average(
        &[
            original.clone(),
            invert_prediction(
                &apply_transform(&original, &TtaTransform::HorizontalFlip),
                &TtaTransform::HorizontalFlip,
                w,
                h,
            ),
        ],
        &[1.0, 1.0],
    )?;
    assert_eq!(flip_only, original);
    println!("identity + unflipped flip fuse to the original exactly");
    Ok(())
}
