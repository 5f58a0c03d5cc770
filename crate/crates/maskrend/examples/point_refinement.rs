//! Subdivision refinement on one synthetic disk: upsample the coarse map,
//! re-classify the uncertain points, compare against plain bilinear
//! upsampling.
//!
//! ```bash
//! cargo run -p maskrend --example point_refinement
//! ```

use maskrend::refine::{
    bilinear_chain, subdivision_refine, train_point_head, uncertain_points, TrainConfig,
};
use maskrend::synth::{generate_disks, training_instances, DiskBenchmarkConfig};

fn main() -> maskrend::Result<()> {
    let bench = DiskBenchmarkConfig::default();

    // A quick head: few disks, few epochs.
    let train = generate_disks(12, 42, &bench);
    let cfg = TrainConfig {
        epochs: 30,
        learning_rate: 0.3,
        points_per_instance: 49,
        hidden_widths: vec![32, 32],
        seed: 42,
        ..TrainConfig::default()
    };
    let outcome = train_point_head(&training_instances(&train), &cfg)?;

    let disk = &generate_disks(1, 777, &bench)[0];
    println!(
        "disk at ({:.2}, {:.2}), radius {:.2}; coarse {}x{}",
        disk.center.0,
        disk.center.1,
        disk.radius,
        disk.coarse.width(),
        disk.coarse.height()
    );

    // Where are the uncertain points on the first upsampled grid?
    let up = disk.coarse.resize(14, 14);
    let pts = uncertain_points(&up, 8);
    println!("8 most uncertain points after the first x2 upsample:");
    for &(u, v) in pts.points() {
        println!("  (u={u:.3}, v={v:.3}) p={:.3}", up.sample(u, v));
    }

    let subdiv = bench.subdivision();
    let refined = subdivision_refine(&outcome.model, &disk.coarse, &disk.features, &subdiv)?;
    let baseline = bilinear_chain(&disk.coarse, subdiv.steps);
    println!(
        "\noutput resolution: {}x{} (coarse {} -> x2 -> x2)",
        refined.width(),
        refined.height(),
        subdiv.coarse_size
    );

    let refined_iou = refined.threshold(0.5).iou(&disk.gt_eval)?;
    let baseline_iou = baseline.threshold(0.5).iou(&disk.gt_eval)?;
    println!("bilinear-only IoU: {baseline_iou:.4}");
    println!("refined IoU:       {refined_iou:.4}");

    // Side-by-side ASCII of the two masks.
    let rb = refined.threshold(0.5);
    let bb = baseline.threshold(0.5);
    println!("\nbilinear (left) vs refined (right):");
    for row in 0..rb.height() {
        let mut line = String::new();
        for col in 0..bb.width() {
            line.push(if bb.get(row, col) { '#' } else { '.' });
        }
        line.push_str("   ");
        for col in 0..rb.width() {
            line.push(if rb.get(row, col) { '#' } else { '.' });
        }
        println!("{line}");
    }
    Ok(())
}
