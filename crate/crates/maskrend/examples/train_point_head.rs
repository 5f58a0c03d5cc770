//! Train the MLP point head on the synthetic disk benchmark and measure the
//! refinement gain on held-out disks.
//!
//! ```bash
//! cargo run -p maskrend --example train_point_head
//! ```

use maskrend::refine::{train_point_head, TrainConfig};
use maskrend::synth::{
    evaluate_refinement, generate_disks, training_instances, DiskBenchmarkConfig,
};

fn main() -> maskrend::Result<()> {
    let bench = DiskBenchmarkConfig::default();
    let train = generate_disks(24, 1, &bench);
    let held_out = generate_disks(50, 2, &bench);

    let cfg = TrainConfig {
        epochs: 50,
        learning_rate: 0.25,
        points_per_instance: 98,
        hidden_widths: vec![64, 64, 64],
        seed: 1,
        ..TrainConfig::default()
    };
    println!(
        "training on {} disks, {} epochs, lr {}, hidden {:?}",
        train.len(),
        cfg.epochs,
        cfg.learning_rate,
        cfg.hidden_widths
    );

    let outcome = train_point_head(&training_instances(&train), &cfg)?;
    println!("\nepoch   mean focal loss");
    for (epoch, loss) in outcome.epoch_losses.iter().enumerate() {
        if epoch % 5 == 0 || epoch + 1 == outcome.epoch_losses.len() {
            println!("{epoch:>5}   {loss:.6}");
        }
    }

    let report = evaluate_refinement(&outcome.model, &held_out, &bench.subdivision())?;
    println!(
        "\nheld-out ({} disks): bilinear {:.4}, refined {:.4}, improvement {:+.4}",
        report.instances,
        report.bilinear_mean_iou,
        report.refined_mean_iou,
        report.improvement()
    );

    // The trained model serializes to a plain JSON file.
    let json = serde_json::to_string(&outcome.model).unwrap();
    println!(
        "\nmodel: in_dim {}, hidden {:?}, {} parameters, {} bytes as JSON",
        outcome.model.in_dim(),
        outcome.model.hidden_widths(),
        outcome.model.parameter_count(),
        json.len()
    );
    Ok(())
}
