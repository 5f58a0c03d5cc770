//! Dataset analysis over a synthetic annotation set skewed towards large
//! objects: category imbalance, area buckets, aspect ratios and the
//! resulting anchor recommendation.
//!
//! ```bash
//! cargo run -p maskrend --example dataset_analysis
//! ```

use maskrend::eval::GroundTruthInstance;
use maskrend::mask::{BinaryMask, Rle};
use maskrend::stats::{
    area_buckets, aspect_ratio_histogram, category_histogram, default_aspect_edges,
    recommend_anchors, AnnotationSet, CategoryInfo, ImageInfo, DEFAULT_AREA_EDGES,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> maskrend::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2020);
    let image_side = 600;
    let images: Vec<ImageInfo> = (1..=8)
        .map(|id| ImageInfo {
            id,
            width: image_side,
            height: image_side,
        })
        .collect();
    let categories = vec![
        CategoryInfo {
            id: 1,
            name: "chair".into(),
        },
        CategoryInfo {
            id: 2,
            name: "table".into(),
        },
        CategoryInfo {
            id: 3,
            name: "bed".into(),
        },
        CategoryInfo {
            id: 4,
            name: "lamp".into(),
        },
    ];

    // Imbalanced: many chairs, few lamps; mostly large objects.
    let mut instances = Vec::new();
    for _ in 0..120 {
        let category_id = *[1, 1, 1, 1, 1, 2, 2, 2, 3, 4]
            .get(rng.random_range(0..10))
            .unwrap();
        let image_id = rng.random_range(1..=8);
        let long = rng.random_range(100..400usize);
        let ratio: f64 = [0.5, 1.0, 1.0, 1.0, 2.0][rng.random_range(0..5)];
        let w = ((long as f64 / ratio.max(1.0)).round() as usize).max(8);
        let h = ((long as f64 * ratio.min(1.0)).round() as usize).max(8);
        let x0 = rng.random_range(0..image_side - w);
        let y0 = rng.random_range(0..image_side - h);
        let mut mask = BinaryMask::zeros(image_side, image_side)?;
        for row in y0..y0 + h {
            for col in x0..x0 + w {
                mask.set(row, col, true);
            }
        }
        instances.push(GroundTruthInstance::new(
            image_id,
            category_id,
            Rle::from_mask(&mask),
        ));
    }
    let set = AnnotationSet::new(images, instances, categories)?;

    println!("category histogram:");
    for (id, count) in category_histogram(&set) {
        let name = &set.categories.iter().find(|c| c.id == id).unwrap().name;
        println!(
            "  {id} {name:<6} {count:>4}  {}",
            "#".repeat((count / 2) as usize)
        );
    }

    let fractions = area_buckets(&set, &DEFAULT_AREA_EDGES)?;
    println!("\narea buckets (edges at 96^2 and 256^2 px):");
    for (label, frac) in ["small", "medium", "large"].iter().zip(&fractions) {
        println!("  {label:<7} {:.1}%", frac * 100.0);
    }
    println!(
        "  share above 96^2: {:.1}%",
        (fractions[1] + fractions[2]) * 100.0
    );

    let hist = aspect_ratio_histogram(&set, &default_aspect_edges())?;
    println!("\naspect ratio histogram (log h/w):");
    for (i, count) in hist.counts.iter().enumerate() {
        println!(
            "  [{:>6.2}, {:>6.2})  {}",
            hist.log_edges[i],
            hist.log_edges[i + 1],
            "#".repeat(*count as usize / 2)
        );
    }

    let anchors = recommend_anchors(&set, 0.9)?;
    println!("\nrecommended anchors:");
    println!("  sizes:  {:?}", anchors.sizes);
    println!("  ratios: {:?} (h:w)", anchors.ratios);
    Ok(())
}
