//! Mask correction: remove stray speckles and fill small interior holes.
//!
//! ```bash
//! cargo run -p maskrend --example mask_correction
//! ```

use maskrend::mask::BinaryMask;

fn render(mask: &BinaryMask) -> String {
    let mut out = String::new();
    for row in 0..mask.height() {
        for col in 0..mask.width() {
            out.push(if mask.get(row, col) { '#' } else { '.' });
        }
        out.push('\n');
    }
    out
}

fn main() -> maskrend::Result<()> {
    // A clean 12x10 blob...
    let mut clean = BinaryMask::zeros(18, 14)?;
    for row in 2..12 {
        for col in 2..14 {
            clean.set(row, col, true);
        }
    }

    // ...corrupted with two interior holes and two speckles.
    let mut noisy = clean.clone();
    noisy.set(5, 6, false);
    noisy.set(5, 7, false);
    noisy.set(9, 10, false);
    noisy.set(13, 16, true);
    noisy.set(0, 16, true);
    println!("noisy mask:\n{}", render(&noisy));

    for comp in noisy.components() {
        println!(
            "component {}: {} px, first pixel {:?}",
            comp.id, comp.pixel_count, comp.pixels[0]
        );
    }

    let corrected = noisy.correct(0.05, 0.05)?;
    println!("\ncorrected mask:\n{}", render(&corrected));
    assert_eq!(corrected, clean);
    println!("corrected mask equals the clean original");

    // Correction is idempotent.
    assert_eq!(corrected.correct(0.05, 0.05)?, corrected);
    println!("second application is a no-op");
    Ok(())
}
