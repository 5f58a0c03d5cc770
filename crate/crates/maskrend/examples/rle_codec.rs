//! Run-length encoding round trips: mask -> counts -> codec string -> mask.
//!
//! ```bash
//! cargo run -p maskrend --example rle_codec
//! ```

use maskrend::mask::{BinaryMask, Rle};

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
    // A small L-shaped mask.
    let mut mask = BinaryMask::zeros(10, 6)?;
    for col in 1..4 {
        for row in 1..5 {
            mask.set(row, col, true);
        }
    }
    for col in 4..9 {
        mask.set(4, col, true);
    }
    println!(
        "input mask ({}x{}):\n{}",
        mask.width(),
        mask.height(),
        render(&mask)
    );

    let rle = Rle::from_mask(&mask);
    println!("column-major run counts: {:?}", rle.counts());
    println!("foreground area: {} px", rle.area());

    let compressed = rle.to_codec_string();
    println!(
        "compressed codec string: {compressed:?} ({} bytes)",
        compressed.len()
    );

    let decoded = Rle::from_codec_string(&compressed, rle.width(), rle.height())?;
    assert_eq!(decoded, rle);
    assert_eq!(decoded.to_mask(), mask);
    println!("round trip mask -> counts -> string -> mask: exact");

    // The JSON interchange form.
    let json = serde_json::to_string(&maskrend::formats::RleJson::from_rle(&rle)).unwrap();
    println!("JSON object form: {json}");
    Ok(())
}
