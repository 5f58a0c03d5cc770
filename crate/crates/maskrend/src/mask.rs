//! Mask data structures and geometric primitives.
//!
//! Binary masks are row-major bitmaps; run-length encodings follow the COCO
//! convention (column-major pixel order, leading zero-run) so annotation and
//! prediction files interoperate with the wider ecosystem, including the
//! compressed LEB128-style text codec.

use crate::{Error, Result};

/// Per-instance foreground bitmap on an image-sized grid.
///
/// Bits are stored row-major, one byte per pixel, each 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidMask(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        if bits.len() != width * height {
            return Err(Error::InvalidMask(format!(
                "bit count {} does not match {width}x{height}",
                bits.len()
            )));
        }
        if let Some(v) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::InvalidMask(format!("bit value {v} is not 0 or 1")));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col] == 1
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value as u8;
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> u64 {
        self.bits.iter().map(|&b| b as u64).sum()
    }

    /// Intersection-over-union with another mask of equal dimensions.
    ///
    /// Defined as 0 when both masks are empty so downstream matching never
    /// sees a NaN.
    pub fn iou(&self, other: &BinaryMask) -> Result<f64> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                got: (other.width, other.height),
            });
        }
        let mut inter = 0u64;
        let mut union = 0u64;
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += (a & b) as u64;
            union += (a | b) as u64;
        }
        if union == 0 {
            Ok(0.0)
        } else {
            Ok(inter as f64 / union as f64)
        }
    }

    /// Tightest axis-aligned box containing all foreground pixels.
    ///
    /// An empty mask yields a zero-area box at the origin.
    pub fn bbox(&self) -> BBox {
        let mut min_row = usize::MAX;
        let mut max_row = 0usize;
        let mut min_col = usize::MAX;
        let mut max_col = 0usize;
        let mut any = false;
        for row in 0..self.height {
            for col in 0..self.width {
                if self.get(row, col) {
                    any = true;
                    min_row = min_row.min(row);
                    max_row = max_row.max(row);
                    min_col = min_col.min(col);
                    max_col = max_col.max(col);
                }
            }
        }
        if !any {
            return BBox {
                x: 0,
                y: 0,
                w: 0,
                h: 0,
            };
        }
        BBox {
            x: min_col as u32,
            y: min_row as u32,
            w: (max_col - min_col + 1) as u32,
            h: (max_row - min_row + 1) as u32,
        }
    }

    /// Foreground connected components under 8-connectivity.
    ///
    /// Components are ordered by decreasing pixel count; ties break on the
    /// smallest row-major first pixel. `id` is the rank in that order.
    pub fn components(&self) -> Vec<Component> {
        self.label_components(true, Connectivity::Eight)
    }

    fn label_components(&self, foreground: bool, conn: Connectivity) -> Vec<Component> {
        let target = foreground as u8;
        let mut visited = vec![false; self.bits.len()];
        let mut raw: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
        let mut stack = Vec::new();

        for seed in 0..self.bits.len() {
            if visited[seed] || self.bits[seed] != target {
                continue;
            }
            let mut pixels = Vec::new();
            visited[seed] = true;
            stack.push(seed);
            while let Some(idx) = stack.pop() {
                let row = idx / self.width;
                let col = idx % self.width;
                pixels.push((row, col));
                for (nr, nc) in neighbors(row, col, self.width, self.height, conn) {
                    let nidx = nr * self.width + nc;
                    if !visited[nidx] && self.bits[nidx] == target {
                        visited[nidx] = true;
                        stack.push(nidx);
                    }
                }
            }
            pixels.sort_unstable();
            raw.push((seed, pixels));
        }

        raw.sort_by(|(seed_a, pix_a), (seed_b, pix_b)| {
            pix_b.len().cmp(&pix_a.len()).then(seed_a.cmp(seed_b))
        });
        raw.into_iter()
            .enumerate()
            .map(|(id, (_, pixels))| Component {
                id,
                pixel_count: pixels.len(),
                pixels,
            })
            .collect()
    }

    /// Remove small foreground speckles, then fill small enclosed background
    /// holes, repeating until the mask stops changing.
    ///
    /// Both thresholds are fractions of the largest foreground component's
    /// area: a component smaller than `speckle_fraction * largest` is
    /// dropped, a hole (background region not touching the grid border,
    /// 4-connectivity) smaller than `hole_fraction * largest` is filled.
    /// Iterating to a fixed point makes the operation idempotent even when a
    /// fill enlarges the largest component and shifts the thresholds.
    pub fn correct(&self, speckle_fraction: f64, hole_fraction: f64) -> Result<BinaryMask> {
        for (name, f) in [
            ("speckle_fraction", speckle_fraction),
            ("hole_fraction", hole_fraction),
        ] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, 1), got {f}"
                )));
            }
        }
        let mut current = self.clone();
        loop {
            let next = current.correction_pass(speckle_fraction, hole_fraction);
            if next == current {
                return Ok(next);
            }
            current = next;
        }
    }

    fn correction_pass(&self, speckle_fraction: f64, hole_fraction: f64) -> BinaryMask {
        let comps = self.components();
        let Some(largest) = comps.first().map(|c| c.pixel_count) else {
            return self.clone();
        };
        let mut out = self.clone();
        let speckle_limit = speckle_fraction * largest as f64;
        for comp in &comps {
            if (comp.pixel_count as f64) < speckle_limit {
                for &(row, col) in &comp.pixels {
                    out.set(row, col, false);
                }
            }
        }

        // Speckles are strictly smaller than the largest component, so the
        // hole threshold still keys off the same area.
        let hole_limit = hole_fraction * largest as f64;
        for comp in out.label_components(false, Connectivity::Four) {
            if (comp.pixel_count as f64) >= hole_limit {
                continue;
            }
            let touches_border = comp.pixels.iter().any(|&(row, col)| {
                row == 0 || col == 0 || row == self.height - 1 || col == self.width - 1
            });
            if !touches_border {
                for &(row, col) in &comp.pixels {
                    out.set(row, col, true);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
enum Connectivity {
    Four,
    Eight,
}

fn neighbors(
    row: usize,
    col: usize,
    width: usize,
    height: usize,
    conn: Connectivity,
) -> impl Iterator<Item = (usize, usize)> {
    const FOUR: [(i64, i64); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
    const EIGHT: [(i64, i64); 8] = [
        (-1, -1),
        (-1, 0),
        (-1, 1),
        (0, -1),
        (0, 1),
        (1, -1),
        (1, 0),
        (1, 1),
    ];
    let offsets: &'static [(i64, i64)] = match conn {
        Connectivity::Four => &FOUR,
        Connectivity::Eight => &EIGHT,
    };
    offsets.iter().filter_map(move |&(dr, dc)| {
        let nr = row as i64 + dr;
        let nc = col as i64 + dc;
        if nr >= 0 && nc >= 0 && (nr as usize) < height && (nc as usize) < width {
            Some((nr as usize, nc as usize))
        } else {
            None
        }
    })
}

/// One connected component of a mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub id: usize,
    pub pixel_count: usize,
    /// Member pixels as (row, col), sorted row-major.
    pub pixels: Vec<(usize, usize)>,
}

/// Per-pixel foreground probability grid, row-major, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMask {
    width: usize,
    height: usize,
    probs: Vec<f64>,
}

impl ProbabilityMask {
    pub fn new(width: usize, height: usize, probs: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidMask(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        if probs.len() != width * height {
            return Err(Error::InvalidMask(format!(
                "value count {} does not match {width}x{height}",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidMask(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            probs,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.probs[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.probs[row * self.width + col] = value.clamp(0.0, 1.0);
    }

    /// Binarize: foreground wherever `p >= threshold`.
    pub fn threshold(&self, threshold: f64) -> BinaryMask {
        let bits = self.probs.iter().map(|&p| (p >= threshold) as u8).collect();
        BinaryMask::new(self.width, self.height, bits).expect("dimensions preserved")
    }

    /// Bilinear resampling with corner-aligned coordinate mapping.
    ///
    /// Target index `j` reads source coordinate `j * (src - 1) / (dst - 1)`;
    /// a single source row or column degenerates to nearest. Resizing to the
    /// same size reproduces the values exactly.
    pub fn resize(&self, new_width: usize, new_height: usize) -> ProbabilityMask {
        assert!(
            new_width >= 1 && new_height >= 1,
            "target dimensions must be positive"
        );
        let mut probs = Vec::with_capacity(new_width * new_height);
        for row in 0..new_height {
            let sy = axis_coord(row, self.height, new_height);
            let (y0, y1, fy) = split_coord(sy, self.height);
            for col in 0..new_width {
                let sx = axis_coord(col, self.width, new_width);
                let (x0, x1, fx) = split_coord(sx, self.width);
                let top = self.get(y0, x0) * (1.0 - fx) + self.get(y0, x1) * fx;
                let bottom = self.get(y1, x0) * (1.0 - fx) + self.get(y1, x1) * fx;
                probs.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
            }
        }
        ProbabilityMask {
            width: new_width,
            height: new_height,
            probs,
        }
    }

    /// Reverse the column order.
    pub fn flip_horizontal(&self) -> ProbabilityMask {
        let mut probs = Vec::with_capacity(self.probs.len());
        for row in 0..self.height {
            for col in (0..self.width).rev() {
                probs.push(self.get(row, col));
            }
        }
        ProbabilityMask {
            width: self.width,
            height: self.height,
            probs,
        }
    }

    /// Corner-aligned bilinear lookup at normalized coordinates.
    ///
    /// `u` spans columns (0 maps to column 0, 1 to the last column), `v`
    /// spans rows. Coordinates that round-trip through `col / (width - 1)`
    /// snap back onto the exact cell value.
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        let x = normalized_coord(u, self.width);
        let y = normalized_coord(v, self.height);
        let (x0, x1, fx) = split_coord(x, self.width);
        let (y0, y1, fy) = split_coord(y, self.height);
        let top = self.get(y0, x0) * (1.0 - fx) + self.get(y0, x1) * fx;
        let bottom = self.get(y1, x0) * (1.0 - fx) + self.get(y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Source coordinate for resize: exact integer arithmetic in the numerator
/// keeps endpoints and identity resizes bit-exact.
fn axis_coord(dst_idx: usize, src_len: usize, dst_len: usize) -> f64 {
    if src_len == 1 || dst_len == 1 {
        return 0.0;
    }
    (dst_idx * (src_len - 1)) as f64 / (dst_len - 1) as f64
}

/// Map a normalized coordinate in [0, 1] onto the corner-aligned pixel axis,
/// snapping near-integer results so cell coordinates built as
/// `idx / (len - 1)` land exactly on their cell.
pub(crate) fn normalized_coord(t: f64, len: usize) -> f64 {
    if len == 1 {
        return 0.0;
    }
    let x = t * (len - 1) as f64;
    let snapped = x.round();
    if (x - snapped).abs() < 1e-9 {
        snapped
    } else {
        x
    }
}

/// Split an axis coordinate into its two neighbor indices and the fraction.
pub(crate) fn split_coord(x: f64, len: usize) -> (usize, usize, f64) {
    let clamped = x.clamp(0.0, (len - 1) as f64);
    let i0 = clamped.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, clamped - i0 as f64)
}

/// Axis-aligned pixel box: `x`/`y` are the left/top inclusive corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Intersection-over-union between two boxes; 0 when both are empty.
    pub fn iou(&self, other: &BBox) -> f64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        let inter = if x1 > x0 && y1 > y0 {
            (x1 - x0) as u64 * (y1 - y0) as u64
        } else {
            0
        };
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Run-length encoding of a binary mask.
///
/// Counts enumerate runs of the mask read column-major (top-to-bottom within
/// a column, columns left-to-right), starting with the zero-run, which is the
/// only count allowed to be 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rle {
    width: usize,
    height: usize,
    counts: Vec<u32>,
}

impl Rle {
    pub fn new(width: usize, height: usize, counts: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRle(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        if total != (width * height) as u64 {
            return Err(Error::InvalidRle(format!(
                "counts sum to {total}, expected {width}x{height} = {}",
                width * height
            )));
        }
        if counts.iter().skip(1).any(|&c| c == 0) {
            return Err(Error::InvalidRle(
                "only the leading count may be zero".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            counts,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Foreground pixel count (odd-indexed runs are ones).
    pub fn area(&self) -> u64 {
        self.counts
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&c| c as u64)
            .sum()
    }

    /// Encode a mask by walking its pixels column-major.
    pub fn from_mask(mask: &BinaryMask) -> Rle {
        let mut counts = Vec::new();
        let mut current = 0u8;
        let mut run = 0u32;
        for col in 0..mask.width() {
            for row in 0..mask.height() {
                let bit = mask.get(row, col) as u8;
                if bit == current {
                    run += 1;
                } else {
                    counts.push(run);
                    current = bit;
                    run = 1;
                }
            }
        }
        counts.push(run);
        Rle {
            width: mask.width(),
            height: mask.height(),
            counts,
        }
    }

    /// Exact inverse of [`Rle::from_mask`].
    pub fn to_mask(&self) -> BinaryMask {
        let mut bits = vec![0u8; self.width * self.height];
        let mut pos = 0usize;
        let mut value = 0u8;
        for &count in &self.counts {
            for _ in 0..count {
                let col = pos / self.height;
                let row = pos % self.height;
                bits[row * self.width + col] = value;
                pos += 1;
            }
            value = 1 - value;
        }
        BinaryMask::new(self.width, self.height, bits).expect("counts sum checked at construction")
    }

    /// Compress to the COCO text codec: counts delta-encoded against
    /// `counts[i - 2]` (from the fourth count on), written low-bits-first as
    /// 6-bit chunks offset by ASCII 48 with a sign-extending continuation
    /// bit.
    pub fn to_codec_string(&self) -> String {
        let mut out = String::new();
        for (i, &count) in self.counts.iter().enumerate() {
            let mut x = count as i64;
            if i > 2 {
                x -= self.counts[i - 2] as i64;
            }
            loop {
                let mut chunk = (x & 0x1f) as u8;
                x >>= 5;
                let more = if chunk & 0x10 != 0 { x != -1 } else { x != 0 };
                if more {
                    chunk |= 0x20;
                }
                out.push((chunk + 48) as char);
                if !more {
                    break;
                }
            }
        }
        out
    }

    /// Decode the COCO text codec back into runs for a `width x height`
    /// mask.
    pub fn from_codec_string(s: &str, width: usize, height: usize) -> Result<Rle> {
        let bytes = s.as_bytes();
        let mut counts: Vec<u32> = Vec::new();
        let mut i = 0usize;
        while i < bytes.len() {
            let mut x: i64 = 0;
            let mut shift = 0u32;
            loop {
                if i >= bytes.len() {
                    return Err(Error::Codec("truncated chunk stream".into()));
                }
                let byte = bytes[i];
                if !(48..112).contains(&byte) {
                    return Err(Error::Codec(format!(
                        "byte {byte} at offset {i} is outside the codec alphabet"
                    )));
                }
                let chunk = (byte - 48) as i64;
                i += 1;
                x |= (chunk & 0x1f) << shift;
                shift += 5;
                if chunk & 0x20 == 0 {
                    if chunk & 0x10 != 0 {
                        x |= -1i64 << shift;
                    }
                    break;
                }
            }
            if counts.len() > 2 {
                x += counts[counts.len() - 2] as i64;
            }
            if !(0..=u32::MAX as i64).contains(&x) {
                return Err(Error::Codec(format!("decoded count {x} out of range")));
            }
            counts.push(x as u32);
        }
        Rle::new(width, height, counts)
            .map_err(|e| Error::Codec(format!("decoded counts are inconsistent: {e}")))
    }
}
