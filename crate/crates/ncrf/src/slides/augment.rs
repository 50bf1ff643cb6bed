//! Training-time augmentation: the 8 dihedral transforms applied jointly to
//! pixels and the label grid, then brightness/contrast jitter on 8-bit
//! values with clamping.

use rand::Rng;

use crate::error::Result;
use crate::extractor::SuperPatch;

pub const BRIGHTNESS_DELTA: f64 = 64.0;
pub const CONTRAST_LO: f64 = 0.25;
pub const CONTRAST_HI: f64 = 1.75;

/// Apply dihedral element `k` (0..8) to a square raster of side `side`.
/// `k & 3` counts quarter-turns; `k >= 4` prepends a horizontal flip.
/// One quarter-turn maps cell (r, c) to (c, side-1-r).
pub fn apply_dihedral<T: Copy>(data: &[T], side: usize, k: u8) -> Vec<T> {
    debug_assert_eq!(data.len(), side * side);
    debug_assert!(k < 8);
    let mut src = data.to_vec();
    if k >= 4 {
        for row in src.chunks_mut(side) {
            row.reverse();
        }
    }
    for _ in 0..(k & 3) {
        let mut dst = src.clone();
        for r in 0..side {
            for c in 0..side {
                // (r, c) -> (c, side-1-r)
                dst[c * side + (side - 1 - r)] = src[r * side + c];
            }
        }
        src = dst;
    }
    src
}

/// `clamp(round((v - 128) * contrast + 128 + brightness))` per pixel.
pub fn jitter_pixels(pixels: &[u8], contrast: f64, brightness: f64) -> Vec<u8> {
    pixels
        .iter()
        .map(|&v| {
            ((v as f64 - 128.0) * contrast + 128.0 + brightness)
                .round()
                .clamp(0.0, 255.0) as u8
        })
        .collect()
}

/// Random dihedral transform (pixels and labels jointly) followed by random
/// brightness/contrast jitter. Labels change position, never value.
pub fn augment(sp: &SuperPatch, rng: &mut impl Rng) -> Result<SuperPatch> {
    let k = rng.gen_range(0..8u8);
    let contrast = rng.gen_range(CONTRAST_LO..=CONTRAST_HI);
    let brightness = rng.gen_range(-BRIGHTNESS_DELTA..=BRIGHTNESS_DELTA);

    let pixels = apply_dihedral(&sp.pixels, sp.side, k);
    let pixels = jitter_pixels(&pixels, contrast, brightness);
    let labels = sp.labels.as_ref().map(|l| apply_dihedral(l, sp.grid, k));
    SuperPatch::new(pixels, sp.grid, sp.patch, labels, sp.center)
}
