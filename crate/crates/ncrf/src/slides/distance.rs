//! Exact squared Euclidean distance transform (two-pass lower-envelope
//! method) and mask-boundary extraction. Used by the hard-negative sampler
//! to find centers near tissue or tumor boundaries.

use crate::slides::Mask;

const INF: f64 = 1e20;

/// Pixels whose 4-neighborhood crosses the mask edge (both sides flagged).
/// The image border itself is not a boundary.
pub fn boundary_pixels(mask: &Mask) -> Mask {
    let (w, h) = (mask.width, mask.height);
    let mut out = Mask::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = mask.get(x, y);
            let differs = (x > 0 && mask.get(x - 1, y) != v)
                || (x + 1 < w && mask.get(x + 1, y) != v)
                || (y > 0 && mask.get(x, y - 1) != v)
                || (y + 1 < h && mask.get(x, y + 1) != v);
            if differs {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// One-dimensional squared distance transform (lower envelope of parabolas).
///
/// `INF` is finite (1e20) so every parabola intersection is finite and the
/// envelope index can never underflow past `z[0] = -INF`.
fn dt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let sep = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2 * q - 2 * p) as f64
    };
    let mut k = 0usize;
    v[0] = 0;
    z[0] = -INF;
    z[1] = INF;
    for q in 1..n {
        let mut s = sep(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = sep(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = INF;
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let diff = q as f64 - p as f64;
        d[q] = diff * diff + f[p];
    }
}

/// Squared Euclidean distance from every pixel to the nearest seed pixel.
/// Pixels return `>= 1e20` when the mask has no seeds at all.
pub fn squared_distance_transform(seeds: &Mask) -> Vec<f64> {
    let (w, h) = (seeds.width, seeds.height);
    let mut grid: Vec<f64> = seeds.data.iter().map(|&s| if s { 0.0 } else { INF }).collect();

    let max_dim = w.max(h);
    let mut f = vec![0.0; max_dim];
    let mut d = vec![0.0; max_dim];
    let mut v = vec![0usize; max_dim];
    let mut z = vec![0.0; max_dim + 1];

    // columns
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        dt_1d(&f[..h], &mut d[..h], &mut v[..h], &mut z[..h + 1]);
        for y in 0..h {
            grid[y * w + x] = d[y];
        }
    }
    // rows
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        dt_1d(&f[..w], &mut d[..w], &mut v[..w], &mut z[..w + 1]);
        grid[y * w..(y + 1) * w].copy_from_slice(&d[..w]);
    }
    grid
}

/// Mask of pixels within `radius` (Euclidean) of any seed pixel.
pub fn within_radius(seeds: &Mask, radius: f64) -> Mask {
    let dist2 = squared_distance_transform(seeds);
    Mask {
        width: seeds.width,
        height: seeds.height,
        data: dist2.iter().map(|&d2| d2 <= radius * radius).collect(),
    }
}
