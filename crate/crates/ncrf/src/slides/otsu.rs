//! Otsu thresholding over the 256-bin histogram; tissue is the dark class.

use crate::slides::{Mask, Raster};

pub struct OtsuOutcome {
    /// `None` when every pixel has the same value (no variance to split).
    pub threshold: Option<u8>,
    /// Pixels with intensity strictly below the threshold.
    pub tissue: Mask,
}

pub fn histogram(raster: &Raster) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in &raster.pixels {
        hist[v as usize] += 1;
    }
    hist
}

/// Threshold maximizing the between-class variance of {v < t} vs {v >= t};
/// ties break toward the lowest t. Returns `None` for degenerate (constant)
/// histograms where every split has zero variance.
pub fn otsu_from_histogram(hist: &[u64; 256]) -> Option<u8> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return None;
    }
    let total_f = total as f64;
    let weighted_total: f64 = hist.iter().enumerate().map(|(v, &c)| v as f64 * c as f64).sum();

    let mut w0 = 0.0f64;
    let mut sum0 = 0.0f64;
    let mut best_var = 0.0f64;
    let mut best_t: Option<u8> = None;
    for t in 1..=255usize {
        w0 += hist[t - 1] as f64;
        sum0 += (t - 1) as f64 * hist[t - 1] as f64;
        let w1 = total_f - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (weighted_total - sum0) / w1;
        let var = (w0 / total_f) * (w1 / total_f) * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_t = Some(t as u8);
        }
    }
    best_t
}

/// Threshold a slide into its tissue mask. A constant image yields an empty
/// mask and a warning.
pub fn otsu_threshold(raster: &Raster) -> OtsuOutcome {
    let hist = histogram(raster);
    match otsu_from_histogram(&hist) {
        Some(t) => {
            let data = raster.pixels.iter().map(|&v| v < t).collect();
            OtsuOutcome {
                threshold: Some(t),
                tissue: Mask { width: raster.width, height: raster.height, data },
            }
        }
        None => {
            log::warn!("otsu: constant image, threshold undefined; tissue mask is empty");
            OtsuOutcome {
                threshold: None,
                tissue: Mask::empty(raster.width, raster.height),
            }
        }
    }
}
