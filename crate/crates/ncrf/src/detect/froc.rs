//! Lesion extraction and FROC scoring.
//!
//! A lesion is an 8-connected component of the ground-truth tumor mask. The
//! FROC sweep lowers a probability threshold over all detections; at each
//! level, a detection inside any lesion marks that lesion found (repeat hits
//! are neither new finds nor false positives) and a detection outside every
//! lesion is a false positive. The score averages lesion sensitivity at
//! 1/4, 1/2, 1, 2, 4, and 8 false positives per slide.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use crate::detect::nms::Detection;
use crate::error::{NcrfError, Result};
use crate::slides::Mask;

pub const TARGET_FP_RATES: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

/// Labeled connected components: `labels[i] == 0` is background, lesion ids
/// run 1..=count in first-pixel raster order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LesionSet {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl LesionSet {
    /// Lesion id at a coordinate, if any.
    pub fn lesion_at(&self, x: usize, y: usize) -> Option<u32> {
        if x >= self.width || y >= self.height {
            return None;
        }
        match self.labels[y * self.width + x] {
            0 => None,
            id => Some(id),
        }
    }
}

/// 8-connectivity flood fill; ids assigned by first-pixel raster order.
pub fn connected_components(mask: &Mask) -> LesionSet {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut count = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.data[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            let x0 = x.saturating_sub(1);
            let y0 = y.saturating_sub(1);
            for ny in y0..=(y + 1).min(h - 1) {
                for nx in x0..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if mask.data[j] && labels[j] == 0 {
                        labels[j] = count;
                        stack.push(j);
                    }
                }
            }
        }
    }
    LesionSet { width: w, height: h, labels, count: count as usize }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrocCurve {
    /// (average false positives per slide, lesion sensitivity), one point
    /// per distinct threshold, starting from the implicit empty cut (0, 0).
    pub points: Vec<(f64, f64)>,
    /// Mean sensitivity over [`TARGET_FP_RATES`] with step interpolation:
    /// the best sensitivity achieved at FP rate <= target.
    pub average: f64,
}

/// Score detection lists against lesion sets, one pair per slide.
pub fn froc(slides: &[(Vec<Detection>, &LesionSet)]) -> Result<FrocCurve> {
    let n_slides = slides.len();
    let total_lesions: usize = slides.iter().map(|(_, l)| l.count).sum();
    if total_lesions == 0 {
        return Err(NcrfError::Contract(
            "froc is undefined with zero lesions across all slides".into(),
        ));
    }

    // all detections, highest probability first; ties share one threshold
    let mut all: Vec<(f32, usize, usize, usize)> = Vec::new();
    for (si, (dets, _)) in slides.iter().enumerate() {
        for d in dets {
            all.push((d.prob, si, d.x, d.y));
        }
    }
    all.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![(0.0, 0.0)];
    let mut found: HashSet<(usize, u32)> = HashSet::new();
    let mut false_positives = 0usize;
    let mut i = 0;
    while i < all.len() {
        let threshold = all[i].0;
        while i < all.len() && all[i].0 == threshold {
            let (_, si, x, y) = all[i];
            match slides[si].1.lesion_at(x, y) {
                Some(id) => {
                    found.insert((si, id));
                }
                None => false_positives += 1,
            }
            i += 1;
        }
        points.push((
            false_positives as f64 / n_slides as f64,
            found.len() as f64 / total_lesions as f64,
        ));
    }

    let average = TARGET_FP_RATES
        .iter()
        .map(|&target| {
            points
                .iter()
                .filter(|(fp, _)| *fp <= target)
                .map(|&(_, sens)| sens)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / TARGET_FP_RATES.len() as f64;

    Ok(FrocCurve { points, average })
}

impl FrocCurve {
    /// Rows of `fp_per_slide,sensitivity`, then a summary row `average,<v>`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::from("fp_per_slide,sensitivity\n");
        for (fp, sens) in &self.points {
            text.push_str(&format!("{fp},{sens}\n"));
        }
        text.push_str(&format!("average,{}\n", self.average));
        let mut file = std::fs::File::create(path).map_err(NcrfError::io(path))?;
        file.write_all(text.as_bytes()).map_err(NcrfError::io(path))
    }
}
