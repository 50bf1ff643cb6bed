//! Patch-center sampling with boundary-biased hard negatives.
//!
//! Positives are uniform over tumor pixels with a valid footprint; negatives
//! split into a uniform share over tissue-non-tumor and a "hard" share that
//! additionally lies within `boundary_radius` of a tissue or tumor boundary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NcrfError, Result};
use crate::slides::distance::{boundary_pixels, within_radius};
use crate::slides::{Mask, SlideData};

/// One sampled super-patch center.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSample {
    pub slide: String,
    pub center: (usize, usize),
    pub label: u8,
    pub hard: bool,
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub n_pos: usize,
    pub n_neg: usize,
    pub hard_fraction: f64,
    pub boundary_radius: usize,
    /// Super-patch side in pixels; centers keep the whole footprint inside.
    pub footprint: usize,
    pub seed: u64,
}

const MAX_ATTEMPTS: usize = 10_000;

struct SlideIndex {
    /// Eligible tumor centers (flat pixel indices), footprint-valid.
    positives: Vec<u32>,
    /// Tissue-non-tumor near a tissue or tumor boundary.
    near_boundary: Option<Mask>,
}

fn valid_rect(slide: &SlideData, footprint: usize) -> Option<(usize, usize, usize, usize)> {
    let half = footprint / 2;
    let (w, h) = (slide.raster.width, slide.raster.height);
    if w < footprint || h < footprint {
        return None;
    }
    // x in [half, w - half], inclusive
    Some((half, half, w - half, h - half))
}

pub fn sample_patches(slides: &[SlideData], cfg: &SamplerConfig) -> Result<Vec<PatchSample>> {
    if !(0.0..=1.0).contains(&cfg.hard_fraction) {
        return Err(NcrfError::Config(format!(
            "hard fraction {} outside [0, 1]",
            cfg.hard_fraction
        )));
    }
    if slides.is_empty() && (cfg.n_pos > 0 || cfg.n_neg > 0) {
        return Err(NcrfError::Sampling {
            slide: "<none>".into(),
            detail: "no slides to sample from".into(),
        });
    }

    let n_hard = (cfg.hard_fraction * cfg.n_neg as f64).round() as usize;
    let n_easy = cfg.n_neg - n_hard;

    // per-slide indexes, built once
    let mut index = Vec::with_capacity(slides.len());
    for slide in slides {
        let rect = valid_rect(slide, cfg.footprint);
        let positives = match (rect, cfg.n_pos > 0) {
            (Some((x0, y0, x1, y1)), true) => {
                let w = slide.raster.width;
                slide
                    .tumor
                    .data
                    .iter()
                    .enumerate()
                    .filter(|(i, &v)| {
                        let (x, y) = (i % w, i / w);
                        v && x >= x0 && x <= x1 && y >= y0 && y <= y1
                    })
                    .map(|(i, _)| i as u32)
                    .collect()
            }
            _ => Vec::new(),
        };
        let near_boundary = (n_hard > 0 && rect.is_some()).then(|| {
            let mut seeds = boundary_pixels(&slide.tissue);
            for (s, &t) in seeds.data.iter_mut().zip(&boundary_pixels(&slide.tumor).data) {
                *s = *s || t;
            }
            within_radius(&seeds, cfg.boundary_radius as f64)
        });
        index.push(SlideIndex { positives, near_boundary });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.n_pos + cfg.n_neg);

    // positives: uniform over slides that have eligible tumor centers
    if cfg.n_pos > 0 {
        let eligible: Vec<usize> =
            (0..slides.len()).filter(|&i| !index[i].positives.is_empty()).collect();
        if eligible.is_empty() {
            let names: Vec<&str> = slides.iter().map(|s| s.id.as_str()).collect();
            return Err(NcrfError::Sampling {
                slide: names.join(", "),
                detail: "no slide has tumor pixels with a valid footprint".into(),
            });
        }
        for _ in 0..cfg.n_pos {
            let si = eligible[rng.gen_range(0..eligible.len())];
            let flat = index[si].positives[rng.gen_range(0..index[si].positives.len())] as usize;
            let w = slides[si].raster.width;
            out.push(PatchSample {
                slide: slides[si].id.clone(),
                center: (flat % w, flat / w),
                label: 1,
                hard: false,
            });
        }
    }

    // negatives: rejection over tissue-non-tumor (optionally near a boundary)
    let draw_negative = |rng: &mut ChaCha8Rng, hard: bool| -> Result<PatchSample> {
        let mut last_slide = "";
        for _ in 0..MAX_ATTEMPTS {
            let si = rng.gen_range(0..slides.len());
            let slide = &slides[si];
            last_slide = &slide.id;
            let Some((x0, y0, x1, y1)) = valid_rect(slide, cfg.footprint) else {
                continue;
            };
            let x = rng.gen_range(x0..=x1);
            let y = rng.gen_range(y0..=y1);
            if !slide.tissue.get(x, y) || slide.tumor.get(x, y) {
                continue;
            }
            if hard {
                let near = index[si].near_boundary.as_ref().expect("built above");
                if !near.get(x, y) {
                    continue;
                }
            }
            return Ok(PatchSample { slide: slide.id.clone(), center: (x, y), label: 0, hard });
        }
        Err(NcrfError::Sampling {
            slide: last_slide.to_string(),
            detail: format!(
                "no {} negative center found in {MAX_ATTEMPTS} attempts",
                if hard { "hard" } else { "uniform" }
            ),
        })
    };

    for _ in 0..n_easy {
        let s = draw_negative(&mut rng, false)?;
        out.push(s);
    }
    for _ in 0..n_hard {
        let s = draw_negative(&mut rng, true)?;
        out.push(s);
    }
    Ok(out)
}
