//! Synthetic slide generator: bright background, one darker textured tissue
//! region (a union of large ellipses), and tumor blobs (smaller ellipses,
//! clipped to tissue) whose mean intensity and noise amplitude differ from
//! normal tissue. Everything is deterministic in the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NcrfError, Result};
use crate::slides::{Mask, Raster};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthParams {
    pub width: usize,
    pub height: usize,
    pub n_tumor_blobs: usize,
    /// Blob semi-axis range as a fraction of the smaller slide dimension.
    /// Smaller blobs mean proportionally more boundary patches.
    pub tumor_blob_min_radius_frac: f64,
    pub tumor_blob_max_radius_frac: f64,
    /// Background intensity center and uniform noise half-width.
    pub background_level: f64,
    pub background_noise: f64,
    /// Normal tissue intensity center and uniform noise half-width.
    pub tissue_level: f64,
    pub tissue_noise: f64,
    /// Long-wavelength per-slide wave over normal tissue, the normal-class
    /// counterpart of the tumor micro-texture.
    pub tissue_wave_amplitude: f64,
    pub tissue_wave_min_wavelength: f64,
    pub tissue_wave_max_wavelength: f64,
    /// Tumor intensity center, per-blob mean jitter, and noise half-width.
    pub tumor_level: f64,
    pub tumor_level_jitter: f64,
    pub tumor_noise: f64,
    /// Oriented sinusoidal micro-texture inside tumor blobs; each blob draws
    /// its own orientation, wavelength, and phase, which is what makes tumor
    /// and normal patch embeddings point in genuinely different directions.
    pub tumor_wave_amplitude: f64,
    pub tumor_wave_min_wavelength: f64,
    pub tumor_wave_max_wavelength: f64,
    /// Amplitude of the smooth per-slide intensity field over tissue.
    pub lowfreq_amplitude: f64,
    /// Tumor-textured phantom blotches in normal tissue, per megapixel of
    /// tissue. Large enough to engulf a whole patch, so patch appearance
    /// alone cannot separate them from tumor interior; only the surrounding
    /// grid can. These are the isolated false positives the CRF suppresses.
    pub distractor_density: f64,
    pub distractor_min_radius: f64,
    pub distractor_max_radius: f64,
    /// Width (px) of the appearance blend from tissue-like at the tumor edge
    /// to full tumor texture in the core. Adjacent patches straddling a
    /// boundary then look alike, while phantom blotches stay sharp.
    pub tumor_blend_width: f64,
    /// Accepted tumor-to-tissue area ratio (rejection resampling).
    pub min_tumor_fraction: f64,
    pub max_tumor_fraction: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            width: 2048,
            height: 2048,
            n_tumor_blobs: 3,
            tumor_blob_min_radius_frac: 0.070,
            tumor_blob_max_radius_frac: 0.120,
            background_level: 250.0,
            background_noise: 5.0,
            tissue_level: 150.0,
            tissue_noise: 30.0,
            tissue_wave_amplitude: 14.0,
            tissue_wave_min_wavelength: 10.0,
            tissue_wave_max_wavelength: 16.0,
            tumor_level: 100.0,
            tumor_level_jitter: 10.0,
            tumor_noise: 34.0,
            tumor_wave_amplitude: 30.0,
            tumor_wave_min_wavelength: 3.0,
            tumor_wave_max_wavelength: 8.0,
            lowfreq_amplitude: 12.0,
            distractor_density: 64.0,
            distractor_min_radius: 22.0,
            distractor_max_radius: 40.0,
            tumor_blend_width: 64.0,
            min_tumor_fraction: 0.02,
            max_tumor_fraction: 0.30,
        }
    }
}

pub struct SyntheticSlide {
    pub raster: Raster,
    pub tumor: Mask,
    /// The generator's own tissue region (ground truth for mask tests; the
    /// pipeline recomputes tissue from the raster with Otsu).
    pub tissue: Mask,
    /// Phantom blotches (tumor-textured, mask-normal).
    pub distractor: Mask,
}

struct BlobTexture {
    mean: f64,
    wave_kx: f64,
    wave_ky: f64,
    wave_phase: f64,
}

#[derive(Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos_t: f64,
    sin_t: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (dx * self.cos_t + dy * self.sin_t) / self.a;
        let v = (-dx * self.sin_t + dy * self.cos_t) / self.b;
        u * u + v * v <= 1.0
    }

    fn stamp(&self, mask: &mut Mask) {
        let r = self.a.max(self.b);
        let x0 = ((self.cx - r).floor().max(0.0)) as usize;
        let y0 = ((self.cy - r).floor().max(0.0)) as usize;
        let x1 = ((self.cx + r).ceil() as usize).min(mask.width.saturating_sub(1));
        let y1 = ((self.cy + r).ceil() as usize).min(mask.height.saturating_sub(1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                if self.contains(x as f64, y as f64) {
                    mask.set(x, y, true);
                }
            }
        }
    }
}

const LOWFREQ_GRID: usize = 5;

/// Smooth per-slide intensity field: bilinear interpolation of a small
/// uniform grid.
struct LowFreqField {
    grid: [[f64; LOWFREQ_GRID]; LOWFREQ_GRID],
    width: f64,
    height: f64,
}

impl LowFreqField {
    fn sample(rng: &mut ChaCha8Rng, amplitude: f64, width: usize, height: usize) -> Self {
        let mut grid = [[0.0; LOWFREQ_GRID]; LOWFREQ_GRID];
        for row in grid.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-amplitude..=amplitude);
            }
        }
        LowFreqField { grid, width: width as f64, height: height as f64 }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        let n = (LOWFREQ_GRID - 1) as f64;
        let u = (x as f64 / (self.width - 1.0).max(1.0)) * n;
        let v = (y as f64 / (self.height - 1.0).max(1.0)) * n;
        let (i0, j0) = (u.floor() as usize, v.floor() as usize);
        let (i1, j1) = ((i0 + 1).min(LOWFREQ_GRID - 1), (j0 + 1).min(LOWFREQ_GRID - 1));
        let (fu, fv) = (u - i0 as f64, v - j0 as f64);
        let top = self.grid[j0][i0] * (1.0 - fu) + self.grid[j0][i1] * fu;
        let bottom = self.grid[j1][i0] * (1.0 - fu) + self.grid[j1][i1] * fu;
        top * (1.0 - fv) + bottom * fv
    }
}

const TISSUE_ELLIPSES: usize = 5;
const MAX_RESAMPLES: usize = 64;

pub fn generate_synthetic_slide(seed: u64, params: &SynthParams) -> Result<SyntheticSlide> {
    let (w, h) = (params.width, params.height);
    if w < 64 || h < 64 {
        return Err(NcrfError::Contract(format!("slide {w}x{h} is too small to generate")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_dim = w.min(h) as f64;

    // tissue: union of large ellipses clustered near the center
    let mut tissue = Mask::empty(w, h);
    let mut ok = false;
    for _ in 0..MAX_RESAMPLES {
        tissue = Mask::empty(w, h);
        for _ in 0..TISSUE_ELLIPSES {
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            Ellipse {
                cx: rng.gen_range(0.30 * w as f64..0.70 * w as f64),
                cy: rng.gen_range(0.30 * h as f64..0.70 * h as f64),
                a: rng.gen_range(0.18 * min_dim..0.30 * min_dim),
                b: rng.gen_range(0.18 * min_dim..0.30 * min_dim),
                cos_t: theta.cos(),
                sin_t: theta.sin(),
            }
            .stamp(&mut tissue);
        }
        let fraction = tissue.count() as f64 / (w * h) as f64;
        if (0.15..=0.80).contains(&fraction) {
            ok = true;
            break;
        }
    }
    if !ok {
        return Err(NcrfError::Contract("could not place a tissue region of sane size".into()));
    }
    let tissue_pixels: Vec<u32> = tissue
        .data
        .iter()
        .enumerate()
        .filter(|(_, &v)| v)
        .map(|(i, _)| i as u32)
        .collect();

    // tumor blobs: ellipses seeded at tissue pixels, clipped to tissue;
    // every pixel remembers which blob claimed it first so rendering can
    // apply that blob's mean and texture wave
    let mut tumor = Mask::empty(w, h);
    let mut blob_of = vec![u16::MAX; w * h];
    let mut blobs: Vec<BlobTexture> = Vec::new();
    if params.n_tumor_blobs > 0 {
        let mut accepted = false;
        for _ in 0..MAX_RESAMPLES {
            tumor = Mask::empty(w, h);
            blob_of.fill(u16::MAX);
            blobs.clear();
            for blob_idx in 0..params.n_tumor_blobs {
                let center_idx = tissue_pixels[rng.gen_range(0..tissue_pixels.len())] as usize;
                let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                let blob = Ellipse {
                    cx: (center_idx % w) as f64,
                    cy: (center_idx / w) as f64,
                    a: rng.gen_range(params.tumor_blob_min_radius_frac * min_dim
                        ..params.tumor_blob_max_radius_frac * min_dim),
                    b: rng.gen_range(params.tumor_blob_min_radius_frac * min_dim
                        ..params.tumor_blob_max_radius_frac * min_dim),
                    cos_t: theta.cos(),
                    sin_t: theta.sin(),
                };
                let wave_dir: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                blobs.push(BlobTexture {
                    mean: params.tumor_level
                        + rng.gen_range(-params.tumor_level_jitter..=params.tumor_level_jitter),
                    wave_kx: wave_dir.cos() * std::f64::consts::TAU
                        / rng.gen_range(params.tumor_wave_min_wavelength..=params.tumor_wave_max_wavelength),
                    wave_ky: wave_dir.sin() * std::f64::consts::TAU
                        / rng.gen_range(params.tumor_wave_min_wavelength..=params.tumor_wave_max_wavelength),
                    wave_phase: rng.gen_range(0.0..std::f64::consts::TAU),
                });
                let mut blob_region = Mask::empty(w, h);
                blob.stamp(&mut blob_region);
                // first blob to claim a pixel sets its texture
                for (i, (&in_blob, &in_tissue)) in
                    blob_region.data.iter().zip(&tissue.data).enumerate()
                {
                    if in_blob && in_tissue && !tumor.data[i] {
                        tumor.data[i] = true;
                        blob_of[i] = blob_idx as u16;
                    }
                }
            }
            let fraction = tumor.count() as f64 / tissue.count() as f64;
            if (params.min_tumor_fraction..=params.max_tumor_fraction).contains(&fraction) {
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(NcrfError::Contract(format!(
                "could not reach a tumor fraction in [{}, {}]",
                params.min_tumor_fraction, params.max_tumor_fraction
            )));
        }
    }

    // distractor blotches: tumor-like texture on normal tissue, never in
    // the mask; reuse the blob texture table and per-pixel index
    let mut distractor = Mask::empty(w, h);
    if params.distractor_density > 0.0 {
        let n_distractors =
            (params.distractor_density * tissue.count() as f64 / 1e6).round() as usize;
        for _ in 0..n_distractors {
            let center_idx = tissue_pixels[rng.gen_range(0..tissue_pixels.len())] as usize;
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let spot = Ellipse {
                cx: (center_idx % w) as f64,
                cy: (center_idx / w) as f64,
                a: rng.gen_range(params.distractor_min_radius..=params.distractor_max_radius),
                b: rng.gen_range(params.distractor_min_radius..=params.distractor_max_radius),
                cos_t: theta.cos(),
                sin_t: theta.sin(),
            };
            let wave_dir: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            blobs.push(BlobTexture {
                mean: params.tumor_level
                    + rng.gen_range(-params.tumor_level_jitter..=params.tumor_level_jitter),
                wave_kx: wave_dir.cos() * std::f64::consts::TAU
                    / rng.gen_range(params.tumor_wave_min_wavelength..=params.tumor_wave_max_wavelength),
                wave_ky: wave_dir.sin() * std::f64::consts::TAU
                    / rng.gen_range(params.tumor_wave_min_wavelength..=params.tumor_wave_max_wavelength),
                wave_phase: rng.gen_range(0.0..std::f64::consts::TAU),
            });
            let texture_idx = (blobs.len() - 1) as u16;
            let mut spot_region = Mask::empty(w, h);
            spot.stamp(&mut spot_region);
            for (i, &in_spot) in spot_region.data.iter().enumerate() {
                if in_spot && tissue.data[i] && !tumor.data[i] && !distractor.data[i] {
                    distractor.data[i] = true;
                    blob_of[i] = texture_idx;
                }
            }
        }
    }

    // depth of each tumor pixel from the nearest non-tumor pixel, for the
    // edge-to-core appearance blend
    let tumor_depth: Option<Vec<f64>> = (params.tumor_blend_width > 0.0 && !tumor.is_empty()).then(|| {
        let not_tumor = Mask {
            width: w,
            height: h,
            data: tumor.data.iter().map(|&t| !t).collect(),
        };
        crate::slides::distance::squared_distance_transform(&not_tumor)
    });

    // render
    let lowfreq = LowFreqField::sample(&mut rng, params.lowfreq_amplitude, w, h);
    let tissue_dir: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let tissue_wavelength =
        rng.gen_range(params.tissue_wave_min_wavelength..=params.tissue_wave_max_wavelength);
    let tissue_kx = tissue_dir.cos() * std::f64::consts::TAU / tissue_wavelength;
    let tissue_ky = tissue_dir.sin() * std::f64::consts::TAU / tissue_wavelength;
    let tissue_phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);

    let mut pixels = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let noise: f64 = rng.gen_range(-1.0..=1.0);
            let value = if tumor.data[i] || distractor.data[i] {
                let b = &blobs[blob_of[i] as usize];
                // phantoms render at full strength; tumor fades in from the edge
                let alpha = match (&tumor_depth, tumor.data[i]) {
                    (Some(depth), true) => (depth[i].sqrt() / params.tumor_blend_width).min(1.0),
                    _ => 1.0,
                };
                let wave_t = (x as f64 * b.wave_kx + y as f64 * b.wave_ky + b.wave_phase).sin();
                let wave_s = (x as f64 * tissue_kx + y as f64 * tissue_ky + tissue_phase).sin();
                let tumor_part = b.mean + wave_t * params.tumor_wave_amplitude;
                let tissue_part =
                    params.tissue_level + wave_s * params.tissue_wave_amplitude;
                alpha * tumor_part
                    + (1.0 - alpha) * tissue_part
                    + noise * (alpha * params.tumor_noise + (1.0 - alpha) * params.tissue_noise)
                    + lowfreq.at(x, y)
            } else if tissue.data[i] {
                let wave = (x as f64 * tissue_kx + y as f64 * tissue_ky + tissue_phase).sin();
                params.tissue_level
                    + wave * params.tissue_wave_amplitude
                    + noise * params.tissue_noise
                    + lowfreq.at(x, y)
            } else {
                params.background_level + noise * params.background_noise
            };
            pixels[i] = value.round().clamp(0.0, 255.0) as u8;
        }
    }

    Ok(SyntheticSlide {
        raster: Raster::new(w, h, pixels)?,
        tumor,
        tissue,
        distractor,
    })
}
