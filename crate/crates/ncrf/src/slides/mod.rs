//! Synthetic slides, masks, and patch sampling.
//!
//! Slides are 8-bit grayscale with a bright background and darker tissue,
//! mirroring the H&E-on-white convention, so tissue masking thresholds
//! *below* the Otsu split. Ground-truth tumor masks come straight from the
//! generator.

pub mod augment;
pub mod distance;
pub mod otsu;
pub mod pgm;
pub mod sample;
pub mod synth;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{NcrfError, Result};
use crate::extractor::SuperPatch;

/// 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(NcrfError::Contract(format!(
                "raster {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Raster { width, height, pixels })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// Binary raster congruent with its slide.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Mask { width, height, data: vec![false; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// True where `self` is set and `other` is not.
    pub fn minus(&self, other: &Mask) -> Mask {
        debug_assert_eq!(self.data.len(), other.data.len());
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a && !b).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Valid => write!(f, "valid"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub slide: String,
    pub mask: String,
    pub split: Split,
}

/// Dataset index: slide/mask paths per split plus the generator provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlideManifest {
    pub slides: Vec<ManifestEntry>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub params: synth::SynthParams,
}

impl SlideManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| NcrfError::Contract(format!("manifest serialization: {e}")))?;
        std::fs::write(path, json).map_err(NcrfError::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(NcrfError::io(path))?;
        serde_json::from_slice(&bytes).map_err(|e| NcrfError::Parse {
            path: path.to_path_buf(),
            line: 0,
            detail: e.to_string(),
        })
    }
}

/// A slide loaded for sampling or inference: raster, ground-truth tumor
/// mask, and the Otsu-derived tissue mask.
#[derive(Debug, Clone)]
pub struct SlideData {
    pub id: String,
    pub raster: Raster,
    pub tumor: Mask,
    pub tissue: Mask,
}

/// Load every slide of one split; tissue masks are recomputed from the
/// rasters with Otsu thresholding.
pub fn load_split(manifest_path: &Path, manifest: &SlideManifest, split: Split) -> Result<Vec<SlideData>> {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for entry in manifest.slides.iter().filter(|e| e.split == split) {
        let slide_path: PathBuf = base.join(&entry.slide);
        let mask_path: PathBuf = base.join(&entry.mask);
        let raster = pgm::read_pgm(&slide_path)?;
        let tumor = pgm::read_mask(&mask_path)?;
        if tumor.width != raster.width || tumor.height != raster.height {
            return Err(NcrfError::Contract(format!(
                "{}: mask {}x{} does not match slide {}x{}",
                entry.slide, tumor.width, tumor.height, raster.width, raster.height
            )));
        }
        let tissue = otsu::otsu_threshold(&raster).tissue;
        let id = Path::new(&entry.slide)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| entry.slide.clone());
        out.push(SlideData { id, raster, tumor, tissue });
    }
    Ok(out)
}

/// Crop the g*p square centered at `center`, without labels (inference).
pub fn crop_superpatch(
    slide: &Raster,
    center: (usize, usize),
    grid: usize,
    patch: usize,
) -> Result<SuperPatch> {
    let side = grid * patch;
    let half = side / 2;
    let (cx, cy) = center;
    if cx < half || cy < half || cx + half > slide.width || cy + half > slide.height {
        return Err(NcrfError::Contract(format!(
            "super-patch at ({cx},{cy}) side {side} exits the {}x{} slide",
            slide.width, slide.height
        )));
    }
    let (left, top) = (cx - half, cy - half);
    let mut pixels = Vec::with_capacity(side * side);
    for y in 0..side {
        let offset = (top + y) * slide.width + left;
        pixels.extend_from_slice(&slide.pixels[offset..offset + side]);
    }
    SuperPatch::new(pixels, grid, patch, None, center)
}

/// Crop the g*p square centered at `center` and label each patch with the
/// mask value at that patch's own center pixel.
pub fn extract_superpatch(
    slide: &Raster,
    mask: &Mask,
    center: (usize, usize),
    grid: usize,
    patch: usize,
) -> Result<SuperPatch> {
    let mut sp = crop_superpatch(slide, center, grid, patch)?;
    let half = sp.side / 2;
    let (left, top) = (center.0 - half, center.1 - half);
    let mut labels = Vec::with_capacity(grid * grid);
    for row in 0..grid {
        for col in 0..grid {
            let px = left + col * patch + patch / 2;
            let py = top + row * patch + patch / 2;
            labels.push(mask.get(px, py) as u8);
        }
    }
    sp.labels = Some(labels);
    Ok(sp)
}
