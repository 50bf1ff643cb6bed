//! Slide-level inference outputs and their evaluation: probability maps,
//! non-maximum suppression, lesion extraction, and FROC scoring.

pub mod froc;
pub mod infer;
pub mod nms;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{NcrfError, Result};
use crate::slides::Raster;

/// Grid of tumor probabilities produced by sliding the model over a slide.
///
/// Cell (ix, iy) sits at slide coordinate `origin + stride * (ix, iy)`.
/// Cells outside tissue (or whose footprint would exit the slide) are
/// unevaluated and treated as probability 0 by NMS.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub origin: (usize, usize),
    pub stride: usize,
    pub nx: usize,
    pub ny: usize,
    pub probs: Vec<f32>,
    pub evaluated: Vec<bool>,
}

impl ProbabilityMap {
    pub fn unevaluated(origin: (usize, usize), stride: usize, nx: usize, ny: usize) -> Self {
        ProbabilityMap {
            origin,
            stride,
            nx,
            ny,
            probs: vec![0.0; nx * ny],
            evaluated: vec![false; nx * ny],
        }
    }

    #[inline]
    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    /// Slide-pixel coordinate of a cell center.
    #[inline]
    pub fn cell_center(&self, ix: usize, iy: usize) -> (usize, usize) {
        (self.origin.0 + self.stride * ix, self.origin.1 + self.stride * iy)
    }

    pub fn set(&mut self, ix: usize, iy: usize, prob: f32) {
        let i = self.idx(ix, iy);
        self.probs[i] = prob;
        self.evaluated[i] = true;
    }

    /// Probability as NMS sees it: unevaluated cells count as 0.
    #[inline]
    pub fn prob_or_zero(&self, i: usize) -> f32 {
        if self.evaluated[i] {
            self.probs[i]
        } else {
            0.0
        }
    }

    pub fn evaluated_count(&self) -> usize {
        self.evaluated.iter().filter(|&&v| v).count()
    }

    /// Mean absolute difference over 4-adjacent evaluated cell pairs;
    /// 0 when fewer than two evaluated cells or no adjacent pairs exist.
    pub fn total_variation(&self) -> f64 {
        let mut sum = 0.0f64;
        let mut pairs = 0usize;
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let i = self.idx(ix, iy);
                if !self.evaluated[i] {
                    continue;
                }
                if ix + 1 < self.nx && self.evaluated[i + 1] {
                    sum += (self.probs[i] as f64 - self.probs[i + 1] as f64).abs();
                    pairs += 1;
                }
                if iy + 1 < self.ny && self.evaluated[i + self.nx] {
                    sum += (self.probs[i] as f64 - self.probs[i + self.nx] as f64).abs();
                    pairs += 1;
                }
            }
        }
        if pairs == 0 {
            0.0
        } else {
            sum / pairs as f64
        }
    }

    /// Viewable rendering: probabilities scaled to 0..=255, unevaluated 0.
    pub fn to_raster(&self) -> Raster {
        let pixels = (0..self.probs.len())
            .map(|i| (self.prob_or_zero(i) * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        Raster::new(self.nx, self.ny, pixels).expect("congruent by construction")
    }

    /// Lossless CSV of the evaluated cells plus a JSON sidecar with the grid
    /// geometry (`<stem>.meta.json` next to the CSV).
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(csv_path).map_err(NcrfError::io(csv_path))?;
        let mut text = String::from("cell_x,cell_y,prob\n");
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let i = self.idx(ix, iy);
                if self.evaluated[i] {
                    text.push_str(&format!("{ix},{iy},{}\n", self.probs[i]));
                }
            }
        }
        file.write_all(text.as_bytes()).map_err(NcrfError::io(csv_path))?;
        let meta = MapMeta {
            origin_x: self.origin.0,
            origin_y: self.origin.1,
            stride: self.stride,
            nx: self.nx,
            ny: self.ny,
        };
        let meta_path = meta_path_for(csv_path);
        std::fs::write(
            &meta_path,
            serde_json::to_string_pretty(&meta)
                .map_err(|e| NcrfError::Contract(format!("map meta: {e}")))?,
        )
        .map_err(NcrfError::io(&meta_path))
    }

    pub fn load(csv_path: &Path) -> Result<Self> {
        let meta_path = meta_path_for(csv_path);
        let meta_bytes = std::fs::read(&meta_path).map_err(NcrfError::io(&meta_path))?;
        let meta: MapMeta = serde_json::from_slice(&meta_bytes).map_err(|e| NcrfError::Parse {
            path: meta_path.clone(),
            line: 0,
            detail: e.to_string(),
        })?;
        let mut map = ProbabilityMap::unevaluated(
            (meta.origin_x, meta.origin_y),
            meta.stride,
            meta.nx,
            meta.ny,
        );
        let text = std::fs::read_to_string(csv_path).map_err(NcrfError::io(csv_path))?;
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 {
                if line.trim() != "cell_x,cell_y,prob" {
                    return Err(parse_err(csv_path, 1, "expected header cell_x,cell_y,prob"));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let (ix, iy, prob) = (|| -> Option<(usize, usize, f32)> {
                let ix = fields.next()?.trim().parse().ok()?;
                let iy = fields.next()?.trim().parse().ok()?;
                let prob = fields.next()?.trim().parse().ok()?;
                if fields.next().is_some() {
                    return None;
                }
                Some((ix, iy, prob))
            })()
            .ok_or_else(|| parse_err(csv_path, lineno + 1, "expected cell_x,cell_y,prob"))?;
            if ix >= map.nx || iy >= map.ny {
                return Err(parse_err(csv_path, lineno + 1, "cell index outside map"));
            }
            map.set(ix, iy, prob);
        }
        Ok(map)
    }
}

fn parse_err(path: &Path, line: usize, detail: &str) -> NcrfError {
    NcrfError::Parse {
        path: path.to_path_buf(),
        line,
        detail: detail.to_string(),
    }
}

pub fn meta_path_for(csv_path: &Path) -> PathBuf {
    let mut p = csv_path.as_os_str().to_owned();
    p.push(".meta.json");
    PathBuf::from(p)
}

#[derive(Serialize, Deserialize)]
struct MapMeta {
    origin_x: usize,
    origin_y: usize,
    stride: usize,
    nx: usize,
    ny: usize,
}
