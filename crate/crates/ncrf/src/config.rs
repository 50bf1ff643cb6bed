//! Run configuration: one JSON-serializable struct whose defaults are the
//! published hyperparameters (T=10, g=3, lr=0.001, momentum=0.9, batch=20,
//! epochs=20, stride=64) with desk-scale geometry (p=32, d=32, 2048px
//! synthetic slides).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NcrfError, Result};
use crate::model::ModelLayout;
use crate::slides::synth::SynthParams;
use crate::crf::IndicatorConvention;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    #[value(name = "f32")]
    F32,
    #[value(name = "f64")]
    F64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // model
    pub grid_size: usize,
    pub patch_size: usize,
    pub embedding_dim: usize,
    pub conv_channels: [usize; 3],
    pub mean_field_iterations: usize,
    pub crf_enabled: bool,
    pub indicator_convention: IndicatorConvention,
    /// Keep coupling weights pinned at their current value during training
    /// (ablation switch; a frozen-at-zero CRF run must match the baseline).
    pub freeze_coupling: bool,

    // optimization
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Precision,

    // synthetic dataset
    pub n_train_slides: usize,
    pub n_valid_slides: usize,
    pub n_test_slides: usize,
    pub slide_width: usize,
    pub slide_height: usize,
    pub n_tumor_blobs: usize,

    // patch sampling
    pub train_pos_patches: usize,
    pub train_neg_patches: usize,
    pub valid_pos_patches: usize,
    pub valid_neg_patches: usize,
    pub hard_negative_fraction: f64,
    pub boundary_radius: usize,

    // inference / detection
    pub stride: usize,
    /// Suppression radius in pixels; default (`null`) means 2 * stride.
    pub nms_radius: Option<f64>,
    pub prob_floor: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid_size: 3,
            patch_size: 32,
            embedding_dim: 32,
            conv_channels: [8, 16, 32],
            mean_field_iterations: 10,
            crf_enabled: true,
            indicator_convention: IndicatorConvention::Equal,
            freeze_coupling: false,
            learning_rate: 0.001,
            momentum: 0.9,
            batch_size: 20,
            epochs: 20,
            seed: 0,
            precision: Precision::F32,
            n_train_slides: 20,
            n_valid_slides: 5,
            n_test_slides: 5,
            slide_width: 2048,
            slide_height: 2048,
            n_tumor_blobs: 3,
            train_pos_patches: 2000,
            train_neg_patches: 2000,
            valid_pos_patches: 250,
            valid_neg_patches: 250,
            hard_negative_fraction: 0.5,
            boundary_radius: 64,
            stride: 64,
            nms_radius: None,
            prob_floor: 0.05,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(NcrfError::io(path))?;
        let cfg: RunConfig = serde_json::from_slice(&bytes).map_err(|e| NcrfError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            detail: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_layout().validate()?;
        if self.embedding_dim != self.conv_channels[2] {
            return Err(NcrfError::Config(format!(
                "embedding_dim {} must equal the last conv channel count {}",
                self.embedding_dim, self.conv_channels[2]
            )));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(NcrfError::Config("learning_rate must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NcrfError::Config("momentum must be in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(NcrfError::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.hard_negative_fraction) {
            return Err(NcrfError::Config("hard_negative_fraction must be in [0, 1]".into()));
        }
        if self.stride == 0 {
            return Err(NcrfError::Config("stride must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.prob_floor) {
            return Err(NcrfError::Config("prob_floor must be in [0, 1)".into()));
        }
        if let Some(r) = self.nms_radius {
            if r <= 0.0 {
                return Err(NcrfError::Config("nms_radius must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn model_layout(&self) -> ModelLayout {
        ModelLayout {
            grid_side: self.grid_size,
            patch_size: self.patch_size,
            channels: self.conv_channels,
            crf: self.crf_enabled,
        }
    }

    pub fn synth_params(&self) -> SynthParams {
        SynthParams {
            width: self.slide_width,
            height: self.slide_height,
            n_tumor_blobs: self.n_tumor_blobs,
            ..SynthParams::default()
        }
    }

    pub fn super_patch_side(&self) -> usize {
        self.grid_size * self.patch_size
    }

    pub fn nms_radius_px(&self) -> f64 {
        self.nms_radius.unwrap_or(2.0 * self.stride as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the serialized config; recorded next to every output.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_json().as_bytes());
        hex_string(&hasher.finalize())
    }

    /// Echo `config.json` and its hash into an output directory.
    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(NcrfError::io(dir))?;
        let json = self.to_json();
        let cfg_path = dir.join("config.json");
        std::fs::write(&cfg_path, &json).map_err(NcrfError::io(&cfg_path))?;
        let hash_path = dir.join("config.sha256");
        std::fs::write(&hash_path, format!("{}\n", self.hash())).map_err(NcrfError::io(&hash_path))
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Splitmix64-style seed derivation so each consumer (slide k, epoch
/// shuffle, per-sample augmentation) gets an independent deterministic
/// stream from the run seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = base ^ 0x9e37_79b9_7f4a_7c15;
    for &t in tags {
        state = state.wrapping_add(t).wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        state = z ^ (z >> 31);
    }
    state
}
