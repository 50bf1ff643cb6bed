//! Patch feature extractor: a small conv stack whose global-average-pooled
//! activations are the patch embedding, plus the affine head that produces
//! the two class logits feeding the CRF's unary potentials.

use crate::error::{NcrfError, Result};
use crate::model::{ModelNodes, CONV_STAGES};
use crate::numerics::{NodeId, Scalar, Tape, Tensor};

/// A g-by-g grid of patches cropped around one slide coordinate, with one
/// label per patch when the crop came from an annotated slide.
#[derive(Debug, Clone)]
pub struct SuperPatch {
    pub pixels: Vec<u8>,
    pub side: usize,
    pub grid: usize,
    pub patch: usize,
    /// Per-patch labels in raster order, if known.
    pub labels: Option<Vec<u8>>,
    /// Center coordinate on the source slide (x, y).
    pub center: (usize, usize),
}

impl SuperPatch {
    pub fn new(
        pixels: Vec<u8>,
        grid: usize,
        patch: usize,
        labels: Option<Vec<u8>>,
        center: (usize, usize),
    ) -> Result<Self> {
        let side = grid * patch;
        if pixels.len() != side * side {
            return Err(NcrfError::Contract(format!(
                "super-patch needs {}x{} pixels, got {}",
                side,
                side,
                pixels.len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != grid * grid {
                return Err(NcrfError::Contract(format!(
                    "expected {} patch labels, got {}",
                    grid * grid,
                    l.len()
                )));
            }
        }
        Ok(SuperPatch { pixels, side, grid, patch, labels, center })
    }

    pub fn label_vec(&self) -> Option<Vec<usize>> {
        self.labels.as_ref().map(|l| l.iter().map(|&v| v as usize).collect())
    }
}

/// `(v - 128) / 128`, mapping 8-bit pixels into `[-1, 127/128]`.
pub fn normalize_pixels<F: Scalar>(raw: &[u8]) -> Vec<F> {
    raw.iter()
        .map(|&v| F::from_f64((v as f64 - 128.0) / 128.0))
        .collect()
}

/// Normalized `[1, p, p]` tensor for the patch at grid position (row, col).
pub fn patch_tensor<F: Scalar>(sp: &SuperPatch, row: usize, col: usize) -> Result<Tensor<F>> {
    let p = sp.patch;
    let mut data = Vec::with_capacity(p * p);
    let top = row * p;
    let left = col * p;
    for y in 0..p {
        let offset = (top + y) * sp.side + left;
        data.extend(normalize_pixels::<F>(&sp.pixels[offset..offset + p]));
    }
    Tensor::new(vec![1, p, p], data)
}

/// conv3x3 + relu (+ 2x2 max pool after the first two stages), then global
/// average pooling: the embedding is the pooled activation vector.
pub fn embed_patch<F: Scalar>(
    tape: &mut Tape<F>,
    patch: NodeId,
    nodes: &ModelNodes,
) -> Result<NodeId> {
    let mut x = patch;
    for (stage, &(w, b)) in nodes.conv.iter().enumerate() {
        x = tape.conv2d(x, w, b, 1, 1)?;
        x = tape.relu(x)?;
        if stage + 1 < CONV_STAGES {
            x = tape.max_pool2(x)?;
        }
    }
    tape.global_avg_pool(x)
}

/// Two class logits from an embedding; `psi_u(l) = -logit[l]` downstream.
pub fn unary_logits<F: Scalar>(
    tape: &mut Tape<F>,
    embedding: NodeId,
    nodes: &ModelNodes,
) -> Result<NodeId> {
    tape.linear(embedding, nodes.head.0, nodes.head.1)
}

/// Embeddings and logits for every patch of a super-patch, raster order.
pub struct GridForward {
    pub embeddings: Vec<NodeId>,
    pub logits: Vec<NodeId>,
}

pub fn forward_grid<F: Scalar>(
    tape: &mut Tape<F>,
    sp: &SuperPatch,
    nodes: &ModelNodes,
) -> Result<GridForward> {
    let g = sp.grid;
    let mut embeddings = Vec::with_capacity(g * g);
    let mut logits = Vec::with_capacity(g * g);
    for row in 0..g {
        for col in 0..g {
            let input = tape.constant(patch_tensor(sp, row, col)?)?;
            let emb = embed_patch(tape, input, nodes)?;
            logits.push(unary_logits(tape, emb, nodes)?);
            embeddings.push(emb);
        }
    }
    Ok(GridForward { embeddings, logits })
}
