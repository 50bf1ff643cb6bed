//! Sliding-grid probability map inference.
//!
//! For every stride-spaced cell whose super-patch footprint stays inside the
//! slide and whose center lies on tissue, run the extractor over the full
//! grid and write the CENTER patch's tumor marginal to the cell: mean-field
//! marginal with the CRF, plain softmax without. Cells are independent, so
//! the map is computed in parallel; results are written by index and are
//! identical to a serial evaluation.

use rayon::prelude::*;

use crate::detect::ProbabilityMap;
use crate::error::{NcrfError, Result};
use crate::extractor::forward_grid;
use crate::model::ModelParams;
use crate::numerics::{Scalar, Tape};
use crate::slides::{crop_superpatch, Mask, Raster};
use crate::crf::mean_field::{mean_field, PairwiseDistances};
use crate::crf::{GridSpec, IndicatorConvention};

#[derive(Debug, Clone, Copy)]
pub struct InferenceSettings {
    pub stride: usize,
    /// Mean-field sweeps; ignored in baseline (no-CRF) mode.
    pub iterations: usize,
    pub convention: IndicatorConvention,
}

/// Tumor probability of the center patch of the super-patch at `center`.
pub fn cell_probability<F: Scalar>(
    params: &ModelParams<F>,
    slide: &Raster,
    center: (usize, usize),
    settings: &InferenceSettings,
) -> Result<f32> {
    let layout = params.layout();
    let grid = GridSpec::new(layout.grid_side)?;
    let center_site = grid.center()?;
    let sp = crop_superpatch(slide, center, layout.grid_side, layout.patch_size)?;

    let mut tape = Tape::<F>::new();
    let nodes = params.register(&mut tape, false)?;
    let fwd = forward_grid(&mut tape, &sp, &nodes)?;
    let center_marginal = if layout.crf {
        let coupling = nodes.coupling.expect("crf layout has coupling");
        let psi: Vec<_> = fwd
            .logits
            .iter()
            .map(|&l| tape.neg(l))
            .collect::<Result<_>>()?;
        let dists = PairwiseDistances::from_embeddings(&mut tape, &fwd.embeddings, coupling)?;
        let q = mean_field(&mut tape, &psi, &dists, settings.iterations, settings.convention)?;
        q[center_site]
    } else {
        // same primitive chain as the mean-field initialization, so a
        // zero-coupling CRF map is bitwise identical to the baseline map
        let lq = tape.log_softmax(fwd.logits[center_site])?;
        tape.exp(lq)?
    };
    Ok(F::as_f64(tape.value(center_marginal).data()[1]) as f32)
}

/// Slide-level probability map at the given stride.
pub fn infer_probability_map<F: Scalar>(
    params: &ModelParams<F>,
    slide: &Raster,
    tissue: &Mask,
    settings: &InferenceSettings,
) -> Result<ProbabilityMap> {
    let layout = params.layout();
    if settings.stride == 0 {
        return Err(NcrfError::Contract("stride must be >= 1".into()));
    }
    if tissue.width != slide.width || tissue.height != slide.height {
        return Err(NcrfError::Contract("tissue mask does not match the slide".into()));
    }
    let footprint = layout.super_patch_side();
    if slide.width < footprint || slide.height < footprint {
        return Err(NcrfError::Contract(format!(
            "slide {}x{} is smaller than one {footprint}px super-patch",
            slide.width, slide.height
        )));
    }
    let half = footprint / 2;
    let nx = (slide.width - footprint) / settings.stride + 1;
    let ny = (slide.height - footprint) / settings.stride + 1;
    let mut map = ProbabilityMap::unevaluated((half, half), settings.stride, nx, ny);

    let cells: Vec<Option<f32>> = (0..nx * ny)
        .into_par_iter()
        .map(|i| {
            let (ix, iy) = (i % nx, i / nx);
            let center = map.cell_center(ix, iy);
            if !tissue.get(center.0, center.1) {
                return Ok(None);
            }
            cell_probability(params, slide, center, settings).map(Some)
        })
        .collect::<Result<_>>()?;

    for (i, cell) in cells.into_iter().enumerate() {
        if let Some(p) = cell {
            map.probs[i] = p;
            map.evaluated[i] = true;
        }
    }
    Ok(map)
}
