//! End-to-end training: sample super-patches, augment, run the extractor and
//! (unless disabled) unrolled mean-field inference, take the mean
//! cross-entropy over all grid patches, back-propagate, and apply SGD with
//! momentum. Batch members run on independent tapes in parallel; gradients
//! are reduced in slot order so runs are deterministic given (config, seed).

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{derive_seed, Precision, RunConfig};
use crate::error::{NcrfError, Result};
use crate::extractor::{forward_grid, SuperPatch};
use crate::metrics::MetricsWriter;
use crate::model::{ModelNodes, ModelParams};
use crate::numerics::{NodeId, Scalar, SgdMomentum, Tape, Tensor};
use crate::slides::sample::{sample_patches, PatchSample, SamplerConfig};
use crate::slides::{augment::augment, extract_superpatch, load_split, SlideData, SlideManifest, Split};
use crate::crf::mean_field::{crf_loss, marginal_values, mean_field, PairwiseDistances};
use crate::crf::IndicatorConvention;

// seed-derivation tags
const TAG_TRAIN_SAMPLES: u64 = 1;
const TAG_VALID_SAMPLES: u64 = 2;
const TAG_SHUFFLE: u64 = 3;
const TAG_AUGMENT: u64 = 4;

pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub best_valid_accuracy: f64,
    pub final_valid_accuracy: f64,
    /// (loss, accuracy) on the validation split after each epoch.
    pub per_epoch_valid: Vec<(f64, f64)>,
    pub steps: usize,
}

/// Marginals for one super-patch: mean-field when the CRF is enabled,
/// per-patch softmax otherwise, plus the mean cross-entropy loss node.
pub(crate) fn forward_loss<F: Scalar>(
    tape: &mut Tape<F>,
    nodes: &ModelNodes,
    sp: &SuperPatch,
    labels: &[usize],
    iterations: usize,
    convention: IndicatorConvention,
) -> Result<(NodeId, Vec<NodeId>)> {
    let fwd = forward_grid(tape, sp, nodes)?;
    let marginals = match nodes.coupling {
        Some(coupling) => {
            let psi: Vec<NodeId> = fwd.logits.iter().map(|&l| tape.neg(l)).collect::<Result<_>>()?;
            let dists = PairwiseDistances::from_embeddings(tape, &fwd.embeddings, coupling)?;
            mean_field(tape, &psi, &dists, iterations, convention)?
        }
        None => {
            let mut q = Vec::with_capacity(fwd.logits.len());
            for &l in &fwd.logits {
                let lq = tape.log_softmax(l)?;
                q.push(tape.exp(lq)?);
            }
            q
        }
    };
    let loss = crf_loss(tape, &marginals, labels)?;
    Ok((loss, marginals))
}

struct StepOutcome<F: Scalar> {
    loss: f64,
    correct: usize,
    total: usize,
    grads: Option<Vec<Tensor<F>>>,
}

fn run_sample<F: Scalar>(
    params: &ModelParams<F>,
    cfg: &RunConfig,
    slides: &HashMap<String, &SlideData>,
    sample: &PatchSample,
    augment_seed: Option<u64>,
    with_grads: bool,
) -> Result<StepOutcome<F>> {
    let slide = slides.get(&sample.slide).ok_or_else(|| NcrfError::Sampling {
        slide: sample.slide.clone(),
        detail: "sample references an unknown slide".into(),
    })?;
    let mut sp = extract_superpatch(
        &slide.raster,
        &slide.tumor,
        sample.center,
        cfg.grid_size,
        cfg.patch_size,
    )?;
    if let Some(seed) = augment_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sp = augment(&sp, &mut rng)?;
    }
    let labels = sp.label_vec().expect("training patches carry labels");

    let mut tape = Tape::<F>::new();
    let nodes = params.register(&mut tape, with_grads)?;
    let (loss, marginals) = forward_loss(
        &mut tape,
        &nodes,
        &sp,
        &labels,
        cfg.mean_field_iterations,
        cfg.indicator_convention,
    )?;
    let q = marginal_values(&tape, &marginals);
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(i, &l)| q.argmax(*i) == l)
        .count();

    let grads = if with_grads {
        let g = tape.backward(loss)?;
        Some(nodes.all.iter().map(|&id| g.wrt(id)).collect())
    } else {
        None
    };
    Ok(StepOutcome {
        loss: tape.value(loss).item().as_f64(),
        correct,
        total: labels.len(),
        grads,
    })
}

fn mean_grads<F: Scalar>(outcomes: &mut [StepOutcome<F>]) -> Vec<Tensor<F>> {
    let n = outcomes.len();
    let mut acc = outcomes[0].grads.take().expect("grads requested");
    for o in outcomes.iter_mut().skip(1) {
        let g = o.grads.take().expect("grads requested");
        for (a, b) in acc.iter_mut().zip(&g) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }
    let inv = F::from_f64(1.0 / n as f64);
    for t in &mut acc {
        for v in t.data_mut() {
            *v = *v * inv;
        }
    }
    acc
}

pub fn train(cfg: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<TrainOutcome> {
    match cfg.precision {
        Precision::F32 => train_impl::<f32>(cfg, data_dir, out_dir),
        Precision::F64 => train_impl::<f64>(cfg, data_dir, out_dir),
    }
}

fn train_impl<F: Scalar>(cfg: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(NcrfError::io(out_dir))?;
    cfg.echo_into(out_dir)?;

    let manifest_path = data_dir.join("manifest.json");
    let manifest = SlideManifest::load(&manifest_path)?;
    let train_slides = load_split(&manifest_path, &manifest, Split::Train)?;
    let valid_slides = load_split(&manifest_path, &manifest, Split::Valid)?;
    if train_slides.is_empty() {
        return Err(NcrfError::Config("manifest has no training slides".into()));
    }

    let footprint = cfg.super_patch_side();
    let train_list = sample_patches(
        &train_slides,
        &SamplerConfig {
            n_pos: cfg.train_pos_patches,
            n_neg: cfg.train_neg_patches,
            hard_fraction: cfg.hard_negative_fraction,
            boundary_radius: cfg.boundary_radius,
            footprint,
            seed: derive_seed(cfg.seed, &[TAG_TRAIN_SAMPLES]),
        },
    )?;
    let valid_list = sample_patches(
        &valid_slides,
        &SamplerConfig {
            n_pos: cfg.valid_pos_patches,
            n_neg: cfg.valid_neg_patches,
            hard_fraction: cfg.hard_negative_fraction,
            boundary_radius: cfg.boundary_radius,
            footprint,
            seed: derive_seed(cfg.seed, &[TAG_VALID_SAMPLES]),
        },
    )?;

    let train_lookup: HashMap<String, &SlideData> =
        train_slides.iter().map(|s| (s.id.clone(), s)).collect();
    let valid_lookup: HashMap<String, &SlideData> =
        valid_slides.iter().map(|s| (s.id.clone(), s)).collect();

    let mut params = ModelParams::<F>::init(cfg.model_layout(), cfg.seed)?;
    let group_sizes: Vec<usize> = params.groups().iter().map(|t| t.numel()).collect();
    let mut optimizer = SgdMomentum::new(
        F::from_f64(cfg.learning_rate),
        F::from_f64(cfg.momentum),
        &group_sizes,
    );
    let coupling_group = cfg.crf_enabled.then(|| group_sizes.len() - 1);

    let mut metrics = MetricsWriter::create(&out_dir.join("metrics.csv"))?;
    let mut step = 0usize;
    let mut best_valid_accuracy = 0.0f64;
    let mut per_epoch_valid = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_list.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[TAG_SHUFFLE, epoch as u64]));
        order.shuffle(&mut rng);

        for batch in order.chunks(cfg.batch_size) {
            let mut outcomes: Vec<StepOutcome<F>> = batch
                .par_iter()
                .map(|&idx| {
                    run_sample(
                        &params,
                        cfg,
                        &train_lookup,
                        &train_list[idx],
                        Some(derive_seed(cfg.seed, &[TAG_AUGMENT, step as u64, idx as u64])),
                        true,
                    )
                })
                .collect::<Result<_>>()?;

            let loss = outcomes.iter().map(|o| o.loss).sum::<f64>() / outcomes.len() as f64;
            if !loss.is_finite() {
                return Err(NcrfError::Training {
                    step,
                    detail: format!("non-finite batch loss {loss} in epoch {epoch}"),
                });
            }
            let correct: usize = outcomes.iter().map(|o| o.correct).sum();
            let total: usize = outcomes.iter().map(|o| o.total).sum();
            let mut grads = mean_grads(&mut outcomes);
            if cfg.freeze_coupling {
                if let Some(g) = coupling_group {
                    grads[g].data_mut().fill(F::zero());
                }
            }
            optimizer.step(params.groups_mut(), &grads)?;
            metrics.row(step, epoch, "train", loss, correct as f64 / total as f64)?;
            step += 1;
        }

        // held-out evaluation, no augmentation, no gradients
        let outcomes: Vec<StepOutcome<F>> = valid_list
            .par_iter()
            .map(|sample| run_sample(&params, cfg, &valid_lookup, sample, None, false))
            .collect::<Result<_>>()?;
        let vloss = outcomes.iter().map(|o| o.loss).sum::<f64>() / outcomes.len().max(1) as f64;
        let vcorrect: usize = outcomes.iter().map(|o| o.correct).sum();
        let vtotal: usize = outcomes.iter().map(|o| o.total).sum::<usize>().max(1);
        let vacc = vcorrect as f64 / vtotal as f64;
        metrics.row(step, epoch, "valid", vloss, vacc)?;
        per_epoch_valid.push((vloss, vacc));
        best_valid_accuracy = best_valid_accuracy.max(vacc);

        checkpoint_cast(&params, &out_dir.join(format!("checkpoint_epoch_{:03}.ncrf", epoch + 1)))?;
    }

    let final_checkpoint = out_dir.join("checkpoint_final.ncrf");
    checkpoint_cast(&params, &final_checkpoint)?;

    Ok(TrainOutcome {
        final_checkpoint,
        best_valid_accuracy,
        final_valid_accuracy: per_epoch_valid.last().map(|&(_, a)| a).unwrap_or(0.0),
        per_epoch_valid,
        steps: step,
    })
}

fn checkpoint_cast<F: Scalar>(params: &ModelParams<F>, path: &Path) -> Result<()> {
    // checkpoints are always f32 on disk
    crate::checkpoint::save(path, &params.cast::<f32>())
}
