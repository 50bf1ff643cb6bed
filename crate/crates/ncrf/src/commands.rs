//! Command implementations behind the CLI binary; each is an ordinary
//! library function so integration tests drive them directly.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::config::{derive_seed, Precision, RunConfig};
use crate::detect::froc::{connected_components, froc, FrocCurve};
use crate::detect::infer::{infer_probability_map, InferenceSettings};
use crate::detect::nms::{load_detections, nms, save_detections};
use crate::detect::ProbabilityMap;
use crate::error::{NcrfError, Result};
use crate::extractor::SuperPatch;
use crate::model::{ModelParams, CONV_STAGES};
use crate::numerics::{finite_diff_check, Tape};
use crate::slides::synth::generate_synthetic_slide;
use crate::slides::{pgm, ManifestEntry, Provenance, SlideManifest, Split};
use crate::train::{forward_loss, train, TrainOutcome};

const TAG_SYNTH_SLIDE: u64 = 0x51;
const TAG_GRADCHECK_PIXELS: u64 = 0xA6;

pub struct SynthOutcome {
    pub manifest_path: PathBuf,
    pub n_slides: usize,
}

/// Generate slides + masks + manifest into `out_dir`.
pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<SynthOutcome> {
    cfg.validate()?;
    let footprint = cfg.super_patch_side();
    if cfg.n_train_slides + cfg.n_valid_slides + cfg.n_test_slides > 0
        && (cfg.slide_width < 8 * footprint || cfg.slide_height < 8 * footprint)
    {
        return Err(NcrfError::Config(format!(
            "slides {}x{} are too small; need at least 8x the {footprint}px super-patch",
            cfg.slide_width, cfg.slide_height
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(NcrfError::io(out_dir))?;
    cfg.echo_into(out_dir)?;

    let params = cfg.synth_params();
    let splits = [
        (Split::Train, cfg.n_train_slides),
        (Split::Valid, cfg.n_valid_slides),
        (Split::Test, cfg.n_test_slides),
    ];
    let mut entries = Vec::new();
    let mut global = 0u64;
    for (split, count) in splits {
        for i in 0..count {
            let name = format!("{split}_{i:03}");
            let slide_file = format!("{name}.pgm");
            let mask_file = format!("{name}.mask.pgm");
            let synthetic =
                generate_synthetic_slide(derive_seed(cfg.seed, &[TAG_SYNTH_SLIDE, global]), &params)?;
            pgm::write_pgm(&out_dir.join(&slide_file), &synthetic.raster)?;
            pgm::write_mask(&out_dir.join(&mask_file), &synthetic.tumor)?;
            entries.push(ManifestEntry { slide: slide_file, mask: mask_file, split });
            global += 1;
        }
    }
    let manifest = SlideManifest {
        slides: entries,
        provenance: Provenance { seed: cfg.seed, params },
    };
    let manifest_path = out_dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    Ok(SynthOutcome { manifest_path, n_slides: global as usize })
}

/// Train on a synthesized dataset; returns checkpoint path and accuracies.
pub fn cmd_train(cfg: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<TrainOutcome> {
    train(cfg, data_dir, out_dir)
}

pub struct InferOutcome {
    pub map_csv: PathBuf,
    pub map_pgm: PathBuf,
    pub evaluated_cells: usize,
}

/// Probability map for one slide from a trained checkpoint.
pub fn cmd_infer(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    slide_path: &Path,
    out_dir: &Path,
) -> Result<InferOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(NcrfError::io(out_dir))?;
    cfg.echo_into(out_dir)?;

    let params = checkpoint::load_model(checkpoint_path, &cfg.model_layout())?;
    let slide = pgm::read_pgm(slide_path)?;
    let tissue = crate::slides::otsu::otsu_threshold(&slide).tissue;
    let settings = InferenceSettings {
        stride: cfg.stride,
        iterations: cfg.mean_field_iterations,
        convention: cfg.indicator_convention,
    };
    let map = match cfg.precision {
        Precision::F32 => infer_probability_map(&params, &slide, &tissue, &settings)?,
        Precision::F64 => infer_probability_map(&params.cast::<f64>(), &slide, &tissue, &settings)?,
    };

    let stem = slide_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "slide".into());
    let map_csv = out_dir.join(format!("{stem}.map.csv"));
    let map_pgm = out_dir.join(format!("{stem}.map.pgm"));
    map.save(&map_csv)?;
    pgm::write_pgm(&map_pgm, &map.to_raster())?;
    Ok(InferOutcome { map_csv, map_pgm, evaluated_cells: map.evaluated_count() })
}

/// Non-maximum suppression over a stored probability map.
pub fn cmd_detect(cfg: &RunConfig, map_csv: &Path, out_dir: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(NcrfError::io(out_dir))?;
    let map = ProbabilityMap::load(map_csv)?;
    let radius = cfg.nms_radius.unwrap_or(2.0 * map.stride as f64);
    let detections = nms(&map, radius, cfg.prob_floor)?;

    let stem = map_csv
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "map.csv".into());
    let stem = stem.strip_suffix(".map.csv").unwrap_or(&stem).to_string();
    let out_path = out_dir.join(format!("{stem}.detections.csv"));
    save_detections(&out_path, &detections)?;
    Ok(out_path)
}

/// FROC score for per-slide detection CSVs against the manifest's masks.
pub fn cmd_froc(
    cfg: &RunConfig,
    detections_dir: &Path,
    manifest_path: &Path,
    split: Split,
    out_dir: &Path,
) -> Result<FrocCurve> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(NcrfError::io(out_dir))?;
    let manifest = SlideManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let mut lesion_sets = Vec::new();
    let mut detection_lists = Vec::new();
    for entry in manifest.slides.iter().filter(|e| e.split == split) {
        let mask = pgm::read_mask(&base.join(&entry.mask))?;
        let id = Path::new(&entry.slide)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| entry.slide.clone());
        let det_path = detections_dir.join(format!("{id}.detections.csv"));
        if !det_path.exists() {
            return Err(NcrfError::Contract(format!(
                "missing detections for slide {id}: {}",
                det_path.display()
            )));
        }
        detection_lists.push(load_detections(&det_path)?);
        lesion_sets.push(connected_components(&mask));
    }
    if lesion_sets.is_empty() {
        return Err(NcrfError::Contract(format!("manifest has no {split} slides")));
    }
    let pairs: Vec<_> = detection_lists.into_iter().zip(lesion_sets.iter()).collect();
    let curve = froc(&pairs)?;
    curve.save(&out_dir.join("froc.csv"))?;
    Ok(curve)
}

pub struct GradcheckGroup {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub checked: usize,
}

pub struct GradcheckReport {
    pub groups: Vec<GradcheckGroup>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_err <= self.tolerance)
    }
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-3;
const GRADCHECK_EPSILON: f64 = 1e-5;

/// Central-difference verification of the full-model gradient on a random
/// grid instance, reported per parameter role (conv, head, coupling).
///
/// The instance gives each patch its own intensity level and draws nonzero
/// coupling weights, so every parameter group sees a well-conditioned
/// gradient (identical patches would leave `w` with a vanishing one).
///
/// Always runs in f64. `samples_per_group = 0` checks every coordinate;
/// otherwise a seeded random subset of that size per role.
pub fn cmd_gradcheck(cfg: &RunConfig, seed: u64, samples_per_group: usize) -> Result<GradcheckReport> {
    cfg.validate()?;
    let layout = cfg.model_layout();
    let mut params = ModelParams::<f64>::init(layout.clone(), seed)?;

    // random super-patch and labels, fixed for all evaluations
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_GRADCHECK_PIXELS]));
    let side = layout.super_patch_side();
    let (g, p) = (layout.grid_side, layout.patch_size);
    let mut pixels = vec![0u8; side * side];
    for row in 0..g {
        for col in 0..g {
            let base: f64 = rng.gen_range(60.0..220.0);
            for y in 0..p {
                for x in 0..p {
                    let v = base + rng.gen_range(-40.0..40.0);
                    pixels[(row * p + y) * side + col * p + x] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    let labels: Vec<usize> = (0..layout.sites()).map(|_| rng.gen_range(0..2)).collect();
    let sp = SuperPatch::new(pixels, layout.grid_side, layout.patch_size, None, (0, 0))?;
    if let Some(w) = params.coupling_mut() {
        for v in w.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }

    let loss_of = |p: &ModelParams<f64>| -> Result<f64> {
        let mut tape = Tape::<f64>::new();
        let nodes = p.register(&mut tape, true)?;
        let (loss, _) = forward_loss(
            &mut tape,
            &nodes,
            &sp,
            &labels,
            cfg.mean_field_iterations,
            cfg.indicator_convention,
        )?;
        Ok(tape.value(loss).item())
    };

    // analytic gradients once, at the base point
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::<f64>::new();
        let nodes = params.register(&mut tape, true)?;
        let (loss, _) = forward_loss(
            &mut tape,
            &nodes,
            &sp,
            &labels,
            cfg.mean_field_iterations,
            cfg.indicator_convention,
        )?;
        let grads = tape.backward(loss)?;
        nodes.all.iter().map(|&id| grads.wrt(id).into_data()).collect()
    };

    // role -> group indices in canonical order
    let mut roles: Vec<(&'static str, Vec<usize>)> = vec![
        ("conv", (0..2 * CONV_STAGES).collect()),
        ("head", vec![2 * CONV_STAGES, 2 * CONV_STAGES + 1]),
    ];
    if layout.crf {
        roles.push(("w", vec![2 * CONV_STAGES + 2]));
    }

    let mut report = Vec::new();
    for (name, group_indices) in roles {
        // flat (group, offset) coordinates of this role
        let mut coords: Vec<(usize, usize)> = group_indices
            .iter()
            .flat_map(|&g| (0..params.groups()[g].numel()).map(move |off| (g, off)))
            .collect();
        if samples_per_group > 0 && samples_per_group < coords.len() {
            let mut pick_rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xC0, group_indices[0] as u64]));
            for i in 0..samples_per_group {
                let j = pick_rng.gen_range(i..coords.len());
                coords.swap(i, j);
            }
            coords.truncate(samples_per_group);
        }

        let base: Vec<f64> = coords
            .iter()
            .map(|&(g, off)| params.groups()[g].data()[off])
            .collect();
        let analytic_sub: Vec<f64> = coords.iter().map(|&(g, off)| analytic[g][off]).collect();
        let mut loss_fn = |values: &[f64]| -> Result<f64> {
            let mut perturbed = params.clone();
            for (&(g, off), &v) in coords.iter().zip(values) {
                perturbed.groups_mut()[g].data_mut()[off] = v;
            }
            loss_of(&perturbed)
        };
        let max_rel_err = finite_diff_check(&mut loss_fn, &base, &analytic_sub, GRADCHECK_EPSILON)?;
        report.push(GradcheckGroup { name, max_rel_err, checked: coords.len() });
    }
    Ok(GradcheckReport { groups: report, tolerance: GRADCHECK_TOLERANCE })
}
