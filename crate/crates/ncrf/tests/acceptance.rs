//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured values (run with `--nocapture` to see them). Criteria 8-10
//! share a set of training runs and live in one test.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ncrf::checkpoint;
use ncrf::commands::{cmd_gradcheck, cmd_synth, cmd_train};
use ncrf::config::RunConfig;
use ncrf::detect::froc::{connected_components, froc, FrocCurve, LesionSet, TARGET_FP_RATES};
use ncrf::detect::infer::{infer_probability_map, InferenceSettings};
use ncrf::detect::nms::{nms, Detection};
use ncrf::detect::ProbabilityMap;
use ncrf::model::ModelParams;
use ncrf::numerics::{NodeId, Tape, Tensor};
use ncrf::slides::otsu::{histogram, otsu_from_histogram};
use ncrf::slides::{load_split, Mask, Raster, SlideManifest, Split};
use ncrf::crf::exact::{exact_marginals, kl_to_exact};
use ncrf::crf::mean_field::{marginal_values, mean_field, mean_field_observed, PairwiseDistances};
use ncrf::crf::{
    pair_count, pair_index, softmax2, IndicatorConvention, Marginals, SymmetricDistances,
    UnaryPotentials,
};

const EQ: IndicatorConvention = IndicatorConvention::Equal;

fn report(criterion: usize, name: &str, detail: &str) {
    println!("[acceptance] criterion {criterion:02} ({name}): PASS - {detail}");
}

fn rand_psi(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> UnaryPotentials {
    UnaryPotentials::new((0..n).map(|_| [rng.gen_range(lo..hi), rng.gen_range(lo..hi)]).collect())
}

fn rand_dists(rng: &mut ChaCha8Rng, n: usize, max_abs: f64) -> SymmetricDistances {
    let pairs: Vec<f64> = (0..pair_count(n)).map(|_| rng.gen_range(-max_abs..max_abs)).collect();
    SymmetricDistances::from_pairs(n, &pairs).unwrap()
}

fn run_mean_field_f64(
    psi: &UnaryPotentials,
    d: &SymmetricDistances,
    iterations: usize,
) -> Marginals {
    let mut tape = Tape::<f64>::new();
    let ids: Vec<NodeId> = psi
        .rows()
        .iter()
        .map(|row| tape.constant(Tensor::new(vec![2], row.to_vec()).unwrap()).unwrap())
        .collect();
    let dists = PairwiseDistances::from_matrix(&mut tape, d).unwrap();
    let q = mean_field(&mut tape, &ids, &dists, iterations, EQ).unwrap();
    marginal_values(&tape, &q)
}

// --------------------------------------------------------------------------
// 1. zero-coupling equivalence

#[test]
fn criterion_01_zero_coupling_equivalence() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let n = 9;
    let dim = 8;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        // production route in f32: embeddings + zero coupling weights
        let logits: Vec<[f64; 2]> =
            (0..n).map(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect();
        let mut tape = Tape::<f32>::new();
        let emb: Vec<NodeId> = (0..n)
            .map(|_| {
                let data: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
                tape.constant(Tensor::new(vec![dim], data).unwrap()).unwrap()
            })
            .collect();
        let coupling = tape.param(Tensor::zeros(vec![pair_count(n)])).unwrap();
        let dists = PairwiseDistances::from_embeddings(&mut tape, &emb, coupling).unwrap();
        let psi: Vec<NodeId> = logits
            .iter()
            .map(|l| {
                tape.constant(Tensor::new(vec![2], vec![-l[0] as f32, -l[1] as f32]).unwrap())
                    .unwrap()
            })
            .collect();
        for &iters in &[0usize, 1, 10] {
            let q = mean_field(&mut tape, &psi, &dists, iters, EQ).unwrap();
            let q = marginal_values(&tape, &q);
            for (i, l) in logits.iter().enumerate() {
                let sm = softmax2(l);
                worst = worst.max((q.row(i)[0] - sm[0]).abs()).max((q.row(i)[1] - sm[1]).abs());
            }
        }
    }
    assert!(worst <= 1e-6, "L_inf {worst}");
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 1.0, "took {dt:.2}s, budget 1s");
    report(1, "zero-coupling equivalence", &format!("L_inf {worst:.2e} over 100 instances x T in {{0,1,10}}, {dt:.2}s"));
}

// --------------------------------------------------------------------------
// 2. mean-field vs exact enumeration

#[test]
fn criterion_02_mean_field_matches_exact_enumeration() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_linf = 0.0f64;
    let mut argmax_match = 0usize;
    let total = 200;
    for _ in 0..total {
        let psi = rand_psi(&mut rng, 9, -2.0, 2.0);
        let d = rand_dists(&mut rng, 9, 0.2);
        let q = run_mean_field_f64(&psi, &d, 10);
        let (exact, _) = exact_marginals(&psi, &d, EQ).unwrap();
        let linf = q.linf_distance(&exact);
        worst_linf = worst_linf.max(linf);
        assert!(linf <= 0.05, "instance L_inf {linf}");
        if (0..9).all(|i| q.argmax(i) == exact.argmax(i)) {
            argmax_match += 1;
        }
    }
    assert!(
        argmax_match * 100 >= 95 * total,
        "argmax agreement {argmax_match}/{total}"
    );

    // hand-enumerated two-site fixture: psi = 0, d01 = ln 2 gives Z = 3 and
    // marginals exactly 1/2
    let psi = UnaryPotentials::new(vec![[0.0, 0.0], [0.0, 0.0]]);
    let mut d = SymmetricDistances::zeros(2);
    d.set(0, 1, std::f64::consts::LN_2);
    let (q, log_z) = exact_marginals(&psi, &d, EQ).unwrap();
    assert!((log_z - 3.0f64.ln()).abs() <= 1e-12);
    for i in 0..2 {
        assert!((q.row(i)[0] - 0.5).abs() <= 1e-12);
    }

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 10.0, "took {dt:.2}s, budget 10s");
    report(
        2,
        "mean-field oracle agreement",
        &format!("worst L_inf {worst_linf:.4}, argmax match {argmax_match}/{total}, N=2 fixture to 1e-12, {dt:.2}s"),
    );
}

// --------------------------------------------------------------------------
// 3. monotone KL descent

#[test]
fn criterion_03_monotone_kl() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_rise = f64::NEG_INFINITY;
    for _ in 0..50 {
        let psi = rand_psi(&mut rng, 9, -2.0, 2.0);
        let d = rand_dists(&mut rng, 9, 0.5);
        let mut tape = Tape::<f64>::new();
        let ids: Vec<NodeId> = psi
            .rows()
            .iter()
            .map(|row| tape.constant(Tensor::new(vec![2], row.to_vec()).unwrap()).unwrap())
            .collect();
        let dists = PairwiseDistances::from_matrix(&mut tape, &d).unwrap();
        let mut kls = Vec::with_capacity(91);
        mean_field_observed(&mut tape, &ids, &dists, 10, EQ, &mut |m| {
            kls.push(kl_to_exact(m, &psi, &d, EQ).unwrap());
        })
        .unwrap();
        assert_eq!(kls.len(), 1 + 10 * 9);
        for pair in kls.windows(2) {
            worst_rise = worst_rise.max(pair[1] - pair[0]);
            assert!(
                pair[1] <= pair[0] + 1e-10,
                "KL rose from {} to {}",
                pair[0],
                pair[1]
            );
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 30.0, "took {dt:.2}s, budget 30s");
    report(
        3,
        "monotone KL",
        &format!("50 N=9 instances, 10 sweeps, worst single-update rise {worst_rise:.2e}, {dt:.2}s"),
    );
}

// --------------------------------------------------------------------------
// 4. gradient correctness

#[test]
fn criterion_04_gradient_check() {
    let t0 = Instant::now();
    let cfg = RunConfig::default();
    let mut worst: (f64, &str, u64) = (0.0, "", 0);
    for seed in 0..10 {
        let rep = cmd_gradcheck(&cfg, seed, 32).unwrap();
        assert!(
            rep.passed(),
            "seed {seed}: {:?}",
            rep.groups.iter().map(|g| (g.name, g.max_rel_err)).collect::<Vec<_>>()
        );
        for g in &rep.groups {
            if g.max_rel_err > worst.0 {
                worst = (g.max_rel_err, g.name, seed);
            }
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 120.0, "took {dt:.2}s, budget 2min");
    report(
        4,
        "gradient correctness",
        &format!("10 seeds, all groups <= 1e-3; worst {:.2e} ({} group, seed {}), {dt:.2}s", worst.0, worst.1, worst.2),
    );
}

// --------------------------------------------------------------------------
// 5. FROC oracle

/// Brute-force recount: for every distinct threshold, re-derive detected
/// lesions and false positives from scratch, then apply the step rule.
fn froc_recount_oracle(slides: &[(Vec<Detection>, &LesionSet)]) -> FrocCurve {
    let n_slides = slides.len();
    let total: usize = slides.iter().map(|(_, l)| l.count).sum();
    let mut thresholds: Vec<f32> = slides.iter().flat_map(|(d, _)| d.iter().map(|x| x.prob)).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    let mut points = vec![(0.0, 0.0)];
    for &t in &thresholds {
        let mut found = std::collections::HashSet::new();
        let mut fp = 0usize;
        for (si, (dets, lesions)) in slides.iter().enumerate() {
            for d in dets.iter().filter(|d| d.prob >= t) {
                match lesions.lesion_at(d.x, d.y) {
                    Some(id) => {
                        found.insert((si, id));
                    }
                    None => fp += 1,
                }
            }
        }
        points.push((fp as f64 / n_slides as f64, found.len() as f64 / total as f64));
    }
    let average = TARGET_FP_RATES
        .iter()
        .map(|&target| {
            points
                .iter()
                .filter(|(f, _)| *f <= target)
                .map(|&(_, s)| s)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 6.0;
    FrocCurve { points, average }
}

fn rect_mask(w: usize, h: usize, rects: &[(usize, usize, usize, usize)]) -> Mask {
    let mut m = Mask::empty(w, h);
    for &(x0, y0, x1, y1) in rects {
        for y in y0..y1 {
            for x in x0..x1 {
                m.set(x, y, true);
            }
        }
    }
    m
}

#[test]
fn criterion_05_froc_oracle() {
    let t0 = Instant::now();

    // perfect detector scores exactly 1.0
    let mask = rect_mask(100, 100, &[(10, 10, 20, 20), (50, 50, 70, 70)]);
    let lesions = connected_components(&mask);
    let perfect = vec![
        Detection { x: 12, y: 12, prob: 0.9 },
        Detection { x: 60, y: 60, prob: 0.7 },
    ];
    assert_eq!(froc(&[(perfect, &lesions)]).unwrap().average, 1.0);

    // empty detections score exactly 0.0; zero lesions is an error
    assert_eq!(froc(&[(vec![], &lesions)]).unwrap().average, 0.0);
    let none = connected_components(&Mask::empty(10, 10));
    assert!(froc(&[(vec![], &none)]).is_err());

    // half-sensitivity fixture: one hit on one of two lesions -> 0.5000
    let one_hit = vec![Detection { x: 12, y: 12, prob: 0.9 }];
    let half = froc(&[(one_hit, &lesions)]).unwrap();
    assert_eq!(format!("{:.4}", half.average), "0.5000");

    // random instances match the per-threshold recount oracle exactly
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for _ in 0..30 {
        let n_slides = rng.gen_range(1..4);
        let mut lesion_sets = Vec::new();
        let mut det_lists = Vec::new();
        for _ in 0..n_slides {
            let mut rects = Vec::new();
            for _ in 0..rng.gen_range(0..4) {
                let x0 = rng.gen_range(0..80);
                let y0 = rng.gen_range(0..80);
                rects.push((x0, y0, x0 + rng.gen_range(3..15), y0 + rng.gen_range(3..15)));
            }
            lesion_sets.push(connected_components(&rect_mask(100, 100, &rects)));
            let dets: Vec<Detection> = (0..rng.gen_range(0..20))
                .map(|_| Detection {
                    x: rng.gen_range(0..100),
                    y: rng.gen_range(0..100),
                    // coarse probabilities so ties are common
                    prob: (rng.gen_range(1..10) as f32) / 10.0,
                })
                .collect();
            det_lists.push(dets);
        }
        let total: usize = lesion_sets.iter().map(|l| l.count).sum();
        let pairs: Vec<(Vec<Detection>, &LesionSet)> =
            det_lists.into_iter().zip(lesion_sets.iter()).collect();
        if total == 0 {
            assert!(froc(&pairs).is_err());
            continue;
        }
        let fast = froc(&pairs).unwrap();
        let slow = froc_recount_oracle(&pairs);
        assert_eq!(fast.points, slow.points);
        assert_eq!(fast.average, slow.average);
    }

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 1.0, "took {dt:.2}s, budget 1s");
    report(5, "froc oracle", &format!("fixtures exact (1.0 / 0.0+error / 0.5000), 30 random recounts equal, {dt:.2}s"));
}

// --------------------------------------------------------------------------
// 6. NMS properties

#[test]
fn criterion_06_nms_properties() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for trial in 0..100 {
        let nx = rng.gen_range(3..14);
        let ny = rng.gen_range(3..14);
        let stride = rng.gen_range(8..40);
        let mut map = ProbabilityMap::unevaluated((stride / 2, stride / 2), stride, nx, ny);
        for iy in 0..ny {
            for ix in 0..nx {
                if rng.gen_bool(0.85) {
                    // quantized so equal probabilities occur
                    map.set(ix, iy, (rng.gen_range(0..=20) as f32) / 20.0);
                }
            }
        }
        let radius = rng.gen_range(1.2..3.5) * stride as f64;
        let floor = rng.gen_range(0.05..0.3);
        let out = nms(&map, radius, floor).unwrap();

        // pairwise distances >= radius, probabilities non-increasing
        for (a, d1) in out.iter().enumerate() {
            assert!(d1.prob as f64 >= floor);
            for d2 in &out[a + 1..] {
                let dx = d1.x as f64 - d2.x as f64;
                let dy = d1.y as f64 - d2.y as f64;
                assert!(
                    (dx * dx + dy * dy).sqrt() >= radius,
                    "trial {trial}: emitted points closer than the radius"
                );
            }
        }
        for pair in out.windows(2) {
            assert!(pair[0].prob >= pair[1].prob);
        }

        // removing an emitted point never introduces a new point closer
        // than the radius to one emitted before it
        for (k, removed) in out.iter().enumerate().take(6) {
            let mut reduced = map.clone();
            let ix = (removed.x - map.origin.0) / stride;
            let iy = (removed.y - map.origin.1) / stride;
            let idx = reduced.idx(ix, iy);
            reduced.probs[idx] = 0.0;
            reduced.evaluated[idx] = false;
            let out2 = nms(&reduced, radius, floor).unwrap();
            for p in &out2 {
                let is_new = !out.iter().any(|o| o.x == p.x && o.y == p.y);
                if !is_new {
                    continue;
                }
                for earlier in &out[..k] {
                    let dx = p.x as f64 - earlier.x as f64;
                    let dy = p.y as f64 - earlier.y as f64;
                    assert!(
                        (dx * dx + dy * dy).sqrt() >= radius,
                        "trial {trial}: removal surfaced a conflicting point"
                    );
                }
            }
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 5.0, "took {dt:.2}s, budget 5s");
    report(6, "nms properties", &format!("100 random maps: spacing, ordering, removal stability, {dt:.2}s"));
}

// --------------------------------------------------------------------------
// 7. Otsu oracle

/// Independent exhaustive argmax over all 256 candidate splits.
fn otsu_oracle(hist: &[u64; 256]) -> Option<u8> {
    let mut best: Option<(f64, u8)> = None;
    for t in 0..=255usize {
        let (mut n0, mut n1, mut s0, mut s1) = (0u64, 0u64, 0f64, 0f64);
        for v in 0..256usize {
            if v < t {
                n0 += hist[v];
                s0 += v as f64 * hist[v] as f64;
            } else {
                n1 += hist[v];
                s1 += v as f64 * hist[v] as f64;
            }
        }
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let total = (n0 + n1) as f64;
        let (mu0, mu1) = (s0 / n0 as f64, s1 / n1 as f64);
        let var = (n0 as f64 / total) * (n1 as f64 / total) * (mu0 - mu1) * (mu0 - mu1);
        if var > 0.0 && best.map_or(true, |(bv, _)| var > bv) {
            best = Some((var, t as u8));
        }
    }
    best.map(|(_, t)| t)
}

#[test]
fn criterion_07_otsu_oracle() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for trial in 0..100 {
        let mut hist = [0u64; 256];
        match trial % 3 {
            // dense uniform counts
            0 => hist.iter_mut().for_each(|h| *h = rng.gen_range(0..1000)),
            // sparse histogram
            1 => {
                for _ in 0..rng.gen_range(2..20) {
                    hist[rng.gen_range(0..256)] = rng.gen_range(1..500);
                }
            }
            // bimodal
            _ => {
                for _ in 0..2 {
                    let c = rng.gen_range(20..236) as i64;
                    for dv in -15i64..=15 {
                        let v = (c + dv).clamp(0, 255) as usize;
                        hist[v] += rng.gen_range(0..200);
                    }
                }
            }
        }
        assert_eq!(otsu_from_histogram(&hist), otsu_oracle(&hist), "trial {trial}");
    }
    // and on a real raster path
    let mut pixels = vec![60u8; 500];
    pixels.extend(vec![190u8; 524]);
    let raster = Raster::new(32, 32, pixels).unwrap();
    assert_eq!(otsu_from_histogram(&histogram(&raster)), otsu_oracle(&histogram(&raster)));

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 1.0, "took {dt:.2}s, budget 1s");
    report(7, "otsu oracle", &format!("100 random histograms equal the exhaustive argmax, {dt:.2}s"));
}

// --------------------------------------------------------------------------
// 8 + 9 + 10. end-to-end: accuracy ordering, map smoothness, weight locality

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values[values.len() / 2]
}

#[test]
fn criterion_08_09_10_end_to_end() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.epochs = 5;

    let synth = cmd_synth(&cfg, &dir.path().join("data")).unwrap();
    assert_eq!(synth.n_slides, 30);

    // 5 matched seeds, both arms
    let mut crf_best = Vec::new();
    let mut base_best = Vec::new();
    let mut crf_ckpts = Vec::new();
    let mut base_ckpts = Vec::new();
    for seed in 0..5u64 {
        let mut c = cfg.clone();
        c.seed = seed;
        let crf_run = cmd_train(&c, &dir.path().join("data"), &dir.path().join(format!("crf_{seed}"))).unwrap();
        let mut b = c.clone();
        b.crf_enabled = false;
        let base_run = cmd_train(&b, &dir.path().join("data"), &dir.path().join(format!("base_{seed}"))).unwrap();
        println!(
            "[acceptance]   seed {seed}: best valid accuracy crf {:.4} vs baseline {:.4}",
            crf_run.best_valid_accuracy, base_run.best_valid_accuracy
        );
        crf_best.push(crf_run.best_valid_accuracy);
        base_best.push(base_run.best_valid_accuracy);
        crf_ckpts.push(crf_run.final_checkpoint);
        base_ckpts.push(base_run.final_checkpoint);
    }
    let crf_median = median(&mut crf_best.clone());
    let base_median = median(&mut base_best.clone());
    let train_time = t0.elapsed().as_secs_f64();
    assert!(train_time < 900.0, "criterion 8 took {train_time:.0}s, budget 15min");
    assert!(
        crf_median >= base_median,
        "median accuracy: crf {crf_median:.4} < baseline {base_median:.4}"
    );
    assert!(crf_median > 0.5, "accuracy {crf_median:.4} not above chance");
    report(
        8,
        "accuracy ordering",
        &format!("median best valid accuracy crf {crf_median:.4} >= baseline {base_median:.4}, {train_time:.0}s"),
    );

    // criterion 9: probability-map smoothness on the 5 test slides,
    // slide k scored with the seed-k checkpoints of both arms
    let t9 = Instant::now();
    let manifest_path = dir.path().join("data").join("manifest.json");
    let manifest = SlideManifest::load(&manifest_path).unwrap();
    let test_slides = load_split(&manifest_path, &manifest, Split::Test).unwrap();
    assert_eq!(test_slides.len(), 5);
    let settings = InferenceSettings {
        stride: cfg.stride,
        iterations: cfg.mean_field_iterations,
        convention: cfg.indicator_convention,
    };
    let mut crf_tv = Vec::new();
    let mut base_tv = Vec::new();
    for (k, slide) in test_slides.iter().enumerate() {
        let mut layout = cfg.model_layout();
        let crf_params = checkpoint::load_model(&crf_ckpts[k], &layout).unwrap();
        layout.crf = false;
        let base_params = checkpoint::load_model(&base_ckpts[k], &layout).unwrap();
        let m_crf = infer_probability_map(&crf_params, &slide.raster, &slide.tissue, &settings).unwrap();
        let m_base = infer_probability_map(&base_params, &slide.raster, &slide.tissue, &settings).unwrap();
        println!(
            "[acceptance]   slide {k}: total variation crf {:.6} vs baseline {:.6}",
            m_crf.total_variation(),
            m_base.total_variation()
        );
        crf_tv.push(m_crf.total_variation());
        base_tv.push(m_base.total_variation());
    }
    let tv_crf_median = median(&mut crf_tv.clone());
    let tv_base_median = median(&mut base_tv.clone());
    let map_time = t9.elapsed().as_secs_f64();
    assert!(map_time < 600.0, "criterion 9 took {map_time:.0}s, budget 10min");
    assert!(
        tv_crf_median <= tv_base_median,
        "median total variation: crf {tv_crf_median:.6} > baseline {tv_base_median:.6}"
    );
    report(
        9,
        "map smoothness",
        &format!("median total variation crf {tv_crf_median:.6} <= baseline {tv_base_median:.6}, {map_time:.0}s"),
    );

    // criterion 10 (soft): locality of the learned coupling weights
    let n = cfg.grid_size * cfg.grid_size;
    let mut favorable = 0;
    for (seed, ckpt) in crf_ckpts.iter().enumerate() {
        let params = checkpoint::load_model(ckpt, &cfg.model_layout()).unwrap();
        let w = params.coupling().unwrap().data();
        let (mut adj_sum, mut adj_n, mut diag_sum, mut diag_n) = (0.0f64, 0, 0.0f64, 0);
        for i in 0..n {
            for j in (i + 1)..n {
                let (ri, ci) = (i / cfg.grid_size, i % cfg.grid_size);
                let (rj, cj) = (j / cfg.grid_size, j % cfg.grid_size);
                let (dr, dc) = (ri.abs_diff(rj), ci.abs_diff(cj));
                let v = w[pair_index(n, i, j)] as f64;
                if dr + dc == 1 {
                    adj_sum += v;
                    adj_n += 1;
                } else if dr == 1 && dc == 1 {
                    diag_sum += v;
                    diag_n += 1;
                }
            }
        }
        let (adj, diag) = (adj_sum / adj_n as f64, diag_sum / diag_n as f64);
        if adj > diag {
            favorable += 1;
        }
        println!(
            "[acceptance]   seed {seed}: mean w 4-adjacent {adj:.6} vs diagonal {diag:.6} ({})",
            if adj > diag { "adjacent larger" } else { "diagonal larger" }
        );
    }
    // soft expectation: outcome is logged either way
    report(
        10,
        "coupling locality (soft)",
        &format!("adjacent mean exceeded diagonal mean in {favorable}/5 seeds (expectation: >= 3)"),
    );
}

// --------------------------------------------------------------------------
// 11. checkpoint round trip and cross-arm refusal

#[test]
fn criterion_11_checkpoint_round_trip_and_refusal() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let layout = cfg.model_layout();

    let params = ModelParams::<f32>::init(layout.clone(), 42).unwrap();
    let a = dir.path().join("a.ncrf");
    let b = dir.path().join("b.ncrf");
    checkpoint::save(&a, &params).unwrap();
    let loaded = checkpoint::load_model(&a, &layout).unwrap();
    checkpoint::save(&b, &loaded).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    // a baseline checkpoint is refused by CRF inference with a header error
    let mut base_layout = layout.clone();
    base_layout.crf = false;
    let base = ModelParams::<f32>::init(base_layout, 42).unwrap();
    let c = dir.path().join("base.ncrf");
    checkpoint::save(&c, &base).unwrap();
    let err = checkpoint::load_model(&c, &layout).unwrap_err().to_string();
    assert!(err.contains("crf.w") && err.contains("--no-crf"), "refusal message: {err}");

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 1.0, "took {dt:.2}s, budget 1s");
    report(
        11,
        "checkpoint round trip",
        &format!("save-load-save byte-identical; baseline checkpoint refused with header error, {dt:.2}s"),
    );
}
