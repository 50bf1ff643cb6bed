// temporary diagnostic, deleted after use
use ncrf::checkpoint;
use ncrf::config::RunConfig;
use ncrf::extractor::forward_grid;
use ncrf::numerics::Tape;
use ncrf::slides::{extract_superpatch, load_split, SlideManifest, Split};

#[test]
#[ignore]
fn probe_embedding_cosines() {
    let manifest_path = std::path::Path::new("/tmp/c8/data/manifest.json");
    let manifest = SlideManifest::load(manifest_path).unwrap();
    let slides = load_split(manifest_path, &manifest, Split::Valid).unwrap();
    let mut cfg = RunConfig::default();
    cfg.epochs = 5;
    let params = if std::env::var("PROBE_INIT").is_ok() {
        ncrf::model::ModelParams::<f32>::init(cfg.model_layout(), 0).unwrap()
    } else {
        checkpoint::load_model(
            std::path::Path::new("/tmp/c8/crf_s0/checkpoint_final.ncrf"),
            &cfg.model_layout(),
        )
        .unwrap()
    };
    println!("learned w: {:?}", params.coupling().unwrap().data());

    // find a boundary superpatch: center on a tumor edge
    let slide = &slides[0];
    let mut boundary_center = None;
    'outer: for y in (48..slide.raster.height - 48).step_by(16) {
        for x in (48..slide.raster.width - 48).step_by(16) {
            if slide.tumor.get(x, y) && !slide.tumor.get(x.saturating_sub(40), y) {
                boundary_center = Some((x, y));
                break 'outer;
            }
        }
    }
    let center = boundary_center.expect("some boundary");
    let sp = extract_superpatch(&slide.raster, &slide.tumor, center, 3, 32).unwrap();
    println!("labels: {:?}", sp.labels);

    let mut tape = Tape::<f32>::new();
    let nodes = params.register(&mut tape, false).unwrap();
    let fwd = forward_grid(&mut tape, &sp, &nodes).unwrap();
    for i in 0..9 {
        for j in (i + 1)..9 {
            let c = tape.cosine_similarity(fwd.embeddings[i], fwd.embeddings[j]).unwrap();
            let v = tape.value(c).item();
            if j == i + 1 || (i, j) == (0, 8) {
                println!("one_minus_cos[{i}][{j}] = {:.6}", 1.0 - v);
            }
        }
    }
    // logits spread
    for i in 0..9 {
        println!("logits[{i}] = {:?}", tape.value(fwd.logits[i]).data());
    }
}
