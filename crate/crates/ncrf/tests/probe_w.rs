// temporary diagnostic, deleted after use
use ncrf::checkpoint::load_raw;

#[test]
#[ignore]
fn probe_w_per_epoch() {
    let dir = std::env::var("PROBE_DIR").unwrap();
    for e in 1..=10 {
        let p = std::path::PathBuf::from(&dir).join(format!("checkpoint_epoch_{e:03}.ncrf"));
        if !p.exists() { continue; }
        let raw = load_raw(&p).unwrap();
        let (_, w) = &raw["crf.w"];
        let max = w.iter().fold(0f32, |m, &v| m.max(v.abs()));
        let mean: f32 = w.iter().map(|v| v.abs()).sum::<f32>() / w.len() as f32;
        println!("epoch {e}: |w| max {max:.5} mean {mean:.5}");
    }
}
