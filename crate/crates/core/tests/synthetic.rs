use jpop_core::data::{render_synthetic, ClipRecord, SyntheticSpec};
use jpop_core::eval::{auc, bootstrap_ci, BootstrapConfig, Metric, PredictionSet};
use jpop_core::imaging::Gray;
use jpop_core::par::ExecMode;

fn spec() -> SyntheticSpec {
    SyntheticSpec {
        train_per_class: 12,
        valid_per_class: 6,
        ..Default::default()
    }
}

fn rect_mean(g: &Gray, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> f64 {
    let n = rows.len() * cols.len();
    rows.flat_map(|r| cols.clone().map(move |c| (r, c)))
        .map(|(r, c)| g.get(r, c) as f64)
        .sum::<f64>()
        / n as f64
}

/// Strongest darkening of the band relative to its tile over the clip.
fn band_score(clip: &ClipRecord, s: &SyntheticSpec) -> f64 {
    let (r0, r1, c0, c1) = s.artifact.band_rect(s.frame_size);
    let (tr, tc, t) = s.artifact.tile_rect(s.frame_size);
    clip.frames
        .iter()
        .map(|f| rect_mean(f, tr..tr + t, tc..tc + t) - rect_mean(f, r0..r1, c0..c1))
        .fold(f64::MIN, f64::max)
}

#[test]
fn planted_band_is_detectable_by_a_threshold() {
    let s = spec();
    let clips = render_synthetic(&s, ExecMode::Parallel).unwrap();
    let labels: Vec<u8> = clips.iter().map(|c| c.label).collect();
    let scores: Vec<f64> = clips.iter().map(|c| band_score(c, &s)).collect();
    let a = auc(&PredictionSet::from_pairs(&labels, &scores).unwrap()).unwrap();
    assert!(a > 0.95, "threshold detector AUC {a}");
}

#[test]
fn sequential_and_parallel_paths_agree() {
    let s = spec();
    let seq = render_synthetic(&s, ExecMode::Sequential).unwrap();
    let par = render_synthetic(&s, ExecMode::Parallel).unwrap();
    assert_eq!(seq.len(), par.len());
    for (a, b) in seq.iter().zip(&par) {
        assert_eq!((&a.clip_id, a.label, &a.frames), (&b.clip_id, b.label, &b.frames));
    }
    let labels: Vec<u8> = seq.iter().map(|c| c.label).collect();
    let scores: Vec<f64> = seq.iter().map(|c| band_score(c, &s)).collect();
    let preds = PredictionSet::from_pairs(&labels, &scores).unwrap();
    let cfg = BootstrapConfig {
        n: 200,
        threshold: 0.1,
        ..Default::default()
    };
    for m in [Metric::Auc, Metric::Accuracy] {
        assert_eq!(
            bootstrap_ci(&preds, m, &cfg, ExecMode::Sequential).unwrap(),
            bootstrap_ci(&preds, m, &cfg, ExecMode::Parallel).unwrap()
        );
    }
}
