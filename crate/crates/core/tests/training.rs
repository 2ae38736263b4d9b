use jpop_core::data::{render_synthetic, Split, SyntheticSpec};
use jpop_core::models::{DownstreamModel, DownstreamModelConfig};
use jpop_core::par::ExecMode;
use jpop_core::training::{train_downstream, DownstreamTrainConfig, Monitor, TrainHooks};

#[test]
fn loss_monitor_keeps_the_lowest_validation_loss() {
    let spec = SyntheticSpec {
        frame_size: 32,
        train_per_class: 2,
        valid_per_class: 2,
        frames_min: 9,
        frames_max: 9,
        ..Default::default()
    };
    let clips = render_synthetic(&spec, ExecMode::Sequential).unwrap();
    let (train, val): (Vec<_>, Vec<_>) = clips.into_iter().partition(|c| c.split == Split::Train);
    let dcfg = DownstreamModelConfig {
        frame_size: 32,
        branch_filters: [4, 8],
        disc_narrow: 4,
        disc_wide: 8,
        fc_width: 8,
        ..Default::default()
    };
    let mut model = DownstreamModel::<f32>::build_init(&dcfg, 5).unwrap();
    let mut cfg = DownstreamTrainConfig {
        lr: 1e-3,
        max_epochs: 4,
        monitor: Monitor::Loss,
        ..Default::default()
    };
    cfg.early_stop.patience = 4;
    cfg.early_stop.min_delta = 0.0;
    let hooks = TrainHooks {
        out_dir: None,
        git_rev: None,
        on_epoch: None,
    };
    let out = train_downstream(&mut model, &train, &val, &cfg, hooks).unwrap();
    let losses: Vec<f64> = out.history.records.iter().map(|r| r.val_loss).collect();
    let best = (0..losses.len()).min_by(|&a, &b| losses[a].total_cmp(&losses[b])).unwrap();
    assert_eq!(out.best_epoch, best, "val losses {losses:?}");
    assert_eq!(out.best_metric, losses[best]);
}
