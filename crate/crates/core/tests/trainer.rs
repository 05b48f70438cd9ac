//! Training-loop behaviour on small synthetic data.

use sasreg::dataset::{Frame, FrameSource};
use sasreg::metrics::evaluate_dataset;
use sasreg::model::checkpoint::load_checkpoint;
use sasreg::model::ModelConfig;
use sasreg::scan_sim::SimulationPlan;
use sasreg::trainer::{train_step, TrainConfig, TrainState};

fn small_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        model: ModelConfig {
            c_s: 4,
            c_a: 4,
            base_channels: 4,
            levels: 2,
            appearance_channels: 4,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };
    cfg.optim.lr = 1e-3;
    cfg
}

fn frames(n: usize, seed: u64) -> Vec<Frame> {
    let plan = SimulationPlan {
        height: 32,
        width: 32,
        ..SimulationPlan::desk_scale(seed)
    };
    (0..n)
        .map(|i| {
            let (gt, pair) = plan.frame(i).unwrap();
            Frame::new(format!("f{i}"), pair.interleaved, FrameSource::Synthetic)
                .unwrap()
                .with_ground_truth(Some(sasreg::scan_sim::GroundTruthRecord::from_ground_truth(&gt)))
        })
        .collect()
}

#[test]
fn overfits_a_fixed_batch() {
    let cfg = small_config();
    let batch = frames(2, 5);
    let mut state = TrainState::new(&cfg).unwrap();
    let weights = cfg.effective_weights();
    let first = train_step(&mut state, &batch, &weights).unwrap().total;
    let mut last = first;
    for _ in 0..49 {
        last = train_step(&mut state, &batch, &weights).unwrap().total;
    }
    assert_eq!(state.step, 50);
    assert!(last < first, "loss went from {first} to {last}");
}

#[test]
fn checkpoint_roundtrip_preserves_metrics() {
    let cfg = small_config();
    let batch = frames(3, 8);
    let mut state = TrainState::new(&cfg).unwrap();
    let weights = cfg.effective_weights();
    for _ in 0..3 {
        train_step(&mut state, &batch, &weights).unwrap();
    }
    let before = evaluate_dataset("m", &batch, &state.net).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let blob = dir.path().join("m.sasw");
    state.save(&blob, &cfg).unwrap();
    let (net, meta) = load_checkpoint(&blob).unwrap();
    assert_eq!(meta.training.step, 3);
    let after = evaluate_dataset("m", &batch, &net).unwrap();

    for (a, b) in before.per_frame.iter().zip(&after.per_frame) {
        assert!((a.ssim - b.ssim).abs() <= 1e-6);
        assert!((a.ncc.unwrap() - b.ncc.unwrap()).abs() <= 1e-6);
        assert!((a.psnr_db.unwrap() - b.psnr_db.unwrap()).abs() <= 1e-6);
        assert!((a.vci_after_raw - b.vci_after_raw).abs() <= 1e-6);
    }

    let resumed = TrainState::load(&blob, &cfg).unwrap();
    assert_eq!(resumed.step, 3);
    assert_eq!(resumed.adam.step_count(), 3);
}
