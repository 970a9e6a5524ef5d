use kaleido::synth::{Dataset, DatasetMode, SampleMode};
use kaleido::trainer::{eval_samples, pretrain_then_finetune, TrainConfig, TrainMode, Trainer};
use kaleido::Error;

fn small(steps: u64) -> TrainConfig {
    let mut c = TrainConfig::default();
    for (k, v) in [
        ("views", "4"),
        ("res", "8"),
        ("layers", "1"),
        ("hidden", "32"),
        ("q_heads", "2"),
        ("kv_heads", "1"),
        ("eval_every", "0"),
        ("eval_refs", "2"),
        ("warmup", "10"),
        ("scenes", "4"),
    ] {
        c.set(k, v).unwrap();
    }
    c.steps = steps;
    c
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn memorises_a_handful_of_scenes() {
    let mut cfg = small(400);
    cfg.lr = 3e-3;
    cfg.batch = 2;
    let mut tr = Trainer::new(cfg).unwrap();
    tr.run(|_| {}).unwrap();
    let losses: Vec<f64> = tr.history.iter().map(|r| r.loss).collect();
    let (head, tail) = (mean(&losses[..40]), mean(&losses[losses.len() - 40..]));
    assert!(tail < 0.5 * head, "loss went from {head} to {tail}");
}

#[test]
fn mixed_mode_follows_the_video_ratio() {
    let mut cfg = small(60);
    for degenerate in ["mixed:0", "mixed:1"] {
        let mut bad = cfg.clone();
        bad.mode = degenerate.parse().unwrap();
        assert!(Trainer::new(bad).is_err(), "{degenerate}");
    }
    cfg.lr = 0.0;
    cfg.mode = TrainMode::Mixed { video_ratio: 0.5 };
    let mut tr = Trainer::new(cfg).unwrap();
    tr.run(|_| {}).unwrap();
    let video = tr.history.iter().filter(|r| r.mode == SampleMode::Video).count();
    assert!(video > 10 && video < 50, "{video} of 60 video steps");
}

#[test]
fn exploding_updates_abort_with_a_dump() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(20);
    cfg.lr = 1e30;
    cfg.warmup = 0;
    cfg.out = Some(dir.path().to_path_buf());
    let mut tr = Trainer::new(cfg).unwrap();
    let err = tr.run(|_| {}).unwrap_err();
    let Error::NonFiniteLoss { step, dump, .. } = err else {
        panic!("unexpected error {err:?}");
    };
    assert!(step >= 1);
    let dump = dump.expect("dump path");
    assert_eq!(dump, dir.path().join(format!("nonfinite_step{step}.ckpt")));
    assert!(dump.exists());
}

#[test]
fn trains_from_a_generated_dataset() {
    let dir = tempfile::tempdir().unwrap();
    Dataset::generate(dir.path(), DatasetMode::ThreeD, 3, 0, 4, 8).unwrap();
    let mut cfg = small(3);
    cfg.data_dir = Some(dir.path().to_path_buf());
    let mut tr = Trainer::new(cfg.clone()).unwrap();
    tr.run(|_| {}).unwrap();
    assert_eq!(tr.step, 3);

    cfg.mode = TrainMode::Video;
    let mut tr = Trainer::new(cfg.clone()).unwrap();
    assert!(tr.train_step().is_err(), "no video samples were generated");

    cfg.res = 16;
    assert!(Trainer::new(cfg).is_err());
}

#[test]
fn two_stage_run_hands_weights_over() {
    let mut video = small(5);
    video.mode = TrainMode::Video;
    let three_d = small(4);
    let mut stages = Vec::new();
    let run = pretrain_then_finetune(&video, &three_d, |s, _| stages.push(s.to_owned())).unwrap();
    assert_eq!(run.video_losses.len(), 5);
    assert_eq!(run.three_d_losses.len(), 4);
    assert_eq!(stages.iter().filter(|s| *s == "video").count(), 5);

    let mut other = small(4);
    other.set("hidden", "64").unwrap();
    assert!(pretrain_then_finetune(&video, &other, |_, _| {}).is_err());
}

#[test]
fn periodic_evaluation_writes_logs_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(4);
    cfg.eval_every = 2;
    cfg.eval_scenes = 2;
    cfg.sample_steps = 3;
    cfg.checkpoint_every = 2;
    cfg.out = Some(dir.path().to_path_buf());
    let mut tr = Trainer::new(cfg.clone()).unwrap();
    tr.run(|_| {}).unwrap();
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3, "{metrics}");
    let losses = std::fs::read_to_string(dir.path().join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 5);
    for f in ["ckpt_2.ckpt", "ckpt_4.ckpt", "latest.ckpt", "train.cfg"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let reloaded = TrainConfig::load(&dir.path().join("train.cfg")).unwrap();
    assert_eq!(reloaded.model_config().unwrap(), cfg.model_config().unwrap());

    let held_out = eval_samples(SampleMode::ThreeD, 2, 4, 8).unwrap();
    let row = tr.evaluate_on(&held_out).unwrap();
    assert!(row.psnr.is_finite() && row.ssim <= 1.0);
}
