use tadet_core::config::RunConfig;
use tadet_core::dataset::{self, generate_videos, Dataset, SyntheticSpec};
use tadet_core::inference::{infer, infer_all, load_model};
use tadet_core::model;
use tadet_core::params::ModelParams;
use tadet_core::training::trainer::{
    read_metrics, train, TrainOptions, BEST_CHECKPOINT, CONFIG_SNAPSHOT, METRICS_FILE,
    METRICS_HEADER, STATE_FILE,
};
use tadet_core::Error;

fn tiny_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        num_videos: 4,
        min_frames: 64,
        max_frames: 64,
        feature_dim: 8,
        num_classes: 2,
        max_actions: 2,
        max_action_len: 24,
        val_fraction: 0.25,
        seed,
        ..SyntheticSpec::default()
    }
}

fn tiny_config(epochs: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.encoder.input_dim = 8;
    cfg.encoder.embed_dim = 8;
    cfg.encoder.levels = 3;
    cfg.encoder.group_count = 2;
    cfg.encoder.ffn_expansion = 2;
    cfg.decoder.num_classes = 2;
    cfg.decoder.bins = 4;
    cfg.training.epochs = epochs;
    cfg.training.warmup_epochs = 1;
    cfg.training.eval_every = 1;
    cfg
}

#[test]
fn one_epoch_smoke_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ds = dataset::generate(&tiny_spec(1), &data).unwrap();
    let reloaded = dataset::load(&data.join(dataset::MANIFEST_FILE)).unwrap();
    assert_eq!(reloaded.videos.len(), ds.videos.len());

    let cfg = tiny_config(1);
    let out_dir = dir.path().join("run");
    let out = train(
        &reloaded,
        &cfg,
        &TrainOptions {
            out_dir: Some(out_dir.clone()),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(out.log.len(), 1);
    assert!(out.log[0].loss.total.is_finite() && out.log[0].loss.total > 0.0);
    assert!(out.log[0].eval_map.is_some());
    for f in [BEST_CHECKPOINT, STATE_FILE, METRICS_FILE, CONFIG_SNAPSHOT] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    let text = std::fs::read_to_string(out_dir.join(METRICS_FILE)).unwrap();
    assert_eq!(text.lines().next(), Some(METRICS_HEADER));
    assert_eq!(text.lines().nth(1).unwrap().split('\t').count(), 7);
    assert_eq!(
        read_metrics(&out_dir.join(METRICS_FILE)).unwrap()[0].epoch,
        1
    );
    assert_eq!(
        RunConfig::load(&out_dir.join(CONFIG_SNAPSHOT)).unwrap(),
        cfg
    );
}

#[test]
fn same_seed_gives_identical_loss_curves() {
    let ds = generate_videos(&tiny_spec(2)).unwrap();
    let cfg = tiny_config(2);
    let a = train(&ds, &cfg, &TrainOptions::default()).unwrap();
    let b = train(&ds, &cfg, &TrainOptions::default()).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.last.to_bytes().unwrap(), b.last.to_bytes().unwrap());
    let other = RunConfig { seed: 3, ..cfg };
    let c = train(&ds, &other, &TrainOptions::default()).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let ds = generate_videos(&tiny_spec(4)).unwrap();
    let cfg = tiny_config(3);
    let straight = train(&ds, &cfg, &TrainOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let first = TrainOptions {
        out_dir: Some(dir.path().to_path_buf()),
        resume: false,
        stop_after: Some(1),
    };
    let part = train(&ds, &cfg, &first).unwrap();
    assert_eq!(part.log.len(), 1);
    let rest = TrainOptions {
        resume: true,
        stop_after: None,
        ..first
    };
    let resumed = train(&ds, &cfg, &rest).unwrap();
    assert_eq!(
        resumed.log.iter().map(|r| r.epoch).collect::<Vec<_>>(),
        vec![2, 3]
    );
    assert_eq!(resumed.optimizer.step, straight.optimizer.step);
    assert_eq!(
        resumed.last.to_bytes().unwrap(),
        straight.last.to_bytes().unwrap()
    );
    assert_eq!(&straight.log[1..], &resumed.log[..]);
    assert_eq!(
        read_metrics(&dir.path().join(METRICS_FILE)).unwrap().len(),
        3
    );
}

#[test]
fn checkpoint_reload_reproduces_inference() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_videos(&tiny_spec(5)).unwrap();
    let cfg = tiny_config(1);
    let out = train(
        &ds,
        &cfg,
        &TrainOptions {
            out_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        },
    )
    .unwrap();
    let loaded = load_model(&dir.path().join(BEST_CHECKPOINT), &cfg.model()).unwrap();
    let videos: Vec<_> = ds.videos.iter().collect();
    let a = infer_all(&videos, &out.best, &cfg).unwrap();
    let b = infer_all(&videos, &loaded, &cfg).unwrap();
    assert_eq!(a, b);
    // The state file carries optimizer entries that the loader drops.
    assert!(load_model(&dir.path().join(STATE_FILE), &cfg.model()).is_ok());

    let mut wrong = cfg.model();
    wrong.decoder.bins = 5;
    assert!(matches!(
        load_model(&dir.path().join(BEST_CHECKPOINT), &wrong),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn zero_parameter_model_gives_flat_predictions() {
    let cfg = tiny_config(1);
    let mc = cfg.model();
    let mut params = ModelParams::new();
    for s in model::param_specs(&mc) {
        params.insert(s.path.clone(), tadet_core::diff::Array::zeros(&s.shape));
    }
    let ds = generate_videos(&tiny_spec(6)).unwrap();
    let (outs, _) = model::predict(&params, &mc, &ds.videos[0].features).unwrap();
    let bins = mc.decoder.bins;
    for o in &outs {
        assert!(o.cls_refined.data().iter().all(|&p| p == 0.5));
        let t = o.len();
        let interior: Vec<f64> = (bins..t.saturating_sub(bins))
            .map(|i| i as f64 - o.start_refined[i])
            .collect();
        assert!(!interior.is_empty());
        assert!(interior.iter().all(|&d| (d - interior[0]).abs() < 1e-12));
    }
    let a = infer(&ds.videos[0], &params, &cfg).unwrap();
    let b = infer(&ds.videos[0], &params, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn invalid_inputs_are_rejected_before_training() {
    let ds = generate_videos(&tiny_spec(7)).unwrap();
    let mut cfg = tiny_config(1);
    cfg.encoder.input_dim = 9;
    assert!(matches!(
        train(&ds, &cfg, &TrainOptions::default()),
        Err(Error::Dataset(_))
    ));

    let mut cfg = tiny_config(1);
    cfg.training.base_lr = -1.0;
    assert!(matches!(
        train(&ds, &cfg, &TrainOptions::default()),
        Err(Error::Config(_))
    ));

    let empty = Dataset {
        videos: Vec::new(),
        ..ds.clone()
    };
    assert!(matches!(
        train(&empty, &tiny_config(1), &TrainOptions::default()),
        Err(Error::Dataset(_))
    ));
}

#[test]
fn non_finite_loss_is_reported_with_the_video() {
    let mut ds = generate_videos(&tiny_spec(8)).unwrap();
    for v in ds.videos.iter_mut() {
        v.features.data_mut().iter_mut().for_each(|x| *x *= 1e200);
    }
    match train(&ds, &tiny_config(1), &TrainOptions::default()) {
        Err(Error::NonFiniteLoss {
            epoch: 1, video, ..
        }) => assert!(!video.is_empty()),
        other => panic!("expected a non-finite loss, got {:?}", other.map(|o| o.log)),
    }
}
