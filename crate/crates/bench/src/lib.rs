//! Benchmark fixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tadet_core::config::RunConfig;
use tadet_core::dataset::{generate_videos, Dataset, SyntheticSpec};
use tadet_core::diff::Array;
use tadet_core::model;
use tadet_core::params::ModelParams;
use tadet_core::segment::ScoredSegment;
use tadet_core::training::{assign_targets, Assignment};

/// Default-sized model with freshly initialized parameters.
pub fn model_fixture(seed: u64) -> (RunConfig, ModelParams) {
    let cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    let params = model::init_params(&cfg.model(), seed);
    (cfg, params)
}

/// A few acceptance-sized synthetic videos.
pub fn videos_fixture(n: usize, seed: u64) -> Dataset {
    let spec = SyntheticSpec {
        num_videos: n,
        seed,
        ..SyntheticSpec::default()
    };
    generate_videos(&spec).expect("default spec is feasible")
}

/// Targets for one video under `cfg`.
pub fn assignment_fixture(ds: &Dataset, index: usize, cfg: &RunConfig) -> Assignment {
    let v = &ds.videos[index];
    let levels = cfg.encoder.levels;
    let lens = tadet_core::encoder::level_lengths(v.num_frames(), levels);
    let strides: Vec<usize> = (0..levels).map(|l| 1 << l).collect();
    assign_targets(
        &v.frame_actions(),
        &lens,
        &strides,
        &cfg.training.regression_ranges(levels),
        cfg.training.center_radius,
    )
}

pub fn random_signal(rows: usize, cols: usize, seed: u64) -> Array {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Array::new(
        vec![rows, cols],
        (0..rows * cols)
            .map(|_| r.random_range(-1.0..1.0))
            .collect(),
    )
}

/// Overlapping candidates in seconds over `classes` labels.
pub fn candidates(n: usize, classes: usize, seed: u64) -> Vec<ScoredSegment> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s = r.random_range(0.0..60.0);
            ScoredSegment {
                start_s: s,
                end_s: s + r.random_range(0.5..10.0),
                label: r.random_range(1..=classes),
                score: r.random_range(0.001..1.0),
                source_level: 1,
            }
        })
        .collect()
}
