//! Helpers shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::diff::{Array, Graph, NodeId};
use crate::params::{ModelParams, ParamSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Array {
    let n = shape.iter().product();
    Array::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
}

pub fn small_config(d: usize, c: usize, levels: usize, bins: usize) -> ModelConfig {
    let mut cfg = ModelConfig::default();
    cfg.encoder.input_dim = d;
    cfg.encoder.embed_dim = d;
    cfg.encoder.levels = levels;
    cfg.encoder.group_count = 2;
    cfg.encoder.ffn_expansion = 2;
    cfg.decoder.num_classes = c;
    cfg.decoder.bins = bins;
    cfg
}

/// Every entry random, including the ones a real init leaves at zero or one.
pub fn random_params(specs: &[ParamSpec], seed: u64, scale: f64) -> ModelParams {
    let mut r = rng(seed);
    let mut p = ModelParams::new();
    for s in specs {
        p.insert(s.path.clone(), rand_array(&mut r, &s.shape, scale));
    }
    p
}

/// `Σ out ⊗ R` for a fixed random `R`, giving a scalar with a generic gradient.
pub fn scalarize(g: &mut Graph, out: NodeId, seed: u64) -> NodeId {
    let shape = g.value(out).shape().to_vec();
    let r = g.constant(rand_array(&mut rng(seed), &shape, 1.0));
    let m = g.mul(out, r).unwrap();
    g.sum(m).unwrap()
}
