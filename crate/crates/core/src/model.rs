//! Full forward pass: projection, pyramid and heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::decoder::{self, LevelNodes, LevelOutputs};
use crate::diff::{Array, Graph, NodeId};
use crate::encoder;
use crate::error::Result;
use crate::params::{Binder, ModelParams, ParamSpec};

pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut specs = encoder::param_specs(cfg);
    specs.extend(decoder::param_specs(cfg));
    specs
}

pub fn init_params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    ModelParams::init(&param_specs(cfg), &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Clone, Debug)]
pub struct ForwardNodes {
    pub pyramid: Vec<NodeId>,
    pub levels: Vec<LevelNodes>,
    pub strides: Vec<usize>,
}

pub fn build_forward(
    g: &mut Graph,
    b: &mut Binder,
    cfg: &ModelConfig,
    x: NodeId,
) -> Result<ForwardNodes> {
    let p0 = encoder::project(g, b, cfg, x)?;
    let pyr = encoder::build_pyramid(g, b, cfg, p0, 1)?;
    let levels = decoder::decode_pyramid(g, b, cfg, &pyr)?;
    Ok(ForwardNodes {
        pyramid: pyr.levels,
        levels,
        strides: pyr.strides,
    })
}

/// Predictions per level plus the level strides.
pub fn predict(
    params: &ModelParams,
    cfg: &ModelConfig,
    x: &Array,
) -> Result<(Vec<LevelOutputs>, Vec<usize>)> {
    let mut g = Graph::new();
    let mut b = Binder::frozen(params);
    let xn = g.constant(x.clone());
    let fw = build_forward(&mut g, &mut b, cfg, xn)?;
    let outs = fw
        .levels
        .iter()
        .map(|n| LevelOutputs::from_graph(&g, n))
        .collect();
    Ok((outs, fw.strides))
}
