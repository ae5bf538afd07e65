//! Input projection and the GMG feature pyramid.

use crate::config::{Branch, ModelConfig};
use crate::diff::{Array, Graph, NodeId};
use crate::error::{Error, Result};
use crate::params::{Binder, Init, ParamSpec};

/// Per-level feature maps `P^1..P^L` with frames-per-cell strides.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<Array>,
    pub strides: Vec<usize>,
}

/// Graph handles of a pyramid under construction.
#[derive(Clone, Debug)]
pub struct PyramidNodes {
    pub levels: Vec<NodeId>,
    pub strides: Vec<usize>,
}

/// `T^l = ceil(T / 2^(l-1))` for every level.
pub fn level_lengths(t: usize, levels: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(levels);
    let mut n = t;
    for _ in 0..levels {
        out.push(n);
        n = n.div_ceil(2);
    }
    out
}

pub fn min_length(levels: usize) -> usize {
    1 << (levels.saturating_sub(1))
}

pub fn block_prefix(level: usize, block: usize) -> String {
    format!("enc.l{level}.b{block}")
}

fn conv_spec(out: &mut Vec<ParamSpec>, prefix: &str, o: usize, i: usize) {
    out.push(ParamSpec::new(
        format!("{prefix}.w"),
        &[o, i, 3],
        Init::FanIn(3 * i),
    ));
    out.push(ParamSpec::new(format!("{prefix}.b"), &[o], Init::Zeros));
}

fn dw_spec(out: &mut Vec<ParamSpec>, prefix: &str, d: usize, w_init: Init, b_init: Init) {
    out.push(ParamSpec::new(format!("{prefix}.w"), &[d, 3], w_init));
    out.push(ParamSpec::new(format!("{prefix}.b"), &[d], b_init));
}

/// Parameters of the projection and every GMG block.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let e = &cfg.encoder;
    let d = e.embed_dim;
    let h = d * e.ffn_expansion;
    let mut out = Vec::new();
    conv_spec(&mut out, "proj.c1", d, e.input_dim);
    conv_spec(&mut out, "proj.c2", d, d);
    for l in 1..=e.levels {
        for k in 0..e.gmg_blocks_per_level {
            let p = block_prefix(l, k);
            if cfg.ablation.has(Branch::Instant) {
                out.push(ParamSpec::new(format!("{p}.fc.w"), &[d, d], Init::FanIn(d)));
                out.push(ParamSpec::new(format!("{p}.fc.b"), &[d], Init::Zeros));
            }
            if cfg.ablation.has(Branch::Local) {
                dw_spec(
                    &mut out,
                    &format!("{p}.local"),
                    d,
                    Init::FanIn(3),
                    Init::Zeros,
                );
            }
            if cfg.ablation.has(Branch::Global) {
                // The filter starts as W = 1 + 0j, i.e. f_global = x.
                dw_spec(
                    &mut out,
                    &format!("{p}.gf.re1"),
                    d,
                    Init::FanIn(3),
                    Init::Zeros,
                );
                dw_spec(&mut out, &format!("{p}.gf.re2"), d, Init::Zeros, Init::Ones);
                dw_spec(
                    &mut out,
                    &format!("{p}.gf.im1"),
                    d,
                    Init::FanIn(3),
                    Init::Zeros,
                );
                dw_spec(
                    &mut out,
                    &format!("{p}.gf.im2"),
                    d,
                    Init::Zeros,
                    Init::Zeros,
                );
            }
            out.push(ParamSpec::new(format!("{p}.gn.g"), &[d], Init::Ones));
            out.push(ParamSpec::new(format!("{p}.gn.b"), &[d], Init::Zeros));
            out.push(ParamSpec::new(
                format!("{p}.ffn1.w"),
                &[h, d],
                Init::FanIn(d),
            ));
            out.push(ParamSpec::new(format!("{p}.ffn1.b"), &[h], Init::Zeros));
            out.push(ParamSpec::new(
                format!("{p}.ffn2.w"),
                &[d, h],
                Init::FanIn(h),
            ));
            out.push(ParamSpec::new(format!("{p}.ffn2.b"), &[d], Init::Zeros));
        }
    }
    out
}

pub(crate) fn conv(
    g: &mut Graph,
    b: &mut Binder,
    prefix: &str,
    x: NodeId,
    stride: usize,
) -> Result<NodeId> {
    let w = b.get(g, &format!("{prefix}.w"))?;
    let bias = b.get(g, &format!("{prefix}.b"))?;
    g.conv(w, bias, x, stride)
}

pub(crate) fn depthwise(
    g: &mut Graph,
    b: &mut Binder,
    prefix: &str,
    x: NodeId,
    stride: usize,
) -> Result<NodeId> {
    let w = b.get(g, &format!("{prefix}.w"))?;
    let bias = b.get(g, &format!("{prefix}.b"))?;
    g.depthwise_conv(w, bias, x, stride)
}

pub(crate) fn linear(g: &mut Graph, b: &mut Binder, prefix: &str, x: NodeId) -> Result<NodeId> {
    let w = b.get(g, &format!("{prefix}.w"))?;
    let bias = b.get(g, &format!("{prefix}.b"))?;
    g.linear(w, bias, x)
}

/// `P^0 = ReLU(Conv(ReLU(Conv(x))))`.
pub fn project(g: &mut Graph, b: &mut Binder, cfg: &ModelConfig, x: NodeId) -> Result<NodeId> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 2 || shape[0] != cfg.encoder.input_dim {
        return Err(Error::Invalid(format!(
            "input has shape {shape:?}, expected {} channels",
            cfg.encoder.input_dim
        )));
    }
    let h = conv(g, b, "proj.c1", x, 1)?;
    let h = g.relu(h)?;
    let h = conv(g, b, "proj.c2", h, 1)?;
    g.relu(h)
}

/// `Re idft(X ⊗ W)` for a given spectrum filter.
pub fn spectral_filter(g: &mut Graph, x: NodeId, w_re: NodeId, w_im: NodeId) -> Result<NodeId> {
    let (xr, xi) = g.dft(x)?;
    let (pr, pi) = g.complex_mul((xr, xi), (w_re, w_im))?;
    g.idft_real(pr, pi)
}

/// Filter `W_φ = Conv(ReLU(Conv(X_f)))` applied to the real and imaginary
/// channel stacks, followed by the spectral product.
pub fn global_filter(g: &mut Graph, b: &mut Binder, prefix: &str, x: NodeId) -> Result<NodeId> {
    let (xr, xi) = g.dft(x)?;
    let wr = {
        let h = depthwise(g, b, &format!("{prefix}.re1"), xr, 1)?;
        let h = g.relu(h)?;
        depthwise(g, b, &format!("{prefix}.re2"), h, 1)?
    };
    let wi = {
        let h = depthwise(g, b, &format!("{prefix}.im1"), xi, 1)?;
        let h = g.relu(h)?;
        depthwise(g, b, &format!("{prefix}.im2"), h, 1)?
    };
    let (pr, pi) = g.complex_mul((xr, xi), (wr, wi))?;
    g.idft_real(pr, pi)
}

/// One GMG block followed by the pre-norm FFN residual.
pub fn gmg_block(
    g: &mut Graph,
    b: &mut Binder,
    prefix: &str,
    x: NodeId,
    cfg: &ModelConfig,
) -> Result<NodeId> {
    let ab = &cfg.ablation;
    let (use_i, use_l, use_g) = (
        ab.has(Branch::Instant),
        ab.has(Branch::Local),
        ab.has(Branch::Global),
    );
    let f_instant = if use_i {
        Some(linear(g, b, &format!("{prefix}.fc"), x)?)
    } else {
        None
    };
    let f_local = if use_l {
        Some(depthwise(g, b, &format!("{prefix}.local"), x, 1)?)
    } else {
        None
    };
    let f_global = if use_g {
        Some(global_filter(g, b, &format!("{prefix}.gf"), x)?)
    } else {
        None
    };

    let mut terms = Vec::with_capacity(3);
    if let Some(fi) = f_instant {
        match f_local {
            Some(fl) if ab.gate => {
                let gate = g.relu(fl)?;
                terms.push(g.mul(gate, fi)?);
            }
            _ => terms.push(fi),
        }
    }
    if let Some(fl) = f_local {
        match f_global {
            Some(fg) if ab.gate => {
                let gate = g.relu(fg)?;
                terms.push(g.mul(gate, fl)?);
            }
            _ => terms.push(fl),
        }
    }
    if let Some(fg) = f_global {
        terms.push(fg);
    }
    let mut f = x;
    for t in terms {
        f = g.add(f, t)?;
    }

    let gamma = b.get(g, &format!("{prefix}.gn.g"))?;
    let beta = b.get(g, &format!("{prefix}.gn.b"))?;
    let h = g.group_norm(f, gamma, beta, cfg.encoder.group_count)?;
    let h = linear(g, b, &format!("{prefix}.ffn1"), h)?;
    let h = g.relu(h)?;
    let h = linear(g, b, &format!("{prefix}.ffn2"), h)?;
    g.add(f, h)
}

/// `P^1 = gmg(P^0)`, `P^l = gmg(maxpool(P^(l-1)))`.
pub fn build_pyramid(
    g: &mut Graph,
    b: &mut Binder,
    cfg: &ModelConfig,
    p0: NodeId,
    input_stride: usize,
) -> Result<PyramidNodes> {
    let levels = cfg.encoder.levels;
    let t = g.value(p0).cols();
    let required = min_length(levels);
    if t < required {
        return Err(Error::TooShort {
            len: t,
            levels,
            required,
        });
    }
    let mut out = PyramidNodes {
        levels: Vec::with_capacity(levels),
        strides: Vec::with_capacity(levels),
    };
    let mut h = p0;
    for l in 1..=levels {
        if l > 1 {
            h = g.max_pool(h)?;
        }
        for k in 0..cfg.encoder.gmg_blocks_per_level {
            h = gmg_block(g, b, &block_prefix(l, k), h, cfg)?;
        }
        out.levels.push(h);
        out.strides.push(input_stride << (l - 1));
    }
    Ok(out)
}

/// Run projection and pyramid on a feature matrix and return plain arrays.
pub fn encode(
    params: &crate::params::ModelParams,
    cfg: &ModelConfig,
    x: &Array,
) -> Result<FeaturePyramid> {
    let mut g = Graph::new();
    let mut b = Binder::frozen(params);
    let xn = g.constant(x.clone());
    let p0 = project(&mut g, &mut b, cfg, xn)?;
    let pyr = build_pyramid(&mut g, &mut b, cfg, p0, 1)?;
    Ok(FeaturePyramid {
        levels: pyr.levels.iter().map(|&id| g.value(id).clone()).collect(),
        strides: pyr.strides,
    })
}
