//! Cross-layer task-decoupled heads with refinement. One shared set of
//! `head.*` parameters serves every pyramid level.

use crate::config::{Fusion, ModelConfig};
use crate::diff::{Array, Graph, NodeId, Shift};
use crate::encoder::{conv, linear, FeaturePyramid, PyramidNodes};
use crate::error::{Error, Result};
use crate::params::{Binder, Init, ModelParams, ParamSpec};

/// Initial classification bias: sigmoid(-4.595) ≈ 0.01.
pub const CLS_PRIOR_BIAS: f64 = -4.595;

/// Graph handles of one level's predictions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelNodes {
    pub cls: NodeId,
    pub start: NodeId,
    pub end: NodeId,
    pub cls_refined: NodeId,
    pub start_refined: NodeId,
    pub end_refined: NodeId,
}

/// Per-level predictions. Boundaries are in grid units of the level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelOutputs {
    /// `(C, T^l)`
    pub cls_coarse: Array,
    pub start_coarse: Vec<f64>,
    pub end_coarse: Vec<f64>,
    pub cls_refined: Array,
    pub start_refined: Vec<f64>,
    pub end_refined: Vec<f64>,
}

impl LevelOutputs {
    pub fn from_graph(g: &Graph, n: &LevelNodes) -> Self {
        LevelOutputs {
            cls_coarse: g.value(n.cls).clone(),
            start_coarse: g.value(n.start).data().to_vec(),
            end_coarse: g.value(n.end).data().to_vec(),
            cls_refined: g.value(n.cls_refined).clone(),
            start_refined: g.value(n.start_refined).data().to_vec(),
            end_refined: g.value(n.end_refined).data().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.start_refined.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start_refined.is_empty()
    }
}

fn conv_spec(out: &mut Vec<ParamSpec>, prefix: &str, o: usize, i: usize) {
    out.push(ParamSpec::new(
        format!("{prefix}.w"),
        &[o, i, 3],
        Init::FanIn(3 * i),
    ));
    out.push(ParamSpec::new(format!("{prefix}.b"), &[o], Init::Zeros));
}

fn linear_spec(out: &mut Vec<ParamSpec>, prefix: &str, o: usize, i: usize) {
    out.push(ParamSpec::new(
        format!("{prefix}.w"),
        &[o, i],
        Init::FanIn(i),
    ));
    out.push(ParamSpec::new(format!("{prefix}.b"), &[o], Init::Zeros));
}

/// `[conv → LN → ReLU] × 2 → conv`. `last` sets the output conv init.
fn head_spec(out: &mut Vec<ParamSpec>, prefix: &str, d: usize, o: usize, last: (Init, Init)) {
    for i in 1..=2 {
        conv_spec(out, &format!("{prefix}.c{i}"), d, d);
        out.push(ParamSpec::new(
            format!("{prefix}.ln{i}.g"),
            &[d],
            Init::Ones,
        ));
        out.push(ParamSpec::new(
            format!("{prefix}.ln{i}.b"),
            &[d],
            Init::Zeros,
        ));
    }
    out.push(ParamSpec::new(
        format!("{prefix}.out.w"),
        &[o, d, 3],
        last.0,
    ));
    out.push(ParamSpec::new(format!("{prefix}.out.b"), &[o], last.1));
}

fn fusion_spec(out: &mut Vec<ParamSpec>, prefix: &str, d: usize, fusion: Fusion) {
    match fusion {
        Fusion::Attention => {
            conv_spec(out, &format!("{prefix}.ref"), d, d);
            linear_spec(out, &format!("{prefix}.att"), d, d);
        }
        Fusion::Add => {}
        Fusion::Concat => {
            out.push(ParamSpec::new(
                format!("{prefix}.cat.wa"),
                &[d, d],
                Init::FanIn(2 * d),
            ));
            out.push(ParamSpec::new(
                format!("{prefix}.cat.wb"),
                &[d, d],
                Init::FanIn(2 * d),
            ));
            out.push(ParamSpec::new(format!("{prefix}.cat.b"), &[d], Init::Zeros));
        }
    }
}

/// Shared head parameters. Their shapes do not depend on the pyramid depth.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.encoder.embed_dim;
    let c = cfg.decoder.num_classes;
    let bins = cfg.decoder.bins;
    let ab = &cfg.ablation;
    let fan = Init::FanIn(3 * d);
    let mut out = Vec::new();
    if ab.decouple {
        conv_spec(&mut out, "head.dcm.up", d, d);
        fusion_spec(&mut out, "head.dcm", d, ab.fusion);
        conv_spec(&mut out, "head.drm.down", d, d);
        fusion_spec(&mut out, "head.drm", d, ab.fusion);
    }
    head_spec(
        &mut out,
        "head.cls",
        d,
        c,
        (fan, Init::Const(CLS_PRIOR_BIAS)),
    );
    head_spec(&mut out, "head.tri.start", d, 1, (fan, Init::Zeros));
    head_spec(&mut out, "head.tri.end", d, 1, (fan, Init::Zeros));
    head_spec(
        &mut out,
        "head.tri.center",
        d,
        2 * (bins + 1),
        (fan, Init::Zeros),
    );
    if ab.refine() {
        conv_spec(&mut out, "head.clff.down", d, d);
        conv_spec(&mut out, "head.clff.up", d, d);
    }
    if ab.refine_cls {
        head_spec(&mut out, "head.radj", d, c, (Init::Zeros, Init::Zeros));
    }
    if ab.refine_reg {
        head_spec(&mut out, "head.roff", d, 2, (Init::Zeros, Init::Zeros));
    }
    out
}

fn conv_t(
    g: &mut Graph,
    b: &mut Binder,
    prefix: &str,
    x: NodeId,
    out_len: usize,
) -> Result<NodeId> {
    let w = b.get(g, &format!("{prefix}.w"))?;
    let bias = b.get(g, &format!("{prefix}.b"))?;
    g.conv_transpose(w, bias, x, out_len)
}

fn conv_head(g: &mut Graph, b: &mut Binder, prefix: &str, x: NodeId) -> Result<NodeId> {
    let mut h = x;
    for i in 1..=2 {
        h = conv(g, b, &format!("{prefix}.c{i}"), h, 1)?;
        let gamma = b.get(g, &format!("{prefix}.ln{i}.g"))?;
        let beta = b.get(g, &format!("{prefix}.ln{i}.b"))?;
        h = g.layer_norm(h, gamma, beta)?;
        h = g.relu(h)?;
    }
    conv(g, b, &format!("{prefix}.out"), h, 1)
}

/// `W = sigmoid(FC(GAP(ReLU(f_a + f_b))))`, shape `(D, 1)`.
pub fn channel_attention(
    g: &mut Graph,
    b: &mut Binder,
    prefix: &str,
    fa: NodeId,
    fb: NodeId,
) -> Result<NodeId> {
    let s = g.add(fa, fb)?;
    let s = g.relu(s)?;
    let s = g.global_avg_pool(s)?;
    let s = linear(g, b, prefix, s)?;
    g.sigmoid(s)
}

/// `P + fuse(neighbour)` using the configured fusion strategy.
fn fuse(
    g: &mut Graph,
    b: &mut Binder,
    prefix: &str,
    fusion: Fusion,
    p: NodeId,
    neighbour: NodeId,
) -> Result<NodeId> {
    match fusion {
        Fusion::Attention => {
            let own = conv(g, b, &format!("{prefix}.ref"), p, 1)?;
            let w = channel_attention(g, b, &format!("{prefix}.att"), neighbour, own)?;
            let gated = g.scale_channels(neighbour, w)?;
            g.add(p, gated)
        }
        Fusion::Add => g.add(p, neighbour),
        Fusion::Concat => {
            let wa = b.get(g, &format!("{prefix}.cat.wa"))?;
            let wb = b.get(g, &format!("{prefix}.cat.wb"))?;
            let bias = b.get(g, &format!("{prefix}.cat.b"))?;
            let a = g.linear(wa, bias, p)?;
            let n = g.linear_no_bias(wb, neighbour)?;
            g.add(a, n)
        }
    }
}

fn expect_len(what: &str, got: usize, ok: bool, t: usize) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "{what}: neighbour length {got} incompatible with level length {t}"
        )))
    }
}

/// Classification features: level `l` fused with the upsampled level `l+1`.
pub fn dcm_fuse(
    g: &mut Graph,
    b: &mut Binder,
    cfg: &ModelConfig,
    p_l: NodeId,
    p_hi: NodeId,
) -> Result<NodeId> {
    let t = g.value(p_l).cols();
    let n = g.value(p_hi).cols();
    expect_len("dcm_fuse", n, n == t.div_ceil(2), t)?;
    let up = conv_t(g, b, "head.dcm.up", p_hi, t)?;
    fuse(g, b, "head.dcm", cfg.ablation.fusion, p_l, up)
}

/// Regression features: level `l` fused with the downsampled level `l-1`.
pub fn drm_fuse(
    g: &mut Graph,
    b: &mut Binder,
    cfg: &ModelConfig,
    p_l: NodeId,
    p_lo: NodeId,
) -> Result<NodeId> {
    let t = g.value(p_l).cols();
    let n = g.value(p_lo).cols();
    expect_len("drm_fuse", n, n.div_ceil(2) == t, t)?;
    let down = conv(g, b, "head.drm.down", p_lo, 2)?;
    fuse(g, b, "head.drm", cfg.ablation.fusion, p_l, down)
}

/// Class probabilities `(C, T)`.
pub fn classify(g: &mut Graph, b: &mut Binder, f_cls: NodeId) -> Result<NodeId> {
    let logits = conv_head(g, b, "head.cls", f_cls)?;
    g.sigmoid(logits)
}

/// Expected boundary distance over bins `0..=B` for each instant.
fn expected_offset(
    g: &mut Graph,
    edge: NodeId,
    center: NodeId,
    bins: usize,
    dir: Shift,
) -> Result<NodeId> {
    let stacked = g.shift_stack(edge, bins, dir)?;
    let logits = g.add(stacked, center)?;
    let prob = g.softmax(logits, 0)?;
    let idx = g.index_row(bins + 1);
    g.linear_no_bias(idx, prob)
}

/// Start and end boundaries `(1, T)` in grid units.
pub fn trident_regress(
    g: &mut Graph,
    b: &mut Binder,
    f_reg: NodeId,
    bins: usize,
) -> Result<(NodeId, NodeId)> {
    let t = g.value(f_reg).cols();
    let s = conv_head(g, b, "head.tri.start", f_reg)?;
    let e = conv_head(g, b, "head.tri.end", f_reg)?;
    let m = conv_head(g, b, "head.tri.center", f_reg)?;
    let m_start = g.slice_rows(m, 0, bins + 1)?;
    let m_end = g.slice_rows(m, bins + 1, bins + 1)?;
    let ds = expected_offset(g, s, m_start, bins, Shift::Backward)?;
    let de = expected_offset(g, e, m_end, bins, Shift::Forward)?;
    let grid = g.index_row(t);
    Ok((g.sub(grid, ds)?, g.add(grid, de)?))
}

/// `Conv(P^(l-1)) + P^l + ConvT(P^(l+1))`.
pub fn clff(
    g: &mut Graph,
    b: &mut Binder,
    p_lo: NodeId,
    p_l: NodeId,
    p_hi: NodeId,
) -> Result<NodeId> {
    let t = g.value(p_l).cols();
    let (nl, nh) = (g.value(p_lo).cols(), g.value(p_hi).cols());
    expect_len("clff", nl, nl.div_ceil(2) == t, t)?;
    expect_len("clff", nh, nh == t.div_ceil(2), t)?;
    let down = conv(g, b, "head.clff.down", p_lo, 2)?;
    let up = conv_t(g, b, "head.clff.up", p_hi, t)?;
    let s = g.add(down, p_l)?;
    g.add(s, up)
}

/// Apply given adjustment maps: `sqrt(â ⊗ R_co)` and additive offsets.
/// `None` leaves the corresponding coarse output unchanged.
pub fn refine_with(
    g: &mut Graph,
    coarse: (NodeId, NodeId, NodeId),
    r_co: Option<NodeId>,
    offsets: Option<(NodeId, NodeId)>,
) -> Result<LevelNodes> {
    let (cls, start, end) = coarse;
    let cls_refined = match r_co {
        Some(r) => {
            let prod = g.mul(cls, r)?;
            g.sqrt(prod)?
        }
        None => cls,
    };
    let (start_refined, end_refined) = match offsets {
        Some((rs, re)) => (g.add(start, rs)?, g.add(end, re)?),
        None => (start, end),
    };
    Ok(LevelNodes {
        cls,
        start,
        end,
        cls_refined,
        start_refined,
        end_refined,
    })
}

/// Refinement from fused features `f_c` through the class-adjust and offset heads.
pub fn refine(
    g: &mut Graph,
    b: &mut Binder,
    cfg: &ModelConfig,
    coarse: (NodeId, NodeId, NodeId),
    f_c: NodeId,
) -> Result<LevelNodes> {
    let r_co = if cfg.ablation.refine_cls {
        let h = conv_head(g, b, "head.radj", f_c)?;
        Some(g.sigmoid(h)?)
    } else {
        None
    };
    let offsets = if cfg.ablation.refine_reg {
        let off = conv_head(g, b, "head.roff", f_c)?;
        Some((g.slice_rows(off, 0, 1)?, g.slice_rows(off, 1, 1)?))
    } else {
        None
    };
    refine_with(g, coarse, r_co, offsets)
}

/// Whether level `l` (0-based) of `levels` uses the decoupled modules.
pub fn is_intermediate(l: usize, levels: usize) -> bool {
    l > 0 && l + 1 < levels
}

/// Heads for every level of the pyramid.
pub fn decode_pyramid(
    g: &mut Graph,
    b: &mut Binder,
    cfg: &ModelConfig,
    pyr: &PyramidNodes,
) -> Result<Vec<LevelNodes>> {
    let levels = pyr.levels.len();
    let ab = &cfg.ablation;
    let mut out = Vec::with_capacity(levels);
    for l in 0..levels {
        let p = pyr.levels[l];
        let mid = is_intermediate(l, levels);
        let (f_cls, f_reg) = if mid && ab.decouple {
            (
                dcm_fuse(g, b, cfg, p, pyr.levels[l + 1])?,
                drm_fuse(g, b, cfg, p, pyr.levels[l - 1])?,
            )
        } else {
            (p, p)
        };
        let cls = classify(g, b, f_cls)?;
        let (start, end) = trident_regress(g, b, f_reg, cfg.decoder.bins)?;
        let nodes = if mid && ab.refine() {
            let f_c = clff(g, b, pyr.levels[l - 1], p, pyr.levels[l + 1])?;
            refine(g, b, cfg, (cls, start, end), f_c)?
        } else {
            refine_with(g, (cls, start, end), None, None)?
        };
        out.push(nodes);
    }
    Ok(out)
}

/// Decode a materialized pyramid.
pub fn decode(
    params: &ModelParams,
    cfg: &ModelConfig,
    pyr: &FeaturePyramid,
) -> Result<Vec<LevelOutputs>> {
    let mut g = Graph::new();
    let mut b = Binder::frozen(params);
    let nodes = PyramidNodes {
        levels: pyr.levels.iter().map(|a| g.constant(a.clone())).collect(),
        strides: pyr.strides.clone(),
    };
    let heads = decode_pyramid(&mut g, &mut b, cfg, &nodes)?;
    Ok(heads
        .iter()
        .map(|n| LevelOutputs::from_graph(&g, n))
        .collect())
}
