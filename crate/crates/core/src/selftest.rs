//! Built-in numerical self-checks: finite-difference gradients for every
//! catalog op and for the composed model, plus the reference-oracle suites.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, TrainingConfig};
use crate::decoder;
use crate::diff::{
    fd_check_smooth, Array, FdStats, Graph, IouEntry, NodeId, Shift, VarifocalTargets, DEFAULT_STEP,
};
use crate::encoder::{self, level_lengths, spectral_filter, PyramidNodes};
use crate::error::Result;
use crate::evaluation::{average_precision, match_predictions};
use crate::inference::{rank_order, soft_nms};
use crate::model;
use crate::oracle;
use crate::params::{Binder, ModelParams, ParamSpec};
use crate::segment::{ScoredSegment, Segment};
use crate::training::{assign_targets, loss_graph, FrameAction};

/// Max relative error allowed for single ops and the composed encoder/decoder.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Max relative error allowed for the full training objective.
pub const LOSS_TOLERANCE: f64 = 1e-3;
/// Relative error allowed between the spectral filter and circular convolution.
pub const SPECTRAL_TOLERANCE: f64 = 1e-8;
/// Absolute error allowed on the hand-computed reference values.
pub const HAND_TOLERANCE: f64 = 1e-9;

const SAMPLED_ENTRIES: usize = 6;
const ORACLE_INSTANCES: usize = 1000;
const SPECTRAL_PAIRS: usize = 50;
const SPECTRAL_LENGTHS: [usize; 4] = [7, 8, 33, 64];

/// Every op case exercised by the gradient suite.
pub const OP_CASES: &[&str] = &[
    "linear",
    "linear_no_bias",
    "conv",
    "conv_stride2",
    "depthwise_conv",
    "depthwise_conv_stride2",
    "conv_transpose",
    "conv_transpose_odd",
    "max_pool",
    "relu",
    "sigmoid",
    "global_avg_pool",
    "layer_norm",
    "group_norm",
    "add",
    "sub",
    "mul",
    "sqrt",
    "scale_channels",
    "softmax_rows",
    "softmax_cols",
    "dft_re",
    "dft_im",
    "idft_real",
    "slice_rows",
    "shift_stack_backward",
    "shift_stack_forward",
    "sum",
    "varifocal",
    "iou_loss",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    /// Random points or instances evaluated.
    pub points: usize,
    /// Worst error seen; for exact checks, the number of mismatching instances.
    pub max_error: f64,
    pub tolerance: f64,
    pub exact: bool,
    /// Gradient entries left out because every trial step crossed a kink.
    pub skipped: usize,
}

impl Check {
    pub fn passed(&self) -> bool {
        if self.exact {
            self.max_error == 0.0
        } else {
            self.max_error.is_finite() && self.max_error < self.tolerance
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed())
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<10} {:<24} {:>6} {:>12} {:>10} {:>8}  status\n",
            "suite", "check", "points", "max_error", "tolerance", "skipped"
        );
        for c in &self.checks {
            let tol = if c.exact {
                "exact".to_string()
            } else {
                format!("{:.0e}", c.tolerance)
            };
            let _ = writeln!(
                s,
                "{:<10} {:<24} {:>6} {:>12.3e} {:>10} {:>8}  {}",
                c.suite,
                c.name,
                c.points,
                c.max_error,
                tol,
                c.skipped,
                if c.passed() { "ok" } else { "FAIL" }
            );
        }
        let failed = self.failures().count();
        let _ = writeln!(
            s,
            "{} checks, {} failed, {:.1}s",
            self.checks.len(),
            failed,
            self.seconds
        );
        s
    }
}

#[derive(Clone, Debug)]
pub struct Options {
    /// Random points per gradient case.
    pub points: usize,
    pub seed: u64,
    /// Corrupt every analytic gradient before comparison (negative control).
    pub inject_fault: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            points: 10,
            seed: 0,
            inject_fault: false,
        }
    }
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Array {
    let n = shape.iter().product();
    Array::new(
        shape.to_vec(),
        (0..n).map(|_| r.random_range(lo..hi)).collect(),
    )
}

/// `Σ out ⊗ R` for a random constant `R`; scalars pass through.
fn reduce(g: &mut Graph, out: NodeId, r: &mut ChaCha8Rng) -> Result<NodeId> {
    if g.value(out).len() == 1 {
        return Ok(out);
    }
    let shape = g.value(out).shape().to_vec();
    let w = g.constant(uniform(r, &shape, -1.0, 1.0));
    let m = g.mul(out, w)?;
    g.sum(m)
}

struct Case {
    graph: Graph,
    output: NodeId,
    leaves: Vec<NodeId>,
}

fn op_case(name: &str, point: usize, r: &mut ChaCha8Rng) -> Result<Case> {
    let mut g = Graph::new();
    let mut leaves = Vec::new();
    let mut leaf = |g: &mut Graph, r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64| {
        let id = g.leaf(format!("in{}", g.len()), uniform(r, shape, lo, hi));
        leaves.push(id);
        id
    };
    // Alternate power-of-two and odd lengths.
    let t = if point.is_multiple_of(2) { 8 } else { 7 };
    let out = match name {
        "linear" | "linear_no_bias" => {
            let w = leaf(&mut g, r, &[3, 4], -1.0, 1.0);
            let x = leaf(&mut g, r, &[4, t], -1.0, 1.0);
            if name == "linear" {
                let b = leaf(&mut g, r, &[3], -1.0, 1.0);
                g.linear(w, b, x)?
            } else {
                g.linear_no_bias(w, x)?
            }
        }
        "conv" | "conv_stride2" => {
            let w = leaf(&mut g, r, &[3, 4, 3], -1.0, 1.0);
            let b = leaf(&mut g, r, &[3], -1.0, 1.0);
            let x = leaf(&mut g, r, &[4, t], -1.0, 1.0);
            g.conv(w, b, x, if name == "conv" { 1 } else { 2 })?
        }
        "depthwise_conv" | "depthwise_conv_stride2" => {
            let w = leaf(&mut g, r, &[4, 3], -1.0, 1.0);
            let b = leaf(&mut g, r, &[4], -1.0, 1.0);
            let x = leaf(&mut g, r, &[4, t], -1.0, 1.0);
            g.depthwise_conv(w, b, x, if name == "depthwise_conv" { 1 } else { 2 })?
        }
        "conv_transpose" | "conv_transpose_odd" => {
            let n = t / 2 + 1;
            let w = leaf(&mut g, r, &[3, 4, 3], -1.0, 1.0);
            let b = leaf(&mut g, r, &[3], -1.0, 1.0);
            let x = leaf(&mut g, r, &[4, n], -1.0, 1.0);
            g.conv_transpose(
                w,
                b,
                x,
                if name == "conv_transpose" {
                    2 * n
                } else {
                    2 * n - 1
                },
            )?
        }
        "max_pool" => {
            let x = leaf(&mut g, r, &[3, t], -1.0, 1.0);
            g.max_pool(x)?
        }
        "relu" => {
            let x = leaf(&mut g, r, &[3, t], -1.0, 1.0);
            g.relu(x)?
        }
        "sigmoid" => {
            let x = leaf(&mut g, r, &[3, t], -3.0, 3.0);
            g.sigmoid(x)?
        }
        "global_avg_pool" => {
            let x = leaf(&mut g, r, &[3, t], -1.0, 1.0);
            g.global_avg_pool(x)?
        }
        "layer_norm" | "group_norm" => {
            let x = leaf(&mut g, r, &[4, t], -1.0, 1.0);
            let gamma = leaf(&mut g, r, &[4], 0.5, 1.5);
            let beta = leaf(&mut g, r, &[4], -0.5, 0.5);
            if name == "layer_norm" {
                g.layer_norm(x, gamma, beta)?
            } else {
                g.group_norm(x, gamma, beta, 2)?
            }
        }
        "add" | "sub" | "mul" => {
            let a = leaf(&mut g, r, &[3, t], -1.0, 1.0);
            let b = leaf(&mut g, r, &[3, t], -1.0, 1.0);
            match name {
                "add" => g.add(a, b)?,
                "sub" => g.sub(a, b)?,
                _ => g.mul(a, b)?,
            }
        }
        "sqrt" => {
            let x = leaf(&mut g, r, &[3, t], 0.2, 2.0);
            g.sqrt(x)?
        }
        "scale_channels" => {
            let x = leaf(&mut g, r, &[4, t], -1.0, 1.0);
            let w = leaf(&mut g, r, &[4, 1], -1.0, 1.0);
            g.scale_channels(x, w)?
        }
        "softmax_rows" | "softmax_cols" => {
            let x = leaf(&mut g, r, &[4, t], -2.0, 2.0);
            g.softmax(x, if name == "softmax_rows" { 0 } else { 1 })?
        }
        "dft_re" | "dft_im" => {
            let x = leaf(&mut g, r, &[3, t], -1.0, 1.0);
            let (re, im) = g.dft(x)?;
            if name == "dft_re" {
                re
            } else {
                im
            }
        }
        "idft_real" => {
            let re = leaf(&mut g, r, &[3, t], -1.0, 1.0);
            let im = leaf(&mut g, r, &[3, t], -1.0, 1.0);
            g.idft_real(re, im)?
        }
        "slice_rows" => {
            let x = leaf(&mut g, r, &[5, t], -1.0, 1.0);
            g.slice_rows(x, 1, 3)?
        }
        "shift_stack_backward" | "shift_stack_forward" => {
            // Masked entries are huge negatives; a softmax over bins (as in the
            // regression head) keeps the reduced scalar well conditioned.
            let s = leaf(&mut g, r, &[1, t], -1.0, 1.0);
            let dir = if name == "shift_stack_backward" {
                Shift::Backward
            } else {
                Shift::Forward
            };
            let st = g.shift_stack(s, 3, dir)?;
            g.softmax(st, 0)?
        }
        "sum" => {
            let x = leaf(&mut g, r, &[3, t], -1.0, 1.0);
            g.sum(x)?
        }
        "varifocal" => {
            let p = leaf(&mut g, r, &[3, t], 0.05, 0.95);
            let n = 3 * t;
            let quality: Vec<f64> = (0..n)
                .map(|_| {
                    if r.random_bool(0.5) {
                        0.0
                    } else {
                        r.random_range(0.05..1.0)
                    }
                })
                .collect();
            let targets = VarifocalTargets {
                quality: Array::new(vec![3, t], quality),
                weight: uniform(r, &[3, t], 0.1, 1.0),
                alpha: 0.75,
                gamma: 2.0,
            };
            g.varifocal(p, targets)?
        }
        "iou_loss" => {
            let pos: Vec<f64> = (0..t).map(|i| i as f64).collect();
            let ds = uniform(r, &[1, t], 0.5, 3.0);
            let de = uniform(r, &[1, t], 0.5, 3.0);
            let s = g.leaf(
                "s",
                Array::new(
                    vec![1, t],
                    pos.iter().zip(ds.data()).map(|(p, d)| p - d).collect(),
                ),
            );
            let e = g.leaf(
                "e",
                Array::new(
                    vec![1, t],
                    pos.iter().zip(de.data()).map(|(p, d)| p + d).collect(),
                ),
            );
            leaves.extend([s, e]);
            let entries = (0..t)
                .step_by(2)
                .map(|i| IouEntry {
                    t: i,
                    start: pos[i] - r.random_range(0.5..3.0),
                    end: pos[i] + r.random_range(0.5..3.0),
                    weight: r.random_range(0.1..1.0),
                })
                .collect();
            g.iou_loss(s, e, entries)?
        }
        other => return Err(crate::Error::Invalid(format!("unknown op case {other}"))),
    };
    let output = reduce(&mut g, out, r)?;
    Ok(Case {
        graph: g,
        output,
        leaves,
    })
}

/// Kink-aware fd statistics over the case's leaves; `sampled` limits entries per leaf.
fn check_case(
    case: &mut Case,
    sampled: Option<usize>,
    inject_fault: bool,
    r: &mut ChaCha8Rng,
) -> Result<FdStats> {
    let grads = case.graph.backward(case.output, Array::scalar(1.0))?;
    let mut stats = FdStats::default();
    for &leaf in &case.leaves {
        let mut analytic = grads.wrt(leaf);
        if inject_fault {
            analytic = analytic.map(|v| v * 1.01 + 1e-3);
        }
        let n = analytic.len();
        let entries: Vec<usize> = match sampled {
            Some(k) if k < n => {
                let mut v = sample(r, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        stats.merge(fd_check_smooth(
            &mut case.graph,
            case.output,
            leaf,
            DEFAULT_STEP,
            &analytic,
            &entries,
        )?);
    }
    Ok(stats)
}

fn gradient_check(
    suite: &'static str,
    name: &str,
    points: usize,
    stats: FdStats,
    tolerance: f64,
) -> Check {
    Check {
        suite,
        name: name.to_string(),
        points,
        // Nothing checked counts as a failure.
        max_error: if stats.checked == 0 {
            f64::INFINITY
        } else {
            stats.max_error
        },
        tolerance,
        exact: false,
        skipped: stats.skipped,
    }
}

/// The tiny model the composed checks run on.
pub fn tiny_model_config() -> ModelConfig {
    let mut cfg = ModelConfig::default();
    cfg.encoder.input_dim = 6;
    cfg.encoder.embed_dim = 8;
    cfg.encoder.levels = 3;
    cfg.encoder.group_count = 2;
    cfg.encoder.ffn_expansion = 2;
    cfg.decoder.num_classes = 3;
    cfg.decoder.bins = 4;
    cfg
}

fn random_params(specs: &[ParamSpec], r: &mut ChaCha8Rng, scale: f64) -> ModelParams {
    let mut p = ModelParams::new();
    for s in specs {
        p.insert(s.path.clone(), uniform(r, &s.shape, -scale, scale));
    }
    p
}

const TINY_T: usize = 32;

fn composed_case(name: &str, r: &mut ChaCha8Rng) -> Result<Case> {
    let cfg = tiny_model_config();
    let d = cfg.encoder.embed_dim;
    let mut g = Graph::new();
    match name {
        "encoder" => {
            let params = random_params(&encoder::param_specs(&cfg), r, 0.4);
            let mut b = Binder::new(&params);
            let x = g.leaf("x", uniform(r, &[cfg.encoder.input_dim, TINY_T], -1.0, 1.0));
            let p0 = encoder::project(&mut g, &mut b, &cfg, x)?;
            let pyr = encoder::build_pyramid(&mut g, &mut b, &cfg, p0, 1)?;
            let mut terms = Vec::new();
            for &lvl in &pyr.levels {
                terms.push(reduce(&mut g, lvl, r)?);
            }
            let output = sum_nodes(&mut g, &terms)?;
            let mut leaves = vec![x];
            leaves.extend(b.bound().into_iter().map(|(_, id)| id));
            Ok(Case {
                graph: g,
                output,
                leaves,
            })
        }
        "decoder" => {
            let params = random_params(&decoder::param_specs(&cfg), r, 0.4);
            let mut b = Binder::new(&params);
            let lens = level_lengths(TINY_T, cfg.encoder.levels);
            let pyr = PyramidNodes {
                levels: lens
                    .iter()
                    .enumerate()
                    .map(|(l, &n)| g.leaf(format!("p{l}"), uniform(r, &[d, n], -1.0, 1.0)))
                    .collect(),
                strides: (0..lens.len()).map(|l| 1 << l).collect(),
            };
            let outs = decoder::decode_pyramid(&mut g, &mut b, &cfg, &pyr)?;
            let mut terms = Vec::new();
            for o in &outs {
                for id in [
                    o.cls,
                    o.start,
                    o.end,
                    o.cls_refined,
                    o.start_refined,
                    o.end_refined,
                ] {
                    terms.push(reduce(&mut g, id, r)?);
                }
            }
            let output = sum_nodes(&mut g, &terms)?;
            let mut leaves = pyr.levels.clone();
            leaves.extend(b.bound().into_iter().map(|(_, id)| id));
            Ok(Case {
                graph: g,
                output,
                leaves,
            })
        }
        "full_loss" => {
            let params = random_params(&model::param_specs(&cfg), r, 0.4);
            let mut b = Binder::new(&params);
            let x = g.constant(uniform(r, &[cfg.encoder.input_dim, TINY_T], -1.0, 1.0));
            let fw = model::build_forward(&mut g, &mut b, &cfg, x)?;
            let s = r.random_range(4.0..14.0);
            let len = r.random_range(4.0..12.0);
            let action = FrameAction {
                segment: Segment::new(s, s + len),
                label: r.random_range(1..=cfg.decoder.num_classes),
            };
            let tc = TrainingConfig::default();
            let lens = level_lengths(TINY_T, cfg.encoder.levels);
            let assign = assign_targets(
                &[action],
                &lens,
                &fw.strides,
                &tc.regression_ranges(cfg.encoder.levels),
                tc.center_radius,
            );
            let loss = loss_graph(&mut g, &fw.levels, &assign, tc.vfl_alpha, tc.vfl_gamma)?;
            let leaves = b.bound().into_iter().map(|(_, id)| id).collect();
            Ok(Case {
                graph: g,
                output: loss.total,
                leaves,
            })
        }
        other => Err(crate::Error::Invalid(format!(
            "unknown composed case {other}"
        ))),
    }
}

fn sum_nodes(g: &mut Graph, terms: &[NodeId]) -> Result<NodeId> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

fn case_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Finite-difference checks of every op case and of the composed model.
pub fn gradient_suite(opts: &Options) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut stream = 0u64;
    for &name in OP_CASES {
        stream += 1;
        let mut r = case_rng(opts.seed, stream);
        let mut stats = FdStats::default();
        for point in 0..opts.points {
            let mut case = op_case(name, point, &mut r)?;
            stats.merge(check_case(&mut case, None, opts.inject_fault, &mut r)?);
        }
        checks.push(gradient_check(
            "grad-op",
            name,
            opts.points,
            stats,
            OP_TOLERANCE,
        ));
    }
    for (name, tol) in [
        ("encoder", OP_TOLERANCE),
        ("decoder", OP_TOLERANCE),
        ("full_loss", LOSS_TOLERANCE),
    ] {
        stream += 1;
        let mut r = case_rng(opts.seed, stream);
        let mut stats = FdStats::default();
        for _ in 0..opts.points {
            let mut case = composed_case(name, &mut r)?;
            stats.merge(check_case(
                &mut case,
                Some(SAMPLED_ENTRIES),
                opts.inject_fault,
                &mut r,
            )?);
        }
        checks.push(gradient_check("grad-model", name, opts.points, stats, tol));
    }
    Ok(checks)
}

/// Spectral filter against the direct circular convolution with `Re idft(W)`.
pub fn spectral_check(seed: u64) -> Result<Check> {
    let mut r = case_rng(seed, 1000);
    let mut worst: f64 = 0.0;
    for &t in &SPECTRAL_LENGTHS {
        for _ in 0..SPECTRAL_PAIRS {
            let x = uniform(&mut r, &[1, t], -1.0, 1.0);
            let wre = uniform(&mut r, &[1, t], -1.0, 1.0);
            let wim = uniform(&mut r, &[1, t], -1.0, 1.0);
            let mut g = Graph::new();
            let xn = g.constant(x.clone());
            let a = g.constant(wre.clone());
            let b = g.constant(wim.clone());
            let out = spectral_filter(&mut g, xn, a, b)?;
            let k = oracle::idft_real(wre.row(0), wim.row(0));
            let expect = oracle::circular_conv(x.row(0), &k);
            let scale = expect.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
            for (e, v) in expect.iter().zip(g.value(out).row(0)) {
                worst = worst.max((e - v).abs() / scale);
            }
        }
    }
    Ok(Check {
        suite: "oracle",
        name: "spectral_filter".into(),
        points: SPECTRAL_PAIRS * SPECTRAL_LENGTHS.len(),
        max_error: worst,
        tolerance: SPECTRAL_TOLERANCE,
        exact: false,
        skipped: 0,
    })
}

/// Random detections on a coarse grid so ties and duplicates are common.
pub fn random_detections(r: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<ScoredSegment> {
    (0..n)
        .map(|_| {
            let s = r.random_range(0..20) as f64 * 0.5;
            let len = r.random_range(1..10) as f64 * 0.5;
            ScoredSegment {
                start_s: s,
                end_s: s + len,
                label: r.random_range(1..=classes),
                score: r.random_range(1..=20) as f64 / 20.0,
                source_level: 1,
            }
        })
        .collect()
}

fn same_detections(a: &[ScoredSegment], b: &[ScoredSegment]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.score.to_bits() == y.score.to_bits()
                && x.start_s.to_bits() == y.start_s.to_bits()
                && x.end_s.to_bits() == y.end_s.to_bits()
                && x.label == y.label
        })
}

pub fn soft_nms_check(seed: u64) -> Check {
    let mut r = case_rng(seed, 1001);
    let mut mismatches = 0usize;
    for _ in 0..ORACLE_INSTANCES {
        let n = r.random_range(0..=64);
        let cands = random_detections(&mut r, n, 3);
        if !same_detections(
            &soft_nms(&cands, 0.5, 0.001),
            &oracle::soft_nms(&cands, 0.5, 0.001),
        ) {
            mismatches += 1;
        }
    }
    Check {
        suite: "oracle",
        name: "soft_nms_bitwise".into(),
        points: ORACLE_INSTANCES,
        max_error: mismatches as f64,
        tolerance: 0.0,
        exact: true,
        skipped: 0,
    }
}

pub fn matching_check(seed: u64) -> Check {
    let mut r = case_rng(seed, 1002);
    let mut mismatches = 0usize;
    for _ in 0..ORACLE_INSTANCES {
        let np = r.random_range(0..=12);
        let ng = r.random_range(0..=6);
        let mut preds = random_detections(&mut r, np, 1);
        preds.sort_by(rank_order);
        let gts: Vec<Segment> = random_detections(&mut r, ng, 1)
            .iter()
            .map(|d| d.segment())
            .collect();
        let tau = [0.3, 0.4, 0.5, 0.6, 0.7][r.random_range(0..5)];
        let segs: Vec<Segment> = preds.iter().map(|p| p.segment()).collect();
        let flags = match_predictions(&segs, &gts, tau);
        let pairs: Vec<(f64, f64)> = segs.iter().map(|s| (s.start, s.end)).collect();
        let gpairs: Vec<(f64, f64)> = gts.iter().map(|s| (s.start, s.end)).collect();
        let oracle_flags = oracle::match_flags(&pairs, &gpairs, tau);
        let ap = average_precision(&flags, gts.len()).map(f64::to_bits);
        let oracle_ap = oracle::average_precision(&oracle_flags, gts.len()).map(f64::to_bits);
        if flags != oracle_flags || ap != oracle_ap {
            mismatches += 1;
        }
    }
    Check {
        suite: "oracle",
        name: "match_ap_bitwise".into(),
        points: ORACLE_INSTANCES,
        max_error: mismatches as f64,
        tolerance: 0.0,
        exact: true,
        skipped: 0,
    }
}

/// AP of (FP, TP) against one ground truth, and the duplicate decay value.
pub fn hand_checks() -> Vec<Check> {
    let ap = average_precision(&[false, true], 1).unwrap_or(f64::NAN);
    let dup = |score: f64| ScoredSegment {
        start_s: 1.0,
        end_s: 2.0,
        label: 1,
        score,
        source_level: 1,
    };
    let out = soft_nms(&[dup(0.9), dup(0.8)], 0.5, 0.001);
    let decayed = out.get(1).map(|d| d.score).unwrap_or(f64::NAN);
    let expect = 0.8 * (-2.0f64).exp();
    let err = |a: f64, b: f64| {
        if a.is_finite() {
            (a - b).abs()
        } else {
            f64::INFINITY
        }
    };
    vec![
        Check {
            suite: "oracle",
            name: "ap_fp_tp_one_gt".into(),
            points: 1,
            max_error: err(ap, 0.5),
            tolerance: HAND_TOLERANCE,
            exact: false,
            skipped: 0,
        },
        Check {
            suite: "oracle",
            name: "soft_nms_decay".into(),
            points: 1,
            max_error: err(decayed, expect),
            tolerance: HAND_TOLERANCE,
            exact: false,
            skipped: 0,
        },
    ]
}

pub fn oracle_suite(seed: u64) -> Result<Vec<Check>> {
    let mut checks = vec![
        spectral_check(seed)?,
        soft_nms_check(seed),
        matching_check(seed),
    ];
    checks.extend(hand_checks());
    Ok(checks)
}

/// Gradient suite only.
pub fn run_gradcheck(opts: &Options) -> Result<Report> {
    let started = Instant::now();
    let checks = gradient_suite(opts)?;
    Ok(Report {
        checks,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Gradient and oracle suites.
pub fn run_selftest(opts: &Options) -> Result<Report> {
    let started = Instant::now();
    let mut checks = gradient_suite(opts)?;
    checks.extend(oracle_suite(opts.seed)?);
    Ok(Report {
        checks,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Per-check summary keyed by check name.
pub fn summary(report: &Report) -> BTreeMap<String, (f64, bool)> {
    report
        .checks
        .iter()
        .map(|c| (format!("{}/{}", c.suite, c.name), (c.max_error, c.passed())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> Options {
        Options {
            points: 2,
            seed: 3,
            inject_fault: false,
        }
    }

    #[test]
    fn every_op_case_builds_and_passes() {
        let checks = gradient_suite(&quick()).unwrap();
        assert_eq!(checks.len(), OP_CASES.len() + 3);
        for c in &checks {
            assert!(c.passed(), "{c:?}");
        }
    }

    #[test]
    fn injected_fault_is_detected() {
        let opts = Options {
            inject_fault: true,
            ..quick()
        };
        let checks = gradient_suite(&opts).unwrap();
        assert!(checks.iter().all(|c| !c.passed()), "{checks:?}");
    }

    #[test]
    fn oracle_suite_passes() {
        for c in oracle_suite(5).unwrap() {
            assert!(c.passed(), "{c:?}");
        }
    }

    #[test]
    fn full_loss_gradient_on_one_action() {
        let mut r = case_rng(11, 7);
        for _ in 0..3 {
            let mut case = composed_case("full_loss", &mut r).unwrap();
            let stats = check_case(&mut case, None, false, &mut r).unwrap();
            assert!(
                stats.checked > 0 && stats.max_error < LOSS_TOLERANCE,
                "{stats:?}"
            );
        }
    }

    #[test]
    fn report_table_lists_failures() {
        let report = Report {
            checks: vec![
                Check {
                    suite: "s",
                    name: "a".into(),
                    points: 1,
                    max_error: 0.0,
                    tolerance: 0.0,
                    exact: true,
                    skipped: 0,
                },
                Check {
                    suite: "s",
                    name: "b".into(),
                    points: 1,
                    max_error: 1.0,
                    tolerance: 1e-4,
                    exact: false,
                    skipped: 0,
                },
            ],
            seconds: 0.0,
        };
        assert!(!report.passed());
        assert_eq!(report.failures().count(), 1);
        assert!(report.to_table().contains("FAIL"));
    }
}
