//! The detection objective over refined outputs.

use crate::decoder::{LevelNodes, LevelOutputs};
use crate::diff::{Array, Graph, IouEntry, NodeId, VarifocalTargets};
use crate::error::{Error, Result};
use crate::segment::{tiou, Segment};
use crate::training::assign::Assignment;
use crate::training::loss::{iou_loss, varifocal_loss};

/// Smallest quality target for a positive, so that `q > 0` exactly on positives.
pub const MIN_QUALITY: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub vfl_pos: f64,
    pub vfl_neg: f64,
    pub iou: f64,
    pub num_pos: usize,
    pub num_neg: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub vfl_pos: NodeId,
    pub vfl_neg: NodeId,
    pub iou: NodeId,
}

/// Constant per-element targets derived from the current refined boundaries.
struct LevelTargets {
    pos_quality: Array,
    pos_weight: Array,
    neg_weight: Array,
    iou: Vec<IouEntry>,
}

fn level_targets(
    labels: &[usize],
    targets: &[Option<Segment>],
    start: &[f64],
    end: &[f64],
    classes: usize,
    pos_norm: f64,
    neg_norm: f64,
) -> LevelTargets {
    let t_n = labels.len();
    let mut pos_quality = Array::zeros(&[classes, t_n]);
    let mut pos_weight = Array::zeros(&[classes, t_n]);
    let mut neg_weight = Array::zeros(&[classes, t_n]);
    let mut iou = Vec::new();
    for t in 0..t_n {
        match targets[t] {
            Some(target) if labels[t] > 0 => {
                let q = tiou(Segment::new(start[t], end[t]), target).max(MIN_QUALITY);
                for c in 0..classes {
                    pos_weight.data_mut()[c * t_n + t] = q * pos_norm;
                }
                pos_quality.data_mut()[(labels[t] - 1) * t_n + t] = q;
                iou.push(IouEntry {
                    t,
                    start: target.start,
                    end: target.end,
                    weight: pos_norm,
                });
            }
            _ => {
                for c in 0..classes {
                    neg_weight.data_mut()[c * t_n + t] = neg_norm;
                }
            }
        }
    }
    LevelTargets {
        pos_quality,
        pos_weight,
        neg_weight,
        iou,
    }
}

fn norms(assign: &Assignment) -> (f64, f64) {
    (
        1.0 / assign.num_pos().max(1) as f64,
        1.0 / assign.num_neg().max(1) as f64,
    )
}

fn check_lengths(assign: &Assignment, lens: impl Iterator<Item = usize>) -> Result<()> {
    let lens: Vec<usize> = lens.collect();
    let want: Vec<usize> = assign.levels.iter().map(|l| l.labels.len()).collect();
    if lens != want {
        return Err(Error::Invalid(format!(
            "outputs have lengths {lens:?}, assignment {want:?}"
        )));
    }
    Ok(())
}

/// Build the objective on the graph. Quality targets and IoU weights are read
/// from the current refined boundaries and baked in as constants.
pub fn loss_graph(
    g: &mut Graph,
    levels: &[LevelNodes],
    assign: &Assignment,
    alpha: f64,
    gamma: f64,
) -> Result<LossNodes> {
    check_lengths(
        assign,
        levels.iter().map(|n| g.value(n.start_refined).len()),
    )?;
    let (pos_norm, neg_norm) = norms(assign);
    let mut pos_terms = Vec::new();
    let mut neg_terms = Vec::new();
    let mut iou_terms = Vec::new();
    for (n, a) in levels.iter().zip(&assign.levels) {
        let classes = g.value(n.cls_refined).rows();
        let tg = level_targets(
            &a.labels,
            &a.targets,
            g.value(n.start_refined).data(),
            g.value(n.end_refined).data(),
            classes,
            pos_norm,
            neg_norm,
        );
        let neg_quality = Array::zeros(tg.neg_weight.shape());
        pos_terms.push(g.varifocal(
            n.cls_refined,
            VarifocalTargets {
                quality: tg.pos_quality,
                weight: tg.pos_weight,
                alpha,
                gamma,
            },
        )?);
        neg_terms.push(g.varifocal(
            n.cls_refined,
            VarifocalTargets {
                quality: neg_quality,
                weight: tg.neg_weight,
                alpha,
                gamma,
            },
        )?);
        iou_terms.push(g.iou_loss(n.start_refined, n.end_refined, tg.iou)?);
    }
    let vfl_pos = add_all(g, &pos_terms)?;
    let vfl_neg = add_all(g, &neg_terms)?;
    let iou = add_all(g, &iou_terms)?;
    let s = g.add(vfl_pos, vfl_neg)?;
    let total = g.add(s, iou)?;
    Ok(LossNodes {
        total,
        vfl_pos,
        vfl_neg,
        iou,
    })
}

fn add_all(g: &mut Graph, terms: &[NodeId]) -> Result<NodeId> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

pub fn read_breakdown(g: &Graph, nodes: &LossNodes, assign: &Assignment) -> LossBreakdown {
    LossBreakdown {
        total: g.value(nodes.total).item(),
        vfl_pos: g.value(nodes.vfl_pos).item(),
        vfl_neg: g.value(nodes.vfl_neg).item(),
        iou: g.value(nodes.iou).item(),
        num_pos: assign.num_pos(),
        num_neg: assign.num_neg(),
    }
}

/// The same objective evaluated directly on materialized outputs.
pub fn total_loss(
    outputs: &[LevelOutputs],
    assign: &Assignment,
    alpha: f64,
    gamma: f64,
) -> Result<LossBreakdown> {
    check_lengths(assign, outputs.iter().map(|o| o.len()))?;
    let (pos_norm, neg_norm) = norms(assign);
    let mut out = LossBreakdown {
        num_pos: assign.num_pos(),
        num_neg: assign.num_neg(),
        ..Default::default()
    };
    for (o, a) in outputs.iter().zip(&assign.levels) {
        let classes = o.cls_refined.rows();
        for t in 0..o.len() {
            let col = |c: usize| o.cls_refined.at(c, t);
            match a.targets[t] {
                Some(target) if a.labels[t] > 0 => {
                    let pred = Segment::new(o.start_refined[t], o.end_refined[t]);
                    let q = tiou(pred, target).max(MIN_QUALITY);
                    for c in 0..classes {
                        let qc = if c + 1 == a.labels[t] { q } else { 0.0 };
                        out.vfl_pos += pos_norm * q * varifocal_loss(col(c), qc, alpha, gamma);
                    }
                    out.iou += pos_norm * iou_loss(pred, target);
                }
                _ => {
                    for c in 0..classes {
                        out.vfl_neg += neg_norm * varifocal_loss(col(c), 0.0, alpha, gamma);
                    }
                }
            }
        }
    }
    out.total = out.vfl_pos + out.vfl_neg + out.iou;
    if !out.total.is_finite() {
        return Err(Error::Invalid(format!("non-finite loss {out:?}")));
    }
    Ok(out)
}
