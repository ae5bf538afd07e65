//! Mean average precision over tIoU thresholds.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::config::validate_thresholds;
use crate::error::Result;
use crate::segment::{tiou, ActionInstance, ScoredSegment, Segment};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalProtocol {
    pub thresholds: Vec<f64>,
    pub classes: Vec<String>,
}

impl EvalProtocol {
    pub fn new(thresholds: Vec<f64>, classes: Vec<String>) -> Result<Self> {
        validate_thresholds(&thresholds)?;
        Ok(EvalProtocol {
            thresholds,
            classes,
        })
    }
}

/// Greedy matching of ranked predictions. Each prediction takes the unmatched
/// ground truth with the highest tIoU ≥ `tau` (earliest on ties).
pub fn match_predictions(preds: &[Segment], gts: &[Segment], tau: f64) -> Vec<bool> {
    let mut taken = vec![false; gts.len()];
    preds
        .iter()
        .map(|&p| {
            let mut best: Option<(usize, f64)> = None;
            for (j, &g) in gts.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                let o = tiou(p, g);
                if o >= tau && best.is_none_or(|(_, b)| o > b) {
                    best = Some((j, o));
                }
            }
            if let Some((j, _)) = best {
                taken[j] = true;
            }
            best.is_some()
        })
        .collect()
}

/// All-point interpolated AP; `None` when there is no ground truth.
pub fn average_precision(flags: &[bool], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut precision = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (i, &f) in flags.iter().enumerate() {
        tp += f as usize;
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let total = flags
        .iter()
        .zip(&precision)
        .filter(|(f, _)| **f)
        .fold(0.0, |acc, (_, p)| acc + p);
    Some(total / num_gt as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub thresholds: Vec<f64>,
    /// mAP per threshold.
    pub map: Vec<f64>,
    pub average: f64,
    /// AP per class name and threshold; `None` for classes without ground truth.
    pub per_class: BTreeMap<String, Vec<Option<f64>>>,
}

impl MapReport {
    pub fn at(&self, tau: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| (t - tau).abs() < 1e-9)
            .map(|i| self.map[i])
    }

    /// Columns are the thresholds followed by `Avg.`, values in percent.
    pub fn to_table(&self) -> String {
        let mut head = String::from("tIoU ");
        let mut row = String::from("mAP  ");
        for (t, m) in self.thresholds.iter().zip(&self.map) {
            let _ = write!(head, "| {:>6} ", format!("{t:.2}"));
            let _ = write!(row, "| {:>6.2} ", 100.0 * m);
        }
        let _ = write!(head, "| {:>6}", "Avg.");
        let _ = write!(row, "| {:>6.2}", 100.0 * self.average);
        format!("{head}\n{}\n{row}\n", "-".repeat(head.len()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// mAP per threshold over classes that have ground truth. Predictions of a
/// class are ranked across videos by score, then earlier start and end, then
/// video id.
pub fn map_report(
    preds: &BTreeMap<String, Vec<ScoredSegment>>,
    gts: &BTreeMap<String, Vec<ActionInstance>>,
    protocol: &EvalProtocol,
) -> MapReport {
    let num_classes = protocol.classes.len();
    let mut per_class: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    let mut map = Vec::with_capacity(protocol.thresholds.len());
    // Ranked predictions and per-video ground truth for every class.
    let mut ranked: Vec<Vec<(&str, Segment)>> = vec![Vec::new(); num_classes];
    let mut gt_by: Vec<BTreeMap<&str, Vec<Segment>>> = vec![BTreeMap::new(); num_classes];
    for c in 1..=num_classes {
        let mut list: Vec<(&str, &ScoredSegment)> = preds
            .iter()
            .flat_map(|(v, ps)| {
                ps.iter()
                    .filter(|p| p.label == c)
                    .map(move |p| (v.as_str(), p))
            })
            .collect();
        list.sort_by(|a, b| {
            b.1.score
                .partial_cmp(&a.1.score)
                .unwrap()
                .then(a.1.start_s.partial_cmp(&b.1.start_s).unwrap())
                .then(a.1.end_s.partial_cmp(&b.1.end_s).unwrap())
                .then(a.0.cmp(b.0))
        });
        ranked[c - 1] = list.into_iter().map(|(v, p)| (v, p.segment())).collect();
        for (v, g) in gts {
            let segs: Vec<Segment> = g
                .iter()
                .filter(|a| a.label == c)
                .map(|a| a.segment())
                .collect();
            if !segs.is_empty() {
                gt_by[c - 1].insert(v.as_str(), segs);
            }
        }
    }
    for &tau in &protocol.thresholds {
        let mut aps = Vec::new();
        for c in 0..num_classes {
            let num_gt: usize = gt_by[c].values().map(Vec::len).sum();
            let mut taken: BTreeMap<&str, Vec<bool>> = gt_by[c]
                .iter()
                .map(|(v, g)| (*v, vec![false; g.len()]))
                .collect();
            let flags: Vec<bool> = ranked[c]
                .iter()
                .map(|(v, p)| {
                    let Some(g) = gt_by[c].get(v) else {
                        return false;
                    };
                    let used = taken.get_mut(v).expect("same keys");
                    let mut best: Option<(usize, f64)> = None;
                    for (j, &s) in g.iter().enumerate() {
                        let o = tiou(*p, s);
                        if !used[j] && o >= tau && best.is_none_or(|(_, b)| o > b) {
                            best = Some((j, o));
                        }
                    }
                    if let Some((j, _)) = best {
                        used[j] = true;
                    }
                    best.is_some()
                })
                .collect();
            let ap = average_precision(&flags, num_gt);
            per_class
                .entry(protocol.classes[c].clone())
                .or_default()
                .push(ap);
            if let Some(ap) = ap {
                aps.push(ap);
            }
        }
        map.push(if aps.is_empty() {
            0.0
        } else {
            aps.iter().fold(0.0, |a, b| a + b) / aps.len() as f64
        });
    }
    let average = if map.is_empty() {
        0.0
    } else {
        map.iter().sum::<f64>() / map.len() as f64
    };
    MapReport {
        thresholds: protocol.thresholds.clone(),
        map,
        average,
        per_class,
    }
}

#[cfg(test)]
mod tests;
