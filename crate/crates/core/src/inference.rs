//! From head outputs to deduplicated detections in seconds.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{InferenceConfig, ModelConfig, RunConfig};
use crate::dataset::Video;
use crate::decoder::LevelOutputs;
use crate::diff::Array;
use crate::error::{Error, Result};
use crate::model;
use crate::params::ModelParams;
use crate::segment::{tiou, ScoredSegment};

/// Minimum length of an emitted segment, in grid units.
pub const MIN_GRID_LENGTH: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct TimeMapping {
    pub feature_fps: f64,
    pub strides: Vec<usize>,
}

impl TimeMapping {
    pub fn seconds(&self, level: usize, grid: f64) -> f64 {
        grid * self.strides[level] as f64 / self.feature_fps
    }
}

/// Ranking order: higher score, earlier start, lower class, earlier end.
pub fn rank_order(a: &ScoredSegment, b: &ScoredSegment) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.start_s.partial_cmp(&b.start_s).unwrap_or(Ordering::Equal))
        .then(a.label.cmp(&b.label))
        .then(a.end_s.partial_cmp(&b.end_s).unwrap_or(Ordering::Equal))
}

/// Candidates above `threshold` from every level, clamped to `[0, duration]`
/// seconds and capped at `top_k` by score.
pub fn collect(
    outputs: &[LevelOutputs],
    threshold: f64,
    map: &TimeMapping,
    duration: f64,
    top_k: usize,
) -> Vec<ScoredSegment> {
    let mut out = Vec::new();
    for (l, o) in outputs.iter().enumerate() {
        let grid_end = duration * map.feature_fps / map.strides[l] as f64;
        let classes = o.cls_refined.rows();
        for t in 0..o.len() {
            let mut s = o.start_refined[t].clamp(0.0, grid_end);
            let mut e = o.end_refined[t].clamp(0.0, grid_end);
            if e - s < MIN_GRID_LENGTH {
                if s + MIN_GRID_LENGTH <= grid_end {
                    e = s + MIN_GRID_LENGTH;
                } else {
                    s = (e - MIN_GRID_LENGTH).max(0.0);
                    e = s + MIN_GRID_LENGTH;
                }
            }
            for c in 0..classes {
                let score = o.cls_refined.at(c, t);
                if score > threshold {
                    out.push(ScoredSegment {
                        start_s: map.seconds(l, s),
                        end_s: map.seconds(l, e),
                        label: c + 1,
                        score,
                        source_level: l + 1,
                    });
                }
            }
        }
    }
    out.sort_by(rank_order);
    out.truncate(top_k);
    out
}

/// Gaussian Soft-NMS applied within each class.
pub fn soft_nms(cands: &[ScoredSegment], sigma: f64, floor: f64) -> Vec<ScoredSegment> {
    let mut by_class: BTreeMap<usize, Vec<ScoredSegment>> = BTreeMap::new();
    for c in cands.iter().filter(|c| c.score >= floor) {
        by_class.entry(c.label).or_default().push(*c);
    }
    let mut kept = Vec::with_capacity(cands.len());
    for (_, mut pool) in by_class {
        while !pool.is_empty() {
            let best = (1..pool.len()).fold(0, |b, i| {
                if rank_order(&pool[i], &pool[b]) == Ordering::Less {
                    i
                } else {
                    b
                }
            });
            let chosen = pool.swap_remove(best);
            for c in pool.iter_mut() {
                let o = tiou(chosen.segment(), c.segment());
                c.score *= (-(o * o) / sigma).exp();
            }
            pool.retain(|c| c.score >= floor);
            kept.push(chosen);
        }
    }
    kept.sort_by(rank_order);
    kept
}

/// Full pipeline for one video.
pub fn infer_features(
    features: &Array,
    feature_fps: f64,
    params: &ModelParams,
    model_cfg: &ModelConfig,
    cfg: &InferenceConfig,
) -> Result<Vec<ScoredSegment>> {
    let (outputs, strides) = model::predict(params, model_cfg, features)?;
    let map = TimeMapping {
        feature_fps,
        strides,
    };
    let duration = features.cols() as f64 / feature_fps;
    let cands = collect(&outputs, cfg.threshold, &map, duration, cfg.top_k);
    Ok(soft_nms(&cands, cfg.sigma, cfg.score_floor))
}

pub fn infer(video: &Video, params: &ModelParams, cfg: &RunConfig) -> Result<Vec<ScoredSegment>> {
    infer_features(
        &video.features,
        video.feature_fps,
        params,
        &cfg.model(),
        &cfg.inference,
    )
}

/// Detections for many videos, keyed by id. Videos run in parallel on the
/// current rayon pool; the result does not depend on the pool size.
pub fn infer_all(
    videos: &[&Video],
    params: &ModelParams,
    cfg: &RunConfig,
) -> Result<BTreeMap<String, Vec<ScoredSegment>>> {
    let results: Vec<Result<(String, Vec<ScoredSegment>)>> = videos
        .par_iter()
        .map(|v| infer(v, params, cfg).map(|d| (v.id.clone(), d)))
        .collect();
    results.into_iter().collect()
}

/// Load a checkpoint and check it against the model configuration.
pub fn load_model(path: &Path, cfg: &ModelConfig) -> Result<ModelParams> {
    let mut params = ModelParams::load(path)?;
    // Training state files also carry optimizer and bookkeeping entries.
    let extra = |k: &str| k.starts_with("opt.") || k.starts_with("train.");
    if params.iter().any(|(k, _)| extra(k)) {
        let mut only = ModelParams::new();
        for (k, v) in params.iter().filter(|(k, _)| !extra(k)) {
            only.insert(k.clone(), v.clone());
        }
        params = only;
    }
    params.check_against(&model::param_specs(cfg))?;
    Ok(params)
}

/// One line of the detections file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub video: String,
    pub label: String,
    pub start: f64,
    pub end: f64,
    pub score: f64,
}

/// JSON Lines, videos in id order, detections in ranking order.
pub fn detections_jsonl(dets: &BTreeMap<String, Vec<ScoredSegment>>, classes: &[String]) -> String {
    let mut out = String::new();
    for (vid, list) in dets {
        for d in list {
            let rec = DetectionRecord {
                video: vid.clone(),
                label: classes
                    .get(d.label - 1)
                    .cloned()
                    .unwrap_or_else(|| format!("class_{}", d.label)),
                start: d.start_s,
                end: d.end_s,
                score: d.score,
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
    }
    out
}

pub fn write_detections(
    path: &Path,
    dets: &BTreeMap<String, Vec<ScoredSegment>>,
    classes: &[String],
) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(detections_jsonl(dets, classes).as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Parse a detections file written by [`write_detections`].
pub fn read_detections(
    path: &Path,
    classes: &[String],
) -> Result<BTreeMap<String, Vec<ScoredSegment>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text, classes)
}

pub fn parse_detections(
    text: &str,
    classes: &[String],
) -> Result<BTreeMap<String, Vec<ScoredSegment>>> {
    let mut out: BTreeMap<String, Vec<ScoredSegment>> = BTreeMap::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let rec: DetectionRecord = serde_json::from_str(line)
            .map_err(|e| Error::Invalid(format!("detections line {}: {e}", i + 1)))?;
        let label = classes
            .iter()
            .position(|c| *c == rec.label)
            .map(|p| p + 1)
            .or_else(|| {
                rec.label
                    .strip_prefix("class_")
                    .and_then(|n| n.parse().ok())
            })
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "detections line {}: unknown class {:?}",
                    i + 1,
                    rec.label
                ))
            })?;
        if rec.start.partial_cmp(&rec.end) != Some(Ordering::Less)
            || !(0.0..=1.0).contains(&rec.score)
        {
            return Err(Error::Invalid(format!(
                "detections line {}: bad segment or score",
                i + 1
            )));
        }
        out.entry(rec.video).or_default().push(ScoredSegment {
            start_s: rec.start,
            end_s: rec.end,
            label,
            score: rec.score,
            source_level: 0,
        });
    }
    for list in out.values_mut() {
        list.sort_by(rank_order);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
