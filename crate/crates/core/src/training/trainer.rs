//! The optimization loop: one full video per step.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::dataset::{Dataset, Video};
use crate::diff::{Array, Graph};
use crate::encoder::level_lengths;
use crate::error::{Error, Result};
use crate::evaluation::{map_report, EvalProtocol, MapReport};
use crate::inference::infer_all;
use crate::model;
use crate::params::{Binder, ModelParams};
use crate::training::assign::{assign_targets, Assignment};
use crate::training::objective::{loss_graph, read_breakdown, LossBreakdown};
use crate::training::optim::{clip_grad_norm, optimizer_step, OptimizerState, Schedule};

pub const BEST_CHECKPOINT: &str = "model.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const STATE_FILE: &str = "state.ckpt";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const METRICS_HEADER: &str = "epoch\ttotal\tvfl_pos\tvfl_neg\tiou\tlr\teval_map";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Means over the epoch's training videos.
    pub loss: LossBreakdown,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Average validation mAP, when evaluated.
    pub eval_map: Option<f64>,
}

impl EpochMetrics {
    pub fn tsv_line(&self) -> String {
        let mut s = format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.3e}",
            self.epoch,
            self.loss.total,
            self.loss.vfl_pos,
            self.loss.vfl_neg,
            self.loss.iou,
            self.lr
        );
        match self.eval_map {
            Some(m) => {
                let _ = write!(s, "\t{m:.6}");
            }
            None => s.push('\t'),
        }
        s
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Where checkpoints, metrics and the config snapshot go.
    pub out_dir: Option<PathBuf>,
    /// Continue from `out_dir/state.ckpt`.
    pub resume: bool,
    /// Stop after this many epochs in total (the schedule still spans the
    /// configured epoch count).
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation mAP (the final ones without validation).
    pub best: ModelParams,
    pub last: ModelParams,
    pub best_epoch: usize,
    pub log: Vec<EpochMetrics>,
    pub optimizer: OptimizerState,
}

/// Precomputed per-video targets.
struct Sample<'a> {
    video: &'a Video,
    assign: Assignment,
}

fn prepare<'a>(videos: &[&'a Video], cfg: &RunConfig) -> Result<Vec<Sample<'a>>> {
    let levels = cfg.encoder.levels;
    let ranges = cfg.training.regression_ranges(levels);
    let strides: Vec<usize> = (0..levels).map(|l| 1 << l).collect();
    videos
        .iter()
        .map(|v| {
            if v.features.rows() != cfg.encoder.input_dim {
                return Err(Error::Dataset(format!(
                    "{}: feature dim {} but encoder.input_dim is {}",
                    v.id,
                    v.features.rows(),
                    cfg.encoder.input_dim
                )));
            }
            let need = crate::encoder::min_length(levels);
            if v.num_frames() < need {
                return Err(Error::TooShort {
                    len: v.num_frames(),
                    levels,
                    required: need,
                });
            }
            for a in &v.annotations {
                if a.label > cfg.decoder.num_classes {
                    return Err(Error::Dataset(format!(
                        "{}: label {} exceeds decoder.num_classes {}",
                        v.id, a.label, cfg.decoder.num_classes
                    )));
                }
            }
            let lens = level_lengths(v.num_frames(), levels);
            let assign = assign_targets(
                &v.frame_actions(),
                &lens,
                &strides,
                &ranges,
                cfg.training.center_radius,
            );
            Ok(Sample { video: v, assign })
        })
        .collect()
}

/// Forward, loss and gradients for one video.
pub fn loss_and_grads(
    params: &ModelParams,
    cfg: &RunConfig,
    features: &Array,
    assign: &Assignment,
) -> Result<(LossBreakdown, ModelParams)> {
    let model_cfg = cfg.model();
    let mut g = Graph::new();
    let mut b = Binder::new(params);
    let x = g.constant(features.clone());
    let fw = model::build_forward(&mut g, &mut b, &model_cfg, x)?;
    let nodes = loss_graph(
        &mut g,
        &fw.levels,
        assign,
        cfg.training.vfl_alpha,
        cfg.training.vfl_gamma,
    )?;
    let grads = g.backward(nodes.total, Array::scalar(1.0))?;
    let mut out = ModelParams::new();
    for (path, id) in b.bound() {
        out.insert(path, grads.wrt(id));
    }
    Ok((read_breakdown(&g, &nodes, assign), out))
}

fn evaluate(
    params: &ModelParams,
    cfg: &RunConfig,
    videos: &[&Video],
    classes: &[String],
) -> Result<MapReport> {
    let dets = infer_all(videos, params, cfg)?;
    let gts = Dataset::ground_truth(videos.iter().copied());
    let protocol = EvalProtocol::new(cfg.eval.thresholds.clone(), classes.to_vec())?;
    Ok(map_report(&dets, &gts, &protocol))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

fn save_state(
    dir: &Path,
    params: &ModelParams,
    opt: &OptimizerState,
    epoch: usize,
    best_epoch: usize,
    best_map: f64,
) -> Result<()> {
    let mut st = params.clone();
    opt.export(&mut st);
    st.insert("train.epoch", Array::from_vec(vec![epoch as f64]));
    st.insert("train.best_epoch", Array::from_vec(vec![best_epoch as f64]));
    st.insert("train.best_map", Array::from_vec(vec![best_map]));
    st.save(&dir.join(STATE_FILE))
}

/// Train on the `train` split, validating on `val` when present.
pub fn train(ds: &Dataset, cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_videos = ds.split("train");
    if train_videos.is_empty() {
        return Err(Error::Dataset("no videos in the train split".into()));
    }
    let val_videos = ds.split("val");
    let samples = prepare(&train_videos, cfg)?;
    prepare(&val_videos, cfg)?;
    let model_cfg = cfg.model();
    let t = &cfg.training;

    let mut params = model::init_params(&model_cfg, cfg.seed);
    let schedule = Schedule::new(t.base_lr, t.warmup_epochs, t.epochs, samples.len());
    let mut opt = OptimizerState::new(
        &params,
        schedule,
        t.beta1,
        t.beta2,
        t.adam_eps,
        t.weight_decay,
    );
    let mut start_epoch = 1;
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_map = f64::NEG_INFINITY;

    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if opts.resume {
            let st = ModelParams::load(&dir.join(STATE_FILE))?;
            for (k, v) in params.iter_mut() {
                let src = st
                    .get(k)
                    .ok_or_else(|| Error::Checkpoint(format!("state lacks {k}")))?;
                if src.shape() != v.shape() {
                    return Err(Error::Checkpoint(format!("state shape mismatch for {k}")));
                }
                *v = src.clone();
            }
            opt.import(&st)?;
            let scalar = |k: &str| {
                st.get(k)
                    .map(|a| a.data()[0])
                    .ok_or_else(|| Error::Checkpoint(format!("state lacks {k}")))
            };
            start_epoch = scalar("train.epoch")? as usize + 1;
            best_epoch = scalar("train.best_epoch")? as usize;
            best_map = scalar("train.best_map")?;
            best = match ModelParams::load(&dir.join(BEST_CHECKPOINT)) {
                Ok(p) => p,
                Err(_) => params.clone(),
            };
            log::info!("resuming at epoch {start_epoch}, step {}", opt.step);
        } else {
            write_file(&dir.join(CONFIG_SNAPSHOT), &cfg.to_toml_string())?;
            write_file(&dir.join(METRICS_FILE), &format!("{METRICS_HEADER}\n"))?;
        }
    }

    let last_epoch = opts.stop_after.unwrap_or(t.epochs).min(t.epochs);
    let mut log_rows = Vec::new();
    for epoch in start_epoch..=last_epoch {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut lr = 0.0;
        for &i in &order {
            let s = &samples[i];
            let (loss, mut grads) = loss_and_grads(&params, cfg, &s.video.features, &s.assign)
                .map_err(|e| {
                    if e.is_numeric() {
                        Error::NonFiniteLoss {
                            epoch,
                            video: s.video.id.clone(),
                            detail: e.to_string(),
                        }
                    } else {
                        e
                    }
                })?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    video: s.video.id.clone(),
                    detail: format!("{loss:?}"),
                });
            }
            clip_grad_norm(&mut grads, t.clip_grad_norm);
            lr = optimizer_step(&mut params, &grads, &mut opt)?;
            sum.total += loss.total;
            sum.vfl_pos += loss.vfl_pos;
            sum.vfl_neg += loss.vfl_neg;
            sum.iou += loss.iou;
            sum.num_pos += loss.num_pos;
            sum.num_neg += loss.num_neg;
        }
        // Checkpoints store f32; rounding the live state here lets a resumed
        // run continue from exactly what was saved.
        params.quantize_f32();
        opt.m.quantize_f32();
        opt.v.quantize_f32();
        let n = samples.len() as f64;
        let mean = LossBreakdown {
            total: sum.total / n,
            vfl_pos: sum.vfl_pos / n,
            vfl_neg: sum.vfl_neg / n,
            iou: sum.iou / n,
            num_pos: sum.num_pos,
            num_neg: sum.num_neg,
        };
        let due = epoch == t.epochs
            || epoch == last_epoch
            || (t.eval_every > 0 && epoch % t.eval_every == 0);
        let eval_map = if due && !val_videos.is_empty() {
            Some(evaluate(&params, cfg, &val_videos, &ds.classes)?.average as f32 as f64)
        } else {
            None
        };
        match eval_map {
            Some(m) if m > best_map => {
                best_map = m;
                best_epoch = epoch;
                best = params.clone();
            }
            None if val_videos.is_empty() => {
                best_epoch = epoch;
                best = params.clone();
            }
            _ => {}
        }
        let row = EpochMetrics {
            epoch,
            loss: mean,
            lr,
            eval_map,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} (vfl+ {:.4} vfl- {:.4} iou {:.4}) lr {:.2e}{} [{:.1}s]",
            mean.total,
            mean.vfl_pos,
            mean.vfl_neg,
            mean.iou,
            lr,
            eval_map
                .map(|m| format!(" val mAP {m:.4}"))
                .unwrap_or_default(),
            started.elapsed().as_secs_f64()
        );
        if let Some(dir) = &opts.out_dir {
            append_line(&dir.join(METRICS_FILE), &row.tsv_line())?;
            if best_epoch == epoch {
                best.save(&dir.join(BEST_CHECKPOINT))?;
            }
            params.save(&dir.join(LAST_CHECKPOINT))?;
            save_state(dir, &params, &opt, epoch, best_epoch, best_map)?;
        }
        log_rows.push(row);
    }
    Ok(TrainOutcome {
        best,
        last: params,
        best_epoch,
        log: log_rows,
        optimizer: opt,
    })
}

/// Read a metrics file back into rows.
pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        let num = |i: usize| -> Result<f64> {
            f.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Invalid(format!("bad metrics line {line:?}")))
        };
        out.push(EpochMetrics {
            epoch: num(0)? as usize,
            loss: LossBreakdown {
                total: num(1)?,
                vfl_pos: num(2)?,
                vfl_neg: num(3)?,
                iou: num(4)?,
                ..Default::default()
            },
            lr: num(5)?,
            eval_map: f.get(6).and_then(|s| s.parse().ok()),
        });
    }
    Ok(out)
}
