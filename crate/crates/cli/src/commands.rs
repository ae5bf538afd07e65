use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use tadet_core::config::{RunConfig, ThresholdGrid};
use tadet_core::dataset::{self, Dataset, SyntheticSpec, Video, MANIFEST_FILE};
use tadet_core::evaluation::{map_report, EvalProtocol};
use tadet_core::inference::{infer_all, load_model, read_detections, write_detections};
use tadet_core::selftest::{self, Options};
use tadet_core::training::trainer::{self, TrainOptions, CONFIG_SNAPSHOT};

use crate::CheckArgs;

/// Some self-checks did not pass.
#[derive(Debug)]
pub struct ChecksFailed(pub usize);

impl fmt::Display for ChecksFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} check(s) failed", self.0)
    }
}

impl std::error::Error for ChecksFailed {}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with generator settings; flags below override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub videos: Option<usize>,
    /// Frames per video.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Standard deviation of the feature noise.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints and metrics.
    #[arg(long)]
    pub out: PathBuf,
    /// Run configuration (TOML); defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// tIoU thresholds for validation, e.g. `0.3:0.1:0.7` or `0.5,0.75`.
    #[arg(long)]
    pub thresholds: Option<ThresholdGrid>,
    /// Continue from the state saved in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Detections file (JSON Lines) to score.
    #[arg(
        long,
        conflicts_with = "checkpoint",
        required_unless_present = "checkpoint"
    )]
    pub detections: Option<PathBuf>,
    /// Checkpoint to run before scoring.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Run configuration; defaults to the snapshot next to the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Split to score (`all` for every video).
    #[arg(long, default_value = "val")]
    pub split: String,
    #[arg(long)]
    pub thresholds: Option<ThresholdGrid>,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run configuration; defaults to the snapshot next to the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Split to run on (`all` for every video).
    #[arg(long, default_value = "val")]
    pub split: String,
    /// Restrict to one video id.
    #[arg(long)]
    pub video: Option<String>,
    /// Output detections file (JSON Lines).
    #[arg(long)]
    pub out: PathBuf,
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    Ok(dataset::load(&manifest)?)
}

fn select<'a>(ds: &'a Dataset, split: &str, video: Option<&str>) -> Result<Vec<&'a Video>> {
    let mut videos: Vec<&Video> = if split == "all" {
        ds.videos.iter().collect()
    } else {
        ds.split(split)
    };
    if let Some(id) = video {
        videos.retain(|v| v.id == id);
    }
    if videos.is_empty() {
        bail!(tadet_core::Error::Invalid(format!(
            "no videos selected (split {split:?}{})",
            video.map(|v| format!(", video {v:?}")).unwrap_or_default()
        )));
    }
    Ok(videos)
}

/// Explicit config, else the snapshot beside the checkpoint, else defaults.
fn resolve_config(explicit: Option<&Path>, checkpoint: Option<&Path>) -> Result<RunConfig> {
    if let Some(p) = explicit {
        return Ok(RunConfig::load(p)?);
    }
    if let Some(dir) = checkpoint.and_then(Path::parent) {
        let snap = dir.join(CONFIG_SNAPSHOT);
        if snap.is_file() {
            log::info!("using config {}", snap.display());
            return Ok(RunConfig::load(&snap)?);
        }
    }
    Ok(RunConfig::default())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SyntheticSpec::from_toml_str(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(v) = a.videos {
        spec.num_videos = v;
    }
    if let Some(f) = a.frames {
        spec.min_frames = f;
        spec.max_frames = f;
    }
    if let Some(d) = a.dim {
        spec.feature_dim = d;
    }
    if let Some(c) = a.classes {
        spec.num_classes = c;
    }
    if let Some(n) = a.noise {
        spec.noise = n;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let ds = dataset::generate(&spec, &a.out)?;
    println!(
        "wrote {} videos ({} train, {} val) to {}",
        ds.videos.len(),
        ds.split("train").len(),
        ds.split("val").len(),
        a.out.display()
    );
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = if a.resume && a.config.is_none() {
        RunConfig::load(&a.out.join(CONFIG_SNAPSHOT))?
    } else {
        resolve_config(a.config.as_deref(), None)?
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.training.epochs = e;
    }
    if let Some(t) = &a.thresholds {
        cfg.eval.thresholds = t.0.clone();
    }
    cfg.validate()?;
    let ds = load_dataset(&a.data)?;
    let opts = TrainOptions {
        out_dir: Some(a.out.clone()),
        resume: a.resume,
        stop_after: None,
    };
    let outcome = trainer::train(&ds, &cfg, &opts)?;
    let last = outcome.log.last();
    println!(
        "trained {} epoch(s); best epoch {}{}; checkpoint {}",
        outcome.log.len(),
        outcome.best_epoch,
        last.and_then(|r| r.eval_map)
            .map(|m| format!(", final val mAP {:.2}%", 100.0 * m))
            .unwrap_or_default(),
        a.out.join(trainer::BEST_CHECKPOINT).display()
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mut cfg = resolve_config(a.config.as_deref(), a.checkpoint.as_deref())?;
    if let Some(t) = &a.thresholds {
        cfg.eval.thresholds = t.0.clone();
    }
    cfg.validate()?;
    let ds = load_dataset(&a.data)?;
    let videos = select(&ds, &a.split, None)?;
    let dets = match (&a.detections, &a.checkpoint) {
        (Some(p), _) => {
            let mut all = read_detections(p, &ds.classes)?;
            all.retain(|k, _| videos.iter().any(|v| &v.id == k));
            all
        }
        (None, Some(ckpt)) => {
            let params = load_model(ckpt, &cfg.model())?;
            infer_all(&videos, &params, &cfg)?
        }
        (None, None) => bail!(tadet_core::Error::Invalid(
            "need --detections or --checkpoint".into()
        )),
    };
    let gts = Dataset::ground_truth(videos.iter().copied());
    let protocol = EvalProtocol::new(cfg.eval.thresholds.clone(), ds.classes.clone())?;
    let report = map_report(&dets, &gts, &protocol);
    print!("{}", report.to_table());
    if let Some(p) = &a.json {
        std::fs::write(p, report.to_json()).map_err(|e| tadet_core::Error::Io {
            path: p.clone(),
            source: e,
        })?;
    }
    Ok(())
}

pub fn infer(a: &InferArgs) -> Result<()> {
    let cfg = resolve_config(a.config.as_deref(), Some(&a.checkpoint))?;
    cfg.validate()?;
    let ds = load_dataset(&a.data)?;
    let videos = select(&ds, &a.split, a.video.as_deref())?;
    let params = load_model(&a.checkpoint, &cfg.model())?;
    let dets = infer_all(&videos, &params, &cfg)?;
    write_detections(&a.out, &dets, &ds.classes)?;
    let n: usize = dets.values().map(Vec::len).sum();
    println!(
        "wrote {n} detections for {} video(s) to {}",
        dets.len(),
        a.out.display()
    );
    Ok(())
}

pub fn check(a: &CheckArgs, with_oracles: bool) -> Result<()> {
    let opts = Options {
        points: a.points,
        seed: a.seed,
        inject_fault: a.inject_fault,
    };
    let report = if with_oracles {
        selftest::run_selftest(&opts)?
    } else {
        selftest::run_gradcheck(&opts)?
    };
    print!("{}", report.to_table());
    let failed = report.failures().count();
    if failed > 0 {
        return Err(ChecksFailed(failed).into());
    }
    Ok(())
}
