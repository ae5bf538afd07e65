//! Run configuration. Every section rejects unknown keys and the whole config
//! is validated before any work starts.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Channels of the input feature sequence.
    pub input_dim: usize,
    /// Embedding width `D`.
    pub embed_dim: usize,
    /// Pyramid depth `L`.
    pub levels: usize,
    pub gmg_blocks_per_level: usize,
    pub group_count: usize,
    pub ffn_expansion: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_dim: 32,
            embed_dim: 64,
            levels: 6,
            gmg_blocks_per_level: 1,
            group_count: 8,
            ffn_expansion: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    /// Number of action classes `C`.
    pub num_classes: usize,
    /// Boundary bins `B` of the trident head.
    pub bins: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            num_classes: 5,
            bins: 16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Instant,
    Local,
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    Attention,
    Add,
    Concat,
}

/// Switches for the architecture ablations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub gate: bool,
    pub branches: Vec<Branch>,
    pub refine_cls: bool,
    pub refine_reg: bool,
    pub decouple: bool,
    pub fusion: Fusion,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            gate: true,
            branches: vec![Branch::Instant, Branch::Local, Branch::Global],
            refine_cls: true,
            refine_reg: true,
            decouple: true,
            fusion: Fusion::Attention,
        }
    }
}

impl AblationConfig {
    pub fn has(&self, b: Branch) -> bool {
        self.branches.contains(&b)
    }

    pub fn refine(&self) -> bool {
        self.refine_cls || self.refine_reg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_grad_norm: f64,
    /// Center-sampling radius in strides.
    pub center_radius: f64,
    /// Upper bound (in input frames) of the first level's regression range;
    /// each later level doubles it and the last level is unbounded.
    pub regression_base: f64,
    pub vfl_alpha: f64,
    pub vfl_gamma: f64,
    /// Evaluate on the validation split every N epochs (0: final epoch only).
    pub eval_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 30,
            warmup_epochs: 5,
            base_lr: 1e-3,
            weight_decay: 0.03,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_grad_norm: 1.0,
            center_radius: 1.5,
            regression_base: 4.0,
            vfl_alpha: 0.75,
            vfl_gamma: 2.0,
            eval_every: 5,
        }
    }
}

impl TrainingConfig {
    /// `(lo, hi]` regression range per level in input frames.
    pub fn regression_ranges(&self, levels: usize) -> Vec<(f64, f64)> {
        (0..levels)
            .map(|l| {
                let lo = if l == 0 {
                    0.0
                } else {
                    self.regression_base * 2f64.powi(l as i32 - 1)
                };
                let hi = if l + 1 == levels {
                    f64::INFINITY
                } else {
                    self.regression_base * 2f64.powi(l as i32)
                };
                (lo, hi)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// Score threshold `lambda`.
    pub threshold: f64,
    pub top_k: usize,
    pub sigma: f64,
    pub score_floor: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            threshold: 0.001,
            top_k: 200,
            sigma: 0.5,
            score_floor: 0.001,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: vec![0.3, 0.4, 0.5, 0.6, 0.7],
        }
    }
}

/// Architecture subset of [`RunConfig`]; everything that shapes the parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub ablation: AblationConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub ablation: AblationConfig,
    pub training: TrainingConfig,
    pub inference: InferenceConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            ablation: self.ablation.clone(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let e = &self.encoder;
        if e.levels < 2 {
            problems.push(format!("encoder.levels must be >= 2 (got {})", e.levels));
        }
        if e.input_dim == 0 || e.embed_dim == 0 {
            problems.push("encoder dims must be positive".to_string());
        }
        if e.group_count == 0 || !e.embed_dim.is_multiple_of(e.group_count) {
            problems.push(format!(
                "encoder.embed_dim {} not divisible by group_count {}",
                e.embed_dim, e.group_count
            ));
        }
        if e.gmg_blocks_per_level == 0 || e.ffn_expansion == 0 {
            problems.push("gmg_blocks_per_level and ffn_expansion must be >= 1".to_string());
        }
        if self.decoder.num_classes == 0 {
            problems.push("decoder.num_classes must be >= 1".to_string());
        }
        if self.decoder.bins == 0 {
            problems.push("decoder.bins must be >= 1".to_string());
        }
        if self.ablation.branches.is_empty() {
            problems.push("ablation.branches must not be empty".to_string());
        }
        let t = &self.training;
        if t.epochs == 0 {
            problems.push("training.epochs must be >= 1".to_string());
        }
        if t.warmup_epochs > t.epochs {
            problems.push("training.warmup_epochs exceeds epochs".to_string());
        }
        if !(t.base_lr >= 0.0 && t.weight_decay >= 0.0 && t.clip_grad_norm >= 0.0) {
            problems
                .push("learning rate, weight decay and clip norm must be non-negative".to_string());
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) || t.adam_eps <= 0.0 {
            problems.push("adam betas must lie in [0,1) and eps > 0".to_string());
        }
        if t.center_radius <= 0.0 || t.regression_base <= 0.0 {
            problems.push("center_radius and regression_base must be positive".to_string());
        }
        if t.vfl_alpha < 0.0 || t.vfl_gamma < 0.0 {
            problems.push("varifocal alpha/gamma must be non-negative".to_string());
        }
        let i = &self.inference;
        if !(0.0..1.0).contains(&i.threshold) {
            problems.push(format!("inference.threshold {} outside [0,1)", i.threshold));
        }
        if i.sigma <= 0.0 || i.top_k == 0 || i.score_floor < 0.0 {
            problems.push(
                "inference.sigma and top_k must be positive, score_floor non-negative".to_string(),
            );
        }
        if let Err(e) = validate_thresholds(&self.eval.thresholds) {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// tIoU thresholds must lie in (0, 1] and strictly increase.
pub fn validate_thresholds(th: &[f64]) -> Result<()> {
    if th.is_empty() {
        return Err(Error::Config("eval.thresholds must not be empty".into()));
    }
    if th.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
        return Err(Error::Config(format!(
            "eval.thresholds {th:?} must lie in (0, 1]"
        )));
    }
    if th.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!(
            "eval.thresholds {th:?} must strictly increase"
        )));
    }
    Ok(())
}

/// Threshold grid written either as `start:step:end` or as a comma list.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdGrid(pub Vec<f64>);

impl FromStr for ThresholdGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse threshold grid {s:?}"));
        let parts: Vec<&str> = s.split(':').collect();
        let values = if parts.len() == 3 {
            let nums: Vec<f64> = parts
                .iter()
                .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            let (start, step, end) = (nums[0], nums[1], nums[2]);
            if step <= 0.0 || end < start {
                return Err(bad());
            }
            let n = ((end - start) / step + 1e-9).floor() as usize + 1;
            (0..n)
                .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
                .collect()
        } else {
            s.split(',')
                .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?
        };
        validate_thresholds(&values)?;
        Ok(ThresholdGrid(values))
    }
}

impl fmt::Display for ThresholdGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.0.iter().map(|v| format!("{v}")).collect();
        write!(f, "{}", s.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml_str("[training]\nepochz = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(RunConfig::from_toml_str("bogus = 1\n").is_err());
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let cfg = RunConfig::from_toml_str("[encoder]\nembed_dim = 16\ngroup_count = 4\n").unwrap();
        assert_eq!(cfg.encoder.embed_dim, 16);
        assert_eq!(cfg.encoder.levels, 6);
    }

    #[test]
    fn invalid_combinations_are_reported_together() {
        let err = RunConfig::from_toml_str(
            "[encoder]\nlevels = 1\nembed_dim = 10\n[ablation]\nbranches = []\n",
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("levels"));
        assert!(err.contains("divisible"));
        assert!(err.contains("branches"));
    }

    #[test]
    fn threshold_grid_parsing() {
        let g: ThresholdGrid = "0.3:0.1:0.7".parse().unwrap();
        assert_eq!(g.0, vec![0.3, 0.4, 0.5, 0.6, 0.7]);
        let g: ThresholdGrid = "0.5:0.05:0.95".parse().unwrap();
        assert_eq!(g.0.len(), 10);
        assert_eq!(*g.0.last().unwrap(), 0.95);
        let g: ThresholdGrid = "0.5,0.75,0.95".parse().unwrap();
        assert_eq!(g.0, vec![0.5, 0.75, 0.95]);
        assert!("0.5,0.4".parse::<ThresholdGrid>().is_err());
        assert!("0:0.1:0.5".parse::<ThresholdGrid>().is_err());
    }

    #[test]
    fn regression_ranges_double_and_end_unbounded() {
        let r = TrainingConfig::default().regression_ranges(6);
        assert_eq!(
            &r[..5],
            &[
                (0.0, 4.0),
                (4.0, 8.0),
                (8.0, 16.0),
                (16.0, 32.0),
                (32.0, 64.0)
            ]
        );
        assert_eq!(r[5].0, 64.0);
        assert!(r[5].1.is_infinite());
        let r = TrainingConfig::default().regression_ranges(3);
        assert!(r[2].1.is_infinite());
    }
}
