//! AdamW with linear warmup and cosine decay.

use crate::error::{Error, Result};
use crate::params::ModelParams;

/// Per-step learning rate schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Schedule {
    pub fn new(
        base_lr: f64,
        warmup_epochs: usize,
        total_epochs: usize,
        steps_per_epoch: usize,
    ) -> Self {
        Schedule {
            base_lr,
            warmup_steps: (warmup_epochs * steps_per_epoch) as u64,
            total_steps: (total_epochs * steps_per_epoch) as u64,
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    /// Number of updates applied so far.
    pub step: u64,
    pub m: ModelParams,
    pub v: ModelParams,
    pub schedule: Schedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(
        params: &ModelParams,
        schedule: Schedule,
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    ) -> Self {
        let mut zeros = params.clone();
        for (_, v) in zeros.iter_mut() {
            v.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        OptimizerState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
            schedule,
            beta1,
            beta2,
            eps,
            weight_decay,
        }
    }

    /// Moments under `opt.m.*` / `opt.v.*` and the step counter under `opt.step`.
    pub fn export(&self, into: &mut ModelParams) {
        for (k, v) in self.m.iter() {
            into.insert(format!("opt.m.{k}"), v.clone());
        }
        for (k, v) in self.v.iter() {
            into.insert(format!("opt.v.{k}"), v.clone());
        }
        // Split so the counter survives the f32 payload exactly.
        let hi = (self.step >> 16) as f64;
        let lo = (self.step & 0xffff) as f64;
        into.insert("opt.step", crate::diff::Array::from_vec(vec![hi, lo]));
    }

    /// Restore moments and step counter written by [`OptimizerState::export`].
    pub fn import(&mut self, from: &ModelParams) -> Result<()> {
        let paths: Vec<String> = self.m.iter().map(|(k, _)| k.clone()).collect();
        for k in paths {
            for (prefix, store) in [("opt.m.", &mut self.m), ("opt.v.", &mut self.v)] {
                let src = from
                    .get(&format!("{prefix}{k}"))
                    .ok_or_else(|| Error::Checkpoint(format!("state lacks {prefix}{k}")))?;
                let dst = store.get_mut(&k).expect("moment exists");
                if src.shape() != dst.shape() {
                    return Err(Error::Checkpoint(format!(
                        "state shape mismatch for {prefix}{k}"
                    )));
                }
                *dst = src.clone();
            }
        }
        let step = from
            .get("opt.step")
            .ok_or_else(|| Error::Checkpoint("state lacks opt.step".into()))?;
        self.step = ((step.data()[0] as u64) << 16) | step.data()[1] as u64;
        Ok(())
    }
}

/// Scale gradients so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping. `max_norm <= 0` disables clipping.
pub fn clip_grad_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads.iter().map(|(_, g)| g.norm_sq()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// One AdamW update with decoupled weight decay on weight matrices and
/// kernels (rank ≥ 2). Returns the learning rate used.
pub fn optimizer_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
) -> Result<f64> {
    let lr = state.schedule.lr(state.step);
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for (path, p) in params.iter_mut() {
        let Some(g) = grads.get(path) else { continue };
        if g.shape() != p.shape() {
            return Err(Error::Invalid(format!(
                "gradient shape mismatch for {path}"
            )));
        }
        if !g.all_finite() {
            return Err(Error::Invalid(format!("non-finite gradient for {path}")));
        }
        let decay = if p.rank() >= 2 {
            state.weight_decay
        } else {
            0.0
        };
        let m = state.m.get_mut(path).expect("moment exists").data_mut();
        let v = state.v.get_mut(path).expect("moment exists").data_mut();
        for (i, x) in p.data_mut().iter_mut().enumerate() {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            *x -= lr * (mh / (vh.sqrt() + state.eps) + decay * *x);
        }
    }
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Array;

    #[test]
    fn schedule_examples() {
        let s = Schedule::new(1e-3, 5, 30, 10);
        assert_eq!(s.lr(0), 0.0);
        assert!((s.lr(25) - 5e-4).abs() < 1e-18);
        assert_eq!(s.lr(50), 1e-3);
        assert!(s.lr(300) < 1e-18);
        assert!(s.lr(299) > 0.0 && s.lr(299) < 1e-6);
        for step in 50..299 {
            assert!(s.lr(step + 1) <= s.lr(step));
        }
    }

    fn one_param(v: f64) -> ModelParams {
        let mut p = ModelParams::new();
        p.insert("w", Array::new(vec![1, 1], vec![v]));
        p
    }

    #[test]
    fn first_step_does_not_move() {
        let mut p = one_param(2.0);
        let sched = Schedule::new(1e-2, 1, 3, 4);
        let mut st = OptimizerState::new(&p, sched, 0.9, 0.999, 1e-8, 0.1);
        let lr = optimizer_step(&mut p, &one_param(3.0), &mut st).unwrap();
        assert_eq!(lr, 0.0);
        assert_eq!(p.get("w").unwrap().data()[0], 2.0);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adamw_matches_hand_computation() {
        let mut p = one_param(2.0);
        let sched = Schedule {
            base_lr: 0.1,
            warmup_steps: 0,
            total_steps: 1000,
        };
        let mut st = OptimizerState::new(&p, sched, 0.9, 0.999, 1e-8, 0.1);
        optimizer_step(&mut p, &one_param(0.5), &mut st).unwrap();
        // Bias-corrected first step: m̂ = g, v̂ = g², update = lr·(1 + wd·p).
        let expect = 2.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.1 * 2.0);
        assert!((p.get("w").unwrap().data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn vectors_are_not_decayed() {
        let mut p = ModelParams::new();
        p.insert("b", Array::from_vec(vec![1.0]));
        let sched = Schedule {
            base_lr: 0.1,
            warmup_steps: 0,
            total_steps: 10,
        };
        let mut st = OptimizerState::new(&p, sched, 0.9, 0.999, 1e-8, 0.5);
        let mut g = ModelParams::new();
        g.insert("b", Array::from_vec(vec![0.0]));
        optimizer_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(p.get("b").unwrap().data()[0], 1.0);
    }

    #[test]
    fn clipping_and_state_round_trip() {
        let mut g = ModelParams::new();
        g.insert("a", Array::from_vec(vec![3.0, 4.0]));
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g.get("a").unwrap().data()[0] - 0.6).abs() < 1e-15);

        let p = one_param(1.0);
        let sched = Schedule {
            base_lr: 0.1,
            warmup_steps: 0,
            total_steps: 10,
        };
        let mut st = OptimizerState::new(&p, sched, 0.9, 0.999, 1e-8, 0.0);
        st.step = 123_456_789;
        st.m.get_mut("w").unwrap().data_mut()[0] = 0.25;
        let mut out = ModelParams::new();
        st.export(&mut out);
        let back = ModelParams::from_bytes(&out.to_bytes().unwrap()).unwrap();
        let mut fresh = OptimizerState::new(&p, sched, 0.9, 0.999, 1e-8, 0.0);
        fresh.import(&back).unwrap();
        assert_eq!(fresh.step, 123_456_789);
        assert_eq!(fresh.m.get("w").unwrap().data()[0], 0.25);
    }
}
