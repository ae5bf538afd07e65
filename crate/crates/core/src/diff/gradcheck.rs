//! Central finite-difference verification of analytic gradients.

use super::array::Array;
use super::graph::{Graph, NodeId};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Max over entries of `leaf` of `|analytic - fd| / max(1, |analytic|)`,
/// where `fd` is the central difference of the scalar `output`.
pub fn fd_check(graph: &mut Graph, output: NodeId, leaf: NodeId, step: f64) -> Result<f64> {
    graph.refresh()?;
    let analytic = graph
        .backward(output, scalar_seed(graph, output)?)?
        .wrt(leaf);
    fd_check_against(graph, output, leaf, step, &analytic)
}

/// Same as [`fd_check`] but compares against a caller-supplied gradient.
pub fn fd_check_against(
    graph: &mut Graph,
    output: NodeId,
    leaf: NodeId,
    step: f64,
    analytic: &Array,
) -> Result<f64> {
    let all: Vec<usize> = (0..graph.value(leaf).len()).collect();
    fd_check_entries(graph, output, leaf, step, analytic, &all)
}

/// Like [`fd_check_against`], restricted to the listed flat entries of `leaf`.
pub fn fd_check_entries(
    graph: &mut Graph,
    output: NodeId,
    leaf: NodeId,
    step: f64,
    analytic: &Array,
    entries: &[usize],
) -> Result<f64> {
    scalar_seed(graph, output)?;
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::Invalid(format!(
            "finite-difference step {step} outside [1e-7, 1e-3]"
        )));
    }
    let base = graph.value(leaf).clone();
    if analytic.shape() != base.shape() {
        return Err(Error::Invalid(
            "analytic gradient shape differs from leaf".into(),
        ));
    }
    let mut worst: f64 = 0.0;
    for &i in entries {
        if i >= base.len() {
            return Err(Error::Invalid(format!(
                "entry {i} outside a leaf of {} values",
                base.len()
            )));
        }
        let x0 = base.data()[i];
        graph.perturb_leaf(leaf, i, x0 + step);
        graph.refresh()?;
        let up = graph.value(output).item();
        graph.perturb_leaf(leaf, i, x0 - step);
        graph.refresh()?;
        let down = graph.value(output).item();
        graph.perturb_leaf(leaf, i, x0);
        let fd = (up - down) / (2.0 * step);
        let a = analytic.data()[i];
        worst = worst.max((a - fd).abs() / a.abs().max(1.0));
    }
    graph.refresh()?;
    Ok(worst)
}

fn scalar_seed(graph: &Graph, output: NodeId) -> Result<Array> {
    if graph.value(output).len() != 1 {
        return Err(Error::Invalid(format!(
            "finite-difference check needs a scalar output, got {:?}",
            graph.value(output).shape()
        )));
    }
    Ok(Array::full(graph.value(output).shape(), 1.0))
}

/// Outcome of a kink-aware finite-difference check.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FdStats {
    pub max_error: f64,
    pub checked: usize,
    /// Entries whose every trial step flipped a non-smooth branch.
    pub skipped: usize,
}

impl FdStats {
    pub fn merge(&mut self, other: FdStats) {
        self.max_error = self.max_error.max(other.max_error);
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

/// Like [`fd_check_entries`], but a difference is only taken when neither
/// perturbation changes [`Graph::branch_pattern`]. The step is shrunk by 10x
/// (down to 1e-7) before an entry is given up on as sitting on a kink.
pub fn fd_check_smooth(
    graph: &mut Graph,
    output: NodeId,
    leaf: NodeId,
    step: f64,
    analytic: &Array,
    entries: &[usize],
) -> Result<FdStats> {
    scalar_seed(graph, output)?;
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::Invalid(format!(
            "finite-difference step {step} outside [1e-7, 1e-3]"
        )));
    }
    let base = graph.value(leaf).clone();
    if analytic.shape() != base.shape() {
        return Err(Error::Invalid(
            "analytic gradient shape differs from leaf".into(),
        ));
    }
    graph.refresh()?;
    let pattern = graph.branch_pattern();
    let mut stats = FdStats::default();
    for &i in entries {
        if i >= base.len() {
            return Err(Error::Invalid(format!(
                "entry {i} outside a leaf of {} values",
                base.len()
            )));
        }
        let x0 = base.data()[i];
        let mut h = step;
        let mut fd = None;
        while h >= 1e-7 * (1.0 - 1e-9) {
            graph.perturb_leaf(leaf, i, x0 + h);
            graph.refresh()?;
            let up = graph.value(output).item();
            let up_same = graph.branch_pattern() == pattern;
            graph.perturb_leaf(leaf, i, x0 - h);
            graph.refresh()?;
            let down = graph.value(output).item();
            let down_same = graph.branch_pattern() == pattern;
            graph.perturb_leaf(leaf, i, x0);
            if up_same && down_same {
                fd = Some((up - down) / (2.0 * h));
                break;
            }
            h /= 10.0;
        }
        match fd {
            Some(fd) => {
                let a = analytic.data()[i];
                let err = (a - fd).abs() / a.abs().max(1.0);
                stats.max_error =
                    stats
                        .max_error
                        .max(if err.is_nan() { f64::INFINITY } else { err });
                stats.checked += 1;
            }
            None => stats.skipped += 1,
        }
    }
    graph.refresh()?;
    Ok(stats)
}
