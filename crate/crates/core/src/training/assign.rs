//! Center-sampling target assignment.

use crate::segment::Segment;

/// Ground-truth action in input-frame units with a 1-based label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameAction {
    pub segment: Segment,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelAssignment {
    /// `0` is background, otherwise the 1-based class.
    pub labels: Vec<usize>,
    /// Target segment in grid units of the level, for positives.
    pub targets: Vec<Option<Segment>>,
    /// Index of the source action, for positives.
    pub source: Vec<Option<usize>>,
}

impl LevelAssignment {
    fn background(n: usize) -> Self {
        LevelAssignment {
            labels: vec![0; n],
            targets: vec![None; n],
            source: vec![None; n],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub levels: Vec<LevelAssignment>,
}

impl Assignment {
    pub fn num_pos(&self) -> usize {
        self.levels
            .iter()
            .map(|l| l.labels.iter().filter(|&&c| c > 0).count())
            .sum()
    }

    pub fn num_neg(&self) -> usize {
        self.levels
            .iter()
            .map(|l| l.labels.iter().filter(|&&c| c == 0).count())
            .sum()
    }
}

/// Instant `t` at level `l` sits at frame `t·stride_l`. It is positive for an
/// action when it lies strictly inside it, within `radius·stride_l` of its
/// center, and the larger of its two boundary distances falls in the level's
/// `(lo, hi]` range (frames). Overlapping candidates go to the shortest action.
/// Actions that land nowhere get the level-1 instant nearest their center.
pub fn assign_targets(
    gt: &[FrameAction],
    level_lens: &[usize],
    strides: &[usize],
    ranges: &[(f64, f64)],
    radius: f64,
) -> Assignment {
    assert_eq!(level_lens.len(), strides.len());
    assert_eq!(level_lens.len(), ranges.len());
    let mut levels: Vec<LevelAssignment> = level_lens
        .iter()
        .map(|&n| LevelAssignment::background(n))
        .collect();
    let mut used = vec![false; gt.len()];
    for (l, lvl) in levels.iter_mut().enumerate() {
        let stride = strides[l] as f64;
        let (lo, hi) = ranges[l];
        for t in 0..lvl.labels.len() {
            let pos = t as f64 * stride;
            let mut best: Option<usize> = None;
            for (i, a) in gt.iter().enumerate() {
                let s = a.segment;
                if !(s.start < pos && pos < s.end) {
                    continue;
                }
                if (pos - s.center()).abs() > radius * stride {
                    continue;
                }
                let reach = (pos - s.start).max(s.end - pos);
                if !(reach > lo && reach <= hi) {
                    continue;
                }
                if best.is_none_or(|j| s.length() < gt[j].segment.length()) {
                    best = Some(i);
                }
            }
            if let Some(i) = best {
                set_positive(lvl, t, &gt[i], i, stride);
                used[i] = true;
            }
        }
    }
    if let Some(first) = levels.first_mut() {
        let stride = strides[0] as f64;
        let n = first.labels.len();
        for (i, a) in gt.iter().enumerate() {
            if used[i] || n == 0 {
                continue;
            }
            let t = ((a.segment.center() / stride).round().max(0.0) as usize).min(n - 1);
            let keep =
                first.source[t].is_some_and(|j| gt[j].segment.length() <= a.segment.length());
            if !keep {
                set_positive(first, t, a, i, stride);
            }
        }
    }
    Assignment { levels }
}

fn set_positive(lvl: &mut LevelAssignment, t: usize, a: &FrameAction, i: usize, stride: f64) {
    lvl.labels[t] = a.label;
    lvl.targets[t] = Some(Segment::new(
        a.segment.start / stride,
        a.segment.end / stride,
    ));
    lvl.source[t] = Some(i);
}
