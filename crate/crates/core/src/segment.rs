//! Temporal segments and detections shared by training, inference and evaluation.

use serde::{Deserialize, Serialize};

/// Closed interval `[start, end]` on a time axis (units depend on context).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub fn new(start: f64, end: f64) -> Self {
        Segment { start, end }
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

/// Temporal IoU `|a ∩ b| / |a ∪ b|`; 0 when the union is empty.
pub fn tiou(a: Segment, b: Segment) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.length() + b.length() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Ground-truth action `(s, e, a)`: start/end in seconds and a 1-based label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionInstance {
    pub start: f64,
    pub end: f64,
    pub label: usize,
}

impl ActionInstance {
    pub fn segment(&self) -> Segment {
        Segment::new(self.start, self.end)
    }
}

/// A scored detection in seconds. `label` is 1-based like [`ActionInstance`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub label: usize,
    pub score: f64,
    pub source_level: usize,
}

impl ScoredSegment {
    pub fn segment(&self) -> Segment {
        Segment::new(self.start_s, self.end_s)
    }
}
