//! Varifocal classification loss and IoU regression loss.

use crate::segment::{tiou, Segment};

pub const PROB_EPS: f64 = 1e-7;

/// Varifocal loss for one probability `p` against target quality `q`.
///
/// Positives (`q > 0`) use a `q`-weighted binary cross-entropy; negatives use
/// the focal down-weighting `alpha * p^gamma`.
pub fn varifocal_loss(p: f64, q: f64, alpha: f64, gamma: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if q > 0.0 {
        -q * (q * p.ln() + (1.0 - q) * (1.0 - p).ln())
    } else {
        -alpha * p.powf(gamma) * (1.0 - p).ln()
    }
}

/// `d varifocal_loss / d p`; zero where `p` is clamped.
pub fn varifocal_grad(p: f64, q: f64, alpha: f64, gamma: f64) -> f64 {
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        return 0.0;
    }
    if q > 0.0 {
        -q * (q / p - (1.0 - q) / (1.0 - p))
    } else {
        -alpha * (gamma * p.powf(gamma - 1.0) * (1.0 - p).ln() - p.powf(gamma) / (1.0 - p))
    }
}

/// `1 - tiou(pred, target)`; a degenerate prediction (`start >= end`) costs 1.
pub fn iou_loss(pred: Segment, target: Segment) -> f64 {
    if pred.start >= pred.end {
        return 1.0;
    }
    1.0 - tiou(pred, target)
}

/// IoU loss and its partial derivatives with respect to the predicted start and end.
pub fn iou_loss_grad(ps: f64, pe: f64, gs: f64, ge: f64) -> (f64, f64, f64) {
    if ps >= pe {
        return (1.0, 0.0, 0.0);
    }
    let inter = pe.min(ge) - ps.max(gs);
    if inter <= 0.0 {
        return (1.0, 0.0, 0.0);
    }
    let union = (pe - ps) + (ge - gs) - inter;
    let iou = inter / union;
    let di_ds = if ps > gs { -1.0 } else { 0.0 };
    let di_de = if pe < ge { 1.0 } else { 0.0 };
    let du_ds = -1.0 - di_ds;
    let du_de = 1.0 - di_de;
    let d_ds = (di_ds * union - inter * du_ds) / (union * union);
    let d_de = (di_de * union - inter * du_de) / (union * union);
    (1.0 - iou, -d_ds, -d_de)
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: f64 = 0.75;
    const G: f64 = 2.0;

    #[test]
    fn perfect_predictions_cost_nothing() {
        assert!(varifocal_loss(1.0, 1.0, A, G) < 1e-6);
        assert!(varifocal_loss(0.0, 0.0, A, G) < 1e-12);
        let s = Segment::new(1.0, 5.0);
        assert_eq!(iou_loss(s, s), 0.0);
    }

    #[test]
    fn negative_at_half() {
        // 0.75 * 0.25 * ln 2
        let expected = 0.75 * 0.25 * std::f64::consts::LN_2;
        assert!((varifocal_loss(0.5, 0.0, A, G) - expected).abs() < 1e-15);
        assert!((expected - 0.129_965_1).abs() < 1e-7);
    }

    #[test]
    fn iou_loss_examples() {
        assert_eq!(
            iou_loss(Segment::new(0.0, 1.0), Segment::new(2.0, 3.0)),
            1.0
        );
        let l = iou_loss(Segment::new(2.0, 6.0), Segment::new(4.0, 8.0));
        assert!((l - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            iou_loss(Segment::new(3.0, 3.0), Segment::new(2.0, 4.0)),
            1.0
        );
    }

    #[test]
    fn positive_gradient_points_toward_quality() {
        for &q in &[0.2, 0.5, 0.9] {
            assert!(varifocal_grad(q - 0.1, q, A, G) < 0.0);
            assert!(varifocal_grad(q + 0.05, q, A, G) > 0.0);
        }
    }

    #[test]
    fn analytic_derivatives_match_central_differences() {
        let h = 1e-6;
        for &(p, q) in &[(0.3, 0.0), (0.7, 0.0), (0.3, 0.6), (0.8, 0.4)] {
            let fd = (varifocal_loss(p + h, q, A, G) - varifocal_loss(p - h, q, A, G)) / (2.0 * h);
            assert!((fd - varifocal_grad(p, q, A, G)).abs() < 1e-6);
        }
        for &(ps, pe, gs, ge) in &[
            (1.0, 5.0, 2.0, 6.0),
            (2.5, 3.5, 2.0, 6.0),
            (0.0, 9.0, 2.0, 6.0),
        ] {
            let (_, ds, de) = iou_loss_grad(ps, pe, gs, ge);
            let f = |a: f64, b: f64| iou_loss_grad(a, b, gs, ge).0;
            assert!(((f(ps + h, pe) - f(ps - h, pe)) / (2.0 * h) - ds).abs() < 1e-6);
            assert!(((f(ps, pe + h) - f(ps, pe - h)) / (2.0 * h) - de).abs() < 1e-6);
        }
    }
}
