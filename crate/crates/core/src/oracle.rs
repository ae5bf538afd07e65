//! Brute-force reference implementations. They favour obviousness over speed
//! and are used by the test suites and the `selftest` command to cross-check
//! the production code paths.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::segment::{ActionInstance, ScoredSegment};

fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// `y[t] = Σ_j x[j]·k[(t - j) mod T]`, row by row.
pub fn circular_conv(x: &[f64], k: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert_eq!(n, k.len());
    (0..n)
        .map(|t| (0..n).map(|j| x[j] * k[(t + n - j) % n]).sum())
        .collect()
}

/// Real part of the inverse DFT by direct summation.
pub fn idft_real(re: &[f64], im: &[f64]) -> Vec<f64> {
    let n = re.len();
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            for u in 0..n {
                let ang = 2.0 * std::f64::consts::PI * ((u * t) % n) as f64 / n as f64;
                acc += re[u] * ang.cos() - im[u] * ang.sin();
            }
            acc / n as f64
        })
        .collect()
}

/// Forward DFT by direct summation.
pub fn dft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for u in 0..n {
        for (t, &v) in x.iter().enumerate() {
            let ang = 2.0 * std::f64::consts::PI * ((u * t) % n) as f64 / n as f64;
            re[u] += v * ang.cos();
            im[u] -= v * ang.sin();
        }
    }
    (re, im)
}

fn better(a: &ScoredSegment, b: &ScoredSegment) -> bool {
    // a beats b: higher score, then earlier start, lower class, earlier end.
    if a.score != b.score {
        return a.score > b.score;
    }
    if a.start_s != b.start_s {
        return a.start_s < b.start_s;
    }
    if a.label != b.label {
        return a.label < b.label;
    }
    a.end_s < b.end_s
}

/// Gaussian Soft-NMS, one global greedy loop over all classes.
pub fn soft_nms(cands: &[ScoredSegment], sigma: f64, floor: f64) -> Vec<ScoredSegment> {
    let mut pool: Vec<ScoredSegment> = cands.iter().copied().filter(|c| c.score >= floor).collect();
    let mut kept = Vec::new();
    while !pool.is_empty() {
        let mut best = 0;
        for i in 1..pool.len() {
            if better(&pool[i], &pool[best]) {
                best = i;
            }
        }
        let chosen = pool.remove(best);
        for c in pool.iter_mut() {
            if c.label == chosen.label {
                let o = overlap((chosen.start_s, chosen.end_s), (c.start_s, c.end_s));
                c.score *= (-(o * o) / sigma).exp();
            }
        }
        pool.retain(|c| c.score >= floor);
        kept.push(chosen);
    }
    kept.sort_by(|a, b| {
        if better(a, b) {
            Ordering::Less
        } else if better(b, a) {
            Ordering::Greater
        } else {
            Ordering::Equal
        }
    });
    kept
}

/// Greedy TP/FP flags. `preds` as (start, end) already in ranking order.
pub fn match_flags(preds: &[(f64, f64)], gts: &[(f64, f64)], tau: f64) -> Vec<bool> {
    let mut taken = vec![false; gts.len()];
    let mut flags = Vec::with_capacity(preds.len());
    for &p in preds {
        let mut pick: Option<(usize, f64)> = None;
        for (j, &gt) in gts.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let o = overlap(p, gt);
            if o < tau {
                continue;
            }
            match pick {
                Some((_, bo)) if bo >= o => {}
                _ => pick = Some((j, o)),
            }
        }
        match pick {
            Some((j, _)) => {
                taken[j] = true;
                flags.push(true);
            }
            None => flags.push(false),
        }
    }
    flags
}

/// All-point interpolated AP: for every true positive, the best precision at
/// or beyond its rank, summed in rank order and divided by `num_gt`.
pub fn average_precision(flags: &[bool], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut precision = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (i, &f) in flags.iter().enumerate() {
        if f {
            tp += 1;
        }
        precision.push(tp as f64 / (i + 1) as f64);
    }
    let mut total = 0.0;
    for (k, &f) in flags.iter().enumerate() {
        if !f {
            continue;
        }
        let mut best = 0.0f64;
        for &p in &precision[k..] {
            if p > best {
                best = p;
            }
        }
        total += best;
    }
    Some(total / num_gt as f64)
}

/// Mean AP over classes that have ground truth, at one threshold.
pub fn mean_ap(
    preds: &BTreeMap<String, Vec<ScoredSegment>>,
    gts: &BTreeMap<String, Vec<ActionInstance>>,
    num_classes: usize,
    tau: f64,
) -> f64 {
    let mut aps = Vec::new();
    for c in 1..=num_classes {
        let num_gt: usize = gts
            .values()
            .map(|v| v.iter().filter(|a| a.label == c).count())
            .sum();
        // Rank every prediction of class c across videos.
        let mut ranked: Vec<(&String, ScoredSegment)> = Vec::new();
        for (vid, list) in preds {
            for p in list.iter().filter(|p| p.label == c) {
                ranked.push((vid, *p));
            }
        }
        ranked.sort_by(|a, b| {
            b.1.score
                .partial_cmp(&a.1.score)
                .unwrap()
                .then(a.1.start_s.partial_cmp(&b.1.start_s).unwrap())
                .then(a.1.end_s.partial_cmp(&b.1.end_s).unwrap())
                .then(a.0.cmp(b.0))
        });
        let mut taken: BTreeMap<&String, Vec<bool>> = BTreeMap::new();
        let mut flags = Vec::new();
        for (vid, p) in &ranked {
            let vgts: Vec<(f64, f64)> = gts
                .get(*vid)
                .map(|v| {
                    v.iter()
                        .filter(|a| a.label == c)
                        .map(|a| (a.start, a.end))
                        .collect()
                })
                .unwrap_or_default();
            let used = taken.entry(vid).or_insert_with(|| vec![false; vgts.len()]);
            let mut pick: Option<(usize, f64)> = None;
            for (j, &gt) in vgts.iter().enumerate() {
                let o = overlap((p.start_s, p.end_s), gt);
                if used[j] || o < tau {
                    continue;
                }
                if pick.is_none_or(|(_, bo)| o > bo) {
                    pick = Some((j, o));
                }
            }
            if let Some((j, _)) = pick {
                used[j] = true;
            }
            flags.push(pick.is_some());
        }
        if let Some(ap) = average_precision(&flags, num_gt) {
            aps.push(ap);
        }
    }
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().fold(0.0, |a, b| a + b) / aps.len() as f64
    }
}
