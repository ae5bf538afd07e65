use super::*;
use crate::oracle;
use crate::testutil::rng;
use proptest::prelude::*;
use rand::Rng;

fn s(a: f64, b: f64) -> Segment {
    Segment::new(a, b)
}

fn protocol(c: usize) -> EvalProtocol {
    EvalProtocol::new(
        vec![0.3, 0.4, 0.5, 0.6, 0.7],
        (1..=c).map(|i| format!("c{i}")).collect(),
    )
    .unwrap()
}

#[test]
fn match_examples() {
    assert_eq!(
        match_predictions(&[s(1.0, 2.0)], &[s(1.0, 2.0)], 0.5),
        vec![true]
    );
    // tIoU 0.4 against 0.5
    assert_eq!(
        match_predictions(&[s(0.0, 2.0)], &[s(1.2, 2.0)], 0.5),
        vec![false]
    );
    assert_eq!(
        match_predictions(&[s(1.0, 2.0), s(1.0, 2.0)], &[s(1.0, 2.0)], 0.5),
        vec![true, false]
    );
}

#[test]
fn ap_examples() {
    assert_eq!(average_precision(&[true], 1), Some(1.0));
    assert_eq!(average_precision(&[false, true], 1), Some(0.5));
    assert_eq!(average_precision(&[], 1), Some(0.0));
    assert_eq!(average_precision(&[true, false], 0), None);
}

#[test]
fn invalid_protocols_are_rejected() {
    assert!(EvalProtocol::new(vec![0.5, 0.5], vec![]).is_err());
    assert!(EvalProtocol::new(vec![0.0, 0.5], vec![]).is_err());
}

fn det(v: f64, e: f64, label: usize, score: f64) -> ScoredSegment {
    ScoredSegment {
        start_s: v,
        end_s: e,
        label,
        score,
        source_level: 1,
    }
}

#[test]
fn perfect_and_empty_predictions() {
    let mut gts = BTreeMap::new();
    gts.insert(
        "a".to_string(),
        vec![ActionInstance {
            start: 1.0,
            end: 3.0,
            label: 1,
        }],
    );
    gts.insert(
        "b".to_string(),
        vec![ActionInstance {
            start: 0.0,
            end: 5.0,
            label: 2,
        }],
    );
    let mut preds = BTreeMap::new();
    preds.insert("a".to_string(), vec![det(1.0, 3.0, 1, 0.9)]);
    preds.insert("b".to_string(), vec![det(0.0, 5.0, 2, 0.3)]);
    let r = map_report(&preds, &gts, &protocol(3));
    assert!(r.map.iter().all(|&m| m == 1.0));
    assert_eq!(r.average, 1.0);
    assert_eq!(r.per_class["c3"], vec![None; 5]);
    let r = map_report(&BTreeMap::new(), &gts, &protocol(3));
    assert_eq!(r.average, 0.0);
    let table = r.to_table();
    assert!(table.contains("Avg.") && table.contains("0.30"));
    let back: MapReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
}

fn random_case(
    r: &mut rand_chacha::ChaCha8Rng,
    videos: usize,
    classes: usize,
    max_p: usize,
    max_g: usize,
) -> (
    BTreeMap<String, Vec<ScoredSegment>>,
    BTreeMap<String, Vec<ActionInstance>>,
) {
    let mut preds = BTreeMap::new();
    let mut gts = BTreeMap::new();
    for v in 0..videos {
        let ng = r.random_range(0..=max_g);
        let g: Vec<ActionInstance> = (0..ng)
            .map(|_| {
                let st = r.random_range(0..16) as f64 * 0.5;
                ActionInstance {
                    start: st,
                    end: st + r.random_range(1..8) as f64 * 0.5,
                    label: r.random_range(1..=classes),
                }
            })
            .collect();
        let np = r.random_range(0..=max_p);
        let p: Vec<ScoredSegment> = (0..np)
            .map(|_| {
                let st = r.random_range(0..16) as f64 * 0.5;
                det(
                    st,
                    st + r.random_range(1..8) as f64 * 0.5,
                    r.random_range(1..=classes),
                    r.random_range(1..=8) as f64 / 8.0,
                )
            })
            .collect();
        gts.insert(format!("v{v}"), g);
        preds.insert(format!("v{v}"), p);
    }
    (preds, gts)
}

#[test]
fn match_and_ap_match_the_oracle_bitwise() {
    let mut r = rng(77);
    for _ in 0..1000 {
        let (preds, gts) = random_case(&mut r, 1, 1, 8, 4);
        let mut p: Vec<ScoredSegment> = preds["v0"].clone();
        p.sort_by(crate::inference::rank_order);
        let g: Vec<Segment> = gts["v0"].iter().map(|a| a.segment()).collect();
        let tau = [0.3, 0.5, 0.7][r.random_range(0..3)];
        let flags = match_predictions(&p.iter().map(|x| x.segment()).collect::<Vec<_>>(), &g, tau);
        let pairs: Vec<(f64, f64)> = p.iter().map(|x| (x.start_s, x.end_s)).collect();
        let gpairs: Vec<(f64, f64)> = g.iter().map(|x| (x.start, x.end)).collect();
        assert_eq!(flags, oracle::match_flags(&pairs, &gpairs, tau));
        let a = average_precision(&flags, g.len()).map(f64::to_bits);
        let b = oracle::average_precision(&flags, g.len()).map(f64::to_bits);
        assert_eq!(a, b);
    }
}

#[test]
fn map_report_matches_exhaustive_evaluator() {
    let mut r = rng(78);
    for _ in 0..50 {
        let (preds, gts) = random_case(&mut r, 5, 3, 10, 4);
        let rep = map_report(&preds, &gts, &protocol(3));
        for (i, &tau) in rep.thresholds.iter().enumerate() {
            assert_eq!(
                rep.map[i].to_bits(),
                oracle::mean_ap(&preds, &gts, 3, tau).to_bits()
            );
        }
    }
}

proptest! {
    #[test]
    fn map_is_bounded_and_monotone(seed in 0u64..5000) {
        let (preds, gts) = random_case(&mut rng(seed), 3, 2, 8, 3);
        let rep = map_report(&preds, &gts, &protocol(2));
        for w in rep.map.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-15);
        }
        prop_assert!(rep.map.iter().all(|&m| (0.0..=1.0).contains(&m)));
    }

    #[test]
    fn equal_score_permutations_do_not_change_map(seed in 0u64..5000) {
        let (preds, gts) = random_case(&mut rng(seed), 2, 2, 8, 3);
        let mut shuffled = preds.clone();
        for list in shuffled.values_mut() {
            list.reverse();
        }
        let a = map_report(&preds, &gts, &protocol(2));
        let b = map_report(&shuffled, &gts, &protocol(2));
        prop_assert_eq!(a.map, b.map);
    }
}
