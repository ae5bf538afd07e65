use super::*;
use crate::oracle;
use crate::testutil::rng;
use proptest::prelude::*;
use rand::Rng;

fn level(cls: Vec<f64>, classes: usize, start: Vec<f64>, end: Vec<f64>) -> LevelOutputs {
    let t = start.len();
    let cls = Array::matrix(classes, t, cls);
    LevelOutputs {
        cls_coarse: cls.clone(),
        start_coarse: start.clone(),
        end_coarse: end.clone(),
        cls_refined: cls,
        start_refined: start,
        end_refined: end,
    }
}

fn seg(start_s: f64, end_s: f64, label: usize, score: f64) -> ScoredSegment {
    ScoredSegment {
        start_s,
        end_s,
        label,
        score,
        source_level: 1,
    }
}

#[test]
fn collect_examples() {
    let map = TimeMapping {
        feature_fps: 4.0,
        strides: vec![2],
    };
    let quiet = level(vec![0.001, 0.0005], 1, vec![0.0, 1.0], vec![1.0, 2.0]);
    assert!(collect(&[quiet], 0.001, &map, 10.0, 200).is_empty());

    let one = level(
        vec![0.9, 0.0, 0.4, 0.0, 0.0, 0.0],
        3,
        vec![3.0, 0.0],
        vec![7.0, 1.0],
    );
    let out = collect(&[one], 0.001, &map, 10.0, 200);
    assert_eq!(out.len(), 2);
    assert_eq!((out[0].start_s, out[0].end_s, out[0].label), (1.5, 3.5, 1));
    assert_eq!(out[1].label, 2);
}

#[test]
fn collect_clamps_and_caps() {
    let map = TimeMapping {
        feature_fps: 1.0,
        strides: vec![1],
    };
    let o = level(
        vec![0.5, 0.6, 0.7],
        1,
        vec![-3.0, 2.0, 9.5],
        vec![1.0, 1.0, 12.0],
    );
    let out = collect(&[o], 0.0, &map, 10.0, 2);
    assert_eq!(out.len(), 2);
    for d in &out {
        assert!(d.start_s >= 0.0 && d.end_s <= 10.0 && d.start_s < d.end_s);
    }
    assert_eq!(out[0].score, 0.7);
}

#[test]
fn soft_nms_examples() {
    assert!(soft_nms(&[], 0.5, 0.001).is_empty());
    let out = soft_nms(&[seg(0.0, 1.0, 1, 0.9), seg(2.0, 3.0, 1, 0.7)], 0.5, 0.001);
    assert_eq!(
        out.iter().map(|d| d.score).collect::<Vec<_>>(),
        vec![0.9, 0.7]
    );
    let out = soft_nms(&[seg(1.0, 2.0, 1, 0.9), seg(1.0, 2.0, 1, 0.8)], 0.5, 0.001);
    assert!((out[1].score - 0.108_268_226_6).abs() < 1e-9);
    // Other classes are untouched.
    let out = soft_nms(&[seg(1.0, 2.0, 1, 0.9), seg(1.0, 2.0, 2, 0.8)], 0.5, 0.001);
    assert_eq!(out[1].score, 0.8);
}

fn random_instance(r: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<ScoredSegment> {
    (0..n)
        .map(|_| {
            let s = r.random_range(0..20) as f64 * 0.5;
            let len = r.random_range(1..10) as f64 * 0.5;
            // Coarse scores make exact ties common.
            let score = r.random_range(1..=20) as f64 / 20.0;
            seg(s, s + len, r.random_range(1..=3), score)
        })
        .collect()
}

#[test]
fn soft_nms_matches_reference_bitwise() {
    let mut r = rng(42);
    for _ in 0..1000 {
        let n = r.random_range(0..=64);
        let cands = random_instance(&mut r, n);
        let a = soft_nms(&cands, 0.5, 0.001);
        let b = oracle::soft_nms(&cands, 0.5, 0.001);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.score.to_bits(), y.score.to_bits());
            assert_eq!((x.start_s, x.end_s, x.label), (y.start_s, y.end_s, y.label));
        }
    }
}

proptest! {
    #[test]
    fn soft_nms_never_raises_scores(seed in 0u64..10_000, n in 0usize..40) {
        let cands = random_instance(&mut rng(seed), n);
        let out = soft_nms(&cands, 0.5, 0.001);
        for d in &out {
            let orig = cands
                .iter()
                .filter(|c| c.start_s == d.start_s && c.end_s == d.end_s && c.label == d.label)
                .map(|c| c.score)
                .fold(0.0f64, f64::max);
            prop_assert!(d.score > 0.0 && d.score <= orig);
        }
    }

    #[test]
    fn collect_respects_cap_and_order(seed in 0u64..10_000, k in 1usize..30) {
        let mut r = rng(seed);
        let t = 16;
        let cls: Vec<f64> = (0..2 * t).map(|_| r.random_range(0.0..1.0)).collect();
        let start: Vec<f64> = (0..t).map(|i| i as f64 - r.random_range(-1.0..4.0)).collect();
        let end: Vec<f64> = (0..t).map(|i| i as f64 + r.random_range(-1.0..4.0)).collect();
        let map = TimeMapping { feature_fps: 2.0, strides: vec![2] };
        let out = collect(&[level(cls, 2, start, end)], 0.1, &map, 16.0, k);
        prop_assert!(out.len() <= k);
        for d in &out {
            prop_assert!(d.start_s < d.end_s && d.start_s >= 0.0 && d.end_s <= 16.0);
        }
    }
}

#[test]
fn zero_parameter_model_gives_half_scores() {
    let cfg = crate::testutil::small_config(4, 2, 3, 4);
    let mut p = model::init_params(&cfg, 1);
    let keys: Vec<String> = p.iter().map(|(k, _)| k.clone()).collect();
    for k in keys {
        p.zero_prefix(&k);
    }
    let x = crate::testutil::rand_array(&mut rng(2), &[4, 32], 1.0);
    let (outs, _) = model::predict(&p, &cfg, &x).unwrap();
    for o in &outs {
        assert!(o.cls_refined.data().iter().all(|&v| v == 0.5));
    }
    let inf = InferenceConfig::default();
    let a = infer_features(&x, 4.0, &p, &cfg, &inf).unwrap();
    let b = infer_features(&x, 4.0, &p, &cfg, &inf).unwrap();
    assert_eq!(a, b);
    assert!(!a.is_empty() && a.len() <= inf.top_k);
}

#[test]
fn detections_file_format() {
    let mut dets = BTreeMap::new();
    dets.insert("v1".to_string(), vec![seg(0.5, 1.25, 2, 0.75)]);
    let text = detections_jsonl(&dets, &["a".into(), "b".into()]);
    assert_eq!(
        text,
        "{\"video\":\"v1\",\"label\":\"b\",\"start\":0.5,\"end\":1.25,\"score\":0.75}\n"
    );
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let cfg = crate::testutil::small_config(4, 2, 3, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model::init_params(&cfg, 1).save(&path).unwrap();
    load_model(&path, &cfg).unwrap();
    let mut other = cfg.clone();
    other.decoder.num_classes = 3;
    let err = load_model(&path, &other).unwrap_err().to_string();
    assert!(err.contains("head.cls.out"), "{err}");
}

#[test]
fn detections_round_trip_through_jsonl() {
    let classes = vec!["a".to_string(), "b".to_string()];
    let mut dets = BTreeMap::new();
    dets.insert(
        "v1".to_string(),
        vec![seg(0.5, 1.25, 2, 0.75), seg(2.0, 3.0, 1, 0.5)],
    );
    dets.insert("v0".to_string(), vec![seg(1.0, 4.0, 1, 0.9)]);
    let text = detections_jsonl(&dets, &classes);
    let back = parse_detections(&text, &classes).unwrap();
    assert_eq!(back.len(), 2);
    for (k, v) in &dets {
        let b = &back[k];
        assert_eq!(b.len(), v.len());
        for (x, y) in v.iter().zip(b) {
            assert_eq!(
                (x.start_s, x.end_s, x.label, x.score),
                (y.start_s, y.end_s, y.label, y.score)
            );
        }
    }
    assert!(parse_detections(
        "{\"video\":\"v\",\"label\":\"zzz\",\"start\":0,\"end\":1,\"score\":0.5}",
        &classes
    )
    .is_err());
}
