use super::*;

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        num_videos: 20,
        min_frames: 64,
        max_frames: 96,
        feature_dim: 8,
        num_classes: 3,
        min_actions: 1,
        max_actions: 3,
        min_action_len: 4,
        max_action_len: 20,
        seed: 7,
        ..SyntheticSpec::default()
    }
}

#[test]
fn noiseless_frames_equal_prototypes() {
    let spec = SyntheticSpec {
        noise: 0.0,
        blend: 0.0,
        ..small_spec()
    };
    let ds = generate_videos(&spec).unwrap();
    let protos = prototypes(&spec, &mut ChaCha8Rng::seed_from_u64(spec.seed)).unwrap();
    for v in &ds.videos {
        for a in &v.annotations {
            let (s, e) = (
                (a.start * 4.0).round() as usize,
                (a.end * 4.0).round() as usize,
            );
            for f in s..e {
                for (ch, &p) in protos[a.label].iter().enumerate().take(spec.feature_dim) {
                    assert_eq!(v.features.at(ch, f), p as f32 as f64);
                }
            }
        }
    }
}

#[test]
fn same_seed_is_byte_identical() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    generate(&small_spec(), dir_a.path()).unwrap();
    generate(&small_spec(), dir_b.path()).unwrap();
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(
        read(dir_a.path(), MANIFEST_FILE),
        read(dir_b.path(), MANIFEST_FILE)
    );
    assert_eq!(
        read(dir_a.path(), "features/video_0003.f32"),
        read(dir_b.path(), "features/video_0003.f32")
    );
    let other = generate_videos(&SyntheticSpec {
        seed: 8,
        ..small_spec()
    })
    .unwrap();
    assert_ne!(other, generate_videos(&small_spec()).unwrap());
}

#[test]
fn annotations_within_bounds_and_disjoint() {
    let spec = small_spec();
    let ds = generate_videos(&spec).unwrap();
    assert_eq!(ds.videos.len(), 20);
    assert_eq!(ds.split("train").len(), 16);
    assert_eq!(ds.split("val").len(), 4);
    for v in &ds.videos {
        let n = v.annotations.len();
        assert!((1..=3).contains(&n));
        let mut sorted = v.annotations.clone();
        sorted.sort_by(|a, b| a.start.partial_cmp(&b.start).unwrap());
        for w in sorted.windows(2) {
            assert!(w[0].end < w[1].start);
        }
        for a in &v.annotations {
            assert!(a.start >= 0.0 && a.end <= v.duration() && a.start < a.end);
            let len = (a.end - a.start) * spec.feature_fps;
            assert!((4.0 - 1e-9..=20.0 + 1e-9).contains(&len));
            assert!((1..=3).contains(&a.label));
        }
    }
}

#[test]
fn infeasible_specs_are_rejected() {
    let spec = SyntheticSpec {
        max_actions: 10,
        min_action_len: 10,
        ..small_spec()
    };
    assert!(matches!(generate_videos(&spec), Err(Error::Infeasible(_))));
    let spec = SyntheticSpec {
        min_action_len: 100,
        max_action_len: 120,
        ..small_spec()
    };
    assert!(matches!(generate_videos(&spec), Err(Error::Infeasible(_))));
    let spec = SyntheticSpec {
        feature_dim: 2,
        num_classes: 6,
        margin: -0.5,
        ..small_spec()
    };
    assert!(matches!(generate_videos(&spec), Err(Error::Infeasible(_))));
}

#[test]
fn round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&small_spec(), dir.path()).unwrap();
    let back = load(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn truncated_feature_file_names_the_record() {
    let dir = tempfile::tempdir().unwrap();
    generate(&small_spec(), dir.path()).unwrap();
    let f = dir.path().join("features/video_0005.f32");
    let bytes = std::fs::read(&f).unwrap();
    std::fs::write(&f, &bytes[..bytes.len() - 4]).unwrap();
    let err = load(&dir.path().join(MANIFEST_FILE))
        .unwrap_err()
        .to_string();
    assert!(err.contains("video_0005"), "{err}");
    assert!(err.contains("1 of 20"));
}

#[test]
fn checksum_and_annotation_violations_are_aggregated() {
    let dir = tempfile::tempdir().unwrap();
    generate(&small_spec(), dir.path()).unwrap();
    let mpath = dir.path().join(MANIFEST_FILE);
    let mut m: Manifest = serde_json::from_str(&std::fs::read_to_string(&mpath).unwrap()).unwrap();
    m.videos[1].sha256 = "00".repeat(32);
    m.videos[2].annotations[0].label = 9;
    m.videos[3].annotations[0].end = 1e6;
    std::fs::write(&mpath, serde_json::to_string(&m).unwrap()).unwrap();
    let err = load(&mpath).unwrap_err().to_string();
    for id in ["video_0001", "video_0002", "video_0003"] {
        assert!(err.contains(id), "{err}");
    }
    assert!(err.contains("sha256"));
}

#[test]
fn unknown_manifest_fields_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&small_spec(), dir.path()).unwrap();
    let mpath = dir.path().join(MANIFEST_FILE);
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&mpath).unwrap()).unwrap();
    v["producer"] = serde_json::json!("elsewhere");
    v["videos"][0]["camera"] = serde_json::json!(3);
    std::fs::write(&mpath, v.to_string()).unwrap();
    assert_eq!(load(&mpath).unwrap(), ds);
}

#[test]
fn prototypes_respect_margin_in_both_regimes() {
    for (d, c) in [(8, 3), (3, 6)] {
        let spec = SyntheticSpec {
            feature_dim: d,
            num_classes: c,
            margin: 0.6,
            ..small_spec()
        };
        let p = prototypes(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(p.len(), c + 1);
        for i in 0..p.len() {
            let n: f64 = p[i].iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
            for j in 0..i {
                let dot: f64 = p[i].iter().zip(&p[j]).map(|(a, b)| a * b).sum();
                assert!(dot < 0.6);
            }
        }
    }
}

/// Nearest-prototype (a linear rule) labels frames almost perfectly at the
/// acceptance noise level.
#[test]
fn frames_are_linearly_separable() {
    let spec = SyntheticSpec {
        num_videos: 30,
        min_frames: 256,
        max_frames: 256,
        feature_dim: 32,
        num_classes: 5,
        noise: 0.1,
        margin: 0.2,
        ..SyntheticSpec::default()
    };
    let ds = generate_videos(&spec).unwrap();
    let protos = prototypes(&spec, &mut ChaCha8Rng::seed_from_u64(spec.seed)).unwrap();
    let (mut right, mut total) = (0usize, 0usize);
    for v in &ds.videos {
        let mut label = vec![Some(0usize); v.num_frames()];
        for a in &v.annotations {
            let (s, e) = (
                (a.start * 4.0).round() as usize,
                (a.end * 4.0).round() as usize,
            );
            for (f, l) in label.iter_mut().enumerate() {
                let w = blend_weight(f, s, e, spec.blend);
                if w >= 1.0 {
                    *l = Some(a.label);
                } else if w > 0.0 {
                    *l = None;
                }
            }
        }
        for (f, l) in label.iter().enumerate() {
            let Some(l) = l else { continue };
            let scores: Vec<f64> = protos
                .iter()
                .map(|p| (0..32).map(|ch| p[ch] * v.features.at(ch, f)).sum())
                .collect();
            let best = (0..scores.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
            right += (best == *l) as usize;
            total += 1;
        }
    }
    assert!(right as f64 / total as f64 > 0.99, "{right}/{total}");
}
