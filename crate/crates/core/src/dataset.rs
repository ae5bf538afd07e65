//! Synthetic data generation and the on-disk dataset format.
//!
//! A dataset directory holds `manifest.json` and one feature file per video.
//! Feature files are raw little-endian f32 values in row-major `(D, T)` order,
//! i.e. channel 0 for every instant, then channel 1, and so on.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diff::Array;
use crate::error::{Error, Result};
use crate::segment::{ActionInstance, Segment};
use crate::training::FrameAction;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Parameters of the synthetic generator. Lengths are in frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_videos: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub min_actions: usize,
    pub max_actions: usize,
    pub min_action_len: usize,
    pub max_action_len: usize,
    /// Upper bound on pairwise dot products between prototypes.
    pub margin: f64,
    /// Standard deviation of per-element Gaussian noise.
    pub noise: f64,
    /// Width in frames of the linear ramp at each action boundary.
    pub blend: f64,
    /// Minimum number of background frames between two actions.
    pub min_gap: usize,
    pub feature_fps: f64,
    /// Fraction of videos (taken from the end) placed in the `val` split.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_videos: 200,
            min_frames: 256,
            max_frames: 256,
            feature_dim: 32,
            num_classes: 5,
            min_actions: 1,
            max_actions: 4,
            min_action_len: 8,
            max_action_len: 64,
            margin: 0.2,
            noise: 0.1,
            blend: 2.0,
            min_gap: 4,
            feature_fps: 4.0,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SyntheticSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Infeasible(m));
        if self.num_videos == 0 || self.feature_dim == 0 || self.num_classes == 0 {
            return bad("num_videos, feature_dim and num_classes must be positive".into());
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad(format!(
                "frame range {}..={} is empty",
                self.min_frames, self.max_frames
            ));
        }
        if self.min_actions > self.max_actions {
            return bad("min_actions exceeds max_actions".into());
        }
        if self.min_action_len == 0 || self.min_action_len > self.max_action_len {
            return bad("action length range is empty".into());
        }
        if !(self.noise >= 0.0 && self.blend >= 0.0 && self.feature_fps > 0.0) {
            return bad("noise and blend must be non-negative, fps positive".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)".into());
        }
        if !(self.margin > -1.0 && self.margin < 1.0) {
            return bad("margin must lie in (-1, 1)".into());
        }
        if self.min_action_len > self.min_frames {
            return bad(format!(
                "actions of {} frames do not fit in videos of {} frames",
                self.min_action_len, self.min_frames
            ));
        }
        let need = self.max_actions * self.min_action_len + (self.max_actions + 1) * self.min_gap;
        if need > self.min_frames {
            return bad(format!(
                "{} actions of at least {} frames with gaps of {} need {} frames, shortest video has {}",
                self.max_actions, self.min_action_len, self.min_gap, need, self.min_frames
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub feature_dim: usize,
    pub feature_fps: f64,
    pub classes: Vec<String>,
    pub videos: Vec<VideoRecord>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub split: String,
    pub num_frames: usize,
    /// Relative to the manifest directory.
    pub feature_file: String,
    pub sha256: String,
    pub annotations: Vec<ActionInstance>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// One video with its features in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: String,
    pub split: String,
    pub annotations: Vec<ActionInstance>,
    /// `(D, T)`
    pub features: Array,
    pub feature_fps: f64,
}

impl Video {
    pub fn num_frames(&self) -> usize {
        self.features.cols()
    }

    pub fn duration(&self) -> f64 {
        self.num_frames() as f64 / self.feature_fps
    }

    /// Annotations converted to frame units.
    pub fn frame_actions(&self) -> Vec<FrameAction> {
        self.annotations
            .iter()
            .map(|a| FrameAction {
                segment: Segment::new(a.start * self.feature_fps, a.end * self.feature_fps),
                label: a.label,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub feature_dim: usize,
    pub feature_fps: f64,
    pub classes: Vec<String>,
    pub videos: Vec<Video>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn split(&self, name: &str) -> Vec<&Video> {
        self.videos.iter().filter(|v| v.split == name).collect()
    }

    /// Ground truth keyed by video id for the given videos.
    pub fn ground_truth<'a>(
        videos: impl IntoIterator<Item = &'a Video>,
    ) -> BTreeMap<String, Vec<ActionInstance>> {
        videos
            .into_iter()
            .map(|v| (v.id.clone(), v.annotations.clone()))
            .collect()
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        load(manifest_path)
    }

    pub fn save(&self, dir: &Path) -> Result<Manifest> {
        save(self, dir)
    }
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Class prototypes, row 0 is background. Orthonormal when they fit in `D`,
/// otherwise drawn until every pairwise dot product is below `margin`.
pub fn prototypes(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let (n, d) = (spec.num_classes + 1, spec.feature_dim);
    let unit = |rng: &mut ChaCha8Rng| {
        let v: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect::<Vec<f64>>()
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    if n <= d {
        while out.len() < n {
            let mut v = unit(rng);
            for u in &out {
                let p = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                out.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        if spec.margin <= 0.0 {
            return Err(Error::Infeasible(
                "orthonormal prototypes need margin > 0".into(),
            ));
        }
        return Ok(out);
    }
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Infeasible(format!(
                "could not draw {n} unit vectors in {d} dims with pairwise dot < {}",
                spec.margin
            )));
        }
        let v = unit(rng);
        if out.iter().all(|u| dot(&v, u) < spec.margin) {
            out.push(v);
        }
    }
    Ok(out)
}

/// Weight of the action prototype at frame `f` for an action `[s, e)`.
fn blend_weight(f: usize, s: usize, e: usize, width: f64) -> f64 {
    let mid = f as f64 + 0.5;
    if width <= 0.0 {
        return if f >= s && f < e { 1.0 } else { 0.0 };
    }
    let inside = (mid - s as f64).min(e as f64 - mid);
    (inside / width + 0.5).clamp(0.0, 1.0)
}

/// Place `count` actions with integer boundaries; deterministic given the RNG.
fn place_actions(
    spec: &SyntheticSpec,
    frames: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize, usize)> {
    let count = rng.random_range(spec.min_actions..=spec.max_actions);
    if count == 0 {
        return Vec::new();
    }
    let max_len = spec.max_action_len.min(frames);
    let mut lens: Vec<usize> = (0..count)
        .map(|_| rng.random_range(spec.min_action_len..=max_len))
        .collect();
    let gaps = (count + 1) * spec.min_gap;
    // Shrink the longest action until everything fits.
    while lens.iter().sum::<usize>() + gaps > frames {
        let i = (0..count)
            .max_by_key(|&i| (lens[i], usize::MAX - i))
            .unwrap();
        lens[i] -= 1;
    }
    let free = frames - lens.iter().sum::<usize>() - gaps;
    let mut cuts: Vec<usize> = (0..count).map(|_| rng.random_range(0..=free)).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(count);
    let mut cursor = 0usize;
    let mut prev_cut = 0usize;
    for i in 0..count {
        cursor += spec.min_gap + (cuts[i] - prev_cut);
        prev_cut = cuts[i];
        let label = rng.random_range(1..=spec.num_classes);
        out.push((cursor, cursor + lens[i], label));
        cursor += lens[i];
    }
    out
}

/// Generate the dataset in memory.
pub fn generate_videos(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut base = ChaCha8Rng::seed_from_u64(spec.seed);
    let protos = prototypes(spec, &mut base)?;
    let d = spec.feature_dim;
    let n_val = (spec.num_videos as f64 * spec.val_fraction).round() as usize;
    let n_train = spec.num_videos - n_val;
    let videos = (0..spec.num_videos)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64 + 1);
            let frames = rng.random_range(spec.min_frames..=spec.max_frames);
            let actions = place_actions(spec, frames, &mut rng);
            let mut feats = Array::zeros(&[d, frames]);
            for f in 0..frames {
                let mut w_bg = 1.0;
                let mut mix = vec![0.0; d];
                for &(s, e, c) in &actions {
                    let w = blend_weight(f, s, e, spec.blend);
                    if w > 0.0 {
                        mix.iter_mut()
                            .zip(&protos[c])
                            .for_each(|(m, p)| *m += w * p);
                        w_bg -= w;
                    }
                }
                for ch in 0..d {
                    let noise: f64 = rng.sample(StandardNormal);
                    let v = mix[ch] + w_bg.max(0.0) * protos[0][ch] + spec.noise * noise;
                    // Stored as f32 on disk; keep memory identical to what loads back.
                    feats.data_mut()[ch * frames + f] = v as f32 as f64;
                }
            }
            let annotations = actions
                .iter()
                .map(|&(s, e, c)| ActionInstance {
                    start: s as f64 / spec.feature_fps,
                    end: e as f64 / spec.feature_fps,
                    label: c,
                })
                .collect();
            Video {
                id: format!("video_{i:04}"),
                split: if i < n_train { "train" } else { "val" }.to_string(),
                annotations,
                features: feats,
                feature_fps: spec.feature_fps,
            }
        })
        .collect();
    Ok(Dataset {
        feature_dim: d,
        feature_fps: spec.feature_fps,
        classes: (1..=spec.num_classes)
            .map(|c| format!("class_{c}"))
            .collect(),
        videos,
    })
}

/// Generate and write to `dir`.
pub fn generate(spec: &SyntheticSpec, dir: &Path) -> Result<Dataset> {
    let ds = generate_videos(spec)?;
    save(&ds, dir)?;
    Ok(ds)
}

fn feature_bytes(a: &Array) -> Vec<u8> {
    let mut out = Vec::with_capacity(a.len() * 4);
    for &v in a.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn save(ds: &Dataset, dir: &Path) -> Result<Manifest> {
    let feat_dir = dir.join("features");
    std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut videos = Vec::with_capacity(ds.videos.len());
    for v in &ds.videos {
        let rel = format!("features/{}.f32", v.id);
        let bytes = feature_bytes(&v.features);
        let path = dir.join(&rel);
        std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        videos.push(VideoRecord {
            id: v.id.clone(),
            split: v.split.clone(),
            num_frames: v.num_frames(),
            feature_file: rel,
            sha256: hex_sha256(&bytes),
            annotations: v.annotations.clone(),
            extra: BTreeMap::new(),
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        feature_dim: ds.feature_dim,
        feature_fps: ds.feature_fps,
        classes: ds.classes.clone(),
        videos,
        extra: BTreeMap::new(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn load_record(rec: &VideoRecord, root: &Path, m: &Manifest) -> std::result::Result<Video, String> {
    let mut problems = Vec::new();
    let duration = rec.num_frames as f64 / m.feature_fps;
    for (i, a) in rec.annotations.iter().enumerate() {
        if !(a.start >= 0.0 && a.start < a.end && a.end <= duration + 1e-9) {
            problems.push(format!(
                "annotation {i} [{}, {}] outside [0, {duration}] or empty",
                a.start, a.end
            ));
        }
        if a.label == 0 || a.label > m.classes.len() {
            problems.push(format!(
                "annotation {i} label {} not in 1..={}",
                a.label,
                m.classes.len()
            ));
        }
    }
    if rec.num_frames == 0 {
        problems.push("num_frames is 0".into());
    }
    let path = root.join(&rec.feature_file);
    let features = match std::fs::read(&path) {
        Err(e) => {
            problems.push(format!("cannot read {}: {e}", path.display()));
            None
        }
        Ok(bytes) => {
            let want = m.feature_dim * rec.num_frames * 4;
            if bytes.len() != want {
                problems.push(format!(
                    "feature file has {} bytes, expected {want}",
                    bytes.len()
                ));
                None
            } else if hex_sha256(&bytes) != rec.sha256.to_ascii_lowercase() {
                problems.push("sha256 mismatch".into());
                None
            } else {
                let data: Vec<f64> = bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                    .collect();
                if data.iter().any(|v| !v.is_finite()) {
                    problems.push("non-finite feature values".into());
                    None
                } else {
                    Some(Array::new(vec![m.feature_dim, rec.num_frames], data))
                }
            }
        }
    };
    if !problems.is_empty() {
        return Err(format!("{}: {}", rec.id, problems.join("; ")));
    }
    Ok(Video {
        id: rec.id.clone(),
        split: rec.split.clone(),
        annotations: rec.annotations.clone(),
        features: features.expect("checked"),
        feature_fps: m.feature_fps,
    })
}

/// Load and validate every record. All problems are reported together.
pub fn load(manifest_path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Dataset(format!("{}: {e}", manifest_path.display())))?;
    for k in m.extra.keys() {
        log::warn!("manifest: ignoring unknown field {k:?}");
    }
    for v in &m.videos {
        for k in v.extra.keys() {
            log::warn!("manifest: video {}: ignoring unknown field {k:?}", v.id);
        }
    }
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Dataset(format!(
            "unsupported format_version {}",
            m.format_version
        )));
    }
    if m.feature_dim == 0
        || m.feature_fps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
        || m.classes.is_empty()
    {
        return Err(Error::Dataset(
            "feature_dim, feature_fps and classes must be non-empty/positive".into(),
        ));
    }
    let mut seen = HashSet::new();
    let dups: Vec<&str> = m
        .videos
        .iter()
        .filter(|v| !seen.insert(&v.id))
        .map(|v| v.id.as_str())
        .collect();
    if !dups.is_empty() {
        return Err(Error::Dataset(format!(
            "duplicate video ids: {}",
            dups.join(", ")
        )));
    }
    let root: PathBuf = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let results: Vec<std::result::Result<Video, String>> = m
        .videos
        .par_iter()
        .map(|rec| load_record(rec, &root, &m))
        .collect();
    let mut videos = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(v) => videos.push(v),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        return Err(Error::Dataset(format!(
            "{} of {} records invalid:\n  {}",
            errors.len(),
            m.videos.len(),
            errors.join("\n  ")
        )));
    }
    Ok(Dataset {
        feature_dim: m.feature_dim,
        feature_fps: m.feature_fps,
        classes: m.classes,
        videos,
    })
}

#[cfg(test)]
mod tests;
