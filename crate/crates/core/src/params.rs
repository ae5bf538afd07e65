//! Path-addressed parameter store, initialization and the binary checkpoint format.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diff::{Array, Graph, NodeId};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CGMG";
pub const CHECKPOINT_VERSION: u32 = 1;

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
    Const(f64),
}

/// Declared shape and initializer of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(path: impl Into<String>, shape: &[usize], init: Init) -> Self {
        ParamSpec {
            path: path.into(),
            shape: shape.to_vec(),
            init,
        }
    }
}

/// All learnable weights, keyed by dotted path.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    entries: BTreeMap<String, Array>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    /// Draw fresh values for every spec. Iteration follows spec order so the
    /// result depends only on the spec list and the RNG state.
    pub fn init(specs: &[ParamSpec], rng: &mut ChaCha8Rng) -> Self {
        let mut out = ModelParams::new();
        for s in specs {
            let n: usize = s.shape.iter().product();
            let data = match s.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Const(v) => vec![v; n],
                Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                }
            };
            out.insert(s.path.clone(), Array::new(s.shape.clone(), data));
        }
        out
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Array) {
        self.entries.insert(path.into(), value);
    }

    pub fn get(&self, path: &str) -> Option<&Array> {
        self.entries.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Array> {
        self.entries.get_mut(path)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.entries.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Array::len).sum()
    }

    /// Entries whose path starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ModelParams {
        ModelParams {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Set every entry under `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (k, v) in self.entries.iter_mut() {
            if k.starts_with(prefix) {
                v.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    /// Check that paths and shapes match `specs` exactly.
    pub fn check_against(&self, specs: &[ParamSpec]) -> Result<()> {
        let mut problems = Vec::new();
        for s in specs {
            match self.entries.get(&s.path) {
                None => problems.push(format!("missing {}", s.path)),
                Some(a) if a.shape() != s.shape.as_slice() => problems.push(format!(
                    "{}: checkpoint shape {:?}, config expects {:?}",
                    s.path,
                    a.shape(),
                    s.shape
                )),
                _ => {}
            }
        }
        let expected: std::collections::HashSet<&str> =
            specs.iter().map(|s| s.path.as_str()).collect();
        for k in self.entries.keys() {
            if !expected.contains(k.as_str()) {
                problems.push(format!("unexpected {k}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "parameters do not match config: {}",
                problems.join("; ")
            )))
        }
    }

    /// Serialize to the checkpoint byte layout (values stored as f32).
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(12 + self.num_scalars() * 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (path, a) in &self.entries {
            let len = u16::try_from(path.len())
                .map_err(|_| Error::Checkpoint(format!("path too long: {path}")))?;
            let rank = u8::try_from(a.rank())
                .map_err(|_| Error::Checkpoint(format!("rank too large: {path}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(path.as_bytes());
            out.push(rank);
            for &d in a.shape() {
                let d = u32::try_from(d)
                    .map_err(|_| Error::Checkpoint(format!("dim too large: {path}")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for &v in a.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut out = ModelParams::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let path = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("path is not utf-8".into()))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let payload = r.take(n * 4)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            if out.contains(&path) {
                return Err(Error::Checkpoint(format!("duplicate entry {path}")));
            }
            out.insert(path, Array::new(shape, data));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Round every value through f32, matching what a checkpoint stores.
    pub fn quantize_f32(&mut self) {
        for v in self.entries.values_mut() {
            v.data_mut().iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!("truncated at byte {}", self.pos))),
        }
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Lazily turns parameters into graph leaves, one leaf per path.
pub struct Binder<'p> {
    params: &'p ModelParams,
    bound: HashMap<String, NodeId>,
    trainable: bool,
}

impl<'p> Binder<'p> {
    /// Parameters become trainable leaves.
    pub fn new(params: &'p ModelParams) -> Self {
        Binder {
            params,
            bound: HashMap::new(),
            trainable: true,
        }
    }

    /// Parameters become constants (inference).
    pub fn frozen(params: &'p ModelParams) -> Self {
        Binder {
            params,
            bound: HashMap::new(),
            trainable: false,
        }
    }

    pub fn get(&mut self, g: &mut Graph, path: &str) -> Result<NodeId> {
        if let Some(&id) = self.bound.get(path) {
            return Ok(id);
        }
        let value = self
            .params
            .get(path)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {path}")))?
            .clone();
        let id = if self.trainable {
            g.leaf(path, value)
        } else {
            g.named_constant(path, value)
        };
        self.bound.insert(path.to_string(), id);
        Ok(id)
    }

    /// Leaves created so far, sorted by path.
    pub fn bound(&self) -> Vec<(String, NodeId)> {
        let mut v: Vec<_> = self.bound.iter().map(|(k, &id)| (k.clone(), id)).collect();
        v.sort();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sample() -> ModelParams {
        let mut p = ModelParams::new();
        p.insert(
            "a.w",
            Array::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.25, 0.0, -0.125]),
        );
        p.insert("a.b", Array::new(vec![2], vec![1.0, 2.0]));
        p.insert("s", Array::scalar(4.0));
        p
    }

    #[test]
    fn byte_round_trip() {
        let p = sample();
        let bytes = p.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"CGMG");
        assert_eq!(ModelParams::from_bytes(&bytes).unwrap(), p);
    }

    #[test]
    fn layout_is_exact() {
        let mut p = ModelParams::new();
        p.insert("x", Array::new(vec![1], vec![1.0]));
        let bytes = p.to_bytes().unwrap();
        let mut expect = b"CGMG".to_vec();
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u16.to_le_bytes());
        expect.push(b'x');
        expect.push(1);
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1f32.to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn corrupt_bytes_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(ModelParams::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelParams::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(ModelParams::from_bytes(&extra).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let specs = vec![
            ParamSpec::new("w", &[4, 9], Init::FanIn(9)),
            ParamSpec::new("b", &[4], Init::Zeros),
            ParamSpec::new("g", &[4], Init::Ones),
        ];
        let a = ModelParams::init(&specs, &mut ChaCha8Rng::seed_from_u64(3));
        let b = ModelParams::init(&specs, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert!(a
            .get("w")
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() < 1.0 / 3.0));
        assert_eq!(a.get("g").unwrap().data(), &[1.0; 4]);
        a.check_against(&specs).unwrap();
        let err = a.check_against(&specs[..2]).unwrap_err().to_string();
        assert!(err.contains("unexpected g"));
    }

    #[test]
    fn binder_reuses_leaves() {
        let p = sample();
        let mut g = Graph::new();
        let mut b = Binder::new(&p);
        let x = b.get(&mut g, "a.b").unwrap();
        let y = b.get(&mut g, "a.b").unwrap();
        assert_eq!(x, y);
        assert!(b.get(&mut g, "nope").is_err());
    }
}
