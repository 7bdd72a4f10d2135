//! Single-file model container.
//!
//! Layout (little-endian): `HVIS`, version `u32`, segment count `u32`, then per
//! segment: name length `u32`, UTF-8 name, kind `u8`, payload. Kind 0 is a
//! tensor (`u32` rank, `u64` dims, `f64` values); kind 1 is text (`u64`
//! length, UTF-8 bytes).

use std::path::Path;

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{HvisError, Result};

pub const MAGIC: &[u8; 4] = b"HVIS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Segment {
    Tensor(Tensor),
    Text(String),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckpointBundle {
    segments: Vec<(String, Segment)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            HvisError::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| HvisError::Checkpoint(format!("{what} does not fit in memory")))
    }
}

impl CheckpointBundle {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: String, seg: Segment) -> Result<()> {
        if self.segments.iter().any(|(n, _)| *n == name) {
            return Err(HvisError::Checkpoint(format!("duplicate segment {name:?}")));
        }
        self.segments.push((name, seg));
        Ok(())
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: &Tensor) -> Result<()> {
        self.push(name.into(), Segment::Tensor(t.clone()))
    }

    pub fn push_text(&mut self, name: impl Into<String>, text: impl Into<String>) -> Result<()> {
        self.push(name.into(), Segment::Text(text.into()))
    }

    /// Adds every parameter of `store` as `{group}/{parameter name}`.
    pub fn push_store(&mut self, group: &str, store: &ParamStore) -> Result<()> {
        for (name, t) in store.iter() {
            self.push_tensor(format!("{group}/{name}"), t)?;
        }
        Ok(())
    }

    pub fn segments(&self) -> impl Iterator<Item = (&str, &Segment)> {
        self.segments.iter().map(|(n, s)| (n.as_str(), s))
    }

    pub fn get(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name) {
            Some(Segment::Text(s)) => Ok(s),
            Some(Segment::Tensor(_)) => Err(HvisError::Checkpoint(format!("segment {name:?} is a tensor, expected text"))),
            None => Err(HvisError::Checkpoint(format!("missing segment {name:?}"))),
        }
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        match self.get(name) {
            Some(Segment::Tensor(t)) => Ok(t),
            Some(Segment::Text(_)) => Err(HvisError::Checkpoint(format!("segment {name:?} is text, expected a tensor"))),
            None => Err(HvisError::Checkpoint(format!("missing segment {name:?}"))),
        }
    }

    /// Overwrites every parameter of `store` from `{group}/{name}` segments.
    pub fn restore_store(&self, group: &str, store: &mut ParamStore) -> Result<()> {
        let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let t = self.tensor(&format!("{group}/{name}"))?;
            store.assign(&name, t)?;
        }
        let extra = self
            .segments
            .iter()
            .filter_map(|(n, _)| n.strip_prefix(&format!("{group}/")))
            .find(|n| store.find(n).is_none());
        if let Some(n) = extra {
            return Err(HvisError::Checkpoint(format!("segment {group}/{n} has no matching parameter")));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.segments.len() as u32).to_le_bytes());
        for (name, seg) in &self.segments {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match seg {
                Segment::Tensor(t) => {
                    out.push(0);
                    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
                    for &d in t.shape() {
                        out.extend_from_slice(&(d as u64).to_le_bytes());
                    }
                    for v in t.values() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Segment::Text(s) => {
                    out.push(1);
                    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
                    out.extend_from_slice(s.as_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(HvisError::Checkpoint("not an HVIS checkpoint (bad magic bytes)".into()));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(HvisError::Checkpoint(format!("format version {version} is not supported (expected {FORMAT_VERSION})")));
        }
        let count = r.u32("segment count")?;
        let mut bundle = CheckpointBundle::new();
        for _ in 0..count {
            let len = r.u32("segment name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "segment name")?)
                .map_err(|_| HvisError::Checkpoint("segment name is not UTF-8".into()))?
                .to_string();
            let seg = match r.take(1, "segment kind")?[0] {
                0 => {
                    let rank = r.u32("tensor rank")? as usize;
                    let shape = (0..rank).map(|_| r.len("tensor dimension")).collect::<Result<Vec<_>>>()?;
                    let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
                    let n = n.filter(|n| n.checked_mul(8).is_some_and(|b| b <= bytes.len())).ok_or_else(|| {
                        HvisError::Checkpoint(format!("segment {name:?} declares an impossible shape {shape:?}"))
                    })?;
                    let raw = r.take(n * 8, "tensor values")?;
                    let vals = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                    Segment::Tensor(Tensor::new(&shape, vals).map_err(|e| HvisError::Checkpoint(format!("segment {name:?}: {e}")))?)
                }
                1 => {
                    let n = r.len("text length")?;
                    let s = std::str::from_utf8(r.take(n, "text")?)
                        .map_err(|_| HvisError::Checkpoint(format!("segment {name:?} is not UTF-8")))?;
                    Segment::Text(s.to_string())
                }
                k => return Err(HvisError::Checkpoint(format!("segment {name:?} has unknown kind {k}"))),
            };
            bundle.push(name, seg)?;
        }
        if r.pos != bytes.len() {
            return Err(HvisError::Checkpoint(format!("{} trailing bytes after the last segment", bytes.len() - r.pos)));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| HvisError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
