//! Binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DTWC" | version u32 | kind u32 | meta_len u64 | meta JSON
//! | n_sections u32 | { name_len u32 | name | ndim u32 | dims u64* | f64* }
//! ```
//!
//! The metadata is plain JSON with sorted keys and no timestamps, so equal
//! models always serialize to equal bytes.

use std::fs;
use std::io;
use std::path::Path;

use serde_json::Value;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"DTWC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a model container (bad magic bytes)")]
    BadMagic,
    #[error("unsupported container version {0} (expected {FORMAT_VERSION})")]
    VersionUnsupported(u32),
    #[error("container payload is truncated")]
    TruncatedPayload,
    #[error("unknown model kind code {0}")]
    UnknownModelKind(u32),
    #[error("section `{name}` declares {declared} values but shape {shape:?}")]
    ShapeMismatch {
        name: String,
        declared: usize,
        shape: Vec<usize>,
    },
    #[error("{0} trailing bytes after last section")]
    TrailingBytes(usize),
    #[error("bad metadata: {0}")]
    Metadata(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, ContainerError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Section {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(ContainerError::ShapeMismatch {
                name,
                declared: data.len(),
                shape,
            });
        }
        Ok(Self { name, shape, data })
    }

    pub fn vector(name: impl Into<String>, data: Vec<f64>) -> Self {
        let len = data.len();
        Self {
            name: name.into(),
            shape: vec![len],
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelContainer {
    /// Numeric model-kind code; see `pipeline::ModelKind::code`.
    pub kind: u32,
    pub metadata: Value,
    pub sections: Vec<Section>,
}

impl ModelContainer {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.metadata)?;
        let payload: usize = self.sections.iter().map(|s| s.data.len() * 8).sum();
        let mut out = Vec::with_capacity(24 + meta.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.kind.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            if s.shape.iter().product::<usize>() != s.data.len() {
                return Err(ContainerError::ShapeMismatch {
                    name: s.name.clone(),
                    declared: s.data.len(),
                    shape: s.shape.clone(),
                });
            }
            out.extend_from_slice(&(s.name.len() as u32).to_le_bytes());
            out.extend_from_slice(s.name.as_bytes());
            out.extend_from_slice(&(s.shape.len() as u32).to_le_bytes());
            for &d in &s.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &s.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(|_| ContainerError::BadMagic)? != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(ContainerError::VersionUnsupported(version));
        }
        let kind = r.u32()?;
        let meta_len = r.len_u64()?;
        let metadata = serde_json::from_slice(r.take(meta_len)?)?;
        let n_sections = r.u32()? as usize;
        let mut sections = Vec::with_capacity(n_sections.min(1024));
        for _ in 0..n_sections {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8_lossy(r.take(name_len)?).into_owned();
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(r.len_u64()?);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or(ContainerError::TruncatedPayload)?;
            let raw = r.take(count.checked_mul(8).ok_or(ContainerError::TruncatedPayload)?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            sections.push(Section { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(ContainerError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self {
            kind,
            metadata,
            sections,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(ContainerError::TruncatedPayload)?;
        let out = self
            .bytes
            .get(self.pos..end)
            .ok_or(ContainerError::TruncatedPayload)?;
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn len_u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| ContainerError::TruncatedPayload)
    }
}

pub fn save_container(container: &ModelContainer, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, container.to_bytes()?)?;
    Ok(())
}

pub fn load_container(path: impl AsRef<Path>) -> Result<ModelContainer> {
    ModelContainer::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn sample() -> ModelContainer {
        ModelContainer {
            kind: 1,
            metadata: json!({"b": [1, 2], "a": {"z": "x", "y": 0.5}}),
            sections: vec![
                Section::vector("idf", vec![1.0, 1.6931471805599454, -0.0]),
                Section::new("w", vec![2, 2], vec![f64::MIN_POSITIVE, 2.0, 3.0, -4.5]).unwrap(),
                Section::new("empty", vec![0, 3], vec![]).unwrap(),
            ],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = ModelContainer::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert!(back.section("idf").unwrap().data[2].is_sign_negative());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.dtwc");
        save_container(&sample(), &path).unwrap();
        assert_eq!(load_container(&path).unwrap(), sample());
    }

    #[test]
    fn corrupt_inputs() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ModelContainer::from_bytes(&bad), Err(ContainerError::BadMagic)));
        assert!(matches!(ModelContainer::from_bytes(b"DT"), Err(ContainerError::BadMagic)));

        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(ModelContainer::from_bytes(&v2), Err(ContainerError::VersionUnsupported(2))));

        for cut in [8, 20, bytes.len() - 1] {
            assert!(matches!(
                ModelContainer::from_bytes(&bytes[..cut]),
                Err(ContainerError::TruncatedPayload)
            ));
        }
        let mut long = bytes;
        long.push(0);
        assert!(matches!(ModelContainer::from_bytes(&long), Err(ContainerError::TrailingBytes(1))));
        assert!(Section::new("x", vec![2], vec![1.0]).is_err());
    }

    #[test]
    fn metadata_keys_are_sorted() {
        let bytes = sample().to_bytes().unwrap();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.find("\"a\"").unwrap() < text.find("\"b\"").unwrap());
    }

    proptest! {
        #[test]
        fn arbitrary_payloads_round_trip(data in prop::collection::vec(any::<f64>(), 0..50)) {
            let c = ModelContainer {
                kind: 3,
                metadata: json!({}),
                sections: vec![Section::vector("v", data)],
            };
            let bytes = c.to_bytes().unwrap();
            let back = ModelContainer::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }
}
