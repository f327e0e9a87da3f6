//! The `TNSA` tensor archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "TNSA"            4 bytes magic
//! version           u16 (currently 1)
//! header_len        u32, byte length of the header block
//! header            UTF-8 text, one line per entry: "<name>\t<kind>\t<d0,d1,...>\n"
//! payload           entries concatenated in header order, row-major,
//!                   f64 as 8 bytes, c128 as (re, im) f64 pairs, u8 as 1 byte
//! ```
//!
//! A rank-0 entry has an empty shape field and holds one element.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"TNSA";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(ArrayD<f64>),
    C128(ArrayD<Complex64>),
    U8(ArrayD<u8>),
}

impl TensorData {
    pub fn kind(&self) -> &'static str {
        match self {
            TensorData::F64(_) => "f64",
            TensorData::C128(_) => "c128",
            TensorData::U8(_) => "u8",
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            TensorData::F64(a) => a.shape(),
            TensorData::C128(a) => a.shape(),
            TensorData::U8(a) => a.shape(),
        }
    }

    fn element_size(kind: &str) -> Option<usize> {
        match kind {
            "f64" => Some(8),
            "c128" => Some(16),
            "u8" => Some(1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, data: TensorData) -> Self {
        NamedTensor {
            name: name.into(),
            data,
        }
    }

    pub fn f64<D: ndarray::Dimension>(name: impl Into<String>, a: ndarray::Array<f64, D>) -> Self {
        Self::new(name, TensorData::F64(a.into_dyn()))
    }

    pub fn c128<D: ndarray::Dimension>(
        name: impl Into<String>,
        a: ndarray::Array<Complex64, D>,
    ) -> Self {
        Self::new(name, TensorData::C128(a.into_dyn()))
    }

    pub fn u8<D: ndarray::Dimension>(name: impl Into<String>, a: ndarray::Array<u8, D>) -> Self {
        Self::new(name, TensorData::U8(a.into_dyn()))
    }
}

/// Serializes entries into the archive byte format.
pub fn encode(entries: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut header = String::new();
    for e in entries {
        if e.name.is_empty() || e.name.contains(['\t', '\n']) {
            return Err(Error::MalformedHeader(format!(
                "entry name {:?} is empty or contains tab/newline",
                e.name
            )));
        }
        if !seen.insert(e.name.as_str()) {
            return Err(Error::DuplicateName(e.name.clone()));
        }
        let shape: Vec<String> = e.data.shape().iter().map(|d| d.to_string()).collect();
        header.push_str(&format!("{}\t{}\t{}\n", e.name, e.data.kind(), shape.join(",")));
    }
    let header_len = u32::try_from(header.len())
        .map_err(|_| Error::MalformedHeader("header exceeds 4 GiB".into()))?;

    let mut out = Vec::with_capacity(10 + header.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for e in entries {
        match &e.data {
            TensorData::F64(a) => {
                for v in a.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            TensorData::C128(a) => {
                for v in a.iter() {
                    out.extend_from_slice(&v.re.to_le_bytes());
                    out.extend_from_slice(&v.im.to_le_bytes());
                }
            }
            TensorData::U8(a) => out.extend(a.iter().copied()),
        }
    }
    Ok(out)
}

/// Parses archive bytes.
pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    if bytes.len() < 4 {
        let mut m = [0u8; 4];
        m[..bytes.len()].copy_from_slice(bytes);
        return Err(Error::BadMagic(m));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < 10 {
        return Err(Error::MalformedHeader("file ends inside the preamble".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let header_len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let header_end = 10 + header_len;
    if bytes.len() < header_end {
        return Err(Error::MalformedHeader("file ends inside the header".into()));
    }
    let header = std::str::from_utf8(&bytes[10..header_end])
        .map_err(|e| Error::MalformedHeader(format!("header is not UTF-8: {e}")))?;

    let mut payload = &bytes[header_end..];
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for line in header.lines().filter(|l| !l.is_empty()) {
        let mut fields = line.split('\t');
        let (Some(name), Some(kind), Some(shape), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::MalformedHeader(format!("bad entry line {line:?}")));
        };
        if !seen.insert(name.to_string()) {
            return Err(Error::DuplicateName(name.to_string()));
        }
        let elem = TensorData::element_size(kind).ok_or_else(|| Error::UnknownKind(kind.into()))?;
        let shape: Vec<usize> = if shape.is_empty() {
            Vec::new()
        } else {
            shape
                .split(',')
                .map(|d| {
                    d.parse::<usize>()
                        .map_err(|_| Error::MalformedHeader(format!("bad dimension {d:?} in {name:?}")))
                })
                .collect::<Result<_>>()?
        };
        let count: usize = shape.iter().product();
        let needed = count
            .checked_mul(elem)
            .ok_or_else(|| Error::MalformedHeader(format!("entry {name:?} is too large")))?;
        if payload.len() < needed {
            return Err(Error::Truncated {
                name: name.to_string(),
                needed,
                available: payload.len(),
            });
        }
        let (raw, rest) = payload.split_at(needed);
        payload = rest;
        let dim = IxDyn(&shape);
        let data = match kind {
            "f64" => {
                let v: Vec<f64> = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                TensorData::F64(ArrayD::from_shape_vec(dim, v).expect("count matches shape"))
            }
            "c128" => {
                let v: Vec<Complex64> = raw
                    .chunks_exact(16)
                    .map(|c| {
                        Complex64::new(
                            f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                            f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
                        )
                    })
                    .collect();
                TensorData::C128(ArrayD::from_shape_vec(dim, v).expect("count matches shape"))
            }
            _ => TensorData::U8(ArrayD::from_shape_vec(dim, raw.to_vec()).expect("count matches shape")),
        };
        out.push(NamedTensor::new(name, data));
    }
    if !payload.is_empty() {
        return Err(Error::MalformedHeader(format!(
            "{} trailing payload bytes after the last entry",
            payload.len()
        )));
    }
    Ok(out)
}

pub fn write_archive(path: impl AsRef<Path>, entries: &[NamedTensor]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(entries)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Name-indexed view over decoded entries with typed accessors.
#[derive(Debug, Clone, Default)]
pub struct Archive {
    entries: Vec<NamedTensor>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Archive {
            entries: read_archive(path)?,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_archive(path, &self.entries)
    }

    pub fn push(&mut self, t: NamedTensor) -> &mut Self {
        self.entries.retain(|e| e.name != t.name);
        self.entries.push(t);
        self
    }

    pub fn entries(&self) -> &[NamedTensor] {
        &self.entries
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Result<&TensorData> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &e.data)
            .ok_or_else(|| Error::MissingEntry(name.to_string()))
    }

    pub fn f64(&self, name: &str) -> Result<ArrayD<f64>> {
        match self.get(name)? {
            TensorData::F64(a) => Ok(a.clone()),
            other => Err(Error::WrongKind {
                name: name.into(),
                expected: "f64",
                found: other.kind(),
            }),
        }
    }

    pub fn c128(&self, name: &str) -> Result<ArrayD<Complex64>> {
        match self.get(name)? {
            TensorData::C128(a) => Ok(a.clone()),
            other => Err(Error::WrongKind {
                name: name.into(),
                expected: "c128",
                found: other.kind(),
            }),
        }
    }

    pub fn u8(&self, name: &str) -> Result<ArrayD<u8>> {
        match self.get(name)? {
            TensorData::U8(a) => Ok(a.clone()),
            other => Err(Error::WrongKind {
                name: name.into(),
                expected: "u8",
                found: other.kind(),
            }),
        }
    }

    /// Typed accessor that also checks the rank.
    pub fn f64_dim<D: ndarray::Dimension>(&self, name: &str) -> Result<ndarray::Array<f64, D>> {
        self.f64(name)?
            .into_dimensionality::<D>()
            .map_err(|e| Error::Shape(format!("entry {name:?}: {e}")))
    }

    pub fn c128_dim<D: ndarray::Dimension>(
        &self,
        name: &str,
    ) -> Result<ndarray::Array<Complex64, D>> {
        self.c128(name)?
            .into_dimensionality::<D>()
            .map_err(|e| Error::Shape(format!("entry {name:?}: {e}")))
    }

    pub fn u8_dim<D: ndarray::Dimension>(&self, name: &str) -> Result<ndarray::Array<u8, D>> {
        self.u8(name)?
            .into_dimensionality::<D>()
            .map_err(|e| Error::Shape(format!("entry {name:?}: {e}")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let a = self.f64(name)?;
        a.iter()
            .next()
            .copied()
            .filter(|_| a.len() == 1)
            .ok_or_else(|| Error::Shape(format!("entry {name:?} is not a scalar")))
    }
}

impl From<Vec<NamedTensor>> for Archive {
    fn from(entries: Vec<NamedTensor>) -> Self {
        Archive { entries }
    }
}
