//! Named weight tensors and the EDMW weight file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "EDMW" | u16 version (1) | u16 tensor_count
//! per tensor: u16 name_len | name (UTF-8) | u8 rank | u32 dims[rank] | f32 payload (row-major)
//! 32-byte SHA-256 of every preceding byte
//! ```
//!
//! The trailing hash is the weight set's digest. Containers carry its first
//! eight bytes so a decoder refuses to run with a different model.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor};

pub const WEIGHT_MAGIC: &[u8; 4] = b"EDMW";
pub const WEIGHT_VERSION: u16 = 1;

/// Read-only lookup of parameter tensors by name.
pub trait Params: Sync {
    fn param(&self, name: &str) -> Option<&Tensor<f32>>;

    fn require(&self, name: &str) -> Result<&Tensor<f32>> {
        self.param(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))
    }
}

impl Params for BTreeMap<String, Tensor<f32>> {
    fn param(&self, name: &str) -> Option<&Tensor<f32>> {
        self.get(name)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    rank: u8,
    tensor: Tensor<f32>,
}

/// An immutable, ordered collection of named tensors plus its content digest.
#[derive(Clone, Debug)]
pub struct WeightSet {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
    digest: [u8; 32],
}

impl PartialEq for WeightSet {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.digest == other.digest
    }
}

/// Dims padded on the left with ones, so rank-1 `[k]` becomes `1x1x1xk`.
fn dims_from_shape(shape: &[usize]) -> Result<Dims> {
    if shape.len() > 4 {
        return Err(Error::format(
            "weights",
            format!("rank {} > 4", shape.len()),
        ));
    }
    let mut d = [1usize; 4];
    d[4 - shape.len()..].copy_from_slice(shape);
    Ok(Dims::new(d[0], d[1], d[2], d[3]))
}

impl WeightSet {
    pub fn empty() -> Self {
        WeightSet::new(Vec::new()).expect("empty set is valid")
    }

    /// Builds a set from `(name, shape, tensor)` triples. `shape` is the
    /// logical shape stored in the file; the tensor holds the same values.
    pub fn from_shaped(entries: Vec<(String, Vec<usize>, Tensor<f32>)>) -> Result<Self> {
        let mut out = Vec::with_capacity(entries.len());
        for (name, shape, tensor) in entries {
            let dims = dims_from_shape(&shape)?;
            if dims.len() != tensor.len() {
                return Err(Error::shape(
                    "weights",
                    format!("`{name}` shape {shape:?} holds {} values", tensor.len()),
                ));
            }
            out.push(Entry {
                name,
                rank: shape.len() as u8,
                tensor: tensor.reshape(dims)?,
            });
        }
        WeightSet::new(out)
    }

    /// Builds a set from rank-4 tensors; 1x1x1xk tensors are stored as rank 1.
    pub fn from_tensors(entries: Vec<(String, Tensor<f32>)>) -> Result<Self> {
        WeightSet::new(
            entries
                .into_iter()
                .map(|(name, tensor)| {
                    let d = tensor.dims();
                    let rank = if d.n == 1 && d.c == 1 && d.h == 1 {
                        1
                    } else {
                        4
                    };
                    Entry { name, rank, tensor }
                })
                .collect(),
        )
    }

    fn new(entries: Vec<Entry>) -> Result<Self> {
        if entries.len() > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "{} tensors exceed the format limit",
                entries.len()
            )));
        }
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.name.len() > u16::MAX as usize {
                return Err(Error::InvalidArgument(format!("name too long: {}", e.name)));
            }
            if index.insert(e.name.clone(), i).is_some() {
                return Err(Error::format(
                    "weights",
                    format!("duplicate name `{}`", e.name),
                ));
            }
        }
        let mut set = WeightSet {
            entries,
            index,
            digest: [0; 32],
        };
        let body = set.body_bytes();
        set.digest = Sha256::digest(&body).into();
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn digest(&self) -> [u8; 32] {
        self.digest
    }

    pub fn digest_prefix(&self) -> [u8; 8] {
        let mut p = [0; 8];
        p.copy_from_slice(&self.digest[..8]);
        p
    }

    pub fn digest_hex(&self) -> String {
        hex(&self.digest)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.index.get(name).map(|&i| &self.entries[i].tensor)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.tensor))
    }

    pub fn contains_prefix(&self, prefix: &str) -> bool {
        self.entries.iter().any(|e| e.name.starts_with(prefix))
    }

    /// A new set with `other`'s tensors replacing same-named entries in place
    /// and the rest appended in `other`'s order.
    pub fn merged(&self, other: &WeightSet) -> Result<WeightSet> {
        let mut entries = self.entries.clone();
        for e in &other.entries {
            match self.index.get(&e.name) {
                Some(&i) => entries[i] = e.clone(),
                None => entries.push(e.clone()),
            }
        }
        WeightSet::new(entries)
    }

    /// All tensors whose name starts with `prefix`, as an owned map.
    pub fn to_map(&self, prefix: &str) -> BTreeMap<String, Tensor<f32>> {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| (e.name.clone(), e.tensor.clone()))
            .collect()
    }

    fn body_bytes(&self) -> Vec<u8> {
        let payload: usize = self.entries.iter().map(|e| e.tensor.len() * 4 + 64).sum();
        let mut buf = Vec::with_capacity(8 + payload);
        buf.extend_from_slice(WEIGHT_MAGIC);
        buf.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u16).to_le_bytes());
        for e in &self.entries {
            buf.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            buf.extend_from_slice(e.name.as_bytes());
            buf.push(e.rank);
            let dims = e.tensor.dims().as_array();
            for d in &dims[4 - e.rank as usize..] {
                buf.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in e.tensor.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = self.body_bytes();
        buf.extend_from_slice(&self.digest);
        buf
    }

    pub fn save(&self, mut sink: impl Write) -> Result<()> {
        sink.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(mut source: impl Read) -> Result<WeightSet> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        WeightSet::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<WeightSet> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != WEIGHT_MAGIC {
            return Err(Error::format("weights", "bad magic"));
        }
        let version = r.u16()?;
        if version != WEIGHT_VERSION {
            return Err(Error::format(
                "weights",
                format!("unsupported version {version}"),
            ));
        }
        let count = r.u16()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format("weights", "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.take(1)?[0];
            if rank > 4 {
                return Err(Error::format(
                    "weights",
                    format!("`{name}` has rank {rank}"),
                ));
            }
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let dims = dims_from_shape(&shape)?;
            let raw = r.take(dims.len().checked_mul(4).ok_or(Error::Truncated)?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            entries.push(Entry {
                name,
                rank,
                tensor: Tensor::from_vec(dims, data)?,
            });
        }
        let body_len = r.pos;
        let stored = r.take(32)?;
        if r.pos != bytes.len() {
            return Err(Error::format("weights", "trailing bytes after digest"));
        }
        let actual: [u8; 32] = Sha256::digest(&bytes[..body_len]).into();
        if stored != actual {
            return Err(Error::DigestMismatch {
                expected: hex(stored),
                actual: hex(&actual),
            });
        }
        let set = WeightSet::new(entries)?;
        debug_assert_eq!(set.digest, actual);
        Ok(set)
    }
}

impl Params for WeightSet {
    fn param(&self, name: &str) -> Option<&Tensor<f32>> {
        self.get(name)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        if end > self.bytes.len() {
            return Err(Error::Truncated);
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
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
