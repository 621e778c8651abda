//! The EDMS bitstream: a fixed 28-byte header, the compact and residual
//! sections, and an optional synthesis-hash trailer.

use crate::codec::QuantSpec;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"EDMS";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 28;
pub const HASH_LEN: usize = 8;

/// Container flag bits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Flags(u8);

impl Flags {
    pub const SYNTH_HASH: Flags = Flags(1);
    /// Synthesis bypasses segment enhancement.
    pub const NO_ENHANCE: Flags = Flags(2);
    const KNOWN: u8 = 3;

    pub const fn empty() -> Flags {
        Flags(0)
    }

    pub fn from_bits(bits: u8) -> Result<Flags> {
        if bits & !Self::KNOWN != 0 {
            return Err(Error::format(
                "container",
                format!("unknown flag bits {bits:#04x}"),
            ));
        }
        Ok(Flags(bits))
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub const fn contains(self, other: Flags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn set(&mut self, other: Flags, on: bool) {
        if on {
            self.0 |= other.0;
        } else {
            self.0 &= !other.0;
        }
    }
}

impl std::ops::BitOr for Flags {
    type Output = Flags;
    fn bitor(self, rhs: Flags) -> Flags {
        Flags(self.0 | rhs.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Container {
    pub flags: Flags,
    pub q: QuantSpec,
    /// Original (pre-padding) dimensions.
    pub width: u16,
    pub height: u16,
    pub weight_digest: [u8; 8],
    pub compact: Vec<u8>,
    pub residual: Vec<u8>,
    pub synth_hash: Option<[u8; HASH_LEN]>,
}

impl Container {
    pub fn byte_len(&self) -> usize {
        HEADER_LEN
            + self.compact.len()
            + self.residual.len()
            + if self.synth_hash.is_some() {
                HASH_LEN
            } else {
                0
            }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.flags.contains(Flags::SYNTH_HASH) != self.synth_hash.is_some() {
            return Err(Error::InvalidArgument(
                "synthesis hash flag and trailer disagree".into(),
            ));
        }
        let len32 = |what: &str, n: usize| {
            u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("{what} section too long")))
        };
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.flags.bits());
        out.extend_from_slice(&self.q.step().to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.weight_digest);
        out.extend_from_slice(&len32("compact", self.compact.len())?.to_le_bytes());
        out.extend_from_slice(&len32("residual", self.residual.len())?.to_le_bytes());
        out.extend_from_slice(&self.compact);
        out.extend_from_slice(&self.residual);
        if let Some(h) = &self.synth_hash {
            out.extend_from_slice(h);
        }
        Ok(out)
    }

    pub fn parse(bytes: &[u8]) -> Result<Container> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated);
        }
        if bytes[..4] != MAGIC {
            return Err(Error::format("container", "bad magic"));
        }
        if bytes[4] != VERSION {
            return Err(Error::format(
                "container",
                format!("unsupported version {}", bytes[4]),
            ));
        }
        let flags = Flags::from_bits(bytes[5])?;
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let q = QuantSpec::new(u16_at(6)).map_err(|e| Error::format("container", e.to_string()))?;
        let width = u16_at(8);
        let height = u16_at(10);
        let mut weight_digest = [0u8; 8];
        weight_digest.copy_from_slice(&bytes[12..20]);
        let compact_len = u32_at(20);
        let residual_len = u32_at(24);
        let hash_len = if flags.contains(Flags::SYNTH_HASH) {
            HASH_LEN
        } else {
            0
        };
        let expected =
            HEADER_LEN as u64 + compact_len as u64 + residual_len as u64 + hash_len as u64;
        if (bytes.len() as u64) < expected {
            return Err(Error::Truncated);
        }
        if bytes.len() as u64 > expected {
            return Err(Error::format(
                "container",
                format!("{} trailing bytes", bytes.len() as u64 - expected),
            ));
        }
        let c0 = HEADER_LEN;
        let r0 = c0 + compact_len;
        let h0 = r0 + residual_len;
        let synth_hash = (hash_len > 0).then(|| bytes[h0..h0 + HASH_LEN].try_into().unwrap());
        Ok(Container {
            flags,
            q,
            width,
            height,
            weight_digest,
            compact: bytes[c0..r0].to_vec(),
            residual: bytes[r0..h0].to_vec(),
            synth_hash,
        })
    }
}
