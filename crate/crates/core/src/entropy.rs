//! Byte-oriented range coder with adaptive frequency models.
//!
//! The coder is the carry-propagating variant (32-bit range, 33-bit low,
//! one cached byte plus a run of pending 0xFF bytes). `finish` flushes five
//! bytes; the decoder primes itself with the same five.

use crate::error::{Error, Result};

pub const FREQ_INIT: u32 = 1;
pub const FREQ_INCREMENT: u32 = 32;
/// Frequencies are halved once the total exceeds this.
pub const FREQ_LIMIT: u32 = 1 << 16;

const TOP: u32 = 1 << 24;

/// Adaptive frequency table over an alphabet of `2..=256` symbols.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdaptiveModel {
    freqs: Vec<u32>,
    total: u32,
}

impl AdaptiveModel {
    pub fn new(alphabet: usize) -> Self {
        assert!(
            (1..=256).contains(&alphabet),
            "alphabet size {alphabet} outside 1..=256"
        );
        AdaptiveModel {
            freqs: vec![FREQ_INIT; alphabet],
            total: FREQ_INIT * alphabet as u32,
        }
    }

    pub fn alphabet(&self) -> usize {
        self.freqs.len()
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn freq(&self, sym: usize) -> u32 {
        self.freqs[sym]
    }

    /// Cumulative frequency below `sym`.
    fn cum(&self, sym: usize) -> u32 {
        self.freqs[..sym].iter().sum()
    }

    /// Ideal code length of `sym` under the current table, in bits.
    pub fn cost_bits(&self, sym: usize) -> f64 {
        -(self.freqs[sym] as f64 / self.total as f64).log2()
    }

    pub fn update(&mut self, sym: usize) {
        self.freqs[sym] += FREQ_INCREMENT;
        self.total += FREQ_INCREMENT;
        if self.total > FREQ_LIMIT {
            self.total = 0;
            for f in &mut self.freqs {
                *f = (*f + 1) >> 1;
                self.total += *f;
            }
        }
    }

    /// Symbol whose cumulative interval contains `target`, and its start.
    fn find(&self, target: u32) -> (usize, u32) {
        let mut cum = 0;
        for (s, &f) in self.freqs.iter().enumerate() {
            if target < cum + f {
                return (s, cum);
            }
            cum += f;
        }
        let last = self.freqs.len() - 1;
        (last, cum - self.freqs[last])
    }
}

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    fn encode(&mut self, cum: u32, freq: u32, total: u32) {
        let r = self.range / total;
        self.low += r as u64 * cum as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Codes `sym` and then adapts `model`.
    pub fn encode_symbol(&mut self, model: &mut AdaptiveModel, sym: usize) {
        assert!(sym < model.alphabet(), "symbol {sym} outside alphabet");
        let cum = model.cum(sym);
        self.encode(cum, model.freqs[sym], model.total);
        model.update(sym);
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = RangeDecoder {
            data,
            pos: 0,
            code: 0,
            range: u32::MAX,
        };
        for _ in 0..5 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self.data.get(self.pos).ok_or(Error::Truncated)?;
        self.pos += 1;
        Ok(b)
    }

    /// Decodes one symbol and adapts `model` exactly as the encoder did.
    pub fn decode_symbol(&mut self, model: &mut AdaptiveModel) -> Result<usize> {
        let r = self.range / model.total;
        let target = (self.code / r).min(model.total - 1);
        let (sym, cum) = model.find(target);
        self.code -= r * cum;
        self.range = r * model.freqs[sym];
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        model.update(sym);
        Ok(sym)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }
}

/// Codes `symbols` with one fresh model of the given alphabet.
pub fn encode_all(symbols: &[usize], alphabet: usize) -> Vec<u8> {
    let mut model = AdaptiveModel::new(alphabet);
    let mut enc = RangeEncoder::new();
    for &s in symbols {
        enc.encode_symbol(&mut model, s);
    }
    enc.finish()
}

pub fn decode_all(bytes: &[u8], count: usize, alphabet: usize) -> Result<Vec<usize>> {
    let mut model = AdaptiveModel::new(alphabet);
    let mut dec = RangeDecoder::new(bytes)?;
    (0..count).map(|_| dec.decode_symbol(&mut model)).collect()
}

/// Total ideal code length of `symbols` under the adaptive model, in bytes.
pub fn model_cost_bytes(symbols: &[usize], alphabet: usize) -> f64 {
    let mut model = AdaptiveModel::new(alphabet);
    let mut bits = 0.0;
    for &s in symbols {
        bits += model.cost_bits(s);
        model.update(s);
    }
    bits / 8.0
}
