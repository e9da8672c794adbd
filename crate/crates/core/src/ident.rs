//! B-bit identifier space shared by nodes and accounts.
//!
//! Identifiers are stored as 256-bit big-endian words regardless of the
//! configured width; the width only bounds the value range and controls the
//! hex rendering. Equality, ordering and hashing look at the value alone.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::hash::{Hash, Hasher};

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Width used by the experiment harness unless configured otherwise.
pub const DEFAULT_BITS: u16 = 32;
/// Widest supported identifier.
pub const MAX_BITS: u16 = 256;

const WORDS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdentError {
    #[error("identifier width must be in 1..=256 bits, got {0}")]
    InvalidWidth(u16),
    #[error("value does not fit in {bits} bits")]
    OutOfRange { bits: u16 },
    #[error("malformed hex identifier {0:?}")]
    BadHex(String),
}

/// A point in the identifier space.
#[derive(Clone, Copy)]
pub struct Identifier {
    words: [u64; WORDS],
    bits: u16,
}

/// XOR distance between two identifiers, compared as an unsigned integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Distance([u64; WORDS]);

impl Distance {
    pub const ZERO: Distance = Distance([0; WORDS]);

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|w| *w == 0)
    }

    /// Index of the highest set bit (0 = least significant), `None` for zero.
    pub fn highest_bit(&self) -> Option<u16> {
        for (i, w) in self.0.iter().enumerate() {
            if *w != 0 {
                let from_top = i as u32 * 64 + w.leading_zeros();
                return Some((255 - from_top) as u16);
            }
        }
        None
    }

    /// The distance as a `u64`, if it fits.
    pub fn to_u64(&self) -> Option<u64> {
        if self.0[..WORDS - 1].iter().all(|w| *w == 0) {
            Some(self.0[WORDS - 1])
        } else {
            None
        }
    }
}

impl Identifier {
    fn from_words(words: [u64; WORDS], bits: u16) -> Self {
        Identifier { words, bits }
    }

    /// Configured width of the space this identifier was created in.
    pub fn bits(&self) -> u16 {
        self.bits
    }

    pub fn words(&self) -> [u64; WORDS] {
        self.words
    }

    /// Low 64 bits of the value.
    pub fn low_u64(&self) -> u64 {
        self.words[WORDS - 1]
    }

    pub fn distance(&self, other: &Identifier) -> Distance {
        distance(self, other)
    }

    /// Copy with bit `index` (0 = least significant) inverted. The result
    /// lies in bucket `index` relative to `self`.
    pub fn with_bit_flipped(&self, index: u16) -> Identifier {
        let mut words = self.words;
        let word = WORDS - 1 - index as usize / 64;
        words[word] ^= 1u64 << (index % 64);
        Identifier::from_words(words, self.bits)
    }

    /// Big-endian bytes, `ceil(bits / 8)` long.
    pub fn to_be_bytes(&self) -> Vec<u8> {
        let mut full = [0u8; 32];
        for (i, w) in self.words.iter().enumerate() {
            full[i * 8..(i + 1) * 8].copy_from_slice(&w.to_be_bytes());
        }
        let len = (self.bits as usize).div_ceil(8);
        full[32 - len..].to_vec()
    }

    /// Lowercase hex, zero-padded to `ceil(bits / 4)` digits.
    pub fn to_hex(&self) -> String {
        let mut full = String::with_capacity(64);
        for w in &self.words {
            full.push_str(&format!("{w:016x}"));
        }
        let digits = (self.bits as usize).div_ceil(4);
        full[64 - digits..].to_string()
    }

    /// Parses hex; the width is taken as four bits per digit (capped at 256).
    pub fn from_hex(s: &str) -> Result<Self, IdentError> {
        let s = s.strip_prefix("0x").unwrap_or(s);
        if s.is_empty() || s.len() > 64 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(IdentError::BadHex(s.to_string()));
        }
        let padded = format!("{s:0>64}");
        let mut words = [0u64; WORDS];
        for (i, w) in words.iter_mut().enumerate() {
            *w = u64::from_str_radix(&padded[i * 16..(i + 1) * 16], 16)
                .map_err(|_| IdentError::BadHex(s.to_string()))?;
        }
        Ok(Identifier::from_words(words, (s.len() * 4) as u16))
    }
}

impl PartialEq for Identifier {
    fn eq(&self, other: &Self) -> bool {
        self.words == other.words
    }
}

impl Eq for Identifier {}

impl Hash for Identifier {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.words.hash(state);
    }
}

impl PartialOrd for Identifier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Identifier {
    fn cmp(&self, other: &Self) -> Ordering {
        self.words.cmp(&other.words)
    }
}

impl fmt::Debug for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Id({})", self.to_hex())
    }
}

impl fmt::Display for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Identifier {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Identifier {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Identifier::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// XOR of the two values.
pub fn distance(a: &Identifier, b: &Identifier) -> Distance {
    let mut out = [0u64; WORDS];
    for (i, o) in out.iter_mut().enumerate() {
        *o = a.words[i] ^ b.words[i];
    }
    Distance(out)
}

/// Orders `ids` by ascending distance to `target`. Distinct inputs never tie.
pub fn sort_by_distance(ids: &[Identifier], target: &Identifier) -> Vec<Identifier> {
    let mut out = ids.to_vec();
    out.sort_by_cached_key(|id| distance(id, target));
    out
}

/// The identifier space: a width `B` plus constructors that respect it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdSpace {
    bits: u16,
}

impl Default for IdSpace {
    fn default() -> Self {
        IdSpace { bits: DEFAULT_BITS }
    }
}

impl IdSpace {
    pub fn new(bits: u16) -> Result<Self, IdentError> {
        if bits == 0 || bits > MAX_BITS {
            return Err(IdentError::InvalidWidth(bits));
        }
        Ok(IdSpace { bits })
    }

    pub fn bits(&self) -> u16 {
        self.bits
    }

    fn mask(&self) -> [u64; WORDS] {
        let mut mask = [0u64; WORDS];
        let mut remaining = self.bits as u32;
        for w in mask.iter_mut().rev() {
            let take = remaining.min(64);
            *w = if take == 64 {
                u64::MAX
            } else {
                (1u64 << take) - 1
            };
            remaining -= take;
        }
        mask
    }

    fn fits(&self, words: &[u64; WORDS]) -> bool {
        let mask = self.mask();
        words.iter().zip(mask.iter()).all(|(w, m)| w & !m == 0)
    }

    pub fn try_from_u64(&self, value: u64) -> Result<Identifier, IdentError> {
        let words = [0, 0, 0, value];
        if !self.fits(&words) {
            return Err(IdentError::OutOfRange { bits: self.bits });
        }
        Ok(Identifier::from_words(words, self.bits))
    }

    /// Like [`IdSpace::try_from_u64`] but panics when `value` is out of range.
    pub fn id(&self, value: u64) -> Identifier {
        self.try_from_u64(value)
            .unwrap_or_else(|e| panic!("identifier {value}: {e}"))
    }

    pub fn from_hex(&self, s: &str) -> Result<Identifier, IdentError> {
        self.adopt(Identifier::from_hex(s)?)
    }

    /// Re-stamps an identifier parsed elsewhere with this space's width.
    pub fn adopt(&self, id: Identifier) -> Result<Identifier, IdentError> {
        if !self.fits(&id.words) {
            return Err(IdentError::OutOfRange { bits: self.bits });
        }
        Ok(Identifier::from_words(id.words, self.bits))
    }

    /// Uniform draw over `[0, 2^B)`.
    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> Identifier {
        let mask = self.mask();
        let mut words = [0u64; WORDS];
        for (w, m) in words.iter_mut().zip(mask.iter()).rev() {
            if *m == 0 {
                break;
            }
            *w = rng.gen::<u64>() & m;
        }
        Identifier::from_words(words, self.bits)
    }

    /// Draws `count` identifiers that collide neither with each other nor
    /// with anything in `taken`; accepted draws are added to `taken`.
    pub fn random_distinct<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        count: usize,
        taken: &mut HashSet<Identifier>,
    ) -> Vec<Identifier> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let id = self.random(rng);
            if taken.insert(id) {
                out.push(id);
            }
        }
        out
    }
}

/// Uniform identifier from a seeded stream in the default 32-bit space.
pub fn random_identifier<R: Rng + ?Sized>(rng: &mut R) -> Identifier {
    IdSpace::default().random(rng)
}
