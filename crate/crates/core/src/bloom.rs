//! Seeded Bloom filters shared by both protocol phases.
//!
//! Phase 1 filters are built by the reader from the expected ID list and
//! broadcast; Phase 2 filters are formed "in the air" from slot occupancy.
//! Both use the same [`HashFamily`], so a filter decoded from a frame is
//! bit-identical to one built directly over the responder IDs.
//!
//! Index derivation is double hashing over two lanes of a keyed SipHash-1-3
//! 128-bit digest: `index(id, i) = (h1 + i * h2) mod range` for `i in 1..=k`,
//! with `h2` forced odd.

use serde::{Deserialize, Serialize};
use siphasher::sip128::SipHasher13;

use crate::error::{invalid, Error, Result};
use crate::tag::TagId;

// Second SipHash key; the first is the broadcast seed.
const KEY1: u64 = 0x6d69_7373_696e_6774;

/// `k` index functions over `[0, range)`, parameterized by a broadcast seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashFamily {
    pub k: u16,
    pub seed: u64,
    pub range: u32,
}

impl HashFamily {
    pub fn new(k: u16, seed: u64, range: u32) -> Result<Self> {
        if k == 0 {
            return Err(invalid("hash count k must be >= 1"));
        }
        if range == 0 {
            return Err(invalid("filter length must be >= 1"));
        }
        Ok(HashFamily { k, seed, range })
    }

    /// The two 64-bit lanes of the keyed digest of `id`.
    #[inline]
    pub fn lanes(seed: u64, id: &TagId) -> (u64, u64) {
        let h = SipHasher13::new_with_keys(seed, KEY1).hash(id.as_bytes());
        (h.h1, h.h2)
    }

    /// Index for hash function `i` (1-based).
    #[inline]
    pub fn index(&self, id: &TagId, i: u16) -> usize {
        let (h1, h2) = Self::lanes(self.seed, id);
        Self::combine(h1, h2 | 1, i, self.range)
    }

    #[inline]
    fn combine(h1: u64, h2: u64, i: u16, range: u32) -> usize {
        (h1.wrapping_add((i as u64).wrapping_mul(h2)) % range as u64) as usize
    }

    /// All `k` indices of `id`, in hash-function order.
    pub fn indices(&self, id: &TagId) -> impl Iterator<Item = usize> {
        let (h1, h2) = Self::lanes(self.seed, id);
        let h2 = h2 | 1;
        let range = self.range;
        (1..=self.k).map(move |i| Self::combine(h1, h2, i, range))
    }
}

/// Fixed-length bit array packed into 64-bit words, bit `i` at
/// `words[i / 64] >> (i % 64)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitArray {
    words: Vec<u64>,
    len: usize,
}

impl BitArray {
    pub fn zeros(len: usize) -> Self {
        BitArray {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut a = BitArray::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                a.set(i);
            }
        }
        a
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Bitwise OR of `other` into `self`.
    pub fn or_assign(&mut self, other: &BitArray) -> Result<()> {
        if other.len != self.len {
            return Err(invalid(format!(
                "bit array length mismatch: {} vs {}",
                self.len, other.len
            )));
        }
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i))
    }
}

/// A bit array together with the hash family that indexes it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BloomVector {
    bits: BitArray,
    family: HashFamily,
}

impl BloomVector {
    pub fn empty(family: HashFamily) -> Self {
        BloomVector {
            bits: BitArray::zeros(family.range as usize),
            family,
        }
    }

    pub fn insert(&mut self, id: &TagId) {
        for i in self.family.indices(id) {
            self.bits.set(i);
        }
    }

    /// True if every mapped bit of `id` is set.
    pub fn contains(&self, id: &TagId) -> bool {
        self.family.indices(id).all(|i| self.bits.get(i))
    }

    /// Smallest mapped position of `id` whose bit is zero, if any.
    pub fn first_zero(&self, id: &TagId) -> Option<usize> {
        self.family.indices(id).filter(|&i| !self.bits.get(i)).min()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn ones(&self) -> u64 {
        self.bits.count_ones()
    }

    pub fn bits(&self) -> &BitArray {
        &self.bits
    }

    pub fn family(&self) -> &HashFamily {
        &self.family
    }

    /// Header (`l: u32`, `k: u16`, `seed: u64`, little-endian) followed by the
    /// packed words, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.bits.words.len() * 8);
        out.extend_from_slice(&self.family.range.to_le_bytes());
        out.extend_from_slice(&self.family.k.to_le_bytes());
        out.extend_from_slice(&self.family.seed.to_le_bytes());
        for w in &self.bits.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    /// Inverse of [`to_bytes`](Self::to_bytes). Rejects truncated or padded
    /// input and set bits beyond the filter length.
    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        if data.len() < HEADER_LEN {
            return Err(Error::Decode(format!(
                "need {HEADER_LEN} header bytes, got {}",
                data.len()
            )));
        }
        let l = u32::from_le_bytes(data[0..4].try_into().unwrap());
        let k = u16::from_le_bytes(data[4..6].try_into().unwrap());
        let seed = u64::from_le_bytes(data[6..14].try_into().unwrap());
        let family = HashFamily::new(k, seed, l).map_err(|e| Error::Decode(e.to_string()))?;
        let n_words = (l as usize).div_ceil(64);
        let body = &data[HEADER_LEN..];
        if body.len() != n_words * 8 {
            return Err(Error::Decode(format!(
                "expected {} payload bytes for l={l}, got {}",
                n_words * 8,
                body.len()
            )));
        }
        let words: Vec<u64> = body
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tail = l as usize % 64;
        if tail != 0 && words[n_words - 1] >> tail != 0 {
            return Err(Error::Decode("bits set beyond filter length".into()));
        }
        Ok(BloomVector {
            bits: BitArray {
                words,
                len: l as usize,
            },
            family,
        })
    }
}

pub const HEADER_LEN: usize = 14;

/// Builds an `l`-bit filter over `ids` with `k` hash functions.
pub fn build_filter<'a, I>(ids: I, l: u32, k: u16, seed: u64) -> Result<BloomVector>
where
    I: IntoIterator<Item = &'a TagId>,
{
    let mut bv = BloomVector::empty(HashFamily::new(k, seed, l)?);
    for id in ids {
        bv.insert(id);
    }
    Ok(bv)
}

/// Theoretical false-positive rate `(1 - e^(-n k / l))^k`, clamped to `[0, 1]`.
pub fn fpr_theoretical(n: u64, l: u64, k: u32) -> f64 {
    if n == 0 || l == 0 || k == 0 {
        return 0.0;
    }
    let fill = -(-(n as f64) * k as f64 / l as f64).exp_m1();
    fill.powi(k as i32).clamp(0.0, 1.0)
}

/// Wraps a decoded frame (bit `i` set iff slot `i` was nonempty) as a filter
/// indexed by the round's hash family.
pub fn encode_frame(slot_occupancy: BitArray, family: HashFamily) -> Result<BloomVector> {
    if slot_occupancy.len() != family.range as usize {
        return Err(invalid(format!(
            "frame has {} slots but hash family range is {}",
            slot_occupancy.len(),
            family.range
        )));
    }
    Ok(BloomVector {
        bits: slot_occupancy,
        family,
    })
}
