use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Length of a tag identifier in bytes (96-bit EPC).
pub const TAG_ID_LEN: usize = 12;

/// Opaque 96-bit tag identifier. Equality is bytewise.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TagId(pub [u8; TAG_ID_LEN]);

impl TagId {
    pub fn from_bytes(bytes: [u8; TAG_ID_LEN]) -> Self {
        TagId(bytes)
    }

    /// Builds an identifier whose low 64 bits hold `n` (big-endian), upper bits zero.
    pub fn from_u64(n: u64) -> Self {
        let mut b = [0u8; TAG_ID_LEN];
        b[4..].copy_from_slice(&n.to_be_bytes());
        TagId(b)
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut b = [0u8; TAG_ID_LEN];
        rng.fill(&mut b[..]);
        TagId(b)
    }

    pub fn as_bytes(&self) -> &[u8; TAG_ID_LEN] {
        &self.0
    }
}

impl fmt::Debug for TagId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TagId({self})")
    }
}

impl fmt::Display for TagId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Draws `n` distinct random identifiers.
pub fn random_ids<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<TagId> {
    let mut seen = std::collections::HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let id = TagId::random(rng);
        if seen.insert(id) {
            out.push(id);
        }
    }
    out
}
