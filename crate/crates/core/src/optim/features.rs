//! Hashed character n-gram features: a deterministic stand-in for a text
//! tokenizer.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Sparse feature vector: `(bucket, value)` pairs sorted by bucket.
pub type SparseVec = Vec<(u32, f64)>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextFeaturizer {
    pub hash_dim: usize,
    pub ngram_orders: Vec<usize>,
}

impl Default for TextFeaturizer {
    fn default() -> Self {
        Self { hash_dim: 4096, ngram_orders: vec![1, 2, 3] }
    }
}

// FNV-1a, 64-bit.
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

impl TextFeaturizer {
    pub fn new(hash_dim: usize, ngram_orders: Vec<usize>) -> Result<Self> {
        let f = Self { hash_dim, ngram_orders };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.hash_dim.is_power_of_two() {
            return Err(Error::invalid(format!("hash_dim {} is not a power of two", self.hash_dim)));
        }
        if self.ngram_orders.is_empty() || self.ngram_orders.contains(&0) {
            return Err(Error::invalid("n-gram orders must be a nonempty set of positive integers"));
        }
        Ok(())
    }

    /// Bucket of one gram; the order is mixed into the hash so equal byte
    /// strings of different orders cannot meet by construction.
    pub fn bucket(&self, order: usize, gram: &str) -> u32 {
        (fnv1a(order as u64, gram.as_bytes()) & (self.hash_dim as u64 - 1)) as u32
    }

    /// Counts of hashed character n-grams for every configured order.
    pub fn featurize(&self, s: &str) -> SparseVec {
        let chars: Vec<char> = s.chars().collect();
        let mut buckets = Vec::new();
        let mut gram = String::new();
        for &n in &self.ngram_orders {
            if chars.len() < n {
                continue;
            }
            for w in chars.windows(n) {
                gram.clear();
                gram.extend(w);
                buckets.push(self.bucket(n, &gram));
            }
        }
        buckets.sort_unstable();
        let mut out: SparseVec = Vec::new();
        for b in buckets {
            match out.last_mut() {
                Some((last, c)) if *last == b => *c += 1.0,
                _ => out.push((b, 1.0)),
            }
        }
        out
    }
}

/// Free-function form of [`TextFeaturizer::featurize`].
pub fn featurize_text(s: &str, featurizer: &TextFeaturizer) -> SparseVec {
    featurizer.featurize(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_string_has_no_features() {
        assert!(featurize_text("", &TextFeaturizer::default()).is_empty());
    }

    #[test]
    fn deterministic() {
        let f = TextFeaturizer::default();
        assert_eq!(f.featurize("明治製菓"), f.featurize("明治製菓"));
    }

    #[test]
    fn two_chars_orders_one_two() {
        let f = TextFeaturizer::new(4096, vec![1, 2]).unwrap();
        let buckets = [f.bucket(1, "a"), f.bucket(1, "b"), f.bucket(2, "ab")];
        let distinct: std::collections::BTreeSet<u32> = buckets.into_iter().collect();
        let v = f.featurize("ab");
        assert_eq!(v.len(), distinct.len());
        assert_eq!(v.iter().map(|(_, c)| c).sum::<f64>(), 3.0);
        assert_eq!(distinct.len(), 3, "no collision expected for these grams");
    }

    #[test]
    fn hashes_are_platform_independent() {
        // Pinned FNV-1a values; a change here breaks checkpoint compatibility.
        let f = TextFeaturizer::default();
        assert_eq!(fnv1a(0, b""), FNV_OFFSET);
        assert_eq!(fnv1a(0, b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(f.bucket(1, "a"), (fnv1a(1, b"a") & 4095) as u32);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(TextFeaturizer::new(1000, vec![1]).is_err());
        assert!(TextFeaturizer::new(1024, vec![0]).is_err());
    }
}
