//! Signed feature hashing over token n-grams.
//!
//! Every n-gram (tokens joined by a single space) is hashed with 64-bit
//! FNV-1a (offset basis `0xcbf29ce484222325`, prime `0x100000001b3`). The
//! bucket is `hash mod dim` and the sign is `-1` when bit 63 is set, `+1`
//! otherwise.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_extend(FNV_OFFSET, bytes)
}

/// Continues an FNV-1a hash from a previous state.
pub fn fnv1a64_extend(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Sorted `(index, value)` pairs with no duplicate indices and no zeros.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVec {
    entries: Vec<(usize, f64)>,
}

impl SparseVec {
    pub fn new() -> Self {
        SparseVec { entries: Vec::new() }
    }

    /// Builds from unsorted pairs, summing duplicates and dropping zeros.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.sort_by_key(|&(i, _)| i);
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            match entries.last_mut() {
                Some((j, acc)) if *j == i => *acc += v,
                _ => entries.push((i, v)),
            }
        }
        entries.retain(|&(_, v)| v != 0.0);
        SparseVec { entries }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|p| self.entries[p].1)
            .unwrap_or(0.0)
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| v * dense[i]).sum()
    }

    pub fn add(&self, other: &SparseVec) -> SparseVec {
        let mut pairs = self.entries.clone();
        pairs.extend_from_slice(&other.entries);
        SparseVec::from_pairs(pairs)
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &SparseVec) -> SparseVec {
        let mut out = Vec::new();
        let (mut a, mut b) = (0, 0);
        while a < self.entries.len() && b < other.entries.len() {
            let (ia, va) = self.entries[a];
            let (ib, vb) = other.entries[b];
            match ia.cmp(&ib) {
                core::cmp::Ordering::Less => a += 1,
                core::cmp::Ordering::Greater => b += 1,
                core::cmp::Ordering::Equal => {
                    out.push((ia, va * vb));
                    a += 1;
                    b += 1;
                }
            }
        }
        SparseVec::from_pairs(out)
    }

    pub fn scale(&self, k: f64) -> SparseVec {
        SparseVec::from_pairs(self.entries.iter().map(|&(i, v)| (i, v * k)).collect())
    }

    /// Shifts every index by `offset`, for concatenating blocks.
    pub fn offset(&self, offset: usize) -> SparseVec {
        SparseVec {
            entries: self.entries.iter().map(|&(i, v)| (i + offset, v)).collect(),
        }
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut d = alloc::vec![0.0; dim];
        for &(i, v) in &self.entries {
            d[i] += v;
        }
        d
    }
}

/// Bucket and sign of one hashed feature string.
pub fn bucket_and_sign(feature: &str, dim: usize) -> (usize, f64) {
    let h = fnv1a64(feature.as_bytes());
    let bucket = (h % dim as u64) as usize;
    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
    (bucket, sign)
}

/// Signed count vector of all 1..=`n_gram_max` token n-grams hashed into `dim`
/// buckets. `dim` must be a power of two ≥ 2 and `n_gram_max ≥ 1`.
pub fn hash_features(tokens: &[String], n_gram_max: usize, dim: usize) -> SparseVec {
    assert!(dim >= 2 && dim.is_power_of_two(), "dim must be a power of two >= 2");
    assert!(n_gram_max >= 1, "n_gram_max must be >= 1");
    let mut pairs = Vec::new();
    let mut gram = String::new();
    for n in 1..=n_gram_max {
        for window in tokens.windows(n) {
            gram.clear();
            for (k, t) in window.iter().enumerate() {
                if k > 0 {
                    gram.push(' ');
                }
                gram.push_str(t);
            }
            pairs.push(bucket_and_sign(&gram, dim));
        }
    }
    SparseVec::from_pairs(pairs)
}
