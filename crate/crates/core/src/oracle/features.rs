//! Hashed bag of word n-grams.

use std::collections::BTreeMap;

/// Sparse feature vector: `(bucket, count)` pairs sorted by bucket, no
/// duplicate buckets.
pub type SparseVec = Vec<(u32, f64)>;

pub const DEFAULT_DIM: usize = 1 << 16;
pub const MIN_DIM: usize = 1 << 12;
pub const DEFAULT_MAX_CHARS: usize = 8192;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Featurizer {
    pub dim: usize,
    pub orders: Vec<u8>,
    pub max_chars: usize,
}

impl Default for Featurizer {
    fn default() -> Self {
        Featurizer { dim: DEFAULT_DIM, orders: vec![1, 2], max_chars: DEFAULT_MAX_CHARS }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(state, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Keeps the last `max_chars` characters of `text`.
pub fn truncate_front(text: &str, max_chars: usize) -> &str {
    let n = text.chars().count();
    if n <= max_chars {
        return text;
    }
    let skip = n - max_chars;
    let (idx, _) = text.char_indices().nth(skip).expect("skip < n");
    &text[idx..]
}

impl Featurizer {
    pub fn new(dim: usize, orders: Vec<u8>) -> Self {
        Featurizer { dim, orders, ..Featurizer::default() }
    }

    pub fn bucket(&self, order: u8, gram: &[&str]) -> u32 {
        let mut h = fnv1a(FNV_OFFSET, &[order]);
        for (i, w) in gram.iter().enumerate() {
            if i > 0 {
                h = fnv1a(h, &[0x1f]);
            }
            h = fnv1a(h, w.as_bytes());
        }
        (h % self.dim as u64) as u32
    }

    /// Lowercased whitespace tokens, n-grams of every configured order,
    /// hashed into `dim` buckets with counts.
    pub fn featurize(&self, text: &str) -> SparseVec {
        let text = truncate_front(text, self.max_chars).to_lowercase();
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for &order in &self.orders {
            let n = order as usize;
            if n == 0 || tokens.len() < n {
                continue;
            }
            for gram in tokens.windows(n) {
                *counts.entry(self.bucket(order, gram)).or_default() += 1.0;
            }
        }
        counts.into_iter().collect()
    }
}

pub fn dot(weights: &[f64], x: &SparseVec) -> f64 {
    x.iter().map(|&(i, v)| weights[i as usize] * v).sum()
}
