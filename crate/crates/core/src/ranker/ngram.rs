//! N-gram bags, bucket hashing, and embedding tables.
//!
//! N-grams are joined token runs from [`tokenize`]. Each n-gram hashes to a
//! bucket with FNV-1a 64 so the assignment is stable across runs and
//! platforms. A bag embeds as the occurrence-weighted mean of its bucket
//! rows, which keeps the representation independent of text length.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::index::tokenize;

/// Buckets for query/document n-gram tables.
pub const TEXT_BUCKETS: usize = 1 << 16;
/// Embedding width of the n-gram tables.
pub const TEXT_DIM: usize = 32;
/// Buckets for the region/city id tables; bucket 0 is reserved for
/// missing ids.
pub const SPARSE_BUCKETS: usize = 1 << 12;
/// Embedding width of the sparse id tables.
pub const SPARSE_DIM: usize = 32;

/// FNV-1a 64-bit hash; fixed offset basis and prime keep bucket
/// assignments identical on every platform.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Multiset of n-grams from one text source.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NGramBag {
    pub counts: BTreeMap<String, u32>,
    pub total: u32,
}

/// Extracts the n-gram multiset of a text. Supported n: 1 or 2. Texts with
/// fewer than n tokens yield an empty bag.
pub fn ngrams(text: &str, n: usize) -> NGramBag {
    assert!(n == 1 || n == 2, "only unigrams and bigrams are supported");
    let tokens = tokenize(text);
    let mut bag = NGramBag::default();
    if tokens.len() < n {
        return bag;
    }
    for window in tokens.windows(n) {
        *bag.counts.entry(window.join(" ")).or_insert(0) += 1;
        bag.total += 1;
    }
    bag
}

/// A bag reduced to (bucket, weight) pairs with weights summing to 1;
/// n-grams that collide in a bucket pool their weight.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HashedBag(pub Vec<(u32, f64)>);

pub fn hash_bag(bag: &NGramBag, buckets: usize) -> HashedBag {
    if bag.total == 0 {
        return HashedBag::default();
    }
    let mut by_bucket: BTreeMap<u32, f64> = BTreeMap::new();
    for (gram, &count) in &bag.counts {
        let bucket = (fnv1a64(gram.as_bytes()) % buckets as u64) as u32;
        *by_bucket.entry(bucket).or_insert(0.0) += count as f64 / bag.total as f64;
    }
    HashedBag(by_bucket.into_iter().collect())
}

/// Bucket for a sparse categorical id: 0 when missing, otherwise one of
/// the remaining buckets by hash.
pub fn sparse_bucket(id: Option<u32>) -> usize {
    match id {
        None => 0,
        Some(v) => 1 + (fnv1a64(&v.to_le_bytes()) % (SPARSE_BUCKETS as u64 - 1)) as usize,
    }
}

/// Dense row-major embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Embedding {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Embedding {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn random<R: Rng>(rows: usize, dim: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("valid std");
        Embedding {
            rows,
            dim,
            data: (0..rows * dim).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }
}

/// Weighted mean of the rows referenced by the bag; the empty bag embeds
/// to the zero vector.
pub fn embed_bag(table: &Embedding, bag: &HashedBag) -> Vec<f64> {
    let mut out = vec![0.0; table.dim];
    for &(bucket, weight) in &bag.0 {
        let row = table.row(bucket as usize);
        for (o, r) in out.iter_mut().zip(row) {
            *o += weight * r;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ngram_examples() {
        let bi = ngrams("cat videos", 2);
        assert_eq!(bi.counts.get("cat videos"), Some(&1));
        assert_eq!(bi.total, 1);

        let uni = ngrams("cat videos", 1);
        assert_eq!(uni.counts.len(), 2);
        assert_eq!(uni.counts.get("cat"), Some(&1));
        assert_eq!(uni.counts.get("videos"), Some(&1));

        let multi = ngrams("a b a", 1);
        assert_eq!(multi.counts.get("a"), Some(&2));
        assert_eq!(multi.counts.get("b"), Some(&1));
        assert_eq!(multi.total, 3);

        assert_eq!(ngrams("solo", 2).total, 0);
        assert_eq!(ngrams("", 1).total, 0);
    }

    #[test]
    fn hashing_is_stable_and_in_range() {
        // Pinned value so accidental hash changes are caught.
        assert_eq!(fnv1a64(b"billie"), 0x59699d624951ad9e);
        let bag = ngrams("billie eilish billie", 1);
        let hashed = hash_bag(&bag, TEXT_BUCKETS);
        assert!(hashed.0.iter().all(|&(b, _)| (b as usize) < TEXT_BUCKETS));
        let total: f64 = hashed.0.iter().map(|&(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(hash_bag(&bag, TEXT_BUCKETS), hashed);
    }

    #[test]
    fn sparse_bucket_reserves_zero_for_missing() {
        assert_eq!(sparse_bucket(None), 0);
        for id in [0u32, 1, 77, u32::MAX] {
            let b = sparse_bucket(Some(id));
            assert!((1..SPARSE_BUCKETS).contains(&b));
        }
    }

    #[test]
    fn embed_bag_is_weighted_mean_of_rows() {
        let mut table = Embedding::zeros(8, 4);
        table.data[0..4].copy_from_slice(&[1.0, 2.0, 3.0, 4.0]); // row 0
        table.data[4..8].copy_from_slice(&[10.0, 0.0, -2.0, 1.0]); // row 1

        // Empty bag → zero vector.
        assert_eq!(embed_bag(&table, &HashedBag::default()), vec![0.0; 4]);

        // Single entry with weight 1 → exactly its row.
        let single = HashedBag(vec![(0, 1.0)]);
        assert_eq!(embed_bag(&table, &single), vec![1.0, 2.0, 3.0, 4.0]);

        // {g1, g1, g2} → (2 row0 + row1) / 3.
        let mixed = HashedBag(vec![(0, 2.0 / 3.0), (1, 1.0 / 3.0)]);
        let got = embed_bag(&table, &mixed);
        let want = [4.0, 4.0 / 3.0, 4.0 / 3.0, 3.0];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn random_table_is_seeded() {
        use rand::SeedableRng;
        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let ta = Embedding::random(16, 8, 0.1, &mut a);
        let tb = Embedding::random(16, 8, 0.1, &mut b);
        assert_eq!(ta, tb);
    }
}
