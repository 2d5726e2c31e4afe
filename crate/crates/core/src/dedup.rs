//! Stage 3: near-duplicate removal with MinHash LSH over token 3-shingles.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::{xxh3_64, Xxh3};

use crate::pysyntax::tokenize;

pub const NUM_PERM: usize = 128;
pub const SHINGLE_SIZE: usize = 3;
pub const BANDS: usize = 32;
pub const ROWS: usize = 4;
pub const DEFAULT_THRESHOLD: f64 = 0.70;
pub const DEFAULT_SEED: u64 = 0x5eed_0070;

const MERSENNE_61: u64 = (1 << 61) - 1;
const SENTINEL: u64 = u64::MAX;

pub type Shingle = (String, String, String);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShingleSet {
    pub shingles: BTreeSet<Shingle>,
    pub token_count: usize,
}

impl ShingleSet {
    pub fn from_tokens(tokens: &[String]) -> Self {
        Self {
            shingles: tokens
                .windows(SHINGLE_SIZE)
                .map(|w| (w[0].clone(), w[1].clone(), w[2].clone()))
                .collect(),
            token_count: tokens.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.shingles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shingles.is_empty()
    }
}

/// Lexical 3-shingles; comments dropped, string literals verbatim.
pub fn shingle(code: &str) -> ShingleSet {
    ShingleSet::from_tokens(&tokenize(code))
}

/// Exact Jaccard; two empty sets score 0.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn shingle_hash(s: &Shingle) -> u64 {
    let mut h = Xxh3::new();
    for part in [&s.0, &s.1, &s.2] {
        h.update(part.as_bytes());
        h.update(&[0x1f]);
    }
    h.digest()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashSignature {
    pub minima: Vec<u64>,
    pub seed: u64,
}

impl MinHashSignature {
    pub fn is_sentinel(&self) -> bool {
        self.minima.iter().all(|&m| m == SENTINEL)
    }
}

/// Fraction of agreeing minima; the empty-set sentinel agrees with nothing.
pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> f64 {
    if a.is_sentinel() || b.is_sentinel() || a.minima.len() != b.minima.len() || a.minima.is_empty() {
        return 0.0;
    }
    let same = a.minima.iter().zip(&b.minima).filter(|(x, y)| x == y).count();
    same as f64 / a.minima.len() as f64
}

/// 128 universal hashes `(a·x + b) mod (2^61 − 1)` drawn from a seeded RNG.
#[derive(Debug, Clone)]
pub struct MinHasher {
    seed: u64,
    params: Vec<(u64, u64)>,
}

impl MinHasher {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..NUM_PERM)
            .map(|_| (rng.gen_range(1..MERSENNE_61), rng.gen_range(0..MERSENNE_61)))
            .collect();
        Self { seed, params }
    }

    pub fn signature(&self, s: &ShingleSet) -> MinHashSignature {
        let hashes: Vec<u64> = s.shingles.iter().map(|sh| shingle_hash(sh) % MERSENNE_61).collect();
        self.signature_of_hashes(&hashes)
    }

    pub fn signature_of_hashes(&self, hashes: &[u64]) -> MinHashSignature {
        let minima = if hashes.is_empty() {
            vec![SENTINEL; NUM_PERM]
        } else {
            self.params
                .iter()
                .map(|&(a, b)| {
                    hashes
                        .iter()
                        .map(|&x| ((a as u128 * (x % MERSENNE_61) as u128 + b as u128) % MERSENNE_61 as u128) as u64)
                        .min()
                        .unwrap_or(SENTINEL)
                })
                .collect()
        };
        MinHashSignature {
            minima,
            seed: self.seed,
        }
    }
}

pub fn signature(s: &ShingleSet, seed: u64) -> MinHashSignature {
    MinHasher::new(seed).signature(s)
}

fn band_keys(sig: &MinHashSignature) -> impl Iterator<Item = (usize, u64)> + '_ {
    sig.minima.chunks(ROWS).take(BANDS).enumerate().map(|(band, rows)| {
        let mut bytes = Vec::with_capacity(ROWS * 8);
        for r in rows {
            bytes.extend_from_slice(&r.to_le_bytes());
        }
        (band, xxh3_64(&bytes))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DedupConfig {
    pub threshold: f64,
    pub seed: u64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            seed: DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateRecord {
    pub removed_id: String,
    pub survivor_id: String,
    pub jaccard: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DedupOutcome {
    /// Indices into the input, in input order.
    pub retained: Vec<usize>,
    pub duplicates: Vec<DuplicateRecord>,
    pub candidate_pairs: usize,
}

/// Keeps the first-seen member of every near-duplicate group. LSH buckets
/// propose earlier retained entries; a pair is a duplicate only if its
/// exact shingle Jaccard reaches the threshold or the texts are identical.
pub fn dedup<'a, I>(items: I, cfg: &DedupConfig) -> DedupOutcome
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let items: Vec<(&str, &str)> = items.into_iter().collect();
    let hasher = MinHasher::new(cfg.seed);
    let prepared: Vec<(ShingleSet, MinHashSignature, u64)> = items
        .par_iter()
        .map(|(_, code)| {
            let s = shingle(code);
            let sig = hasher.signature(&s);
            (s, sig, xxh3_64(code.as_bytes()))
        })
        .collect();

    let mut buckets: HashMap<(usize, u64), Vec<usize>> = HashMap::new();
    let mut by_text: HashMap<u64, Vec<usize>> = HashMap::new();
    let mut out = DedupOutcome::default();

    for (i, (s, sig, text_hash)) in prepared.iter().enumerate() {
        let identical = by_text
            .get(text_hash)
            .and_then(|v| v.iter().copied().find(|&j| items[j].1 == items[i].1));
        let survivor = match identical {
            Some(j) => Some((j, 1.0)),
            None if s.is_empty() => None,
            None => {
                let mut candidates: Vec<usize> = band_keys(sig)
                    .filter_map(|k| buckets.get(&k))
                    .flatten()
                    .copied()
                    .collect();
                candidates.sort_unstable();
                candidates.dedup();
                out.candidate_pairs += candidates.len();
                candidates
                    .into_iter()
                    .map(|j| (j, jaccard(&s.shingles, &prepared[j].0.shingles)))
                    .find(|&(_, jac)| jac >= cfg.threshold)
            }
        };
        match survivor {
            Some((j, jac)) => out.duplicates.push(DuplicateRecord {
                removed_id: items[i].0.to_owned(),
                survivor_id: items[j].0.to_owned(),
                jaccard: jac,
            }),
            None => {
                out.retained.push(i);
                by_text.entry(*text_hash).or_default().push(i);
                if !s.is_empty() {
                    for k in band_keys(sig) {
                        buckets.entry(k).or_default().push(i);
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn window_definition() {
        let s = ShingleSet::from_tokens(&toks("a b c d"));
        let expected: BTreeSet<Shingle> = [("a", "b", "c"), ("b", "c", "d")]
            .iter()
            .map(|(x, y, z)| (x.to_string(), y.to_string(), z.to_string()))
            .collect();
        assert_eq!(s.shingles, expected);
        assert!(ShingleSet::from_tokens(&toks("a b")).is_empty());
    }

    #[test]
    fn comments_ignored_in_shingles() {
        assert_eq!(shingle("x = f(1)  # note\n").shingles, shingle("x = f(1)\n").shingles);
        assert_ne!(shingle("x = 'a b'\n").shingles, shingle("x = 'a c'\n").shingles);
    }

    #[test]
    fn signature_determinism_and_self_similarity() {
        let s = shingle("qml.RX(0.1, wires=0)\nqml.CNOT(wires=[0, 1])\n");
        let a = signature(&s, 7);
        assert_eq!(a, signature(&s, 7));
        assert_eq!(a.minima.len(), NUM_PERM);
        assert_eq!(estimate_jaccard(&a, &a), 1.0);
        assert_ne!(a, signature(&s, 8));
    }

    #[test]
    fn empty_set_sentinel_never_matches() {
        let empty = signature(&ShingleSet::default(), 1);
        assert!(empty.is_sentinel());
        let other = signature(&shingle("a b c d"), 1);
        assert_eq!(estimate_jaccard(&empty, &other), 0.0);
        assert_eq!(estimate_jaccard(&empty, &empty), 0.0);
    }

    #[test]
    fn identical_entries_collapse() {
        let out = dedup([("a", "x = f(1)\n"), ("b", "x = f(1)\n")], &DedupConfig::default());
        assert_eq!(out.retained, vec![0]);
        assert_eq!(out.duplicates[0].survivor_id, "a");
        assert_eq!(out.duplicates[0].jaccard, 1.0);
        // below the shingle window, byte identity still applies
        let out = dedup([("a", "pass"), ("b", "pass"), ("c", "x")], &DedupConfig::default());
        assert_eq!(out.retained, vec![0, 2]);
    }

    #[test]
    fn disjoint_entries_all_retained() {
        let ids: Vec<String> = (0..20).map(|i| format!("e{i}")).collect();
        let codes: Vec<String> = (0..20).map(|i| format!("v{i} = g{i}(h{i}, k{i})\n")).collect();
        let out = dedup(
            ids.iter().map(String::as_str).zip(codes.iter().map(String::as_str)),
            &DedupConfig::default(),
        );
        assert_eq!(out.retained.len(), 20);
    }
}
