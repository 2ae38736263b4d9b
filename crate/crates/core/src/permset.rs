//! Arrangement pools and pretext class sets.
//!
//! The pool is built by a greedy scan over the symmetric group in
//! lexicographic order starting from the identity: a permutation is admitted
//! when its Hamming distance to every admitted member exceeds the threshold.
//! A class set keeps the identity as class 0 and draws the remaining classes
//! uniformly without replacement from the rest of the pool.

use std::fmt;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Largest patch count accepted without an explicit override (9! = 362,880).
pub const MAX_DEFAULT_PATCHES: usize = 9;

pub const LEXICOGRAPHIC: &str = "lexicographic-from-identity";

/// A bijection on `0..n`; `order[i]` is the tile placed in slot `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Permutation(Vec<u8>);

impl Permutation {
    pub fn new(order: Vec<u8>) -> Result<Self> {
        let n = order.len();
        if n == 0 {
            return Err(Error::invalid("permutation must not be empty"));
        }
        let mut seen = vec![false; n];
        for &v in &order {
            let v = v as usize;
            if v >= n || seen[v] {
                return Err(Error::Invariant(format!(
                    "permutation {order:?} is not a bijection on 0..{n}"
                )));
            }
            seen[v] = true;
        }
        Ok(Self(order))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n as u8).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &v)| i == v as usize)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0u8; self.0.len()];
        for (i, &v) in self.0.iter().enumerate() {
            inv[v as usize] = i as u8;
        }
        Self(inv)
    }

    /// Reorders `items` so that slot `i` receives `items[self[i]]`.
    pub fn apply<T: Clone>(&self, items: &[T]) -> Vec<T> {
        self.0.iter().map(|&j| items[j as usize].clone()).collect()
    }

    /// One-based rendering, matching the usual 1..9 tile numbering.
    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|&v| v as usize + 1).collect()
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.one_based().iter().map(|v| v.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// Number of positions at which `a` and `b` differ.
pub fn hamming_distance(a: &Permutation, b: &Permutation) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "hamming distance of permutations with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(slice_distance(a.as_slice(), b.as_slice()))
}

fn slice_distance(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Steps `v` to its lexicographic successor; returns false after the last one.
fn next_permutation(v: &mut [u8]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationPool {
    pub perms: Vec<Permutation>,
    pub n_patches: usize,
    /// Members are pairwise more than this many positions apart.
    pub min_distance_exclusive: usize,
    pub enumeration_order: String,
}

impl PermutationPool {
    pub fn len(&self) -> usize {
        self.perms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perms.is_empty()
    }

    /// SHA-256 over the pool's permutations in order.
    pub fn digest(&self) -> String {
        let bytes: Vec<u8> = self.perms.iter().flat_map(|p| p.as_slice().to_vec()).collect();
        seed::sha256_hex(&bytes)
    }
}

/// Greedy Hamming-separated pool over all `n_patches!` permutations.
///
/// `allow_large` must be set for `n_patches > 9`.
pub fn generate_candidate_pool(
    n_patches: usize,
    threshold: usize,
    allow_large: bool,
) -> Result<PermutationPool> {
    if n_patches < 2 {
        return Err(Error::invalid(format!("n_patches must be >= 2, got {n_patches}")));
    }
    if threshold >= n_patches {
        return Err(Error::invalid(format!(
            "threshold {threshold} must be below n_patches {n_patches}"
        )));
    }
    if n_patches > MAX_DEFAULT_PATCHES && !allow_large {
        return Err(Error::invalid(format!(
            "n_patches {n_patches} enumerates {n_patches}! permutations; pass the large-pool override to proceed"
        )));
    }
    if n_patches > u8::MAX as usize {
        return Err(Error::invalid("n_patches must fit in a byte"));
    }

    let mut current: Vec<u8> = (0..n_patches as u8).collect();
    // Flat storage keeps the inner distance loop cache friendly.
    let mut admitted: Vec<u8> = current.clone();
    while next_permutation(&mut current) {
        let far_enough = admitted
            .chunks_exact(n_patches)
            .all(|member| slice_distance(member, &current) > threshold);
        if far_enough {
            admitted.extend_from_slice(&current);
        }
    }
    let perms = admitted
        .chunks_exact(n_patches)
        .map(|c| Permutation(c.to_vec()))
        .collect();
    Ok(PermutationPool {
        perms,
        n_patches,
        min_distance_exclusive: threshold,
        enumeration_order: LEXICOGRAPHIC.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationSet {
    pub perms: Vec<Permutation>,
    pub n_patches: usize,
    pub threshold: usize,
    pub enumeration_order: String,
    pub pool_size: usize,
    pub source_pool_hash: String,
    pub rng_seed: u64,
}

impl PermutationSet {
    pub fn class_count(&self) -> usize {
        self.perms.len()
    }

    pub fn get(&self, class: usize) -> Option<&Permutation> {
        self.perms.get(class)
    }

    /// Checks identity-first, bijectivity, uniqueness and pairwise separation.
    pub fn validate(&self) -> Result<()> {
        let first = self
            .perms
            .first()
            .ok_or_else(|| Error::Invariant("permutation set is empty".into()))?;
        if !first.is_identity() {
            return Err(Error::Invariant(format!(
                "class 0 must be the identity, found {first}"
            )));
        }
        for (i, p) in self.perms.iter().enumerate() {
            if p.len() != self.n_patches {
                return Err(Error::Invariant(format!(
                    "class {i} has length {}, expected {}",
                    p.len(),
                    self.n_patches
                )));
            }
            Permutation::new(p.as_slice().to_vec())
                .map_err(|_| Error::Invariant(format!("class {i} is not a bijection: {p}")))?;
        }
        for i in 0..self.perms.len() {
            for j in (i + 1)..self.perms.len() {
                let d = slice_distance(self.perms[i].as_slice(), self.perms[j].as_slice());
                if d == 0 {
                    return Err(Error::Invariant(format!("classes {i} and {j} are duplicates")));
                }
                if d <= self.threshold {
                    return Err(Error::Invariant(format!(
                        "classes {i} and {j} differ in {d} positions, not more than {}",
                        self.threshold
                    )));
                }
            }
        }
        if self.perms.len() > self.pool_size {
            return Err(Error::Invariant(format!(
                "{} classes exceed the source pool size {}",
                self.perms.len(),
                self.pool_size
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = PermutationSetFile::from(self);
        let text = serde_json::to_string_pretty(&file).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: PermutationSetFile =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let mut perms = Vec::with_capacity(file.perms.len());
        for (i, row) in file.perms.into_iter().enumerate() {
            let bytes: Vec<u8> = row
                .iter()
                .map(|&v| u8::try_from(v))
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Invariant(format!("row {i} has out-of-range entries")))?;
            let p = Permutation::new(bytes).map_err(|_| {
                Error::Invariant(format!("row {i} {row:?} is not a bijection"))
            })?;
            perms.push(p);
        }
        let set = PermutationSet {
            perms,
            n_patches: file.n_patches,
            threshold: file.threshold,
            enumeration_order: file.enumeration_order,
            pool_size: file.pool_size,
            source_pool_hash: file.pool_digest,
            rng_seed: file.seed,
        };
        set.validate()?;
        Ok(set)
    }
}

/// On-disk layout of a permutation set.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PermutationSetFile {
    n_patches: usize,
    threshold: usize,
    enumeration_order: String,
    seed: u64,
    pool_digest: String,
    pool_size: usize,
    perms: Vec<Vec<u32>>,
}

impl From<&PermutationSet> for PermutationSetFile {
    fn from(s: &PermutationSet) -> Self {
        Self {
            n_patches: s.n_patches,
            threshold: s.threshold,
            enumeration_order: s.enumeration_order.clone(),
            seed: s.rng_seed,
            pool_digest: s.source_pool_hash.clone(),
            pool_size: s.pool_size,
            perms: s
                .perms
                .iter()
                .map(|p| p.as_slice().iter().map(|&v| v as u32).collect())
                .collect(),
        }
    }
}

/// Identity plus `class_count - 1` members drawn without replacement.
pub fn sample_class_set(
    pool: &PermutationPool,
    class_count: usize,
    seed: u64,
) -> Result<PermutationSet> {
    if class_count == 0 || class_count > pool.len() {
        return Err(Error::invalid(format!(
            "class count {class_count} must be in 1..={}",
            pool.len()
        )));
    }
    let identity = pool
        .perms
        .iter()
        .position(Permutation::is_identity)
        .ok_or_else(|| Error::Invariant("pool does not contain the identity".into()))?;
    let rest: Vec<&Permutation> = pool
        .perms
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != identity)
        .map(|(_, p)| p)
        .collect();
    let mut rng = seed::rng_for(seed, "permset.sample");
    let picks = index::sample(&mut rng, rest.len(), class_count - 1);
    let mut perms = Vec::with_capacity(class_count);
    perms.push(pool.perms[identity].clone());
    perms.extend(picks.into_iter().map(|i| rest[i].clone()));
    Ok(PermutationSet {
        perms,
        n_patches: pool.n_patches,
        threshold: pool.min_distance_exclusive,
        enumeration_order: pool.enumeration_order.clone(),
        pool_size: pool.len(),
        source_pool_hash: pool.digest(),
        rng_seed: seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn perm(v: &[u8]) -> Permutation {
        Permutation::new(v.to_vec()).unwrap()
    }

    #[test]
    fn hamming_examples() {
        let id = Permutation::identity(9);
        assert_eq!(hamming_distance(&id, &id).unwrap(), 0);
        let swapped = perm(&[1, 0, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(hamming_distance(&id, &swapped).unwrap(), 2);
        let rev = perm(&[8, 7, 6, 5, 4, 3, 2, 1, 0]);
        assert_eq!(hamming_distance(&id, &rev).unwrap(), 8);
        assert!(hamming_distance(&id, &Permutation::identity(3)).is_err());
    }

    #[test]
    fn rejects_non_bijections() {
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
        assert!(Permutation::new(vec![]).is_err());
    }

    #[test]
    fn successor_walks_lexicographically() {
        let mut v = vec![0u8, 1, 2];
        let mut seen = vec![v.clone()];
        while next_permutation(&mut v) {
            seen.push(v.clone());
        }
        assert_eq!(
            seen,
            vec![
                vec![0, 1, 2],
                vec![0, 2, 1],
                vec![1, 0, 2],
                vec![1, 2, 0],
                vec![2, 0, 1],
                vec![2, 1, 0]
            ]
        );
    }

    #[test]
    fn two_patch_pool() {
        let pool = generate_candidate_pool(2, 0, false).unwrap();
        assert_eq!(pool.perms, vec![perm(&[0, 1]), perm(&[1, 0])]);
    }

    #[test]
    fn three_patch_pool_matches_brute_force() {
        // Oracle: the six permutations of S3 listed by hand in lexicographic
        // order, filtered greedily with a plain nested loop.
        let all: [[u8; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let brute = |threshold: usize| {
            let mut kept: Vec<Vec<u8>> = vec![all[0].to_vec()];
            for cand in &all[1..] {
                let ok = kept.iter().all(|m| {
                    let mut d = 0;
                    for k in 0..3 {
                        if m[k] != cand[k] {
                            d += 1;
                        }
                    }
                    d > threshold
                });
                if ok {
                    kept.push(cand.to_vec());
                }
            }
            kept
        };
        // Frozen: distinct members of S3 differ in at least two positions.
        assert_eq!(brute(1).len(), 6);
        assert_eq!(brute(2), vec![vec![0, 1, 2], vec![1, 2, 0], vec![2, 0, 1]]);
        for threshold in [1, 2] {
            let pool = generate_candidate_pool(3, threshold, false).unwrap();
            let got: Vec<Vec<u8>> = pool.perms.iter().map(|p| p.as_slice().to_vec()).collect();
            assert_eq!(got, brute(threshold), "threshold {threshold}");
        }
    }

    #[test]
    fn argument_checks() {
        assert!(generate_candidate_pool(1, 0, false).is_err());
        assert!(generate_candidate_pool(4, 4, false).is_err());
        assert!(generate_candidate_pool(10, 5, false).is_err());
    }

    #[test]
    fn sampling_edge_cases() {
        let pool = generate_candidate_pool(5, 2, false).unwrap();
        let one = sample_class_set(&pool, 1, 3).unwrap();
        assert_eq!(one.perms, vec![Permutation::identity(5)]);

        let all = sample_class_set(&pool, pool.len(), 3).unwrap();
        assert!(all.perms[0].is_identity());
        let mut a = all.perms.clone();
        let mut b = pool.perms.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b);

        assert!(sample_class_set(&pool, pool.len() + 1, 3).is_err());
        assert!(sample_class_set(&pool, 0, 3).is_err());
    }

    #[test]
    fn round_trip_and_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let pool = generate_candidate_pool(6, 3, false).unwrap();
        let set = sample_class_set(&pool, 10, 11).unwrap();
        let path = dir.path().join("set.json");
        set.save(&path).unwrap();
        assert_eq!(PermutationSet::load(&path).unwrap(), set);

        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let row = v["perms"][2].clone();
        v["perms"][3] = row;
        std::fs::write(&path, v.to_string()).unwrap();
        let err = PermutationSet::load(&path).unwrap_err().to_string();
        assert!(err.contains("duplicates"), "{err}");

        let mut v: serde_json::Value = serde_json::to_value(PermutationSetFile::from(&set)).unwrap();
        v["perms"][1] = serde_json::json!([0, 0, 1, 2, 3, 4]);
        std::fs::write(&path, v.to_string()).unwrap();
        let err = PermutationSet::load(&path).unwrap_err().to_string();
        assert!(err.contains("bijection"), "{err}");

        std::fs::write(&path, "{ not json").unwrap();
        assert!(PermutationSet::load(&path).is_err());
    }

    fn arb_perm(n: usize) -> impl Strategy<Value = Permutation> {
        Just((0..n as u8).collect::<Vec<u8>>())
            .prop_shuffle()
            .prop_map(Permutation)
    }

    proptest! {
        #[test]
        fn hamming_never_one_and_symmetric(a in arb_perm(9), b in arb_perm(9)) {
            let d = hamming_distance(&a, &b).unwrap();
            prop_assert_ne!(d, 1);
            prop_assert!(d <= 9);
            prop_assert_eq!(d, hamming_distance(&b, &a).unwrap());
        }

        #[test]
        fn inverse_undoes_apply(p in arb_perm(9)) {
            let items: Vec<u32> = (0..9).collect();
            let out = p.apply(&items);
            prop_assert_eq!(p.inverse().apply(&out), items);
        }

        #[test]
        fn sampled_sets_are_valid(seed in any::<u64>(), c in 1usize..30) {
            let pool = generate_candidate_pool(6, 3, false).unwrap();
            let c = c.min(pool.len());
            let s = sample_class_set(&pool, c, seed).unwrap();
            prop_assert_eq!(s.class_count(), c);
            s.validate().unwrap();
            prop_assert_eq!(s.clone(), sample_class_set(&pool, c, seed).unwrap());
        }
    }
}
