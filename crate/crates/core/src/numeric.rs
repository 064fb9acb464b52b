//! Small numerical helpers shared by the scoring and estimation modules.
//!
//! All reductions here run in a fixed order so that results are bit-identical
//! across runs and thread counts.

use sha2::{Digest, Sha256};

const PAIRWISE_BLOCK: usize = 8;

/// Pairwise (cascade) summation with a fixed split tree.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise sum of `f(i)` for `i in 0..n` without materializing a buffer
/// for small inputs.
pub fn pairwise_sum_by(n: usize, f: &impl Fn(usize) -> f64) -> f64 {
    fn rec(lo: usize, hi: usize, f: &impl Fn(usize) -> f64) -> f64 {
        if hi - lo <= PAIRWISE_BLOCK {
            return (lo..hi).map(f).sum();
        }
        let mid = lo + (hi - lo) / 2;
        rec(lo, mid, f) + rec(mid, hi, f)
    }
    rec(0, n, f)
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(pairwise_sum(xs) / xs.len() as f64)
    }
}

/// Sample variance with the `n - 1` denominator.
pub fn sample_variance(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss = pairwise_sum_by(xs.len(), &|i| (xs[i] - m) * (xs[i] - m));
    Some(ss / (xs.len() - 1) as f64)
}

/// 1-based nearest rank `ceil(p * n)`, clamped to `[1, n]`.
///
/// A tiny slack absorbs representation error so that, e.g., `0.995 * 200`
/// lands on rank 199 rather than 200.
pub fn nearest_rank(p: f64, n: usize) -> usize {
    let r = (p * n as f64 - 1e-9).ceil();
    (r.max(1.0) as usize).min(n)
}

/// Nearest-rank quantile of an unsorted sample.
pub fn nearest_rank_quantile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted[nearest_rank(p, sorted.len()) - 1])
}

/// SplitMix64 finalizer; used to derive independent per-task seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replication `index` under `master`; independent of scheduling.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// 64-bit FNV-1a; the documented id hash of the binary embedding layout.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
        assert_eq!(pairwise_sum_by(xs.len(), &|i| xs[i]), 500_500.0);
    }

    #[test]
    fn nearest_rank_examples() {
        assert_eq!(nearest_rank(0.75, 4), 3);
        assert_eq!(nearest_rank(0.25, 4), 1);
        assert_eq!(nearest_rank(0.995, 200), 199);
        assert_eq!(nearest_rank(0.995, 50), 50);
        assert_eq!(nearest_rank(0.01, 3), 1);
        assert_eq!(nearest_rank_quantile(&[4.0, 1.0, 3.0, 2.0], 0.75), Some(3.0));
    }

    #[test]
    fn variance_of_known_sample() {
        let v = sample_variance(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert!((v - 32.0 / 7.0).abs() < 1e-14);
        assert!(sample_variance(&[1.0]).is_none());
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(7, 0);
        let b = derive_seed(7, 1);
        let c = derive_seed(8, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, 0));
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
