//! The Bollobas pairing model for random directed d-regular multigraphs.
//!
//! Each vertex `k` has a fiber of `d` out-points and `d` in-points; a
//! uniform permutation of the `nd` points induces the multigraph whose
//! adjacency count matrix has entry `(k, l)` equal to the number of points
//! of fiber `k` mapped into fiber `l`. Exhaustive enumeration of pairings
//! doubles as the oracle for the kernel-counting identity.

use crate::error::{Error, Result};
use crate::exact::factorial;
use crate::rng::SeededRng;
use itertools::Itertools;
use num::{BigUint, One};
use rand::seq::SliceRandom;

/// A pairing: out-point `i` maps to in-point `perm[i]`; the fiber of point
/// `i` is `i / d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingSample {
    pub n: u64,
    pub d: u64,
    pub perm: Vec<u32>,
}

/// An n x n nonnegative integer matrix with all row and column sums `d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CountMatrix {
    n: usize,
    data: Vec<u64>,
}

impl CountMatrix {
    pub fn from_rows(rows: Vec<Vec<u64>>) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            assert_eq!(r.len(), n, "matrix must be square");
            data.extend(r);
        }
        CountMatrix { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.data[row * self.n + col]
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.n).map(|r| (0..self.n).map(|c| self.get(r, c)).sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.n).map(|c| (0..self.n).map(|r| self.get(r, c)).sum()).collect()
    }

    pub fn entries(&self) -> &[u64] {
        &self.data
    }
}

/// Uniform random pairing via an unbiased shuffle of the `nd` points.
pub fn sample_pairing(n: u64, d: u64, rng: &mut SeededRng) -> PairingSample {
    let nd = (n * d) as usize;
    let mut perm: Vec<u32> = (0..nd as u32).collect();
    perm.shuffle(rng);
    PairingSample { n, d, perm }
}

/// Count matrix of a pairing: entry `(k, l)` counts the points of fiber `k`
/// mapped into fiber `l`.
pub fn pairing_to_matrix(s: &PairingSample) -> CountMatrix {
    let n = s.n as usize;
    let d = s.d as usize;
    let mut data = vec![0u64; n * n];
    for (i, &target) in s.perm.iter().enumerate() {
        let from = i / d;
        let to = target as usize / d;
        data[from * n + to] += 1;
    }
    CountMatrix { n, data }
}

/// True iff the multigraph is simple: zero diagonal and no entry above 1.
pub fn is_simple(m: &CountMatrix) -> bool {
    for r in 0..m.n {
        for c in 0..m.n {
            let e = m.get(r, c);
            if e > 1 || (r == c && e > 0) {
                return false;
            }
        }
    }
    true
}

/// Rejection-samples pairings until the induced multigraph is simple.
/// Returns the 0/1 matrix and the number of rejected attempts.
pub fn sample_simple_adjacency(
    n: u64,
    d: u64,
    rng: &mut SeededRng,
    max_retries: usize,
) -> Result<(CountMatrix, usize)> {
    if d >= n {
        return Err(Error::Invalid(format!(
            "a simple d-regular digraph needs d < n, got d={d}, n={n}"
        )));
    }
    for retry in 0..max_retries {
        let m = pairing_to_matrix(&sample_pairing(n, d, rng));
        if is_simple(&m) {
            return Ok((m, retry));
        }
    }
    Err(Error::RejectionBudget(max_retries))
}

/// All `(nd)!` pairings in lexicographic order of the permutation word.
pub fn enumerate_pairings(n: u64, d: u64) -> Result<impl Iterator<Item = PairingSample>> {
    let nd = n * d;
    if nd > 9 {
        return Err(Error::TooLarge(format!("(nd)! with nd = {nd}")));
    }
    let iter = (0..nd as u32)
        .permutations(nd as usize)
        .map(move |perm| PairingSample { n, d, perm });
    Ok(iter)
}

/// Number of pairings inducing a fixed count matrix:
/// `prod_k d!/prod_l M_kl! * prod_l d!/prod_k M_kl! * prod_kl M_kl!`.
pub fn pairing_multiplicity(m: &CountMatrix, d: u64) -> BigUint {
    let n = m.n();
    let d_fact = factorial(d);
    let mut result = BigUint::one();
    for r in 0..n {
        let mut ways = d_fact.clone();
        for c in 0..n {
            ways /= factorial(m.get(r, c));
        }
        result *= ways;
    }
    for c in 0..n {
        let mut ways = d_fact.clone();
        for r in 0..n {
            ways /= factorial(m.get(r, c));
        }
        result *= ways;
    }
    for e in m.entries() {
        result *= factorial(*e);
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn single_point_pairing() {
        let s = PairingSample { n: 1, d: 1, perm: vec![0] };
        let m = pairing_to_matrix(&s);
        assert_eq!(m, CountMatrix::from_rows(vec![vec![1]]));
    }

    #[test]
    fn identity_and_block_swap() {
        let id = PairingSample { n: 2, d: 3, perm: (0..6).collect() };
        assert_eq!(
            pairing_to_matrix(&id),
            CountMatrix::from_rows(vec![vec![3, 0], vec![0, 3]])
        );
        let swap = PairingSample { n: 2, d: 3, perm: vec![3, 4, 5, 0, 1, 2] };
        assert_eq!(
            pairing_to_matrix(&swap),
            CountMatrix::from_rows(vec![vec![0, 3], vec![3, 0]])
        );
    }

    #[test]
    fn row_and_column_sums_are_d() {
        let mut rng = SeededRng::new(7, 0);
        for _ in 0..50 {
            let m = pairing_to_matrix(&sample_pairing(5, 3, &mut rng));
            assert!(m.row_sums().iter().all(|&s| s == 3));
            assert!(m.col_sums().iter().all(|&s| s == 3));
        }
    }

    #[test]
    fn simplicity_checks() {
        assert!(!is_simple(&CountMatrix::from_rows(vec![vec![0, 3], vec![3, 0]])));
        assert!(!is_simple(&CountMatrix::from_rows(vec![vec![1, 0], vec![0, 1]])));
        assert!(is_simple(&CountMatrix::from_rows(vec![
            vec![0, 1, 1],
            vec![1, 0, 1],
            vec![1, 1, 0],
        ])));
    }

    #[test]
    fn sampler_is_deterministic() {
        let a = sample_pairing(4, 3, &mut SeededRng::new(42, 0));
        let b = sample_pairing(4, 3, &mut SeededRng::new(42, 0));
        assert_eq!(a, b);
        let (m1, r1) = sample_simple_adjacency(10, 3, &mut SeededRng::new(5, 1), 10_000).unwrap();
        let (m2, r2) = sample_simple_adjacency(10, 3, &mut SeededRng::new(5, 1), 10_000).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);
    }

    #[test]
    fn simple_sampler_rejects_d_geq_n() {
        let err = sample_simple_adjacency(3, 3, &mut SeededRng::new(0, 0), 10);
        assert!(err.is_err());
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_pairings(2, 3).unwrap().count(), 720);
        assert_eq!(enumerate_pairings(1, 2).unwrap().count(), 2);
        assert!(enumerate_pairings(4, 3).is_err());
    }

    #[test]
    fn enumeration_is_lexicographic_and_exhaustive() {
        let perms: Vec<Vec<u32>> =
            enumerate_pairings(2, 2).unwrap().map(|s| s.perm).collect();
        assert_eq!(perms.len(), 24);
        let mut sorted = perms.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(perms, sorted, "lexicographic order, no repeats");
    }

    #[test]
    fn multiplicity_law_exhaustive() {
        // group all pairings by induced matrix and compare with the formula
        for (n, d) in [(2u64, 2u64), (3, 2), (2, 3), (6, 1)] {
            let mut by_matrix: BTreeMap<CountMatrix, u64> = BTreeMap::new();
            for s in enumerate_pairings(n, d).unwrap() {
                *by_matrix.entry(pairing_to_matrix(&s)).or_insert(0) += 1;
            }
            let total: u64 = by_matrix.values().sum();
            assert_eq!(total, (1..=n * d).product::<u64>());
            for (m, count) in by_matrix {
                assert_eq!(
                    pairing_multiplicity(&m, d),
                    BigUint::from(count),
                    "multiplicity law at n={n}, d={d}"
                );
            }
        }
    }

    #[test]
    fn sampler_uniformity_small() {
        // light chi-square at nd = 4 (24 cells); the full nd = 6 run lives
        // in the verification suite
        let mut rng = SeededRng::new(123, 0);
        let trials = 24_000u64;
        let mut counts: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
        for _ in 0..trials {
            *counts.entry(sample_pairing(2, 2, &mut rng).perm).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 24);
        let expected = trials as f64 / 24.0;
        let chi2: f64 =
            counts.values().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        // chi-square(23) 0.999 quantile
        assert!(chi2 < 49.73, "chi2 = {chi2}");
    }
}
