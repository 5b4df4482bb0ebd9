//! Rank and kernel computation over `F_p`, and certified singularity over
//! the rationals.
//!
//! The singularity verdict is never probabilistic in the singular
//! direction: `Singular` always carries an exact integer kernel witness,
//! re-verified by an exact integer matrix-vector product. `Nonsingular` is
//! certified by full rank modulo one prime (which bounds the rational rank
//! from below) or by exact elimination.

use crate::config_model::CountMatrix;
use crate::error::{Error, Result};
use crate::params::{is_prime, mul_mod, pow_mod};
use crate::rng::SeededRng;
use crate::walk::Profile;
use num::bigint::BigInt;
use num::rational::BigRational;
use num::{Integer, One, Zero};
use rand::Rng;

/// Outcome of Gaussian elimination over `F_p`.
#[derive(Debug, Clone)]
pub struct RankResult {
    pub rank: usize,
    pub nullity: usize,
    /// Reduced kernel basis; every vector satisfies `M v = 0 mod p`.
    pub kernel_basis: Vec<Vec<u64>>,
}

/// Certified singularity verdict over the rationals.
#[derive(Debug, Clone)]
pub enum Singularity {
    /// Full rank mod `prime` (or exactly, when `prime` is `None`), which
    /// certifies full rational rank.
    Nonsingular { prime: Option<u64> },
    /// An exact nonzero integer vector with `M w = 0` over `Z`.
    Singular { witness: Vec<BigInt> },
    /// Every supplied prime saw a nontrivial kernel but no integer witness
    /// was extracted within budget.
    Undetermined,
}

/// Gaussian elimination over `F_p` with partial pivoting by first nonzero;
/// returns rank, nullity, and a reduced kernel basis.
pub fn rank_mod_p(m: &CountMatrix, p: u64) -> RankResult {
    assert!(is_prime(p), "modulus must be prime");
    let n = m.n();
    let mut rows: Vec<Vec<u64>> =
        (0..n).map(|r| (0..n).map(|c| m.get(r, c) % p).collect()).collect();

    let mut pivot_cols = Vec::new();
    let mut row = 0usize;
    for col in 0..n {
        let Some(pr) = (row..n).find(|&r| rows[r][col] != 0) else {
            continue;
        };
        rows.swap(row, pr);
        let inv = pow_mod(rows[row][col], p - 2, p);
        for c in col..n {
            rows[row][c] = mul_mod(rows[row][c], inv, p);
        }
        for r in 0..n {
            if r != row && rows[r][col] != 0 {
                let factor = p - rows[r][col]; // add factor * pivot row
                for c in col..n {
                    // factor, rows < p < 2^31: the update fits in u64
                    rows[r][c] = (rows[r][c] + factor * rows[row][c]) % p;
                }
            }
        }
        pivot_cols.push(col);
        row += 1;
        if row == n {
            break;
        }
    }

    let rank = pivot_cols.len();
    let mut kernel_basis = Vec::with_capacity(n - rank);
    let mut is_pivot = vec![false; n];
    for &c in &pivot_cols {
        is_pivot[c] = true;
    }
    for free in (0..n).filter(|&c| !is_pivot[c]) {
        let mut v = vec![0u64; n];
        v[free] = 1;
        for (i, &pc) in pivot_cols.iter().enumerate() {
            v[pc] = (p - rows[i][free] % p) % p;
        }
        // never trust elimination: re-multiply before returning
        debug_check_kernel(m, &v, p);
        kernel_basis.push(v);
    }
    RankResult { rank, nullity: n - rank, kernel_basis }
}

fn debug_check_kernel(m: &CountMatrix, v: &[u64], p: u64) {
    let n = m.n();
    for r in 0..n {
        let mut acc = 0u128;
        for c in 0..n {
            acc += m.get(r, c) as u128 * v[c] as u128;
        }
        assert!(acc % p as u128 == 0, "kernel vector fails verification");
    }
}

/// Residue histogram of a kernel vector.
pub fn kernel_vector_profile(v: &[u64], p: u64) -> Result<Profile> {
    Profile::of_vector(v, p)
}

/// Three random primes in `[2^30, 2^31)`.
pub fn default_prime_schedule(rng: &mut SeededRng) -> Vec<u64> {
    let mut primes = Vec::with_capacity(3);
    while primes.len() < 3 {
        let candidate = rng.random_range((1u64 << 30)..(1u64 << 31)) | 1;
        if is_prime(candidate) && !primes.contains(&candidate) {
            primes.push(candidate);
        }
    }
    primes
}

/// Certified rational singularity test.
///
/// Tries each prime: full rank anywhere certifies nonsingularity. If every
/// prime sees a kernel, an exact integer witness is extracted (rational
/// reconstruction of the mod-p kernel, falling back to exact rational
/// elimination) and verified by integer arithmetic.
pub fn is_singular_rational(
    m: &CountMatrix,
    primes: &[u64],
) -> Result<Singularity> {
    if primes.is_empty() {
        return Err(Error::NoPrimes);
    }
    let mut deficient: Option<(u64, Vec<u64>)> = None;
    for &p in primes {
        let rr = rank_mod_p(m, p);
        if rr.nullity == 0 {
            return Ok(Singularity::Nonsingular { prime: Some(p) });
        }
        if deficient.is_none() {
            deficient = Some((p, rr.kernel_basis.into_iter().next().unwrap()));
        }
    }
    let (p, kernel_mod_p) = deficient.expect("at least one prime was tried");

    // Cheap route: rational reconstruction of the mod-p kernel vector.
    if let Some(w) = lift_kernel_vector(&kernel_mod_p, p) {
        if verify_integer_kernel(m, &w) {
            return Ok(Singularity::Singular { witness: w });
        }
    }
    // Exact route: rational elimination decides outright.
    match exact_kernel_vector(m) {
        Some(w) => {
            if verify_integer_kernel(m, &w) {
                Ok(Singularity::Singular { witness: w })
            } else {
                Err(Error::IdentityViolated("exact kernel witness failed verification".into()))
            }
        }
        None => Ok(Singularity::Nonsingular { prime: None }),
    }
}

/// Exact integer matrix-vector product check `M w = 0`.
pub fn verify_integer_kernel(m: &CountMatrix, w: &[BigInt]) -> bool {
    let n = m.n();
    if w.iter().all(|x| x.is_zero()) {
        return false;
    }
    for r in 0..n {
        let mut acc = BigInt::zero();
        for c in 0..n {
            acc += BigInt::from(m.get(r, c)) * &w[c];
        }
        if !acc.is_zero() {
            return false;
        }
    }
    true
}

/// Rational reconstruction of each coordinate (Wang's algorithm), then
/// denominators cleared. Returns None when any coordinate has no small
/// representative mod p.
fn lift_kernel_vector(v: &[u64], p: u64) -> Option<Vec<BigInt>> {
    let bound = ((p / 2) as f64).sqrt() as i64;
    let mut nums = Vec::with_capacity(v.len());
    let mut dens = Vec::with_capacity(v.len());
    for &x in v {
        let (a, b) = rational_reconstruct(x as i64, p as i64, bound)?;
        nums.push(BigInt::from(a));
        dens.push(BigInt::from(b));
    }
    let mut lcm = BigInt::one();
    for d in &dens {
        lcm = lcm.lcm(d);
    }
    let w: Vec<BigInt> = nums
        .iter()
        .zip(&dens)
        .map(|(a, b)| a * (&lcm / b))
        .collect();
    Some(w)
}

/// Finds `a/b == x mod m` with `|a| <= bound`, `0 < b <= bound`, via the
/// half-extended Euclidean algorithm.
fn rational_reconstruct(x: i64, m: i64, bound: i64) -> Option<(i64, i64)> {
    let (mut r0, mut r1) = (m, x.rem_euclid(m));
    let (mut t0, mut t1) = (0i64, 1i64);
    while r1.abs() > bound {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (t0, t1) = (t1, t0 - q * t1);
    }
    if t1 == 0 || t1.abs() > bound {
        return None;
    }
    let (mut a, mut b) = (r1, t1);
    if b < 0 {
        a = -a;
        b = -b;
    }
    Some((a, b))
}

/// One exact rational kernel vector with denominators cleared, or None if
/// the matrix has full rational rank.
pub fn exact_kernel_vector(m: &CountMatrix) -> Option<Vec<BigInt>> {
    let n = m.n();
    let mut rows: Vec<Vec<BigRational>> = (0..n)
        .map(|r| (0..n).map(|c| BigRational::from_integer(BigInt::from(m.get(r, c)))).collect())
        .collect();

    let mut pivot_cols = Vec::new();
    let mut row = 0usize;
    for col in 0..n {
        let Some(pr) = (row..n).find(|&r| !rows[r][col].is_zero()) else {
            continue;
        };
        rows.swap(row, pr);
        let inv = rows[row][col].recip();
        for c in col..n {
            let v = &rows[row][c] * &inv;
            rows[row][c] = v;
        }
        for r in 0..n {
            if r != row && !rows[r][col].is_zero() {
                let factor = rows[r][col].clone();
                for c in col..n {
                    let v = &rows[r][c] - &factor * &rows[row][c];
                    rows[r][c] = v;
                }
            }
        }
        pivot_cols.push(col);
        row += 1;
        if row == n {
            break;
        }
    }
    if pivot_cols.len() == n {
        return None;
    }
    let mut is_pivot = vec![false; n];
    for &c in &pivot_cols {
        is_pivot[c] = true;
    }
    let free = (0..n).find(|&c| !is_pivot[c]).expect("rank deficient");
    let mut v = vec![BigRational::zero(); n];
    v[free] = BigRational::one();
    for (i, &pc) in pivot_cols.iter().enumerate() {
        v[pc] = -rows[i][free].clone();
    }
    // clear denominators and divide by content
    let mut lcm = BigInt::one();
    for x in &v {
        lcm = lcm.lcm(x.denom());
    }
    let mut w: Vec<BigInt> = v.iter().map(|x| x.numer() * (&lcm / x.denom())).collect();
    let mut content = BigInt::zero();
    for x in &w {
        content = content.gcd(x);
    }
    if !content.is_zero() && !content.is_one() {
        for x in w.iter_mut() {
            *x /= &content;
        }
    }
    Some(w)
}

/// Exact rank over the rationals (test oracle for the modular rank).
pub fn rank_rational(m: &CountMatrix) -> usize {
    let n = m.n();
    let mut rows: Vec<Vec<BigRational>> = (0..n)
        .map(|r| (0..n).map(|c| BigRational::from_integer(BigInt::from(m.get(r, c)))).collect())
        .collect();
    let mut rank = 0usize;
    for col in 0..n {
        let Some(pr) = (rank..n).find(|&r| !rows[r][col].is_zero()) else {
            continue;
        };
        rows.swap(rank, pr);
        let inv = rows[rank][col].recip();
        for c in col..n {
            let v = &rows[rank][c] * &inv;
            rows[rank][c] = v;
        }
        for r in rank + 1..n {
            if !rows[r][col].is_zero() {
                let factor = rows[r][col].clone();
                for c in col..n {
                    let v = &rows[r][c] - &factor * &rows[rank][c];
                    rows[r][c] = v;
                }
            }
        }
        rank += 1;
        if rank == n {
            break;
        }
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config_model::{pairing_to_matrix, sample_pairing};

    fn diag(n: usize, d: u64) -> CountMatrix {
        CountMatrix::from_rows(
            (0..n).map(|r| (0..n).map(|c| if r == c { d } else { 0 }).collect()).collect(),
        )
    }

    /// Determinant by cofactor expansion, usable for n <= 5.
    fn det_cofactor(m: &[Vec<i64>]) -> i64 {
        let n = m.len();
        if n == 1 {
            return m[0][0];
        }
        let mut det = 0i64;
        for c in 0..n {
            if m[0][c] == 0 {
                continue;
            }
            let minor: Vec<Vec<i64>> = (1..n)
                .map(|r| (0..n).filter(|&cc| cc != c).map(|cc| m[r][cc]).collect())
                .collect();
            let sign = if c % 2 == 0 { 1 } else { -1 };
            det += sign * m[0][c] * det_cofactor(&minor);
        }
        det
    }

    #[test]
    fn diagonal_full_rank() {
        let rr = rank_mod_p(&diag(4, 3), 5);
        assert_eq!(rr.rank, 4);
        assert_eq!(rr.nullity, 0);
        assert!(rr.kernel_basis.is_empty());
    }

    #[test]
    fn matrix_zero_mod_p() {
        let m = CountMatrix::from_rows(vec![vec![0, 3], vec![3, 0]]);
        let rr = rank_mod_p(&m, 3);
        assert_eq!(rr.rank, 0);
        assert_eq!(rr.nullity, 2);
        assert_eq!(rr.kernel_basis.len(), 2);
    }

    #[test]
    fn rank_matches_cofactor_determinant() {
        let mut rng = SeededRng::new(11, 0);
        for _ in 0..100 {
            let n = rng.random_range(2..=5usize);
            let rows: Vec<Vec<u64>> =
                (0..n).map(|_| (0..n).map(|_| rng.random_range(0..4u64)).collect()).collect();
            let mi: Vec<Vec<i64>> =
                rows.iter().map(|r| r.iter().map(|&x| x as i64).collect()).collect();
            let m = CountMatrix::from_rows(rows);
            let det = det_cofactor(&mi);
            let rq = rank_rational(&m);
            assert_eq!(det != 0, rq == n, "determinant vs rational rank");
            for p in [1_000_000_007u64, 2_147_483_647] {
                let rr = rank_mod_p(&m, p);
                assert!(rr.rank <= rq);
                // primes this large cannot divide a nonzero minor of a tiny matrix
                assert_eq!(rr.rank, rq);
            }
        }
    }

    #[test]
    fn modular_rank_bounded_by_rational_rank() {
        let mut seeded = SeededRng::new(404, 0);
        let primes = default_prime_schedule(&mut seeded);
        let mut rng = SeededRng::new(12, 0);
        let mut equal = 0usize;
        let total = 100;
        for _ in 0..total {
            let n = rng.random_range(2..=8usize);
            let rows: Vec<Vec<u64>> =
                (0..n).map(|_| (0..n).map(|_| rng.random_range(0..6u64)).collect()).collect();
            let m = CountMatrix::from_rows(rows);
            let rq = rank_rational(&m);
            let mut all_equal = true;
            for &p in &primes {
                let rm = rank_mod_p(&m, p).rank;
                assert!(rm <= rq);
                all_equal &= rm == rq;
            }
            equal += all_equal as usize;
        }
        assert!(equal >= total - 1, "30-bit primes almost never lose rank: {equal}/{total}");
    }

    #[test]
    fn ones_vector_in_kernel_iff_p_divides_d() {
        let mut rng = SeededRng::new(3, 0);
        for _ in 0..20 {
            let m = pairing_to_matrix(&sample_pairing(6, 3, &mut rng));
            let rr3 = rank_mod_p(&m, 3);
            assert!(rr3.nullity >= 1, "M 1 = 3*1 = 0 mod 3");
            // verify directly that 1 is annihilated mod 3
            for r in 0..6 {
                let s: u64 = (0..6).map(|c| m.get(r, c)).sum();
                assert_eq!(s % 3, 0);
            }
        }
    }

    #[test]
    fn nonsingular_certificate() {
        let verdict = is_singular_rational(&diag(4, 3), &[1_000_000_007]).unwrap();
        assert!(matches!(verdict, Singularity::Nonsingular { prime: Some(_) }));
        assert!(matches!(
            is_singular_rational(&diag(2, 1), &[]),
            Err(Error::NoPrimes)
        ));
    }

    #[test]
    fn identical_columns_give_witness() {
        // columns 0 and 1 equal: e0 - e1 is a kernel vector
        let m = CountMatrix::from_rows(vec![
            vec![1, 1, 1],
            vec![1, 1, 1],
            vec![2, 2, 0],
        ]);
        let mut rng = SeededRng::new(9, 0);
        let primes = default_prime_schedule(&mut rng);
        match is_singular_rational(&m, &primes).unwrap() {
            Singularity::Singular { witness } => {
                assert!(verify_integer_kernel(&m, &witness));
            }
            other => panic!("expected singular, got {other:?}"),
        }
    }

    #[test]
    fn kernel_profile_examples() {
        assert_eq!(kernel_vector_profile(&[1, 2], 3).unwrap().counts(), &[0, 1, 1]);
        assert_eq!(kernel_vector_profile(&[0, 0, 0], 3).unwrap().counts(), &[3, 0, 0]);
        assert_eq!(kernel_vector_profile(&[1, 1, 1, 1], 5).unwrap().counts(), &[0, 4, 0, 0, 0]);
    }

    #[test]
    fn rational_reconstruction_roundtrip() {
        let p = 1_000_000_007i64;
        for (a, b) in [(1i64, 3i64), (-7, 11), (25, 1), (-1, 1), (999, 500)] {
            let binv = pow_mod(b.rem_euclid(p) as u64, (p - 2) as u64, p as u64) as i64;
            let x = ((a.rem_euclid(p) as i128 * binv as i128) % p as i128) as i64;
            let (ra, rb) = rational_reconstruct(x, p, 31_622).unwrap();
            assert_eq!((ra as i128) * (b as i128), (rb as i128) * (a as i128));
        }
    }
}
