//! The step multiset `U_{d,p}`, exact walk probabilities, and the
//! kernel-counting identity.
//!
//! A vector `x` in `F_p^d` with zero coordinate sum is summarized by its
//! residue histogram `phi_map(x)`. The multiset of all such histograms is
//! the step law of a random walk on `Z^p`; the number of configuration-model
//! matrices `M` with `M v = 0` over `F_p` is an exact product formula in the
//! probability that this walk hits the target `d * profile(v)`.
//!
//! Exact probabilities are computed by two independent routes: dynamic
//! programming over the truncated lattice (exact big-rational), and a
//! character sum over roots of unity of order `d*n + 1` per free coordinate
//! (floating point). Congruence probabilities mod p are computed by an exact
//! character sum in the cyclotomic integers.

use crate::config_model::{self, CountMatrix};
use crate::error::{Error, Result};
use crate::exact::{factorial, multinomial, ExactProb};
use crate::params::ModelParams;
use num::bigint::BigInt;
use num::rational::BigRational;
use num::complex::Complex64;
use num::{BigUint, One, Zero};
use std::collections::BTreeMap;

/// Residue histogram `(n_0, ..., n_{p-1})` of a length-`n` vector over `F_p`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Profile {
    counts: Vec<u64>,
}

impl Profile {
    pub fn new(counts: Vec<u64>) -> Self {
        Profile { counts }
    }

    /// Histogram of the entries of `v` (each entry must lie in `[0, p)`).
    pub fn of_vector(v: &[u64], p: u64) -> Result<Self> {
        let mut counts = vec![0u64; p as usize];
        for &x in v {
            if x >= p {
                return Err(Error::BadResidue { residue: x, modulus: p });
            }
            counts[x as usize] += 1;
        }
        Ok(Profile { counts })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn p(&self) -> usize {
        self.counts.len()
    }

    /// True for `(n, 0, ..., 0)`, the profile of the zero vector.
    pub fn is_zero_profile(&self) -> bool {
        self.counts[1..].iter().all(|&c| c == 0)
    }

    /// The walk target `d * (n_0, ..., n_{p-1})`.
    pub fn walk_target(&self, d: u64) -> WalkTarget {
        WalkTarget(self.counts.iter().map(|&c| c * d).collect())
    }
}

/// Histogram of one step: `p` nonnegative integers summing to `d`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StepProfile(pub Vec<u64>);

/// A walk target `(m_0, ..., m_{p-1})`; reachable targets sum to `d*n`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct WalkTarget(pub Vec<u64>);

/// The multiset `U_{d,p}` of step histograms with multiplicities.
///
/// `total` is always `p^(d-1)`: one zero-sum d-tuple per choice of the
/// first `d-1` coordinates.
#[derive(Debug, Clone)]
pub struct StepDistribution {
    d: u64,
    p: u64,
    entries: BTreeMap<StepProfile, u64>,
    total: u64,
}

impl StepDistribution {
    pub fn d(&self) -> u64 {
        self.d
    }
    pub fn p(&self) -> u64 {
        self.p
    }
    pub fn total(&self) -> u64 {
        self.total
    }
    pub fn entries(&self) -> impl Iterator<Item = (&StepProfile, u64)> {
        self.entries.iter().map(|(k, &m)| (k, m))
    }
    pub fn support_len(&self) -> usize {
        self.entries.len()
    }
    pub fn multiplicity(&self, w: &StepProfile) -> u64 {
        self.entries.get(w).copied().unwrap_or(0)
    }
}

/// Maps a zero-sum tuple (or any tuple) of residues to its histogram.
pub fn phi_map(x: &[u64], p: u64) -> Result<StepProfile> {
    let mut counts = vec![0u64; p as usize];
    for &r in x {
        if r >= p {
            return Err(Error::BadResidue { residue: r, modulus: p });
        }
        counts[r as usize] += 1;
    }
    Ok(StepProfile(counts))
}

/// Budget for enumerating `F_p^(d-1)`.
const STEP_ENUM_BUDGET: u64 = 100_000_000;

/// Enumerates all `x` in `F_p^d` with zero coordinate sum and aggregates
/// their histograms into the step multiset.
pub fn build_step_distribution(d: u64, p: u64) -> Result<StepDistribution> {
    assert!(d >= 2, "need d >= 2");
    assert!(p >= 2, "need p >= 2");
    let mut size = 1u64;
    for _ in 0..d - 1 {
        size = size
            .checked_mul(p)
            .filter(|&s| s <= STEP_ENUM_BUDGET)
            .ok_or_else(|| Error::TooLarge(format!("p^(d-1) with p={p}, d={d}")))?;
    }

    let mut entries: BTreeMap<StepProfile, u64> = BTreeMap::new();
    let mut x = vec![0u64; d as usize];
    for mut idx in 0..size {
        let mut sum = 0u64;
        for slot in x.iter_mut().take(d as usize - 1) {
            *slot = idx % p;
            sum += *slot;
            idx /= p;
        }
        x[d as usize - 1] = (p - sum % p) % p;
        let w = phi_map(&x, p).expect("residues in range by construction");
        *entries.entry(w).or_insert(0) += 1;
    }
    Ok(StepDistribution { d, p, entries, total: size })
}

/// Exact mean vector and covariance matrix of the step, by enumeration.
///
/// For d >= 3 these equal the closed forms `(d/p) 1` and
/// `(d/p) I - (d/p^2) 1 1^t`.
pub fn step_mean_cov(dist: &StepDistribution) -> (Vec<BigRational>, Vec<Vec<BigRational>>) {
    let p = dist.p as usize;
    let total = BigRational::from_integer(BigInt::from(dist.total));
    let mut mean = vec![BigRational::zero(); p];
    let mut second = vec![vec![BigRational::zero(); p]; p];
    for (w, mult) in dist.entries() {
        let m = BigRational::from_integer(BigInt::from(mult));
        for j in 0..p {
            let wj = BigRational::from_integer(BigInt::from(w.0[j]));
            mean[j] += &m * &wj;
            for k in 0..p {
                let wk = BigRational::from_integer(BigInt::from(w.0[k]));
                second[j][k] += &m * &wj * wk;
            }
        }
    }
    for j in 0..p {
        mean[j] /= &total;
    }
    let mut cov = second;
    for j in 0..p {
        for k in 0..p {
            cov[j][k] = &cov[j][k] / &total - &mean[j] * &mean[k];
        }
    }
    (mean, cov)
}

/// Cap on the number of distinct partial-sum states held in one DP layer.
const DP_STATE_BUDGET: usize = 4_000_000;

/// Full exact law of the n-step sum: target -> number of step sequences.
///
/// Dividing each count by `p^((d-1)n)` gives the probability, so the counts
/// over all reachable targets sum to exactly `p^((d-1)n)`.
pub fn walk_distribution_exact(
    dist: &StepDistribution,
    n: u64,
) -> Result<BTreeMap<WalkTarget, BigUint>> {
    let p = dist.p as usize;
    let mut layer: BTreeMap<Vec<u64>, BigUint> = BTreeMap::new();
    layer.insert(vec![0u64; p], BigUint::one());
    for _ in 0..n {
        let mut next: BTreeMap<Vec<u64>, BigUint> = BTreeMap::new();
        for (state, count) in &layer {
            for (w, mult) in dist.entries() {
                let mut s = state.clone();
                for j in 0..p {
                    s[j] += w.0[j];
                }
                *next.entry(s).or_insert_with(BigUint::zero) += count * mult;
            }
            if next.len() > DP_STATE_BUDGET {
                return Err(Error::TooLarge(format!(
                    "walk DP layer exceeded {DP_STATE_BUDGET} states"
                )));
            }
        }
        layer = next;
    }
    Ok(layer.into_iter().map(|(k, v)| (WalkTarget(k), v)).collect())
}

/// Number of n-step sequences from `U_{d,p}` summing to `target`, by
/// dynamic programming pruned to the box `[0, target]`.
pub fn walk_count_exact(dist: &StepDistribution, n: u64, target: &WalkTarget) -> Result<BigUint> {
    let p = dist.p as usize;
    assert_eq!(target.0.len(), p, "target dimension");
    if target.0.iter().sum::<u64>() != dist.d * n {
        return Ok(BigUint::zero());
    }
    let mut layer: BTreeMap<Vec<u64>, BigUint> = BTreeMap::new();
    layer.insert(vec![0u64; p], BigUint::one());
    for _ in 0..n {
        let mut next: BTreeMap<Vec<u64>, BigUint> = BTreeMap::new();
        for (state, count) in &layer {
            'step: for (w, mult) in dist.entries() {
                let mut s = state.clone();
                for j in 0..p {
                    s[j] += w.0[j];
                    if s[j] > target.0[j] {
                        continue 'step;
                    }
                }
                *next.entry(s).or_insert_with(BigUint::zero) += count * mult;
            }
        }
        if next.len() > DP_STATE_BUDGET {
            return Err(Error::TooLarge(format!(
                "walk DP layer exceeded {DP_STATE_BUDGET} states"
            )));
        }
        layer = next;
        if layer.is_empty() {
            return Ok(BigUint::zero());
        }
    }
    Ok(layer.remove(&target.0).unwrap_or_else(BigUint::zero))
}

/// Exact `P(X_1 + ... + X_n = target)` via the pruned DP.
pub fn walk_probability_exact(
    dist: &StepDistribution,
    n: u64,
    target: &WalkTarget,
) -> Result<ExactProb> {
    let count = walk_count_exact(dist, n, target)?;
    let denom = BigUint::from(dist.total).pow(n as u32);
    Ok(ExactProb::new(count, denom))
}

/// `P(X_1 + ... + X_n = target)` by discrete Fourier inversion with roots
/// of unity of order `d*n + 1` per free coordinate, in floating point.
///
/// Independent of the DP route; the two agree to about 1e-9 whenever both
/// run. Coordinates of partial sums never exceed `d*n`, so order `d*n + 1`
/// is wrap-free and the inversion is exact up to rounding.
pub fn walk_probability_charsum(dist: &StepDistribution, n: u64, target: &WalkTarget) -> f64 {
    let p = dist.p as usize;
    assert_eq!(target.0.len(), p, "target dimension");
    if target.0.iter().sum::<u64>() != dist.d * n {
        return 0.0;
    }
    let order = dist.d * n + 1;
    // Support as (first p-1 coordinates, multiplicity).
    let support: Vec<(Vec<u64>, f64)> = dist
        .entries()
        .map(|(w, m)| (w.0[..p - 1].to_vec(), m as f64))
        .collect();
    let root: Vec<Complex64> = (0..order)
        .map(|j| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * j as f64 / order as f64))
        .collect();

    let free = p - 1;
    let total_grid: u64 = order.pow(free as u32);
    let inv_total = 1.0 / dist.total as f64;
    use rayon::prelude::*;
    // Split the grid on the first index so rows can run in parallel while
    // the final reduction stays in a fixed order.
    let rows: Vec<Complex64> = (0..order)
        .into_par_iter()
        .map(|k0| {
            let mut acc = Complex64::new(0.0, 0.0);
            let row_len = total_grid / order;
            let mut k = vec![0u64; free];
            k[0] = k0;
            for mut rest in 0..row_len {
                for slot in k.iter_mut().take(free).skip(1) {
                    *slot = rest % order;
                    rest /= order;
                }
                // phi-hat at this frequency
                let mut phi = Complex64::new(0.0, 0.0);
                for (w, m) in &support {
                    let mut dot = 0u64;
                    for (kj, wj) in k.iter().zip(w) {
                        dot = (dot + kj * wj) % order;
                    }
                    phi += m * root[dot as usize];
                }
                phi *= inv_total;
                // phi^n via polar form
                let (r, theta) = phi.to_polar();
                let phin = Complex64::from_polar(r.powi(n as i32), theta * n as f64);
                let mut dot_m = 0u64;
                for (kj, mj) in k.iter().zip(&target.0) {
                    dot_m = (dot_m + kj * (mj % order)) % order;
                }
                // conjugate root for the -<k, m> twist
                acc += phin * root[((order - dot_m) % order) as usize];
            }
            acc
        })
        .collect();
    let sum: Complex64 = rows.iter().sum();
    sum.re / total_grid as f64
}

// ---------------------------------------------------------------------------
// Exact congruence probabilities via cyclotomic character sums
// ---------------------------------------------------------------------------

/// Element of the group ring `Z[Z_p]`: coefficient `a_j` of `zeta^j`.
#[derive(Debug, Clone, PartialEq)]
struct Cyc {
    coeffs: Vec<BigInt>,
}

impl Cyc {
    fn zero(p: usize) -> Self {
        Cyc { coeffs: vec![BigInt::zero(); p] }
    }
    fn one(p: usize) -> Self {
        let mut c = Cyc::zero(p);
        c.coeffs[0] = BigInt::one();
        c
    }
    fn mul(&self, other: &Cyc) -> Cyc {
        let p = self.coeffs.len();
        let mut out = Cyc::zero(p);
        for i in 0..p {
            if self.coeffs[i].is_zero() {
                continue;
            }
            for j in 0..p {
                if other.coeffs[j].is_zero() {
                    continue;
                }
                let k = (i + j) % p;
                out.coeffs[k] += &self.coeffs[i] * &other.coeffs[j];
            }
        }
        out
    }
    fn pow(&self, mut e: u64) -> Cyc {
        let p = self.coeffs.len();
        let mut base = self.clone();
        let mut acc = Cyc::one(p);
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            e >>= 1;
        }
        acc
    }
    fn add_assign(&mut self, other: &Cyc) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b;
        }
    }
    /// Multiply by `zeta^k` in place.
    fn rotate(&self, k: usize) -> Cyc {
        let p = self.coeffs.len();
        let mut out = Cyc::zero(p);
        for i in 0..p {
            out.coeffs[(i + k) % p] = self.coeffs[i].clone();
        }
        out
    }
    /// If the represented value is rational, returns it. Values are taken
    /// modulo the relation `1 + zeta + ... + zeta^{p-1} = 0`, so the value
    /// is rational iff all coefficients of `zeta^1..zeta^{p-1}` agree.
    fn rational_value(&self) -> Option<BigInt> {
        let tail = &self.coeffs[1];
        if self.coeffs[2..].iter().any(|c| c != tail) {
            return None;
        }
        Some(&self.coeffs[0] - tail)
    }
}

/// Guard: the coordinatewise character sum enumerates `p^p` phase vectors.
const CYC_ENUM_BUDGET: u64 = 5_000_000;

/// Exact `P(X_1 + ... + X_n == residues, coordinatewise mod p)`, computed by
/// a character sum over all of `F_p^p` in the cyclotomic integers.
///
/// Note the classical display restricted to phases with zero coordinate sum
/// computes a weaker congruence (see [`walk_probability_modp_line`]); the
/// full sum below inverts the law on `(Z/p)^p` exactly.
pub fn walk_probability_modp(
    dist: &StepDistribution,
    n: u64,
    residues: &[u64],
) -> Result<ExactProb> {
    let p = dist.p;
    let pu = p as usize;
    if residues.len() != pu {
        return Err(Error::Dim { expected: pu, got: residues.len() });
    }
    for &r in residues {
        if r >= p {
            return Err(Error::BadResidue { residue: r, modulus: p });
        }
    }
    let grid = (0..pu).try_fold(1u64, |acc, _| {
        acc.checked_mul(p).filter(|&v| v <= CYC_ENUM_BUDGET)
    })
    .ok_or_else(|| Error::TooLarge(format!("p^p with p={p}")))?;

    let mut total = Cyc::zero(pu);
    let mut s = vec![0u64; pu];
    for mut idx in 0..grid {
        for slot in s.iter_mut() {
            *slot = idx % p;
            idx /= p;
        }
        // G(s) = sum over steps of mult * zeta^{<s, w> mod p}
        let mut g = Cyc::zero(pu);
        for (w, mult) in dist.entries() {
            let mut dot = 0u64;
            for (sj, wj) in s.iter().zip(&w.0) {
                dot = (dot + sj * (wj % p)) % p;
            }
            g.coeffs[dot as usize] += BigInt::from(mult);
        }
        let gn = g.pow(n);
        let mut twist = 0u64;
        for (sj, rj) in s.iter().zip(residues) {
            twist = (twist + sj * rj) % p;
        }
        total.add_assign(&gn.rotate(((p - twist) % p) as usize));
    }
    let value = total.rational_value().ok_or_else(|| {
        Error::IdentityViolated("character sum did not collapse to a rational".into())
    })?;
    let (sign, mag) = value.into_parts();
    if sign == num::bigint::Sign::Minus {
        return Err(Error::IdentityViolated("negative congruence probability".into()));
    }
    let denom = BigUint::from(p).pow(pu as u32) * BigUint::from(dist.total).pow(n as u32);
    Ok(ExactProb::new(mag, denom))
}

/// The character sum restricted to phases with zero coordinate sum, with
/// prefactor `p^-(p-1)`. This computes
/// `P(X_1 + ... + X_n ≡ residues + c*(1,...,1) mod p for some c)`,
/// congruence modulo the line spanned by the all-ones vector.
pub fn walk_probability_modp_line(
    dist: &StepDistribution,
    n: u64,
    residues: &[u64],
) -> Result<ExactProb> {
    let p = dist.p;
    let pu = p as usize;
    if residues.len() != pu {
        return Err(Error::Dim { expected: pu, got: residues.len() });
    }
    let grid = (0..pu - 1).try_fold(1u64, |acc, _| {
        acc.checked_mul(p).filter(|&v| v <= CYC_ENUM_BUDGET)
    })
    .ok_or_else(|| Error::TooLarge(format!("p^(p-1) with p={p}")))?;

    let mut total = Cyc::zero(pu);
    let mut s = vec![0u64; pu];
    for mut idx in 0..grid {
        let mut sum = 0u64;
        for slot in s.iter_mut().take(pu - 1) {
            *slot = idx % p;
            sum += *slot;
            idx /= p;
        }
        s[pu - 1] = (p - sum % p) % p;
        let mut g = Cyc::zero(pu);
        for (w, mult) in dist.entries() {
            let mut dot = 0u64;
            for (sj, wj) in s.iter().zip(&w.0) {
                dot = (dot + sj * (wj % p)) % p;
            }
            g.coeffs[dot as usize] += BigInt::from(mult);
        }
        let gn = g.pow(n);
        let mut twist = 0u64;
        for (sj, rj) in s.iter().zip(residues) {
            twist = (twist + sj * rj) % p;
        }
        total.add_assign(&gn.rotate(((p - twist) % p) as usize));
    }
    let value = total.rational_value().ok_or_else(|| {
        Error::IdentityViolated("character sum did not collapse to a rational".into())
    })?;
    let (sign, mag) = value.into_parts();
    if sign == num::bigint::Sign::Minus {
        return Err(Error::IdentityViolated("negative congruence probability".into()));
    }
    let denom = BigUint::from(p).pow(pu as u32 - 1) * BigUint::from(dist.total).pow(n as u32);
    Ok(ExactProb::new(mag, denom))
}

// ---------------------------------------------------------------------------
// The kernel-counting identity
// ---------------------------------------------------------------------------

/// Product-formula side of the kernel count:
/// `prod_j (d n_j)! * p^((d-1)n) * P(X_1+...+X_n = d * profile)`.
///
/// The result is asserted to be an integer; a failure signals an
/// implementation bug, never expected input.
pub fn kernel_count_rhs(params: &ModelParams, profile: &Profile) -> Result<BigUint> {
    assert_eq!(profile.n(), params.n, "profile must sum to n");
    assert_eq!(profile.p(), params.p as usize, "profile length must be p");
    let dist = build_step_distribution(params.d, params.p)?;
    let target = profile.walk_target(params.d);
    let prob = walk_probability_exact(&dist, params.n, &target)?;

    let scale = BigUint::from(params.p).pow(((params.d - 1) * params.n) as u32);
    // prob * p^((d-1)n) must be the integer sequence count.
    let num = prob.numerator() * &scale;
    let den = prob.denominator();
    if &num % &den != BigUint::zero() {
        return Err(Error::IdentityViolated("p^((d-1)n) * P is not an integer".into()));
    }
    let mut result = num / den;
    for &nj in profile.counts() {
        result *= factorial(params.d * nj);
    }
    Ok(result)
}

/// Brute-force side: enumerates all `(nd)!` pairings and counts those whose
/// count matrix `M` satisfies `M v = 0` over `F_p`.
pub fn kernel_count_lhs_bruteforce(params: &ModelParams, v: &[u64]) -> Result<BigUint> {
    assert_eq!(v.len(), params.n as usize, "kernel candidate must have length n");
    if params.n * params.d > 9 {
        return Err(Error::TooLarge(format!("(nd)! with nd = {}", params.n * params.d)));
    }
    for &x in v {
        if x >= params.p {
            return Err(Error::BadResidue { residue: x, modulus: params.p });
        }
    }
    let mut count = BigUint::zero();
    for pairing in config_model::enumerate_pairings(params.n, params.d)? {
        let m = config_model::pairing_to_matrix(&pairing);
        if matrix_annihilates(&m, v, params.p) {
            count += 1u32;
        }
    }
    Ok(count)
}

pub(crate) fn matrix_annihilates(m: &CountMatrix, v: &[u64], p: u64) -> bool {
    let n = m.n();
    for row in 0..n {
        let mut acc = 0u64;
        for col in 0..n {
            acc = (acc + m.get(row, col) * (v[col] % p)) % p;
        }
        if acc != 0 {
            return false;
        }
    }
    true
}

/// Compositions of `n` into `parts` nonnegative parts, in colexicographic
/// order (the first is `(n, 0, ..., 0)`).
pub fn compositions_colex(n: u64, parts: usize) -> Vec<Vec<u64>> {
    fn gen(n: u64, parts: usize, out: &mut Vec<Vec<u64>>, suffix: &mut Vec<u64>) {
        if parts == 1 {
            let mut c = vec![n];
            c.extend(suffix.iter().rev());
            out.push(c);
            return;
        }
        for last in 0..=n {
            suffix.push(last);
            gen(n - last, parts - 1, out, suffix);
            suffix.pop();
        }
    }
    let mut out = Vec::new();
    gen(n, parts, &mut out, &mut Vec::new());
    out
}

/// The total kernel sum over all profiles with `n_0 < n`:
/// `sum multinomial(n; profile) p^((d-1)n) prod_j (d n_j)! / (dn)! * P(...)`.
///
/// Equals `sum over v != 0 of P(M v = 0)` for the configuration model, and
/// so bounds `(p-1) * P(M singular mod p)` from above.
pub fn total_singularity_sum(params: &ModelParams) -> Result<BigRational> {
    let dist = build_step_distribution(params.d, params.p)?;
    let law = walk_distribution_exact(&dist, params.n)?;
    let denom_steps = BigInt::from(BigUint::from(dist.total).pow(params.n as u32));
    let dn_fact = BigInt::from(factorial(params.d * params.n));
    let scale = BigInt::from(BigUint::from(params.p).pow(((params.d - 1) * params.n) as u32));

    let mut sum = BigRational::zero();
    for profile in compositions_colex(params.n, params.p as usize) {
        if profile[0] == params.n {
            continue; // the zero vector's profile is excluded
        }
        let prof = Profile::new(profile);
        let target = prof.walk_target(params.d);
        let count = match law.get(&target) {
            Some(c) => BigInt::from(c.clone()),
            None => continue,
        };
        let mut term = BigRational::new(count, denom_steps.clone());
        term *= BigRational::from_integer(BigInt::from(multinomial(params.n, prof.counts())));
        term *= BigRational::from_integer(scale.clone());
        let mut prod_fact = BigInt::one();
        for &nj in prof.counts() {
            prod_fact *= BigInt::from(factorial(params.d * nj));
        }
        term *= BigRational::new(prod_fact, dn_fact.clone());
        sum += term;
    }
    Ok(sum)
}
