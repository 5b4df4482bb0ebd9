//! Characteristic function of the walk step: exact moments, the extremal
//! lattice geometry, forward decay, inverse-theorem search, and recovery of
//! linear phase structure.
//!
//! The modulus `|phi_X(s)|` equals 1 exactly on the lattice arrangement
//! `2 pi Z^p + 2 pi j (0, 1/p, ..., (p-1)/p) + R (1,...,1)`; the tube
//! `B_j(kappa)` thickens the j-th generator by `kappa` in the hyperplane
//! orthogonal to the all-ones direction and is free along it.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::walk::{build_step_distribution, StepDistribution};
use num::bigint::BigInt;
use num::rational::BigRational;
use num::complex::Complex64;
use num::{One, ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;
use std::f64::consts::{PI, TAU};

/// A real phase vector `s in R^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector(pub Vec<f64>);

/// The tube `B_j(kappa)` around the j-th lattice generator. The orthonormal
/// frame `[O, 1/sqrt(p)]` is implicit in the distance computation.
#[derive(Debug, Clone, Copy)]
pub struct BallSpec {
    pub p: u64,
    pub j: u64,
    pub kappa: f64,
}

/// Recovered linear structure of a near-extremal phase vector.
#[derive(Debug, Clone)]
pub struct StructureReport {
    /// Slope of the recovered linear phase `s_a ~ 2 pi d0 a / p`.
    pub d0: u64,
    /// Nearest-lattice integers `k_a = round(p s_a / 2 pi)`, in `(-p/2, p/2]`.
    pub k: Vec<i64>,
    /// Alignment phase used by the triple statistic.
    pub x0: f64,
    /// Interval scale `q = ceil(p sqrt(eta^2 p))`.
    pub q: u64,
    pub eta: f64,
    /// `max_a || s_a/2pi - d0 a/p ||_{R/Z}`.
    pub max_residual: f64,
    pub triple_defect: f64,
}

/// Distance to the nearest integer: `||x||_{R/Z}`.
pub fn frac_dist(x: f64) -> f64 {
    (x - x.round()).abs()
}

fn dim_check(dist: &StepDistribution, len: usize) -> Result<()> {
    if len != dist.p() as usize {
        return Err(Error::Dim { expected: dist.p() as usize, got: len });
    }
    Ok(())
}

/// Characteristic function `phi_X(s) = p^-(d-1) sum_w mult(w) e^{i s.w}`.
pub fn phi_x(dist: &StepDistribution, s: &[f64]) -> Result<Complex64> {
    dim_check(dist, s.len())?;
    let mut acc = Complex64::new(0.0, 0.0);
    for (w, mult) in dist.entries() {
        let dot: f64 = s.iter().zip(&w.0).map(|(si, &wi)| si * wi as f64).sum();
        acc += mult as f64 * Complex64::from_polar(1.0, dot);
    }
    Ok(acc / dist.total() as f64)
}

/// Centered characteristic function `e^{-i s.mu} phi_X(s)` with
/// `mu = (d/p) (1,...,1)`; same modulus as `phi_X`.
pub fn phi_centered(dist: &StepDistribution, s: &[f64]) -> Result<Complex64> {
    let phi = phi_x(dist, s)?;
    let mean = dist.d() as f64 / dist.p() as f64;
    let dot_mu: f64 = s.iter().sum::<f64>() * mean;
    Ok(Complex64::from_polar(1.0, -dot_mu) * phi)
}

/// Exact k-th moment `E <s, X - mu>^k` for a centered rational phase
/// (`sum s_i = 0`), by enumeration over the step multiset. `k = 1` returns
/// exactly zero.
pub fn moment_exact(dist: &StepDistribution, s: &[BigRational], k: u32) -> Result<BigRational> {
    dim_check(dist, s.len())?;
    assert!((1..=4).contains(&k), "moments implemented for k in 1..=4");
    if !s.iter().fold(BigRational::zero(), |a, x| a + x).is_zero() {
        return Err(Error::NotCentered);
    }
    // <s, X - mu> = <s, X> since <s, mu> = (d/p) sum s_i = 0
    let mut acc = BigRational::zero();
    for (w, mult) in dist.entries() {
        let mut dot = BigRational::zero();
        for (si, &wi) in s.iter().zip(&w.0) {
            dot += si * BigRational::from_integer(BigInt::from(wi));
        }
        let mut term = BigRational::one();
        for _ in 0..k {
            term *= &dot;
        }
        acc += term * BigRational::from_integer(BigInt::from(mult));
    }
    Ok(acc / BigRational::from_integer(BigInt::from(dist.total())))
}

/// Convenience: integer phase vector as exact rationals.
pub fn rational_phase(v: &[i64]) -> Vec<BigRational> {
    v.iter().map(|&x| BigRational::from_integer(BigInt::from(x))).collect()
}

/// Third- and fourth-moment constants measured at one prime.
#[derive(Debug, Clone)]
pub struct PrimeMomentRecord {
    pub p: u64,
    /// `C_p = p E<s,X-mu>^3 / sum s^3` on the primary canonical vector.
    pub c_p: f64,
    /// Whether the ratio was identical (exact rational equality) across the
    /// canonical test vectors.
    pub proportional: bool,
    /// The per-vector ratios, for diagnosis when proportionality fails.
    pub ratios: Vec<f64>,
    /// Cross constant of the fourth moment:
    /// `(E<s,X-mu>^4 - (d/p) sum s^4) p^2 / |s|^4`.
    pub quartic_cross: f64,
    /// `D_p = (d-1)/6 - C_p/d^3`.
    pub d_p: f64,
}

/// Fitted moment constants across primes.
#[derive(Debug, Clone)]
pub struct MomentFit {
    pub d: u64,
    pub per_prime: Vec<PrimeMomentRecord>,
    /// Least-squares fit `C_p = d + c1/p + c2/p^2`.
    pub c1: f64,
    pub c2: f64,
    pub fit_residual: f64,
}

impl MomentFit {
    pub fn predict_c(&self, p: u64) -> f64 {
        let pf = p as f64;
        self.d as f64 + self.c1 / pf + self.c2 / (pf * pf)
    }
}

/// Canonical centered test vectors with nonzero cube sums, embedded in
/// dimension p (requires p >= 3). The first is the defining vector of C_p.
fn canonical_vectors(p: u64) -> Vec<Vec<BigRational>> {
    let shapes: [&[i64]; 3] = [&[1, 1, -2], &[2, -1, -1], &[1, -3, 2]];
    shapes
        .iter()
        .map(|shape| {
            let mut v = vec![0i64; p as usize];
            v[..3].copy_from_slice(shape);
            rational_phase(&v)
        })
        .collect()
}

/// Measures `C_p` per prime on canonical test vectors, records whether the
/// third moment is exactly proportional to `sum s^3` there, and fits
/// `C_p = d + c'/p + c''/p^2` by least squares.
pub fn fit_moment_constants(d: u64, primes: &[u64]) -> Result<MomentFit> {
    if primes.len() < 3 {
        return Err(Error::Invalid("need at least 3 primes".into()));
    }
    if primes.iter().any(|&p| p < 3 || p % 2 == 0) {
        return Err(Error::Invalid("primes must be odd and >= 3".into()));
    }
    let mut per_prime = Vec::with_capacity(primes.len());
    for &p in primes {
        let dist = build_step_distribution(d, p)?;
        let vectors = canonical_vectors(p);
        let mut ratios_exact: Vec<BigRational> = Vec::new();
        for v in &vectors {
            let m3 = moment_exact(&dist, v, 3)?;
            let cube_sum: BigRational =
                v.iter().map(|x| x * x * x).fold(BigRational::zero(), |a, b| a + b);
            assert!(!cube_sum.is_zero(), "canonical vectors have nonzero cube sum");
            ratios_exact.push(m3 / cube_sum * BigRational::from_integer(BigInt::from(p)));
        }
        let proportional = ratios_exact.windows(2).all(|w| w[0] == w[1]);
        let c_p = ratios_exact[0].to_f64().unwrap();

        // fourth-moment cross constant on the primary vector
        let v0 = &vectors[0];
        let m4 = moment_exact(&dist, v0, 4)?;
        let sum4: BigRational =
            v0.iter().map(|x| x * x * x * x).fold(BigRational::zero(), |a, b| a + b);
        let sum2: BigRational = v0.iter().map(|x| x * x).fold(BigRational::zero(), |a, b| a + b);
        let pf = BigRational::from_integer(BigInt::from(p));
        let quartic_cross = ((m4
            - BigRational::from_integer(BigInt::from(d)) / &pf * sum4)
            * &pf
            * &pf
            / (&sum2 * &sum2))
            .to_f64()
            .unwrap();

        let d_p = (d as f64 - 1.0) / 6.0 - c_p / (d as f64).powi(3);
        per_prime.push(PrimeMomentRecord {
            p,
            c_p,
            proportional,
            ratios: ratios_exact.iter().map(|r| r.to_f64().unwrap()).collect(),
            quartic_cross,
            d_p,
        });
    }

    // least squares for (c1, c2) on y_p = C_p - d against (1/p, 1/p^2)
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
    for rec in &per_prime {
        let x1 = 1.0 / rec.p as f64;
        let x2 = x1 * x1;
        let y = rec.c_p - d as f64;
        a11 += x1 * x1;
        a12 += x1 * x2;
        a22 += x2 * x2;
        b1 += x1 * y;
        b2 += x2 * y;
    }
    let det = a11 * a22 - a12 * a12;
    let (c1, c2) = if det.abs() > 1e-18 {
        ((b1 * a22 - b2 * a12) / det, (a11 * b2 - a12 * b1) / det)
    } else {
        (0.0, 0.0)
    };
    let mut fit = MomentFit { d, per_prime, c1, c2, fit_residual: 0.0 };
    fit.fit_residual = fit
        .per_prime
        .iter()
        .map(|r| (fit.predict_c(r.p) - r.c_p).abs())
        .fold(0.0, f64::max);
    Ok(fit)
}

/// Decomposition of `s - 2 pi j (0, 1/p, ..., (p-1)/p)` as
/// `2 pi z + c (1,...,1) + x` with `z` integral, `x` orthogonal to the
/// all-ones direction, and `(z, c)` chosen to minimize `|x|^2`.
///
/// Returns `(kappa_min, y, x)` where `kappa_min = |x|^2` and
/// `y = sqrt(p) c` is the component along `1/sqrt(p)`, reduced to
/// `[0, 2 sqrt(p) pi)`.
pub fn ball_decompose(s: &[f64], p: u64, j: u64) -> (f64, f64, Vec<f64>) {
    let pu = s.len();
    debug_assert_eq!(pu, p as usize);
    let u: Vec<f64> = s
        .iter()
        .enumerate()
        .map(|(i, &si)| si - TAU * j as f64 * i as f64 / p as f64)
        .collect();

    // F(c) = sum_i reduce(u_i - c)^2 is piecewise quadratic in c with
    // breakpoints at u_i - pi mod 2pi; on each arc the optimum is the mean
    // of the fixed-translate residuals, clamped to the arc.
    let mut breaks: Vec<f64> = u.iter().map(|&ui| (ui - PI).rem_euclid(TAU)).collect();
    breaks.push(0.0);
    breaks.push(TAU);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let eval = |c: f64| -> f64 {
        u.iter().map(|&ui| { let r = ui - c; let r = r - TAU * (r / TAU).round(); r * r }).sum()
    };
    let mut best_c = 0.0f64;
    let mut best_f = eval(0.0);
    let consider = |c: f64, best_c: &mut f64, best_f: &mut f64| {
        let f = eval(c);
        if f < *best_f {
            *best_f = f;
            *best_c = c;
        }
    };
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let mid = 0.5 * (lo + hi);
        // translate assignment valid on this arc
        let mean: f64 = u
            .iter()
            .map(|&ui| {
                let r = ui - mid;
                let r = r - TAU * (r / TAU).round();
                r + mid
            })
            .sum::<f64>()
            / pu as f64;
        consider(mean.clamp(lo, hi), &mut best_c, &mut best_f);
        consider(lo, &mut best_c, &mut best_f);
        consider(hi, &mut best_c, &mut best_f);
    }

    let c = best_c;
    let x: Vec<f64> = u
        .iter()
        .map(|&ui| {
            let r = ui - c;
            r - TAU * (r / TAU).round()
        })
        .collect();
    let mean_x: f64 = x.iter().sum::<f64>() / pu as f64;
    let x: Vec<f64> = x.iter().map(|&xi| xi - mean_x).collect();
    let kappa: f64 = x.iter().map(|&xi| xi * xi).sum();
    let y = ((c + mean_x) * (p as f64).sqrt()).rem_euclid(TAU * (p as f64).sqrt());
    (kappa, y, x)
}

/// `(kappa_min, y)` of the decomposition relative to the j-th generator;
/// `s` lies in `B_j(kappa)` iff `kappa_min <= kappa`.
pub fn distance_to_ball(s: &[f64], p: u64, j: u64) -> (f64, f64) {
    let (kappa, y, _) = ball_decompose(s, p, j);
    (kappa, y)
}

/// Smallest tube distance over all generators.
pub fn min_ball_distance(s: &[f64], p: u64) -> (f64, u64) {
    let mut best = (f64::INFINITY, 0u64);
    for j in 0..p {
        let (kappa, _, _) = ball_decompose(s, p, j);
        if kappa < best.0 {
            best = (kappa, j);
        }
    }
    best
}

/// Samples phases on the boundary sphere of `B_j(kappa)` (random generator
/// j, random shift along the free direction) and returns the largest
/// deficiency `1 - |phi_X|` divided by `kappa / p`.
pub fn forward_decay_check(
    dist: &StepDistribution,
    samples: usize,
    kappa: f64,
    rng: &mut SeededRng,
) -> f64 {
    let p = dist.p();
    let pu = p as usize;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let j = rng.random_range(0..p);
        // random direction in the hyperplane orthogonal to the ones vector
        let mut x: Vec<f64> = (0..pu).map(|_| standard_normal(rng)).collect();
        let mean = x.iter().sum::<f64>() / pu as f64;
        for xi in x.iter_mut() {
            *xi -= mean;
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        let scale = kappa.sqrt() / norm;
        let c: f64 = rng.random_range(0.0..TAU);
        let s: Vec<f64> = (0..pu)
            .map(|i| TAU * j as f64 * i as f64 / p as f64 + x[i] * scale + c)
            .collect();
        let deficiency = 1.0 - phi_x(dist, &s).unwrap().norm();
        worst = worst.max(deficiency / (kappa / p as f64));
    }
    worst
}

fn standard_normal(rng: &mut SeededRng) -> f64 {
    // Box-Muller; one draw per call keeps the stream layout simple.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// One converged ascent record.
#[derive(Debug, Clone)]
pub struct InverseCandidate {
    pub s: Vec<f64>,
    pub modulus: f64,
    /// `min_j kappa_min(s, j)`.
    pub kappa_min: f64,
    /// Near-extremal: `modulus >= 1 - alpha / p^2`.
    pub qualifying: bool,
    /// Qualifying find farther from every tube than `a_max / p`.
    pub counterexample: bool,
}

#[derive(Debug, Clone)]
pub struct InverseSearchReport {
    pub candidates: Vec<InverseCandidate>,
    pub qualifying: usize,
    pub counterexamples: usize,
    /// Empirical `max (min_j kappa) * p` over qualifying finds: a lower
    /// bound for the inverse-theorem constant A.
    pub empirical_a: Option<f64>,
}

/// Multi-start projected gradient ascent on `|phi_centered|`, hunting for
/// near-extremal phases far from the lattice tubes. A `min_kappa > 0`
/// constraint keeps iterates at tube distance at least `min_kappa`.
///
/// The absence of counterexamples (qualifying finds with
/// `kappa * p > a_max`) is the testable content of the inverse theorem.
pub fn inverse_search(
    dist: &StepDistribution,
    alpha: f64,
    restarts: usize,
    min_kappa: f64,
    a_max: f64,
    rng: &SeededRng,
) -> InverseSearchReport {
    assert!((0.0..1.0).contains(&alpha), "alpha in [0,1)");
    let p = dist.p();
    let pu = p as usize;
    let threshold = 1.0 - alpha / (p as f64 * p as f64);

    let mut candidates: Vec<InverseCandidate> = (0..restarts)
        .into_par_iter()
        .map(|restart| {
            let mut local = rng.stream(1_000_000 + restart as u64);
            let mut s: Vec<f64> = (0..pu).map(|_| local.random_range(0.0..TAU)).collect();
            let mut modulus = ascend(dist, &mut s, min_kappa);
            // polish: one more burst from the converged point
            modulus = modulus.max(ascend(dist, &mut s, min_kappa));
            let (kappa_min, _) = min_ball_distance(&s, p);
            let qualifying = modulus >= threshold;
            InverseCandidate {
                s,
                modulus,
                kappa_min,
                qualifying,
                counterexample: qualifying && kappa_min * p as f64 > a_max,
            }
        })
        .collect();
    candidates.sort_by(|a, b| b.modulus.total_cmp(&a.modulus));
    let qualifying = candidates.iter().filter(|c| c.qualifying).count();
    let counterexamples = candidates.iter().filter(|c| c.counterexample).count();
    let empirical_a = candidates
        .iter()
        .filter(|c| c.qualifying)
        .map(|c| c.kappa_min * p as f64)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    InverseSearchReport { candidates, qualifying, counterexamples, empirical_a }
}

/// Gradient ascent on `|phi|^2` projected onto the hyperplane orthogonal to
/// the ones direction (the modulus is invariant along it). Returns the
/// final modulus.
fn ascend(dist: &StepDistribution, s: &mut Vec<f64>, min_kappa: f64) -> f64 {
    let p = dist.p();
    let pu = p as usize;
    let total = dist.total() as f64;
    let support: Vec<(Vec<f64>, f64)> = dist
        .entries()
        .map(|(w, m)| (w.0.iter().map(|&x| x as f64).collect(), m as f64))
        .collect();

    let phi_and_grad = |s: &[f64]| -> (f64, Vec<f64>) {
        let mut phi = Complex64::new(0.0, 0.0);
        let mut a = vec![Complex64::new(0.0, 0.0); pu];
        for (w, m) in &support {
            let dot: f64 = s.iter().zip(w).map(|(si, wi)| si * wi).sum();
            let e = *m * Complex64::from_polar(1.0, dot);
            phi += e;
            for (aj, wj) in a.iter_mut().zip(w) {
                *aj += e * *wj;
            }
        }
        phi /= total;
        let mut grad: Vec<f64> = a
            .iter()
            .map(|aj| -2.0 * (phi.conj() * (aj / total)).im)
            .collect();
        let mean = grad.iter().sum::<f64>() / pu as f64;
        for g in grad.iter_mut() {
            *g -= mean;
        }
        (phi.norm_sqr(), grad)
    };

    let project_out = |s: &mut Vec<f64>| {
        if min_kappa <= 0.0 {
            return;
        }
        let (kappa, j) = min_ball_distance(s, p);
        if kappa >= min_kappa {
            return;
        }
        let (_, _, x) = ball_decompose(s, p, j);
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-18);
        let scale = (min_kappa.sqrt() - norm) / norm;
        for (si, xi) in s.iter_mut().zip(&x) {
            *si += xi * scale;
        }
    };

    project_out(s);
    let (mut f, mut grad) = phi_and_grad(s);
    for _ in 0..200 {
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm2 < 1e-26 {
            break;
        }
        let mut step = 0.5;
        let mut advanced = false;
        for _ in 0..40 {
            let mut trial: Vec<f64> = s.iter().zip(&grad).map(|(si, g)| si + step * g).collect();
            project_out(&mut trial);
            let (ft, gt) = phi_and_grad(&trial);
            if ft > f + 1e-12 * step * gnorm2 {
                *s = trial;
                f = ft;
                grad = gt;
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        if !advanced {
            break;
        }
    }
    f.sqrt()
}

/// Recovers the macroscopic linear phase: rounds `k_a = round(p s_a/2pi)`
/// and exhausts `d0 in [0, p)` minimizing the worst residual
/// `|| s_a/2pi - d0 a/p ||_{R/Z}`.
pub fn macro_recover(s: &[f64], p: u64, eta: f64) -> StructureReport {
    let pu = p as usize;
    assert_eq!(s.len(), pu, "phase vector length must be p");
    let frac: Vec<f64> = s.iter().map(|&si| {
        let f = (si / TAU).rem_euclid(1.0);
        if f >= 0.5 { f - 1.0 } else { f }
    }).collect();
    let k: Vec<i64> = frac.iter().map(|&f| (p as f64 * f).round() as i64).collect();

    let mut best_d0 = 0u64;
    let mut best_res = f64::INFINITY;
    for d0 in 0..p {
        let res = (0..pu)
            .map(|a| frac_dist(frac[a] - (d0 * a as u64) as f64 / p as f64))
            .fold(0.0, f64::max);
        if res < best_res {
            best_res = res;
            best_d0 = d0;
        }
    }
    let q = (p as f64 * (eta * eta * p as f64).sqrt()).ceil().max(0.0) as u64;
    StructureReport {
        d0: best_d0,
        k,
        x0: 0.0,
        q,
        eta,
        max_residual: best_res,
        triple_defect: 0.0,
    }
}

/// Full recovery pipeline: measures the deficiency of `s`, derives `eta`,
/// recovers `d0`, and evaluates the triple statistic on the macro-subtracted
/// residual with the alignment phase of `phi_X`. Returns the report and the
/// residual `l2` statistic `sum_a || r_a / 2pi ||^2`.
pub fn macro_recover_auto(
    dist: &StepDistribution,
    s: &[f64],
) -> Result<(StructureReport, f64)> {
    let p = dist.p();
    let phi = phi_x(dist, s)?;
    let eta = (1.0 - phi.norm()).max(0.0).sqrt();
    let mut report = macro_recover(s, p, eta);
    // subtract the recovered linear phase and normalize r_0 = 0
    let residual: Vec<f64> = (0..p as usize)
        .map(|a| s[a] - TAU * (report.d0 * a as u64) as f64 / p as f64)
        .collect();
    let r0 = residual[0];
    let residual: Vec<f64> = residual.iter().map(|r| r - r0).collect();
    let phi_r = phi_x(dist, &residual)?;
    report.x0 = -phi_r.arg();
    let (triple, l2) = micro_norm_stat(dist, &residual, report.x0)?;
    report.triple_defect = triple;
    Ok((report, l2))
}

/// Triple-sum defect and l2 statistic of a phase vector normalized to
/// `s_0 = 0`:
/// `sum over (a_1..a_{d-1}) of ||(s_{a_1}+...+s_{a_{d-1}}+s_{-sum}+x0)/2pi||^2`
/// and `sum_a || s_a/2pi ||^2`.
pub fn micro_norm_stat(
    dist: &StepDistribution,
    s: &[f64],
    x0: f64,
) -> Result<(f64, f64)> {
    dim_check(dist, s.len())?;
    let p = dist.p();
    let pu = p as usize;
    let d = dist.d();
    let tuples = (p as u64).pow(d as u32 - 1);
    let mut defect = 0.0f64;
    let mut idx_buf = vec![0u64; d as usize - 1];
    for mut idx in 0..tuples {
        let mut sum_phase = x0;
        let mut coord_sum = 0u64;
        for slot in idx_buf.iter_mut() {
            *slot = idx % p;
            idx /= p;
            sum_phase += s[*slot as usize];
            coord_sum += *slot;
        }
        let last = (p - coord_sum % p) % p;
        sum_phase += s[last as usize];
        defect += frac_dist(sum_phase / TAU).powi(2);
    }
    let l2: f64 = (0..pu).map(|a| frac_dist(s[a] / TAU).powi(2)).sum();
    Ok((defect, l2))
}
