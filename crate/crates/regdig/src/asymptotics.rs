//! Stirling machinery, profile classification, the local-limit prediction,
//! and the large-deviation rate function with its exponential tilt.

use crate::charfn::MomentFit;
use crate::error::{Error, Result};
use crate::exact::{factorial, ln_biguint, multinomial};
use crate::params::ModelParams;
use crate::walk::{build_step_distribution, Profile, StepProfile, WalkTarget};
use num::bigint::BigInt;
use num::rational::BigRational;
use num::{BigUint, One, Signed, ToPrimitive, Zero};
use std::collections::HashMap;

/// Classification of a profile with `n_0 < n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseLabel {
    Equidistributed,
    N1,
    N2,
    N3,
    N4,
}

/// A non-equidistributed instance reduced to its active part: `m'` nonzero
/// residues, `m` active steps, `ell` nonzero parts, surplus `n0_prime`, and
/// the simplex weights of the active parts.
#[derive(Debug, Clone)]
pub struct DeviationInstance {
    pub m_prime: u64,
    pub m: u64,
    pub ell: usize,
    pub n0_prime: u64,
    pub frak_n: Vec<BigRational>,
}

impl DeviationInstance {
    pub fn new(
        m_prime: u64,
        m: u64,
        ell: usize,
        n0_prime: u64,
        frak_n: Vec<BigRational>,
    ) -> Result<Self> {
        if frak_n.len() != ell {
            return Err(Error::BadSimplex);
        }
        let sum: BigRational = frak_n.iter().fold(BigRational::zero(), |a, b| a + b);
        if !sum.is_one() || frak_n.iter().any(|x| x.is_negative()) {
            return Err(Error::BadSimplex);
        }
        Ok(DeviationInstance { m_prime, m, ell, n0_prime, frak_n })
    }

    /// Simplex point from floats (test convenience; rationalized over a
    /// common denominator).
    pub fn from_weights(m: u64, weights: &[BigRational]) -> Result<Self> {
        Self::new(m, m, weights.len(), 0, weights.to_vec())
    }
}

/// Inputs of the local-limit exponent: `t_j = d n_j / n - d / p`.
#[derive(Debug, Clone)]
pub struct LltInputs {
    pub t: Vec<f64>,
}

impl LltInputs {
    pub fn from_target(params: &ModelParams, target: &WalkTarget) -> Self {
        let n = params.n as f64;
        let mu = params.d as f64 / params.p as f64;
        LltInputs { t: target.0.iter().map(|&m| m as f64 / n - mu).collect() }
    }
}

/// Robbins' two-sided Stirling bounds as plain values; overflows to
/// infinity near `l ~ 170`, use [`robbins_log_bounds`] beyond.
pub fn robbins_bounds(l: u64) -> (f64, f64) {
    let (lo, hi) = robbins_log_bounds(l);
    (lo.exp(), hi.exp())
}

/// `log` of the Robbins bracket:
/// `sqrt(2 pi l) (l/e)^l e^{1/(12l+1)} < l! < sqrt(2 pi l) (l/e)^l e^{1/(12l)}`.
pub fn robbins_log_bounds(l: u64) -> (f64, f64) {
    assert!(l >= 1, "Robbins bounds need l >= 1");
    let lf = l as f64;
    let base = 0.5 * (2.0 * std::f64::consts::PI * lf).ln() + lf * (lf.ln() - 1.0);
    (base + 1.0 / (12.0 * lf + 1.0), base + 1.0 / (12.0 * lf))
}

/// Strict check that the Robbins bracket contains `l!`.
///
/// Near the upper bound the margin is `1/(360 l^3)` (about `3e-15` at
/// `l = 10^4`) while the quantities themselves are of size `l log l`, so
/// the comparison is done in double-double arithmetic on the exact
/// big-integer factorial.
pub fn robbins_brackets_factorial(l: u64, factorial_l: &num::BigUint) -> bool {
    use dd::Dd;
    let lf = Dd::from(l as f64);
    let ln_l = dd::ln(lf);
    let ln_2pi_l = dd::ln(dd::TWO_PI.mul(lf));
    // base = ln sqrt(2 pi l) + l (ln l - 1)
    let base = ln_2pi_l.mul_f64(0.5).add(lf.mul(ln_l.sub(Dd::from(1.0))));
    let lower = base.add(Dd::from(1.0).div(Dd::from((12 * l + 1) as f64)));
    let upper = base.add(Dd::from(1.0).div(Dd::from((12 * l) as f64)));
    let exact = dd::ln_biguint(factorial_l);
    dd::lt(lower, exact) && dd::lt(exact, upper)
}

/// Minimal double-double arithmetic: unevaluated sums `hi + lo` with about
/// 32 significant digits, enough to resolve the Robbins margins.
mod dd {
    use num::BigUint;
    use num::ToPrimitive;

    #[derive(Debug, Clone, Copy)]
    pub struct Dd {
        pub hi: f64,
        pub lo: f64,
    }

    pub const LN2: Dd = Dd { hi: 0.6931471805599453, lo: 2.3190468138462996e-17 };
    pub const TWO_PI: Dd = Dd { hi: 6.283185307179586, lo: 2.4492935982947064e-16 };

    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        (s, b - (s - a))
    }

    fn two_prod(a: f64, b: f64) -> (f64, f64) {
        let p = a * b;
        (p, a.mul_add(b, -p))
    }

    impl Dd {
        pub fn from(x: f64) -> Dd {
            Dd { hi: x, lo: 0.0 }
        }

        pub fn add(self, o: Dd) -> Dd {
            let (s, e) = two_sum(self.hi, o.hi);
            let e = e + self.lo + o.lo;
            let (hi, lo) = quick_two_sum(s, e);
            Dd { hi, lo }
        }

        pub fn sub(self, o: Dd) -> Dd {
            self.add(Dd { hi: -o.hi, lo: -o.lo })
        }

        pub fn mul(self, o: Dd) -> Dd {
            let (p, e) = two_prod(self.hi, o.hi);
            let e = e + self.hi * o.lo + self.lo * o.hi;
            let (hi, lo) = quick_two_sum(p, e);
            Dd { hi, lo }
        }

        pub fn mul_f64(self, b: f64) -> Dd {
            self.mul(Dd::from(b))
        }

        pub fn div(self, o: Dd) -> Dd {
            let q1 = self.hi / o.hi;
            let r = self.sub(o.mul_f64(q1));
            let q2 = r.hi / o.hi;
            let r2 = r.sub(o.mul_f64(q2));
            let q3 = r2.hi / o.hi;
            let (hi, lo) = quick_two_sum(q1, q2);
            let (hi, lo2) = quick_two_sum(hi, lo + q3);
            Dd { hi, lo: lo2 }
        }
    }

    pub fn lt(a: Dd, b: Dd) -> bool {
        a.hi < b.hi || (a.hi == b.hi && a.lo < b.lo)
    }

    /// `ln x` for positive x: reduce by the binary exponent, then the
    /// atanh series on `[1, 2)` where `|z| <= 1/3`.
    pub fn ln(x: Dd) -> Dd {
        assert!(x.hi > 0.0);
        let e = x.hi.log2().floor() as i32;
        let scale = 2f64.powi(-e);
        let m = Dd { hi: x.hi * scale, lo: x.lo * scale };
        ln_reduced(m).add(LN2.mul_f64(e as f64))
    }

    fn ln_reduced(x: Dd) -> Dd {
        // z = (x-1)/(x+1); ln x = 2 (z + z^3/3 + z^5/5 + ...)
        let z = x.sub(Dd::from(1.0)).div(x.add(Dd::from(1.0)));
        let z2 = z.mul(z);
        let mut term = z;
        let mut sum = z;
        let mut k = 1u32;
        loop {
            term = term.mul(z2);
            k += 2;
            let inc = term.div(Dd::from(k as f64));
            sum = sum.add(inc);
            if inc.hi.abs() < 1e-36 || k > 120 {
                break;
            }
        }
        sum.mul_f64(2.0)
    }

    /// `ln` of a positive big integer via its top 106 bits.
    pub fn ln_biguint(x: &BigUint) -> Dd {
        let bits = x.bits();
        if bits <= 106 {
            let top = x.to_u128().expect("fits in 106 bits");
            let hi = ((top >> 53) as f64) * 9007199254740992.0; // 2^53
            let lo = (top & ((1u128 << 53) - 1)) as f64;
            let (h, l) = two_sum(hi, lo);
            return ln(Dd { hi: h, lo: l });
        }
        let shift = bits - 106;
        let top = (x >> shift).to_u128().expect("106 bits");
        let hi = ((top >> 53) as f64) * 9007199254740992.0;
        let lo = (top & ((1u128 << 53) - 1)) as f64;
        let (h, l) = two_sum(hi, lo);
        ln(Dd { hi: h, lo: l }).add(LN2.mul_f64(shift as f64))
    }
}

/// Memo for exact `ln l!` values (big-integer factorial, log at the end).
#[derive(Default)]
pub struct LogFactorialCache {
    memo: HashMap<u64, f64>,
}

impl LogFactorialCache {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn ln_factorial(&mut self, l: u64) -> f64 {
        *self.memo.entry(l).or_insert_with(|| ln_biguint(&factorial(l)))
    }
}

fn check_profile(params: &ModelParams, profile: &Profile) -> Result<()> {
    if profile.n() != params.n || profile.p() != params.p as usize {
        return Err(Error::Invalid("profile does not match params".into()));
    }
    Ok(())
}

/// Exact log of the combinatorial weight
/// `multinomial(n; profile) p^((d-1)n) prod_j (d n_j)! / (dn)!`,
/// via big-integer factorials.
pub fn multinomial_weight_exact_cached(
    params: &ModelParams,
    profile: &Profile,
    cache: &mut LogFactorialCache,
) -> Result<f64> {
    check_profile(params, profile)?;
    if params.n > 1_000_000 {
        return Err(Error::TooLarge("exact weights guarded at n = 10^6".into()));
    }
    let (n, d, p) = (params.n, params.d, params.p);
    let mut log = cache.ln_factorial(n);
    for &nj in profile.counts() {
        log -= cache.ln_factorial(nj);
        log += cache.ln_factorial(d * nj);
    }
    log += (d - 1) as f64 * n as f64 * (p as f64).ln();
    log -= cache.ln_factorial(d * n);
    Ok(log)
}

pub fn multinomial_weight_exact(params: &ModelParams, profile: &Profile) -> Result<f64> {
    multinomial_weight_exact_cached(params, profile, &mut LogFactorialCache::new())
}

/// The same weight as an exact rational, for small `n`.
pub fn multinomial_weight_exact_rational(
    params: &ModelParams,
    profile: &Profile,
) -> Result<BigRational> {
    check_profile(params, profile)?;
    if params.n > 400 {
        return Err(Error::TooLarge("rational weights guarded at n = 400".into()));
    }
    let (n, d, p) = (params.n, params.d, params.p);
    let mut num = BigInt::from(multinomial(n, profile.counts()));
    num *= BigInt::from(BigUint::from(p).pow(((d - 1) * n) as u32));
    for &nj in profile.counts() {
        num *= BigInt::from(factorial(d * nj));
    }
    Ok(BigRational::new(num, BigInt::from(factorial(d * n))))
}

/// Log of the Stirling approximation of the weight, valid on
/// equidistributed profiles:
/// `d^((p-1)/2) exp( (d-1)pn/2 sum_j h_j^2 - (d-1)p^2 n/6 sum_j h_j^3 )`
/// with `h_j = n_j/n - 1/p`.
pub fn multinomial_weight_approx(params: &ModelParams, profile: &Profile) -> Result<f64> {
    if classify_profile(params, profile)? != CaseLabel::Equidistributed {
        return Err(Error::OutOfRegime("Stirling expansion needs an equidistributed profile".into()));
    }
    let (n, d, p) = (params.n as f64, params.d as f64, params.p as f64);
    let mut h2 = 0.0f64;
    let mut h3 = 0.0f64;
    for &nj in profile.counts() {
        let h = nj as f64 / n - 1.0 / p;
        h2 += h * h;
        h3 += h * h * h;
    }
    Ok((p - 1.0) / 2.0 * d.ln() + (d - 1.0) * p * n / 2.0 * h2
        - (d - 1.0) * p * p * n / 6.0 * h3)
}

/// Places a profile in the equidistributed main term or one of the four
/// deviation classes.
pub fn classify_profile(params: &ModelParams, profile: &Profile) -> Result<CaseLabel> {
    check_profile(params, profile)?;
    if profile.is_zero_profile() {
        return Err(Error::Excluded);
    }
    let (n, p) = (params.n as f64, params.p as f64);
    let log_n = n.ln();
    let mut sum_sq = 0.0f64;
    let mut max_abs = 0.0f64;
    for &nj in profile.counts() {
        let h = nj as f64 / n - 1.0 / p;
        sum_sq += h * h;
        max_abs = max_abs.max(h.abs());
    }
    if sum_sq <= params.b * log_n / n {
        return Ok(CaseLabel::Equidistributed);
    }
    let dev0 = (profile.counts()[0] as f64 / n - 1.0).abs();
    let fine = params.b * p * log_n / n;
    if max_abs <= params.delta / p {
        Ok(CaseLabel::N1)
    } else if fine < dev0 && dev0 <= params.delta / p {
        Ok(CaseLabel::N2)
    } else if dev0 < fine {
        Ok(CaseLabel::N3)
    } else {
        Ok(CaseLabel::N4)
    }
}

/// The local-limit exponent `-(np/2d) sum t^2 + C_p n p^2 / d^3 sum t^3`,
/// separated for wiring tests.
pub fn llt_exponent(params: &ModelParams, t: &[f64], c_p: f64) -> f64 {
    let (n, d, p) = (params.n as f64, params.d as f64, params.p as f64);
    let sum2: f64 = t.iter().map(|x| x * x).sum();
    let sum3: f64 = t.iter().map(|x| x * x * x).sum();
    -(n * p) / (2.0 * d) * sum2 + c_p * n * p * p / (d * d * d) * sum3
}

/// Pointwise local-limit prediction of `P(X_1 + ... + X_n = target)`:
/// `p^{3/2} (p / (2 pi d n))^{(p-1)/2} exp(llt_exponent)`.
pub fn llt_prediction_target(
    params: &ModelParams,
    target: &WalkTarget,
    fit: &MomentFit,
) -> Result<f64> {
    let (n, d, p) = (params.n as f64, params.d as f64, params.p as f64);
    if target.0.len() != params.p as usize {
        return Err(Error::Dim { expected: params.p as usize, got: target.0.len() });
    }
    if target.0.iter().sum::<u64>() != params.d * params.n {
        return Err(Error::OutOfRegime("target must sum to d*n".into()));
    }
    // the fractional profile target/d must be equidistributed
    let sum_sq: f64 = target
        .0
        .iter()
        .map(|&m| {
            let h = m as f64 / (d * n) - 1.0 / p;
            h * h
        })
        .sum();
    if sum_sq > params.b * n.ln() / n {
        return Err(Error::OutOfRegime("target outside the equidistributed band".into()));
    }
    let t = LltInputs::from_target(params, target);
    let c_p = fit.predict_c(params.p);
    let log = 1.5 * p.ln() + (p - 1.0) / 2.0 * (p / (2.0 * std::f64::consts::PI * d * n)).ln()
        + llt_exponent(params, &t.t, c_p);
    Ok(log.exp())
}

/// Prediction for an integral profile (target `d * profile`).
pub fn llt_prediction(params: &ModelParams, profile: &Profile, fit: &MomentFit) -> Result<f64> {
    check_profile(params, profile)?;
    llt_prediction_target(params, &profile.walk_target(params.d), fit)
}

// ---------------------------------------------------------------------------
// Rate function and tilt
// ---------------------------------------------------------------------------

fn simplex_check(frak_n: &[BigRational]) -> Result<()> {
    let sum: BigRational = frak_n.iter().fold(BigRational::zero(), |a, b| a + b);
    if !sum.is_one() || frak_n.iter().any(|x| x.is_negative()) {
        return Err(Error::BadSimplex);
    }
    Ok(())
}

/// Restricted step multiset over the alphabet `Z/ell` (zero-sum mod `ell`),
/// as (profile, multiplicity) pairs. Its cardinality is `ell^(d-1)`.
fn steps_mod_ell(d: u64, ell: usize) -> Vec<(Vec<u64>, u64)> {
    if ell == 1 {
        return vec![(vec![d], 1)];
    }
    build_step_distribution(d, ell as u64)
        .expect("small alphabet")
        .entries()
        .map(|(StepProfile(w), m)| (w.clone(), m))
        .collect()
}

/// Large-deviation rate of an active-part simplex point:
/// `I = log ell^(d-1) + (d-1) sum n_j log n_j + inf_t (log E e^<t,X> - d<t,n>)`
/// with `X` uniform on the zero-sum step multiset over `Z/ell` and
/// `0 log 0 = 0`. Returns negative infinity when the target `d n` falls
/// outside the convex hull of the reachable steps (certified by a recession
/// direction).
pub fn rate_function(inst: &DeviationInstance, d: u64) -> Result<f64> {
    simplex_check(&inst.frak_n)?;
    let ell = inst.ell;
    let weights: Vec<f64> = inst.frak_n.iter().map(|x| x.to_f64().unwrap()).collect();
    let log_u = (d as f64 - 1.0) * (ell as f64).ln();
    let entropy: f64 = weights
        .iter()
        .map(|&w| if w > 0.0 { w * w.ln() } else { 0.0 })
        .sum::<f64>()
        * (d as f64 - 1.0);

    // steps with support inside supp(n); coordinates restricted there
    let support: Vec<usize> = (0..ell).filter(|&j| weights[j] > 0.0).collect();
    let steps: Vec<(Vec<f64>, f64)> = steps_mod_ell(d, ell)
        .into_iter()
        .filter(|(w, _)| (0..ell).all(|j| w[j] == 0 || weights[j] > 0.0))
        .map(|(w, m)| (support.iter().map(|&j| w[j] as f64).collect(), m as f64))
        .collect();
    if steps.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    let y: Vec<f64> = support.iter().map(|&j| d as f64 * weights[j]).collect();
    let total = (ell as f64).powi(d as i32 - 1);

    match infimum_log_mgf(&steps, &y, total) {
        DualOutcome::Converged(inf) => Ok(log_u + entropy + inf),
        DualOutcome::Unbounded => Ok(f64::NEG_INFINITY),
        DualOutcome::Failed(msg) => Err(Error::NoConverge(msg)),
    }
}

enum DualOutcome {
    Converged(f64),
    Unbounded,
    Failed(String),
}

/// Damped Newton on the convex dual `f(t) = log sum mu_w e^<t,w> - <t,y>`.
/// `f` is invariant along the all-ones direction (every step sums to d and
/// `sum y = d`), so iterates are kept orthogonal to it.
fn infimum_log_mgf(steps: &[(Vec<f64>, f64)], y: &[f64], total: f64) -> DualOutcome {
    let dim = y.len();
    let project = |v: &mut [f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        for x in v.iter_mut() {
            *x -= mean;
        }
    };
    let eval = |t: &[f64]| -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        // log-sum-exp with max shift
        let dots: Vec<f64> = steps
            .iter()
            .map(|(w, _)| w.iter().zip(t).map(|(wi, ti)| wi * ti).sum())
            .collect();
        let max = dots.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let expw: Vec<f64> = steps
            .iter()
            .zip(&dots)
            .map(|((_, m), &dot)| m * (dot - max).exp())
            .collect();
        let z: f64 = expw.iter().sum();
        let f = max + (z / total).ln() - y.iter().zip(t).map(|(yi, ti)| yi * ti).sum::<f64>();
        let mut mean = vec![0.0; dim];
        for ((w, _), &e) in steps.iter().zip(&expw) {
            for (mj, wj) in mean.iter_mut().zip(w) {
                *mj += e * wj;
            }
        }
        for m in mean.iter_mut() {
            *m /= z;
        }
        let grad: Vec<f64> = mean.iter().zip(y).map(|(m, yi)| m - yi).collect();
        let mut hess = vec![vec![0.0; dim]; dim];
        for ((w, _), &e) in steps.iter().zip(&expw) {
            for i in 0..dim {
                for j in 0..dim {
                    hess[i][j] += e * (w[i] - mean[i]) * (w[j] - mean[j]);
                }
            }
        }
        for row in hess.iter_mut() {
            for h in row.iter_mut() {
                *h /= z;
            }
        }
        (f, grad, hess)
    };

    let mut t = vec![0.0; dim];
    let (mut f, mut grad, mut hess) = eval(&t);
    for _ in 0..300 {
        let mut g = grad.clone();
        project(&mut g);
        let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if gnorm <= 1e-12 {
            return DualOutcome::Converged(f);
        }
        // Levenberg-damped Newton step
        let mut lambda = 1e-10;
        let mut moved = false;
        for _ in 0..60 {
            let mut a = hess.clone();
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += lambda;
            }
            let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
            if let Some(mut delta) = solve_dense(a, rhs) {
                project(&mut delta);
                let trial: Vec<f64> = t.iter().zip(&delta).map(|(a, b)| a + b).collect();
                let (ft, gt, ht) = eval(&trial);
                if ft < f - 1e-18 {
                    t = trial;
                    f = ft;
                    grad = gt;
                    hess = ht;
                    moved = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !moved {
            // gradient fallback with backtracking
            let mut step = 1.0;
            for _ in 0..60 {
                let trial: Vec<f64> =
                    t.iter().zip(&g).map(|(a, b)| a - step * b).collect();
                let (ft, gt, ht) = eval(&trial);
                if ft < f - 1e-18 {
                    t = trial;
                    f = ft;
                    grad = gt;
                    hess = ht;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
        }
        if !moved {
            return DualOutcome::Converged(f); // stationary to machine precision
        }
        // divergence: certify a recession direction and declare -infinity
        let tnorm = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        if tnorm > 400.0 || f < -400.0 {
            let u: Vec<f64> = t.iter().map(|x| x / tnorm).collect();
            let max_w = steps
                .iter()
                .map(|(w, _)| w.iter().zip(&u).map(|(wi, ui)| wi * ui).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            let y_dot = y.iter().zip(&u).map(|(yi, ui)| yi * ui).sum::<f64>();
            if max_w < y_dot - 1e-9 {
                return DualOutcome::Unbounded;
            }
            return DualOutcome::Failed(format!(
                "iterates diverged without a certified recession direction (margin {})",
                y_dot - max_w
            ));
        }
    }
    DualOutcome::Failed("no convergence in 300 Newton iterations".into())
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in 0..n {
            if r != col {
                let factor = a[r][col] / a[col][col];
                for c in col..n {
                    a[r][c] -= factor * a[col][c];
                }
                b[r] -= factor * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Evaluates `E e^<t,X>` at the closed-form tilt
/// `t = ((d-1)/d)(log n_0, ..., log n_{l-1}) + (log |U| / d) 1`:
/// the value collapses to `sum over zero-sum x in (Z/ell)^d of
/// prod_r n_{x_r}^((d-1)/d)`, with `0^a = 0` dropping empty coordinates.
/// Always at most 1.
pub fn tilt_check(inst: &DeviationInstance, d: u64) -> Result<f64> {
    simplex_check(&inst.frak_n)?;
    let ell = inst.ell;
    let weights: Vec<f64> = inst.frak_n.iter().map(|x| x.to_f64().unwrap()).collect();
    let exponent = (d as f64 - 1.0) / d as f64;
    let mut value = 0.0f64;
    for (w, mult) in steps_mod_ell(d, ell) {
        let mut term = mult as f64;
        for j in 0..ell {
            if w[j] == 0 {
                continue;
            }
            if weights[j] == 0.0 {
                term = 0.0;
                break;
            }
            term *= weights[j].powf(exponent * w[j] as f64);
        }
        value += term;
    }
    Ok(value)
}

/// Exact value of
/// `multinomial(m; counts) multinomial(dm; d counts)^{-1} N`, where `N`
/// counts sequences from the alphabet-restricted step set
/// `U_{d; 0..ell-1} (mod p)` summing to `d * counts`, and
/// `counts_j = m * frak_n_j` must be integral.
pub fn dev_m_expression(inst: &DeviationInstance, d: u64, p: u64) -> Result<BigRational> {
    simplex_check(&inst.frak_n)?;
    let ell = inst.ell;
    if ell as u64 > p {
        return Err(Error::Invalid("alphabet cannot exceed the modulus".into()));
    }
    let m = inst.m;
    let counts: Vec<u64> = inst
        .frak_n
        .iter()
        .map(|x| {
            let c = x * BigRational::from_integer(BigInt::from(m));
            if c.is_integer() {
                Ok(c.to_integer().to_u64().expect("small count"))
            } else {
                Err(Error::Invalid("m * frak_n must be integral".into()))
            }
        })
        .collect::<Result<_>>()?;

    // steps: histograms of x in {0..ell-1}^d with sum = 0 mod p
    let mut steps: Vec<(Vec<u64>, u64)> = Vec::new();
    {
        let size = (ell as u64).checked_pow(d as u32).ok_or_else(|| {
            Error::TooLarge(format!("ell^d with ell={ell}, d={d}"))
        })?;
        if size > 10_000_000 {
            return Err(Error::TooLarge(format!("ell^d = {size}")));
        }
        let mut hist: HashMap<Vec<u64>, u64> = HashMap::new();
        let mut x = vec![0u64; d as usize];
        for mut idx in 0..size {
            let mut sum = 0u64;
            for slot in x.iter_mut() {
                *slot = idx % ell as u64;
                sum += *slot;
                idx /= ell as u64;
            }
            if sum % p != 0 {
                continue;
            }
            let mut h = vec![0u64; ell];
            for &xi in &x {
                h[xi as usize] += 1;
            }
            *hist.entry(h).or_insert(0) += 1;
        }
        steps.extend(hist);
        steps.sort();
    }

    // DP for the number of m-step sequences hitting d * counts
    let target: Vec<u64> = counts.iter().map(|&c| d * c).collect();
    let mut layer: HashMap<Vec<u64>, BigUint> = HashMap::new();
    layer.insert(vec![0u64; ell], BigUint::one());
    for _ in 0..m {
        let mut next: HashMap<Vec<u64>, BigUint> = HashMap::new();
        for (state, count) in &layer {
            'step: for (w, mult) in &steps {
                let mut s = state.clone();
                for j in 0..ell {
                    s[j] += w[j];
                    if s[j] > target[j] {
                        continue 'step;
                    }
                }
                *next.entry(s).or_insert_with(BigUint::zero) += count * *mult;
            }
        }
        layer = next;
        if layer.is_empty() {
            return Ok(BigRational::zero());
        }
    }
    let n_seq = layer.remove(&target).unwrap_or_else(BigUint::zero);

    let d_counts: Vec<u64> = counts.iter().map(|&c| d * c).collect();
    let value = BigRational::new(
        BigInt::from(multinomial(m, &counts)) * BigInt::from(n_seq),
        BigInt::from(multinomial(d * m, &d_counts)),
    );
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charfn::fit_moment_constants;
    use crate::params::make_params;
    use crate::rng::SeededRng;
    use crate::walk::walk_probability_exact;
    use rand::Rng;

    fn ratio(a: u64, b: u64) -> BigRational {
        BigRational::new(BigInt::from(a), BigInt::from(b))
    }

    #[test]
    fn robbins_bracket_small() {
        let (lo, hi) = robbins_bounds(1);
        assert!((lo - 0.99589).abs() < 1e-4, "{lo}");
        assert!((hi - 1.00227).abs() < 1e-4, "{hi}");
        assert!(lo < 1.0 && 1.0 < hi);
        let (lo, hi) = robbins_bounds(10);
        assert!(lo < 3628800.0 && 3628800.0 < hi);
    }

    #[test]
    fn robbins_bracket_logspace() {
        // the double-double comparison resolves the 1/(360 l^3) margin
        let mut acc = BigUint::one();
        for l in 1..=2000u64 {
            acc *= l;
            assert!(robbins_brackets_factorial(l, &acc), "bracket fails at l={l}");
        }
        // the f64 version still brackets while margins are resolvable
        let exact = ln_biguint(&factorial(100));
        let (lo, hi) = robbins_log_bounds(100);
        assert!(lo < exact && exact < hi);
    }

    #[test]
    fn exact_weight_small_case() {
        let params = make_params(2, 3, 3, 0.01).unwrap();
        let profile = Profile::new(vec![0, 1, 1]);
        let exact = multinomial_weight_exact_rational(&params, &profile).unwrap();
        assert_eq!(exact, BigRational::new(BigInt::from(81u32), BigInt::from(10u32)));
        let log = multinomial_weight_exact(&params, &profile).unwrap();
        assert!((log - 8.1f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_profile_weight_is_pure_power() {
        let params = make_params(4, 3, 3, 0.01).unwrap();
        let profile = Profile::new(vec![4, 0, 0]);
        let log = multinomial_weight_exact(&params, &profile).unwrap();
        let expect = (params.d - 1) as f64 * params.n as f64 * 3f64.ln();
        assert!((log - expect).abs() < 1e-9);
    }

    #[test]
    fn classify_examples() {
        let params = make_params(1_000_000, 3, 5, 0.01).unwrap();
        let uniform = Profile::new(vec![200_000; 5]);
        assert_eq!(classify_profile(&params, &uniform).unwrap(), CaseLabel::Equidistributed);

        let n3 = Profile::new(vec![999_997, 1, 1, 1, 0]);
        assert_eq!(classify_profile(&params, &n3).unwrap(), CaseLabel::N3);

        let zero = Profile::new(vec![1_000_000, 0, 0, 0, 0]);
        assert!(matches!(classify_profile(&params, &zero), Err(Error::Excluded)));
    }

    #[test]
    fn classify_partitions_everything() {
        let params = make_params(10_000, 3, 5, 0.01).unwrap();
        let mut rng = SeededRng::new(17, 0);
        for _ in 0..10_000 {
            // random composition, biased to stress all classes
            let mut counts = vec![0u64; 5];
            let style: u8 = rng.random_range(0..3);
            match style {
                0 => {
                    for _ in 0..params.n {
                        counts[rng.random_range(0..5usize)] += 1;
                    }
                }
                1 => {
                    let m: u64 = rng.random_range(0..200);
                    counts[0] = params.n - m;
                    for _ in 0..m {
                        counts[rng.random_range(1..5usize)] += 1;
                    }
                }
                _ => {
                    let heavy = rng.random_range(0..5usize);
                    let m: u64 = rng.random_range(0..=params.n);
                    counts[heavy] = params.n - m;
                    for _ in 0..m {
                        counts[rng.random_range(0..5usize)] += 1;
                    }
                }
            }
            if counts[0] == params.n {
                continue;
            }
            let profile = Profile::new(counts);
            classify_profile(&params, &profile).expect("every profile gets exactly one label");
        }
    }

    #[test]
    fn stirling_approx_matches_exact_at_scale() {
        let params = make_params(100_000, 3, 5, 0.01).unwrap();
        let mut rng = SeededRng::new(23, 0);
        let mut cache = LogFactorialCache::new();
        for _ in 0..5 {
            let mut counts = vec![0u64; 5];
            for _ in 0..params.n {
                counts[rng.random_range(0..5usize)] += 1;
            }
            let profile = Profile::new(counts);
            if classify_profile(&params, &profile).unwrap() != CaseLabel::Equidistributed {
                continue;
            }
            let exact = multinomial_weight_exact_cached(&params, &profile, &mut cache).unwrap();
            let approx = multinomial_weight_approx(&params, &profile).unwrap();
            let rel = (exact - approx).abs() / exact.abs().max(1.0);
            assert!(rel < 0.01, "relative error {rel}: exact {exact}, approx {approx}");
        }
        let zero = Profile::new(vec![params.n, 0, 0, 0, 0]);
        assert!(multinomial_weight_approx(&params, &zero).is_err());
    }

    #[test]
    fn llt_constant_at_uniform_target() {
        let params = make_params(500, 3, 3, 0.01).unwrap();
        let fit = fit_moment_constants(3, &[3, 5, 7]).unwrap();
        let target = WalkTarget(vec![500, 500, 500]);
        let pred = llt_prediction_target(&params, &target, &fit).unwrap();
        let expect = 3f64.powf(1.5) * (3.0 / (2.0 * std::f64::consts::PI * 3.0 * 500.0));
        assert!((pred - expect).abs() / expect < 1e-12);
    }

    #[test]
    fn llt_exponent_wiring() {
        let params = make_params(100, 3, 3, 0.01).unwrap();
        let t = vec![0.01, -0.02, 0.01];
        let t2: Vec<f64> = t.iter().map(|x| 2.0 * x).collect();
        let quad = llt_exponent(&params, &t, 0.0);
        let quad2 = llt_exponent(&params, &t2, 0.0);
        assert!((quad2 - 4.0 * quad).abs() < 1e-12, "pure quadratic term scales by 4");
    }

    #[test]
    fn llt_tracks_exact_probability_small_n() {
        // moderate n where the exact DP is cheap: ratio should be near 1
        let params = make_params(60, 3, 3, 0.01).unwrap();
        let fit = fit_moment_constants(3, &[3, 5, 7]).unwrap();
        let dist = build_step_distribution(3, 3).unwrap();
        let target = WalkTarget(vec![60, 60, 60]);
        let exact = walk_probability_exact(&dist, 60, &target).unwrap().to_f64();
        let pred = llt_prediction_target(&params, &target, &fit).unwrap();
        let ratio = pred / exact;
        assert!((0.8..1.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rate_function_equality_cases() {
        for d in [3u64, 4] {
            for ell in [2usize, 3, 5] {
                let uniform: Vec<BigRational> =
                    (0..ell).map(|_| ratio(1, ell as u64)).collect();
                let inst = DeviationInstance::from_weights(12, &uniform).unwrap();
                let i = rate_function(&inst, d).unwrap();
                assert!(i.abs() <= 1e-9, "uniform is an equality case: I = {i}");

                let mut degenerate = vec![BigRational::zero(); ell];
                degenerate[0] = BigRational::one();
                let inst = DeviationInstance::from_weights(12, &degenerate).unwrap();
                let i = rate_function(&inst, d).unwrap();
                assert!(i.abs() <= 1e-9, "degenerate is an equality case: I = {i}");
            }
        }
    }

    #[test]
    fn rate_function_golden_value() {
        // I((3/4, 1/4); ell=2, d=3): stationary point solves e^{4 tau} = 5,
        // giving I = log 4 + 2(0.75 log 0.75 + 0.25 log 0.25) + log 2 - 2.5 tau
        let inst =
            DeviationInstance::from_weights(4, &[ratio(3, 4), ratio(1, 4)]).unwrap();
        let i = rate_function(&inst, 3).unwrap();
        let golden = -0.051127442829093;
        assert!((i - golden).abs() < 1e-9, "I = {i}");
        assert!(i < -1e-4);
    }

    #[test]
    fn rate_function_never_positive_on_random_simplex() {
        let mut rng = SeededRng::new(29, 0);
        for d in [3u64, 4] {
            for ell in [2usize, 3, 5] {
                for _ in 0..60 {
                    let raw: Vec<u64> = (0..ell).map(|_| rng.random_range(0..40u64)).collect();
                    let total: u64 = raw.iter().sum();
                    if total == 0 {
                        continue;
                    }
                    let weights: Vec<BigRational> =
                        raw.iter().map(|&r| ratio(r, total)).collect();
                    let inst = DeviationInstance::from_weights(total, &weights).unwrap();
                    let i = rate_function(&inst, d).unwrap();
                    assert!(i <= 1e-12, "I = {i} at d={d}, ell={ell}, raw={raw:?}");
                }
            }
        }
    }

    #[test]
    fn rate_function_rejects_bad_simplex() {
        let inst = DeviationInstance {
            m_prime: 1,
            m: 1,
            ell: 2,
            n0_prime: 0,
            frak_n: vec![ratio(1, 2), ratio(1, 3)],
        };
        assert!(matches!(rate_function(&inst, 3), Err(Error::BadSimplex)));
    }

    #[test]
    fn tilt_examples() {
        let uniform =
            DeviationInstance::from_weights(6, &vec![ratio(1, 3); 3]).unwrap();
        let v = tilt_check(&uniform, 3).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "uniform tilt = {v}");

        let skew =
            DeviationInstance::from_weights(10, &[ratio(9, 10), ratio(1, 10)]).unwrap();
        let v = tilt_check(&skew, 3).unwrap();
        assert!(v <= 1.0 + 1e-12, "tilt value {v}");

        let mut degenerate = vec![BigRational::zero(); 4];
        degenerate[0] = BigRational::one();
        let inst = DeviationInstance::from_weights(4, &degenerate).unwrap();
        let v = tilt_check(&inst, 3).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "degenerate tilt = {v}");
    }

    #[test]
    fn tilt_bounds_rate_function() {
        let mut rng = SeededRng::new(31, 0);
        for _ in 0..40 {
            let raw: Vec<u64> = (0..3).map(|_| rng.random_range(1..30u64)).collect();
            let total: u64 = raw.iter().sum();
            let weights: Vec<BigRational> = raw.iter().map(|&r| ratio(r, total)).collect();
            let inst = DeviationInstance::from_weights(total, &weights).unwrap();
            let i = rate_function(&inst, 3).unwrap();
            let tilt = tilt_check(&inst, 3).unwrap();
            // the closed-form tilt upper-bounds the infimum
            assert!(i <= tilt.ln() + 1e-9, "I = {i}, log tilt = {}", tilt.ln());
        }
    }

    #[test]
    fn dev_m_small_cases() {
        let single = DeviationInstance::from_weights(1, &[BigRational::one()]).unwrap();
        let v = dev_m_expression(&single, 3, 5).unwrap();
        assert_eq!(v, BigRational::one());

        // m=2, ell=2, d=3, counts=(1,1) over p=3
        let inst =
            DeviationInstance::from_weights(2, &[ratio(1, 2), ratio(1, 2)]).unwrap();
        let v = dev_m_expression(&inst, 3, 3).unwrap();
        assert_eq!(v, BigRational::new(BigInt::from(1), BigInt::from(5)));
    }

    #[test]
    fn dev_m_sweep_bounded_by_exp_ell() {
        let mut max_log_per_ell = 0.0f64;
        for ell in [2usize, 3] {
            for m in 2..=8u64 {
                for k in 0..=m {
                    if ell == 2 {
                        let weights = vec![ratio(k, m), ratio(m - k, m)];
                        let inst = DeviationInstance::from_weights(m, &weights).unwrap();
                        let v = dev_m_expression(&inst, 3, ell as u64).unwrap();
                        if !v.is_zero() {
                            let log = v.to_f64().unwrap().ln();
                            max_log_per_ell = max_log_per_ell.max(log / ell as f64);
                        }
                    }
                }
            }
        }
        assert!(max_log_per_ell < 3.0, "log(value)/ell stays bounded: {max_log_per_ell}");
    }
}
