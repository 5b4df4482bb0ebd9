//! Model parameters shared by every experiment.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Parameters of one model instance: `n` vertices, degree `d`, working
/// prime `p`, the exponent slack `eps`, the equidistribution constant `b`,
/// and the concentration radius `delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: u64,
    pub d: u64,
    pub p: u64,
    pub eps: f64,
    pub b: f64,
    pub delta: f64,
}

/// Default equidistribution constant. The theory only needs it
/// "sufficiently large"; 10 keeps the equidistributed set wide at the
/// scales this crate can enumerate.
pub const DEFAULT_B: f64 = 10.0;

/// Builds a parameter record, computing `delta = p^-(1+3 eps)`.
pub fn make_params(n: u64, d: u64, p: u64, eps: f64) -> Result<ModelParams> {
    if !is_prime(p) {
        return Err(Error::NotPrime(p));
    }
    if !(eps > 0.0 && eps < 0.1) {
        return Err(Error::BadEps(eps));
    }
    if n == 0 || d < 2 {
        return Err(Error::Invalid(format!("need n >= 1 and d >= 2, got n={n}, d={d}")));
    }
    let delta = (p as f64).powf(-(1.0 + 3.0 * eps));
    Ok(ModelParams { n, d, p, eps, b: DEFAULT_B, delta })
}

impl ModelParams {
    /// Same record with a different equidistribution constant.
    pub fn with_b(mut self, b: f64) -> Self {
        self.b = b;
        self
    }
}

/// Deterministic Miller-Rabin primality test, exact for all u64.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for q in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n == q {
            return true;
        }
        if n % q == 0 {
            return false;
        }
    }
    let mut d = n - 1;
    let mut s = 0u32;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    // These witnesses decide primality for every n < 2^64.
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = pow_mod(a % n, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

pub(crate) fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

pub(crate) fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1u64 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_formula() {
        let p = make_params(1000, 3, 5, 0.01).unwrap();
        assert!((p.delta - 5f64.powf(-1.03)).abs() < 1e-15);
        assert!((p.delta - 0.1907).abs() < 5e-4);

        let p = make_params(10, 3, 2, 0.01).unwrap();
        assert!((p.delta - 0.4898).abs() < 5e-4);
        assert_eq!(p.b, 10.0);
    }

    #[test]
    fn rejects_composite_p() {
        assert!(matches!(make_params(10, 3, 4, 0.01), Err(Error::NotPrime(4))));
        assert!(matches!(make_params(10, 3, 1, 0.01), Err(Error::NotPrime(1))));
    }

    #[test]
    fn rejects_bad_eps() {
        assert!(matches!(make_params(10, 3, 5, 0.0), Err(Error::BadEps(_))));
        assert!(matches!(make_params(10, 3, 5, 0.1), Err(Error::BadEps(_))));
        assert!(matches!(make_params(10, 3, 5, -0.5), Err(Error::BadEps(_))));
    }

    #[test]
    fn primality_small_and_carmichael() {
        let primes: Vec<u64> = (0..60).filter(|&x| is_prime(x)).collect();
        assert_eq!(primes, vec![2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59]);
        // Carmichael numbers and large composites must fail.
        for c in [561u64, 1105, 1729, 2465, 2821, 6601, 3215031751] {
            assert!(!is_prime(c), "{c} wrongly reported prime");
        }
        assert!(is_prime((1u64 << 31) - 1));
        assert!(is_prime(1_000_000_007));
    }
}
