//! Exact rational probabilities.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{BigUint, One, Signed, ToPrimitive, Zero};
use std::fmt;

/// An exact probability: a nonnegative rational in [0, 1], kept in lowest
/// terms by the underlying `BigRational`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ExactProb(BigRational);

impl ExactProb {
    /// Builds `numerator / denominator`, panicking if the value leaves [0, 1].
    pub fn new(numerator: BigUint, denominator: BigUint) -> Self {
        assert!(!denominator.is_zero(), "zero denominator");
        let r = BigRational::new(BigInt::from(numerator), BigInt::from(denominator));
        assert!(!r.is_negative() && r <= BigRational::one(), "probability {r} outside [0,1]");
        ExactProb(r)
    }

    pub fn zero() -> Self {
        ExactProb(BigRational::zero())
    }

    pub fn one() -> Self {
        ExactProb(BigRational::one())
    }

    pub fn from_ratio(r: BigRational) -> Self {
        assert!(!r.is_negative() && r <= BigRational::one(), "probability {r} outside [0,1]");
        ExactProb(r)
    }

    pub fn numerator(&self) -> BigUint {
        self.0.numer().magnitude().clone()
    }

    pub fn denominator(&self) -> BigUint {
        self.0.denom().magnitude().clone()
    }

    pub fn as_ratio(&self) -> &BigRational {
        &self.0
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
}

impl fmt::Display for ExactProb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::ops::Add for ExactProb {
    type Output = ExactProb;
    fn add(self, rhs: ExactProb) -> ExactProb {
        ExactProb::from_ratio(self.0 + rhs.0)
    }
}

impl std::iter::Sum for ExactProb {
    fn sum<I: Iterator<Item = ExactProb>>(iter: I) -> ExactProb {
        let mut acc = BigRational::zero();
        for x in iter {
            acc += x.0;
        }
        ExactProb::from_ratio(acc)
    }
}

/// Exact factorial as a big integer.
pub fn factorial(n: u64) -> BigUint {
    range_product(1, n)
}

/// Product of the integers in `[lo, hi]`, computed by splitting so the
/// factors stay balanced (naive left-to-right products are quadratic).
pub fn range_product(lo: u64, hi: u64) -> BigUint {
    if lo > hi {
        return BigUint::one();
    }
    if hi - lo < 8 {
        let mut acc = BigUint::one();
        for k in lo..=hi {
            acc *= k;
        }
        return acc;
    }
    let mid = lo + (hi - lo) / 2;
    range_product(lo, mid) * range_product(mid + 1, hi)
}

/// Multinomial coefficient `n! / (k_0! ... k_{m-1}!)`; the parts must sum to `n`.
pub fn multinomial(n: u64, parts: &[u64]) -> BigUint {
    assert_eq!(parts.iter().sum::<u64>(), n, "multinomial parts must sum to n");
    let mut num = factorial(n);
    for &k in parts {
        num /= factorial(k);
    }
    num
}

/// Natural log of a positive big integer, accurate to f64 precision.
pub fn ln_biguint(x: &BigUint) -> f64 {
    assert!(!x.is_zero(), "log of zero");
    let bits = x.bits();
    if bits <= 900 {
        // fits comfortably in f64; ln keeps full relative precision
        return x.to_f64().unwrap().ln();
    }
    // Use the top 64 bits as a mantissa and account for the shift.
    let shift = bits - 64;
    let top = (x >> shift).to_f64().unwrap();
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factorial_matches_naive() {
        let mut acc = BigUint::one();
        for n in 1..=30u64 {
            acc *= n;
            assert_eq!(factorial(n), acc);
        }
        assert_eq!(factorial(0), BigUint::one());
    }

    #[test]
    fn multinomial_small() {
        assert_eq!(multinomial(4, &[2, 1, 1]), BigUint::from(12u32));
        assert_eq!(multinomial(6, &[3, 3]), BigUint::from(20u32));
        assert_eq!(multinomial(5, &[5]), BigUint::one());
    }

    #[test]
    fn ln_biguint_agrees_with_lgamma_scale() {
        let f = factorial(1000);
        let ln_f = ln_biguint(&f);
        // Stirling with two correction terms is good to ~1e-9 here.
        let l = 1000f64;
        let stirling = 0.5 * (2.0 * std::f64::consts::PI * l).ln() + l * (l.ln() - 1.0)
            + 1.0 / (12.0 * l);
        assert!((ln_f - stirling).abs() < 1e-6, "{ln_f} vs {stirling}");
    }

    #[test]
    #[should_panic]
    fn rejects_probability_above_one() {
        ExactProb::new(BigUint::from(3u32), BigUint::from(2u32));
    }
}
