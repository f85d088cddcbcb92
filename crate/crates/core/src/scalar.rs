//! Scalar abstraction: the tensor and series machinery is generic over the
//! component type, so the same code runs in exact rational mode and in
//! floating-point mode.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};
use std::fmt::Debug;
use std::str::FromStr;

/// Mode tag carried through serialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarMode {
    Rational,
    Float,
}

impl ScalarMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScalarMode::Rational => "rational",
            ScalarMode::Float => "float",
        }
    }
}

/// Component type for tensors, series coefficients and matrices.
///
/// `BigRational` gives exact arithmetic; `f64`/`f32` give the floating mode
/// used for evaluation-heavy verification.
pub trait Scalar:
    Num + Signed + Clone + Debug + PartialOrd + FromPrimitive + ToPrimitive + 'static
{
    const MODE: ScalarMode;

    fn from_int(n: i64) -> Self {
        Self::from_i64(n).expect("integer out of range for scalar type")
    }

    fn from_ratio(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        Self::from_int(num) / Self::from_int(den)
    }

    /// Lossy view used for residual norms and reports.
    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Numerator/denominator rendering for the JSON formats (decimal strings).
    fn to_num_den(&self) -> (String, String);

    fn from_num_den(num: &str, den: &str) -> Option<Self>;

    /// Parse from a standalone string, accepting `a`, `a/b` and (in float
    /// mode) plain decimal notation.
    fn parse_str(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            Self::from_num_den(n.trim(), d.trim())
        } else {
            Self::from_num_den(s, "1")
        }
    }
}

impl Scalar for BigRational {
    const MODE: ScalarMode = ScalarMode::Rational;

    fn to_num_den(&self) -> (String, String) {
        (self.numer().to_string(), self.denom().to_string())
    }

    fn from_num_den(num: &str, den: &str) -> Option<Self> {
        let n = BigInt::from_str(num).ok()?;
        let d = BigInt::from_str(den).ok()?;
        if d == BigInt::from(0) {
            return None;
        }
        Some(BigRational::new(n, d))
    }
}

impl Scalar for f64 {
    const MODE: ScalarMode = ScalarMode::Float;

    fn to_num_den(&self) -> (String, String) {
        (format!("{self:?}"), "1".to_string())
    }

    fn from_num_den(num: &str, den: &str) -> Option<Self> {
        let n = f64::from_str(num).ok()?;
        let d = f64::from_str(den).ok()?;
        if d == 0.0 {
            return None;
        }
        Some(n / d)
    }
}

impl Scalar for f32 {
    const MODE: ScalarMode = ScalarMode::Float;

    fn to_num_den(&self) -> (String, String) {
        (format!("{self:?}"), "1".to_string())
    }

    fn from_num_den(num: &str, den: &str) -> Option<Self> {
        let n = f32::from_str(num).ok()?;
        let d = f32::from_str(den).ok()?;
        if d == 0.0 {
            return None;
        }
        Some(n / d)
    }
}

/// n! as a scalar. Panics if n! overflows u64 (n > 20), which is far beyond
/// any truncation order this engine handles.
pub fn factorial<T: Scalar>(n: usize) -> T {
    let mut acc: u64 = 1;
    for k in 2..=n as u64 {
        acc = acc.checked_mul(k).expect("factorial overflow");
    }
    T::from_u64(acc).expect("factorial out of range")
}

/// Odd double factorial 1*3*...*m for odd m, with (-1)!! = 1.
pub fn double_factorial_odd<T: Scalar>(m: i64) -> T {
    assert!(m >= -1 && m % 2 != 0, "double factorial wants odd m >= -1");
    let mut acc: u64 = 1;
    let mut k: i64 = 1;
    while k <= m {
        acc = acc
            .checked_mul(k as u64)
            .expect("double factorial overflow");
        k += 2;
    }
    T::from_u64(acc).expect("double factorial out of range")
}

pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc
}

/// Number of distinct rearrangements of a sorted multiset over {1,2,3}.
pub fn multiset_perms(sorted: &[u8]) -> u64 {
    let mut counts = [0u64; 4];
    for &v in sorted {
        counts[v as usize] += 1;
    }
    let mut acc: u64 = 1;
    for k in 2..=sorted.len() as u64 {
        acc = acc.checked_mul(k).expect("multiset perm overflow");
    }
    for c in counts.iter().skip(1) {
        for k in 2..=*c {
            acc /= k;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_round_trip() {
        let x = BigRational::from_ratio(-22, 7);
        let (n, d) = x.to_num_den();
        assert_eq!((n.as_str(), d.as_str()), ("-22", "7"));
        assert_eq!(BigRational::from_num_den(&n, &d).unwrap(), x);
        assert_eq!(BigRational::parse_str("-22/7").unwrap(), x);
    }

    #[test]
    fn factorials() {
        assert_eq!(factorial::<f64>(0), 1.0);
        assert_eq!(factorial::<f64>(5), 120.0);
        assert_eq!(double_factorial_odd::<f64>(-1), 1.0);
        assert_eq!(double_factorial_odd::<f64>(1), 1.0);
        assert_eq!(double_factorial_odd::<f64>(7), 105.0);
        assert_eq!(binomial(6, 2), 15);
    }

    #[test]
    fn multiset_perm_counts() {
        assert_eq!(multiset_perms(&[]), 1);
        assert_eq!(multiset_perms(&[1, 2, 3]), 6);
        assert_eq!(multiset_perms(&[1, 1, 2, 2]), 6);
        assert_eq!(multiset_perms(&[2, 2, 2]), 1);
    }
}
