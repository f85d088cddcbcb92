//! Coefficient ring for series coefficients: Laurent polynomials in the
//! scalar multiplier lambda over the base scalars, times abstract symbols
//! psi_n^(k). The symbol psi_n stands for the n-th mu-antiderivative of the
//! equilibrium potential and psi_n^(k) for its k-th lambda-derivative; the
//! two derivations act by index shifts:
//!
//!   d/dmu:     (n, k) -> (n-1, k)        (extended to negative n)
//!   d/dlambda: (n, k) -> (n, k+1)
//!
//! Products of two psi symbols never occur in this hierarchy's algebra and
//! are rejected, which catches term-assembly bugs early.

use crate::scalar::Scalar;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RingError {
    #[error("product of two psi-carrying elements is outside the ring")]
    PsiProduct,
    #[error("evaluation at lambda = 0 with a negative lambda exponent")]
    Pole,
}

/// The symbol psi_n^(k): antiderivative level n (may be negative), k-th
/// lambda-derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PsiSymbol {
    pub n: i32,
    pub k: u32,
}

type MonomialKey = (i32, Option<PsiSymbol>);

/// Element of the ring: sum of coeff * lambda^e * [psi_n^(k)] monomials.
/// Zero-coefficient monomials are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaScalar<T> {
    monomials: BTreeMap<MonomialKey, T>,
}

impl<T: Scalar> Default for LambdaScalar<T> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<T: Scalar> LambdaScalar<T> {
    pub fn zero() -> Self {
        LambdaScalar {
            monomials: BTreeMap::new(),
        }
    }

    pub fn constant(c: T) -> Self {
        let mut x = Self::zero();
        x.add_monomial(0, None, c);
        x
    }

    pub fn one() -> Self {
        Self::constant(T::one())
    }

    /// c * lambda^e
    pub fn lambda_pow(c: T, e: i32) -> Self {
        let mut x = Self::zero();
        x.add_monomial(e, None, c);
        x
    }

    /// psi_n (k = 0), unit coefficient.
    pub fn psi(n: i32) -> Self {
        let mut x = Self::zero();
        x.add_monomial(0, Some(PsiSymbol { n, k: 0 }), T::one());
        x
    }

    /// c * lambda^e * psi_n^(k)
    pub fn monomial(c: T, e: i32, psi: Option<PsiSymbol>) -> Self {
        let mut x = Self::zero();
        x.add_monomial(e, psi, c);
        x
    }

    pub fn add_monomial(&mut self, e: i32, psi: Option<PsiSymbol>, c: T) {
        if c.is_zero() {
            return;
        }
        let key = (e, psi);
        let cur = self.monomials.remove(&key).unwrap_or_else(T::zero);
        let s = cur + c;
        if !s.is_zero() {
            self.monomials.insert(key, s);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn has_psi(&self) -> bool {
        self.monomials.keys().any(|(_, p)| p.is_some())
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, Option<PsiSymbol>, &T)> {
        self.monomials.iter().map(|(&(e, p), c)| (e, p, c))
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (e, p, c) in other.iter() {
            out.add_monomial(e, p, c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        let mut out = Self::zero();
        for (e, p, c) in self.iter() {
            out.add_monomial(e, p, -c.clone());
        }
        out
    }

    pub fn scale(&self, c: &T) -> Self {
        let mut out = Self::zero();
        for (e, p, v) in self.iter() {
            out.add_monomial(e, p, v.clone() * c.clone());
        }
        out
    }

    /// Ring product. Fails if both factors carry psi symbols in any monomial
    /// pair that would multiply.
    pub fn checked_mul(&self, other: &Self) -> Result<Self, RingError> {
        let mut out = Self::zero();
        for (e1, p1, c1) in self.iter() {
            for (e2, p2, c2) in other.iter() {
                let psi = match (p1, p2) {
                    (Some(_), Some(_)) => return Err(RingError::PsiProduct),
                    (Some(p), None) | (None, Some(p)) => Some(p),
                    (None, None) => None,
                };
                out.add_monomial(e1 + e2, psi, c1.clone() * c2.clone());
            }
        }
        Ok(out)
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.checked_mul(other)
            .expect("psi * psi product rejected by the coefficient ring")
    }

    /// Derivation in lambda: product rule over lambda^e and psi^(k).
    pub fn d_lambda(&self) -> Self {
        let mut out = Self::zero();
        for (e, p, c) in self.iter() {
            if e != 0 {
                out.add_monomial(e - 1, p, c.clone() * T::from_int(e as i64));
            }
            if let Some(ps) = p {
                out.add_monomial(
                    e,
                    Some(PsiSymbol {
                        n: ps.n,
                        k: ps.k + 1,
                    }),
                    c.clone(),
                );
            }
        }
        out
    }

    /// Derivation in mu: shifts psi_n to psi_{n-1}, kills pure lambda
    /// monomials.
    pub fn d_mu(&self) -> Self {
        let mut out = Self::zero();
        for (e, p, c) in self.iter() {
            if let Some(ps) = p {
                out.add_monomial(
                    e,
                    Some(PsiSymbol {
                        n: ps.n - 1,
                        k: ps.k,
                    }),
                    c.clone(),
                );
            }
        }
        out
    }

    /// Numeric value at (mu, lambda) under a psi realization.
    pub fn eval(&self, mu: &T, lam: &T, real: &dyn PsiRealization<T>) -> Result<T, RingError> {
        let mut acc = T::zero();
        for (e, p, c) in self.iter() {
            if e < 0 && lam.is_zero() {
                return Err(RingError::Pole);
            }
            let mut val = c.clone();
            if e >= 0 {
                for _ in 0..e {
                    val = val * lam.clone();
                }
            } else {
                for _ in 0..(-e) {
                    val = val / lam.clone();
                }
            }
            if let Some(ps) = p {
                val = val * real.psi(ps.n, ps.k, mu, lam);
            }
            acc = acc + val;
        }
        Ok(acc)
    }
}

/// Concrete family for the abstract psi symbols. The only requirement is the
/// antiderivative chain: the mu-derivative of psi(n, k) is psi(n-1, k), at
/// every lambda-derivative order k.
pub trait PsiRealization<T> {
    fn psi(&self, n: i32, k: u32, mu: &T, lam: &T) -> T;
}

/// psi_n(mu, lambda) = e^mu * lambda, for every integer n. Closed under both
/// derivations; float modes only.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpFamily;

impl PsiRealization<f64> for ExpFamily {
    fn psi(&self, _n: i32, k: u32, mu: &f64, lam: &f64) -> f64 {
        let g = match k {
            0 => *lam,
            1 => 1.0,
            _ => 0.0,
        };
        mu.exp() * g
    }
}

impl PsiRealization<f32> for ExpFamily {
    fn psi(&self, _n: i32, k: u32, mu: &f32, lam: &f32) -> f32 {
        let g = match k {
            0 => *lam,
            1 => 1.0,
            _ => 0.0,
        };
        mu.exp() * g
    }
}

/// psi_n(mu, lambda) = e^(mu + c*lambda). All lambda-derivative orders are
/// nonzero, which exercises coefficient terms the linear-in-lambda family
/// cannot see.
#[derive(Debug, Clone, Copy)]
pub struct ExpExpFamily {
    pub c: f64,
}

impl PsiRealization<f64> for ExpExpFamily {
    fn psi(&self, _n: i32, k: u32, mu: &f64, lam: &f64) -> f64 {
        self.c.powi(k as i32) * (mu + self.c * lam).exp()
    }
}

/// psi_n(mu, lambda) = mu^(n+2)/(n+2)! * lambda, with 1/m! = 0 for m < 0.
/// Rational-valued at rational points, so identities can be checked exactly.
#[derive(Debug, Clone, Copy, Default)]
pub struct PolyFamily;

impl<T: Scalar> PsiRealization<T> for PolyFamily {
    fn psi(&self, n: i32, k: u32, mu: &T, lam: &T) -> T {
        let g = match k {
            0 => lam.clone(),
            1 => T::one(),
            _ => return T::zero(),
        };
        let m = n + 2;
        if m < 0 {
            return T::zero();
        }
        let mut val = g;
        for j in 1..=m {
            val = val * mu.clone() / T::from_int(j as i64);
        }
        val
    }
}
