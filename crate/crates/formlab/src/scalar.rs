//! Coefficient fields for the exterior algebra.
//!
//! Form arithmetic is generic over [`Coeff`]. Exact modes use
//! [`num::BigRational`] or [`LaurentHalf`] (half-integer powers of a single
//! conformal generator); numeric modes use `f64` / `Complex64`; symbolic
//! assembly uses [`crate::expr::Expr`].

use num::{BigInt, BigRational, One, Signed, Zero};
use num_complex::Complex64;
use std::collections::BTreeMap;
use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalarError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("square root not representable in this coefficient field: {0}")]
    SqrtNotRepresentable(String),
    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),
}

/// Coefficient ring with the handful of extras the Hodge machinery needs:
/// exact construction from integer ratios, division, and a square root that
/// is allowed to fail when the result leaves the field.
pub trait Coeff:
    Clone
    + PartialEq
    + Debug
    + Zero
    + One
    + Neg<Output = Self>
    + Sub<Output = Self>
{
    fn from_ratio(num: i64, den: i64) -> Self;

    fn from_int(v: i64) -> Self {
        Self::from_ratio(v, 1)
    }

    fn try_div(&self, rhs: &Self) -> Result<Self, ScalarError>;

    fn try_sqrt(&self) -> Result<Self, ScalarError>;
}

fn perfect_sqrt(v: &BigInt) -> Option<BigInt> {
    if v.is_negative() {
        return None;
    }
    let r = v.sqrt();
    if &(&r * &r) == v {
        Some(r)
    } else {
        None
    }
}

impl Coeff for BigRational {
    fn from_ratio(num: i64, den: i64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn try_div(&self, rhs: &Self) -> Result<Self, ScalarError> {
        if rhs.is_zero() {
            return Err(ScalarError::DivisionByZero);
        }
        Ok(self / rhs)
    }

    fn try_sqrt(&self) -> Result<Self, ScalarError> {
        let num = perfect_sqrt(self.numer());
        let den = perfect_sqrt(self.denom());
        match (num, den) {
            (Some(n), Some(d)) => Ok(BigRational::new(n, d)),
            _ => Err(ScalarError::SqrtNotRepresentable(self.to_string())),
        }
    }
}

impl Coeff for f64 {
    fn from_ratio(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }

    fn try_div(&self, rhs: &Self) -> Result<Self, ScalarError> {
        if *rhs == 0.0 {
            return Err(ScalarError::DivisionByZero);
        }
        Ok(self / rhs)
    }

    fn try_sqrt(&self) -> Result<Self, ScalarError> {
        if *self < 0.0 {
            return Err(ScalarError::SqrtNotRepresentable(self.to_string()));
        }
        Ok(self.sqrt())
    }
}

impl Coeff for Complex64 {
    fn from_ratio(num: i64, den: i64) -> Self {
        Complex64::new(num as f64 / den as f64, 0.0)
    }

    fn try_div(&self, rhs: &Self) -> Result<Self, ScalarError> {
        if rhs.norm_sqr() == 0.0 {
            return Err(ScalarError::DivisionByZero);
        }
        Ok(self / rhs)
    }

    fn try_sqrt(&self) -> Result<Self, ScalarError> {
        Ok(self.sqrt())
    }
}

/// Exact Laurent ring in half-integer powers of a single generator.
///
/// Elements are finite sums `sum_q a_q t^(q/2)` with rational `a_q`, keyed by
/// the exponent doubled so it stays integral. With `t = 1 + lambda x_n^l`
/// this is exactly the ring the conformal-family Hodge star lives in, and the
/// k-dependent power laws can be read off as exact exponents.
#[derive(Clone, PartialEq, Debug, Default)]
pub struct LaurentHalf {
    /// doubled exponent -> coefficient
    terms: BTreeMap<i64, BigRational>,
}

impl LaurentHalf {
    pub fn constant(c: BigRational) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(0, c);
        }
        LaurentHalf { terms }
    }

    /// `t^(half_exp/2)` with unit coefficient.
    pub fn gen_pow(half_exp: i64) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(half_exp, BigRational::one());
        LaurentHalf { terms }
    }

    /// If the element is a single monomial, its doubled exponent and coefficient.
    pub fn monomial(&self) -> Option<(i64, &BigRational)> {
        if self.terms.len() == 1 {
            self.terms.iter().next().map(|(e, c)| (*e, c))
        } else {
            None
        }
    }

    fn normalized(mut self) -> Self {
        self.terms.retain(|_, c| !c.is_zero());
        self
    }
}

impl Add for LaurentHalf {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut terms = self.terms;
        for (e, c) in rhs.terms {
            let entry = terms.entry(e).or_insert_with(BigRational::zero);
            *entry += c;
        }
        LaurentHalf { terms }.normalized()
    }
}

impl Sub for LaurentHalf {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl Neg for LaurentHalf {
    type Output = Self;
    fn neg(self) -> Self {
        LaurentHalf {
            terms: self.terms.into_iter().map(|(e, c)| (e, -c)).collect(),
        }
    }
}

impl Mul for LaurentHalf {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut terms: BTreeMap<i64, BigRational> = BTreeMap::new();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &rhs.terms {
                let entry = terms.entry(ea + eb).or_insert_with(BigRational::zero);
                *entry += ca * cb;
            }
        }
        LaurentHalf { terms }.normalized()
    }
}

impl Zero for LaurentHalf {
    fn zero() -> Self {
        LaurentHalf::default()
    }
    fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
}

impl One for LaurentHalf {
    fn one() -> Self {
        LaurentHalf::constant(BigRational::one())
    }
}

impl Coeff for LaurentHalf {
    fn from_ratio(num: i64, den: i64) -> Self {
        LaurentHalf::constant(BigRational::from_ratio(num, den))
    }

    fn try_div(&self, rhs: &Self) -> Result<Self, ScalarError> {
        let (e, c) = rhs
            .monomial()
            .ok_or(ScalarError::DivisionByZero)?;
        if c.is_zero() {
            return Err(ScalarError::DivisionByZero);
        }
        Ok(LaurentHalf {
            terms: self
                .terms
                .iter()
                .map(|(ea, ca)| (ea - e, ca / c))
                .collect(),
        })
    }

    fn try_sqrt(&self) -> Result<Self, ScalarError> {
        if self.is_zero() {
            return Ok(Self::zero());
        }
        let (e, c) = self.monomial().ok_or_else(|| {
            ScalarError::SqrtNotRepresentable("non-monomial Laurent element".into())
        })?;
        let root = c.try_sqrt()?;
        // sqrt halves the doubled exponent, which must stay integral
        if e % 2 != 0 {
            return Err(ScalarError::SqrtNotRepresentable(
                "quarter-integer power".into(),
            ));
        }
        let mut terms = BTreeMap::new();
        terms.insert(e / 2, root);
        Ok(LaurentHalf { terms })
    }
}

pub fn rational(num: i64, den: i64) -> BigRational {
    BigRational::from_ratio(num, den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_sqrt_perfect_square() {
        let v = rational(9, 4);
        assert_eq!(v.try_sqrt().unwrap(), rational(3, 2));
        assert!(rational(2, 1).try_sqrt().is_err());
    }

    #[test]
    fn laurent_arithmetic() {
        // t^(1/2) * t^(3/2) = t^2
        let a = LaurentHalf::gen_pow(1);
        let b = LaurentHalf::gen_pow(3);
        let p = a * b;
        assert_eq!(p.monomial().unwrap().0, 4);
        // sqrt(t^2) = t
        assert_eq!(p.try_sqrt().unwrap().monomial().unwrap().0, 2);
    }

    #[test]
    fn laurent_division_by_monomial() {
        let x = LaurentHalf::gen_pow(2) + LaurentHalf::one();
        let d = x.clone().try_div(&LaurentHalf::gen_pow(2)).unwrap();
        assert_eq!(d, LaurentHalf::one() + LaurentHalf::gen_pow(-2));
    }
}
