//! Sparse multivariate polynomials over `f64` and the graded monomial order.
//!
//! Every matrix builder in this crate indexes monomials through
//! [`MonomialBasis`], whose order is graded (by total degree) and, within a
//! degree, lexicographic with `x1` heaviest:
//! `[1, x1, x2, ..., x1^2, x1 x2, ..., xn^d]`.
//! Because the order is graded, the basis of degree `d` is a prefix of the
//! basis of degree `d + 1`, so a monomial has the same index in every basis
//! that contains it.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("variable count mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cannot homogenize the zero polynomial")]
    ZeroPolynomial,
    #[error("polynomial of degree {degree} does not fit in target degree {target}")]
    DegreeTooSmall { degree: u32, target: u32 },
    #[error("term {index}: exponent vector has length {found}, expected {expected}")]
    ExponentLength {
        index: usize,
        found: usize,
        expected: usize,
    },
    #[error("term {index}: coefficient is not finite")]
    NonFinite { index: usize },
}

/// An exponent vector `alpha` in `N^n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exps: Vec<u32>) -> Self {
        Monomial(exps)
    }

    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    /// The monomial `x_i` (zero-based `i`).
    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        Monomial(e)
    }

    pub fn exps(&self) -> &[u32] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.0.len(), other.0.len());
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `u^alpha`.
    pub fn eval(&self, u: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(u)
            .filter(|(e, _)| **e > 0)
            .map(|(&e, &x)| x.powi(e as i32))
            .product()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The ordered monomial vector `[x]_d`.
#[derive(Debug, Clone)]
pub struct MonomialBasis {
    nvars: usize,
    degree: u32,
    monomials: Vec<Monomial>,
    index: HashMap<Monomial, usize>,
}

/// Number of monomials of degree at most `d` in `n` variables, `C(n + d, d)`.
pub fn basis_len(n: usize, d: u32) -> usize {
    let d = d as usize;
    let mut acc: u128 = 1;
    for i in 1..=d {
        acc = acc * (n + i) as u128 / i as u128;
    }
    acc as usize
}

fn push_degree(n: usize, deg: u32, prefix: &mut Vec<u32>, out: &mut Vec<Monomial>) {
    if prefix.len() + 1 == n {
        prefix.push(deg);
        out.push(Monomial(prefix.clone()));
        prefix.pop();
        return;
    }
    for a in (0..=deg).rev() {
        prefix.push(a);
        push_degree(n, deg - a, prefix, out);
        prefix.pop();
    }
}

/// All exponents of total degree `<= d` in the graded order.
pub fn enumerate_basis(n: usize, d: u32) -> MonomialBasis {
    assert!(n >= 1, "a monomial basis needs at least one variable");
    let mut monomials = Vec::with_capacity(basis_len(n, d));
    let mut prefix = Vec::with_capacity(n);
    for deg in 0..=d {
        push_degree(n, deg, &mut prefix, &mut monomials);
    }
    let index = monomials
        .iter()
        .enumerate()
        .map(|(i, m)| (m.clone(), i))
        .collect();
    MonomialBasis {
        nvars: n,
        degree: d,
        monomials,
        index,
    }
}

impl MonomialBasis {
    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.monomials
    }

    pub fn get(&self, i: usize) -> &Monomial {
        &self.monomials[i]
    }

    pub fn position(&self, m: &Monomial) -> Option<usize> {
        self.index.get(m).copied()
    }

    /// Number of leading entries with degree `<= d`.
    pub fn prefix_len(&self, d: u32) -> usize {
        basis_len(self.nvars, d.min(self.degree))
    }

    /// `[u]_d` evaluated at a point, in basis order.
    pub fn evaluate(&self, u: &[f64]) -> Vec<f64> {
        self.monomials.iter().map(|m| m.eval(u)).collect()
    }
}

/// A sparse polynomial in `nvars` variables with real coefficients.
///
/// Only exact zeros are dropped on construction; use [`Polynomial::clean`]
/// to trim roundoff after arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Polynomial::zero(nvars);
        p.add_term(Monomial::one(nvars), c);
        p
    }

    /// The polynomial `x_i` (zero-based `i`).
    pub fn var(nvars: usize, i: usize) -> Self {
        assert!(i < nvars, "variable index {i} out of range for {nvars} variables");
        let mut p = Polynomial::zero(nvars);
        p.add_term(Monomial::var(nvars, i), 1.0);
        p
    }

    pub fn monomial(m: Monomial, c: f64) -> Self {
        let mut p = Polynomial::zero(m.nvars());
        p.add_term(m, c);
        p
    }

    /// Builds a polynomial from `(coefficient, exponents)` pairs, summing
    /// duplicate exponents.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Result<Self, PolyError>
    where
        I: IntoIterator<Item = (f64, Vec<u32>)>,
    {
        let mut p = Polynomial::zero(nvars);
        for (index, (c, e)) in terms.into_iter().enumerate() {
            if e.len() != nvars {
                return Err(PolyError::ExponentLength {
                    index,
                    found: e.len(),
                    expected: nvars,
                });
            }
            if !c.is_finite() {
                return Err(PolyError::NonFinite { index });
            }
            p.add_term(Monomial(e), c);
        }
        Ok(p)
    }

    pub fn add_term(&mut self, m: Monomial, c: f64) {
        debug_assert_eq!(m.nvars(), self.nvars);
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(m);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = *o.get() + c;
                if s == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Terms in ascending graded order.
    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> + '_ {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn is_homogeneous(&self) -> bool {
        let d = self.degree();
        self.terms.keys().all(|m| m.degree() == d)
    }

    fn check_dims(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.nvars != other.nvars {
            return Err(PolyError::DimensionMismatch {
                left: self.nvars,
                right: other.nvars,
            });
        }
        Ok(())
    }

    pub fn checked_add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_dims(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), c);
        }
        Ok(out)
    }

    pub fn checked_sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_dims(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), -c);
        }
        Ok(out)
    }

    pub fn checked_mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_dims(other)?;
        let mut acc: HashMap<Monomial, f64> = HashMap::new();
        for (a, &ca) in &self.terms {
            for (b, &cb) in &other.terms {
                *acc.entry(a.mul(b)).or_insert(0.0) += ca * cb;
            }
        }
        let mut out = Polynomial::zero(self.nvars);
        for (m, c) in acc {
            if c != 0.0 {
                out.terms.insert(m, c);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        if s == 0.0 {
            return Polynomial::zero(self.nvars);
        }
        Polynomial {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(m, &c)| (m.clone(), c * s)).collect(),
        }
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut out = Polynomial::constant(self.nvars, 1.0);
        for _ in 0..k {
            out = &out * self;
        }
        out
    }

    pub fn evaluate(&self, u: &[f64]) -> f64 {
        assert_eq!(u.len(), self.nvars, "point dimension mismatch");
        self.terms.iter().map(|(m, &c)| c * m.eval(u)).sum()
    }

    /// Drops terms with `|c| <= eps`.
    pub fn clean(&self, eps: f64) -> Polynomial {
        Polynomial {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .filter(|(_, c)| c.abs() > eps)
                .map(|(m, &c)| (m.clone(), c))
                .collect(),
        }
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    /// `x0^deg(p) p(x / x0)` with `x0` prepended as variable 0.
    pub fn homogenize(&self) -> Result<Polynomial, PolyError> {
        if self.is_zero() {
            return Err(PolyError::ZeroPolynomial);
        }
        self.homogenize_to_degree(self.degree())
    }

    /// `x0^d p(x / x0)`, homogeneous of degree exactly `d`.
    pub fn homogenize_to_degree(&self, d: u32) -> Result<Polynomial, PolyError> {
        let deg = self.degree();
        if deg > d {
            return Err(PolyError::DegreeTooSmall { degree: deg, target: d });
        }
        let mut out = Polynomial::zero(self.nvars + 1);
        for (m, &c) in &self.terms {
            let mut e = Vec::with_capacity(self.nvars + 1);
            e.push(d - m.degree());
            e.extend_from_slice(m.exps());
            out.terms.insert(Monomial(e), c);
        }
        Ok(out)
    }

    /// Homogeneous part of highest degree.
    pub fn top_form(&self) -> Result<Polynomial, PolyError> {
        if self.is_zero() {
            return Err(PolyError::ZeroPolynomial);
        }
        let d = self.degree();
        Ok(Polynomial {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| m.degree() == d)
                .map(|(m, &c)| (m.clone(), c))
                .collect(),
        })
    }

    /// Partial derivative with respect to `x_i` (zero-based).
    pub fn derivative(&self, i: usize) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars);
        for (m, &c) in &self.terms {
            let e = m.exps()[i];
            if e == 0 {
                continue;
            }
            let mut ex = m.0.clone();
            ex[i] -= 1;
            out.add_term(Monomial(ex), c * e as f64);
        }
        out
    }

    pub fn gradient(&self) -> Vec<Polynomial> {
        (0..self.nvars).map(|i| self.derivative(i)).collect()
    }

    pub fn hessian(&self) -> Vec<Vec<Polynomial>> {
        let grad = self.gradient();
        (0..self.nvars)
            .map(|i| (0..self.nvars).map(|j| grad[i].derivative(j)).collect())
            .collect()
    }
}

fn same_dims(a: &Polynomial, b: &Polynomial) {
    assert_eq!(
        a.nvars, b.nvars,
        "polynomial variable count mismatch: {} vs {}",
        a.nvars, b.nvars
    );
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        same_dims(self, rhs);
        self.checked_add(rhs).expect("dimensions checked")
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        same_dims(self, rhs);
        self.checked_sub(rhs).expect("dimensions checked")
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        same_dims(self, rhs);
        self.checked_mul(rhs).expect("dimensions checked")
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, &c) in self.terms.iter().rev() {
            let sign = if c < 0.0 { "-" } else { "+" };
            if first {
                if c < 0.0 {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            first = false;
            let a = c.abs();
            let mono: Vec<String> = m
                .exps()
                .iter()
                .enumerate()
                .filter(|(_, &e)| e > 0)
                .map(|(i, &e)| {
                    if e == 1 {
                        format!("x{}", i + 1)
                    } else {
                        format!("x{}^{}", i + 1, e)
                    }
                })
                .collect();
            if mono.is_empty() {
                write!(f, "{a}")?;
            } else if a == 1.0 {
                write!(f, "{}", mono.join("*"))?;
            } else {
                write!(f, "{a}*{}", mono.join("*"))?;
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    c: f64,
    e: Vec<u32>,
}

impl Serialize for Polynomial {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let terms: Vec<TermRepr> = self
            .terms
            .iter()
            .map(|(m, &c)| TermRepr {
                c,
                e: m.exps().to_vec(),
            })
            .collect();
        terms.serialize(serializer)
    }
}

/// Deserializes a term list whose exponent length fixes `nvars`; use
/// [`Polynomial::from_json_terms`] when the variable count is known.
impl<'de> Deserialize<'de> for Polynomial {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let terms = Vec::<TermRepr>::deserialize(deserializer)?;
        let nvars = match terms.first() {
            Some(t) => t.e.len(),
            None => {
                return Err(D::Error::custom(
                    "empty term list: variable count unknown (use from_json_terms)",
                ))
            }
        };
        Polynomial::from_terms(nvars, terms.into_iter().map(|t| (t.c, t.e)))
            .map_err(D::Error::custom)
    }
}

impl Polynomial {
    /// Parses the `[{"c": .., "e": [..]}, ..]` term list for a known
    /// variable count. An empty list is the zero polynomial.
    pub fn from_json_terms(nvars: usize, value: &serde_json::Value) -> Result<Self, String> {
        let terms: Vec<TermRepr> =
            serde_json::from_value(value.clone()).map_err(|e| e.to_string())?;
        Polynomial::from_terms(nvars, terms.into_iter().map(|t| (t.c, t.e))).map_err(|e| e.to_string())
    }
}
