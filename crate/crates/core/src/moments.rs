//! Truncated multi-sequences (tms), atomic measures, and the moment and
//! localizing matrices/vectors built from them.
//!
//! A [`Tms`] of degree `d` stores `y_alpha` for every `|alpha| <= d` in the
//! order of [`enumerate_basis`]. The structural builders
//! ([`localizing_terms`], [`localizing_vector_terms`]) describe each entry
//! as a linear form in the tms entries; the numeric builders evaluate those
//! forms, and the relaxation compiler reuses them as SDP coefficients.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{basis_len, enumerate_basis, Monomial, MonomialBasis, Polynomial};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MomentError {
    #[error("variable count mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("degree {needed} needed but the tms has degree {available}")]
    DegreeOverflow { needed: u32, available: u32 },
    #[error("tms of degree {degree} in {nvars} variables needs {expected} values, got {found}")]
    BadLength {
        nvars: usize,
        degree: u32,
        expected: usize,
        found: usize,
    },
}

/// A truncated multi-sequence `y in R^{N^n_d}` in basis order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tms {
    #[serde(rename = "n")]
    nvars: usize,
    #[serde(rename = "d")]
    degree: u32,
    values: Vec<f64>,
}

impl Tms {
    pub fn new(nvars: usize, degree: u32, values: Vec<f64>) -> Result<Self, MomentError> {
        let expected = basis_len(nvars, degree);
        if values.len() != expected {
            return Err(MomentError::BadLength {
                nvars,
                degree,
                expected,
                found: values.len(),
            });
        }
        Ok(Tms {
            nvars,
            degree,
            values,
        })
    }

    pub fn zeros(nvars: usize, degree: u32) -> Self {
        Tms {
            nvars,
            degree,
            values: vec![0.0; basis_len(nvars, degree)],
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn basis(&self) -> MonomialBasis {
        enumerate_basis(self.nvars, self.degree)
    }

    /// Checks the invariant after deserialization.
    pub fn validate(&self) -> Result<(), MomentError> {
        Tms::new(self.nvars, self.degree, self.values.clone()).map(|_| ())
    }

    /// Restriction to `|alpha| <= d`. Graded order makes this a prefix.
    pub fn truncate(&self, d: u32) -> Result<Tms, MomentError> {
        if d > self.degree {
            return Err(MomentError::DegreeOverflow {
                needed: d,
                available: self.degree,
            });
        }
        let len = basis_len(self.nvars, d);
        Ok(Tms {
            nvars: self.nvars,
            degree: d,
            values: self.values[..len].to_vec(),
        })
    }
}

/// One atom `lambda * delta_u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub weight: f64,
    pub point: Vec<f64>,
}

/// A finitely atomic measure `sum_t lambda_t delta_{u_t}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AtomicMeasure {
    pub atoms: Vec<Atom>,
}

impl AtomicMeasure {
    pub fn new(atoms: Vec<Atom>) -> Self {
        AtomicMeasure { atoms }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// `sum_t lambda_t p(u_t)`.
    pub fn integrate(&self, p: &Polynomial) -> f64 {
        self.atoms.iter().map(|a| a.weight * p.evaluate(&a.point)).sum()
    }
}

/// `y_alpha = sum_t lambda_t u_t^alpha` for all `|alpha| <= d`.
pub fn tms_from_atoms(mu: &AtomicMeasure, nvars: usize, d: u32) -> Tms {
    let basis = enumerate_basis(nvars, d);
    let mut values = vec![0.0; basis.len()];
    for atom in &mu.atoms {
        assert_eq!(atom.point.len(), nvars, "atom dimension mismatch");
        for (v, m) in values.iter_mut().zip(basis.monomials()) {
            *v += atom.weight * m.eval(&atom.point);
        }
    }
    Tms {
        nvars,
        degree: d,
        values,
    }
}

/// The bilinear pairing `<p, y> = sum_alpha p_alpha y_alpha`.
pub fn pair(p: &Polynomial, y: &Tms) -> Result<f64, MomentError> {
    if p.nvars() != y.nvars {
        return Err(MomentError::DimensionMismatch {
            left: p.nvars(),
            right: y.nvars,
        });
    }
    if p.degree() > y.degree {
        return Err(MomentError::DegreeOverflow {
            needed: p.degree(),
            available: y.degree,
        });
    }
    let basis = y.basis();
    Ok(p.terms()
        .map(|(m, c)| c * y.values[basis.position(m).expect("degree checked")])
        .sum())
}

/// One nonzero of a symmetric linear matrix map: entry `(row, col)` with
/// `row <= col` gains `coeff * y[var]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixTerm {
    pub row: usize,
    pub col: usize,
    pub var: usize,
    pub coeff: f64,
}

/// The linear structure of `L_q^{(k)}[.]` over tms of degree `2k`, with the
/// matrix side `C(n + s, s)` for `s = floor((2k - deg q) / 2)`.
#[derive(Debug, Clone)]
pub struct LocalizingStructure {
    pub side: usize,
    pub half_degree: u32,
    pub terms: Vec<MatrixTerm>,
}

fn check_localizer(q: &Polynomial, nvars: usize, two_k: u32) -> Result<u32, MomentError> {
    if q.nvars() != nvars {
        return Err(MomentError::DimensionMismatch {
            left: q.nvars(),
            right: nvars,
        });
    }
    if q.degree() > two_k {
        return Err(MomentError::DegreeOverflow {
            needed: q.degree(),
            available: two_k,
        });
    }
    Ok(two_k - q.degree())
}

/// Entry `(a, b)` of `L_q^{(k)}` is `sum_gamma q_gamma y_{gamma + alpha_a + alpha_b}`.
pub fn localizing_terms(q: &Polynomial, nvars: usize, k: u32) -> Result<LocalizingStructure, MomentError> {
    localizing_terms_in(&enumerate_basis(nvars, 2 * k), q, k)
}

/// As [`localizing_terms`], reusing a prebuilt index table `full` of degree
/// at least `2k` (the basis of a smaller degree is a prefix of it).
pub fn localizing_terms_in(
    full: &MonomialBasis,
    q: &Polynomial,
    k: u32,
) -> Result<LocalizingStructure, MomentError> {
    let nvars = full.nvars();
    let slack = check_localizer(q, nvars, 2 * k)?;
    check_table(full, 2 * k)?;
    let s = slack / 2;
    let side = basis_len(nvars, s);
    let rows = &full.monomials()[..side];
    let qterms: Vec<(&Monomial, f64)> = q.terms().collect();
    let mut terms = Vec::with_capacity(side * (side + 1) / 2 * qterms.len());
    for a in 0..side {
        for b in a..side {
            let ab = rows[a].mul(&rows[b]);
            for &(g, c) in &qterms {
                let var = full.position(&g.mul(&ab)).expect("degree within 2k");
                terms.push(MatrixTerm {
                    row: a,
                    col: b,
                    var,
                    coeff: c,
                });
            }
        }
    }
    Ok(LocalizingStructure {
        side,
        half_degree: s,
        terms,
    })
}

/// Row `beta` of `V_q^{(2k)}` lists `(var, coeff)` with value
/// `sum_gamma q_gamma y_{gamma + beta}`, for `|beta| <= two_k - deg q`.
pub fn localizing_vector_terms(
    q: &Polynomial,
    nvars: usize,
    two_k: u32,
) -> Result<Vec<Vec<(usize, f64)>>, MomentError> {
    localizing_vector_terms_in(&enumerate_basis(nvars, two_k), q, two_k)
}

/// As [`localizing_vector_terms`] with a prebuilt index table.
pub fn localizing_vector_terms_in(
    full: &MonomialBasis,
    q: &Polynomial,
    two_k: u32,
) -> Result<Vec<Vec<(usize, f64)>>, MomentError> {
    let slack = check_localizer(q, full.nvars(), two_k)?;
    check_table(full, two_k)?;
    let rows = &full.monomials()[..basis_len(full.nvars(), slack)];
    Ok(rows
        .iter()
        .map(|beta| {
            q.terms()
                .map(|(g, c)| (full.position(&g.mul(beta)).expect("degree within 2k"), c))
                .collect()
        })
        .collect())
}

fn check_table(full: &MonomialBasis, needed: u32) -> Result<(), MomentError> {
    if full.degree() < needed {
        return Err(MomentError::DegreeOverflow {
            needed,
            available: full.degree(),
        });
    }
    Ok(())
}

fn check_tms(w: &Tms, nvars: usize, needed: u32) -> Result<(), MomentError> {
    if w.nvars != nvars {
        return Err(MomentError::DimensionMismatch {
            left: nvars,
            right: w.nvars,
        });
    }
    if w.degree < needed {
        return Err(MomentError::DegreeOverflow {
            needed,
            available: w.degree,
        });
    }
    Ok(())
}

/// Evaluates a localizing structure at `w` (which may have degree above `2k`;
/// basis prefixes keep the indices valid).
pub fn evaluate_structure(st: &LocalizingStructure, w: &Tms) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(st.side, st.side);
    for t in &st.terms {
        m[(t.row, t.col)] += t.coeff * w.values[t.var];
    }
    for a in 0..st.side {
        for b in (a + 1)..st.side {
            m[(b, a)] = m[(a, b)];
        }
    }
    m
}

/// `M_k[w]`, entry `(alpha, beta) = w_{alpha + beta}`.
pub fn moment_matrix(w: &Tms, k: u32) -> Result<DMatrix<f64>, MomentError> {
    localizing_matrix(&Polynomial::constant(w.nvars, 1.0), w, k)
}

/// `L_q^{(k)}[w]`.
pub fn localizing_matrix(q: &Polynomial, w: &Tms, k: u32) -> Result<DMatrix<f64>, MomentError> {
    check_tms(w, q.nvars(), 2 * k)?;
    let st = localizing_terms(q, w.nvars, k)?;
    Ok(evaluate_structure(&st, w))
}

/// `V_q^{(2k)}[w]`, indexed by the basis of degree `two_k - deg q`.
pub fn localizing_vector(q: &Polynomial, w: &Tms, two_k: u32) -> Result<Vec<f64>, MomentError> {
    check_tms(w, q.nvars(), two_k)?;
    let rows = localizing_vector_terms(q, w.nvars, two_k)?;
    Ok(rows
        .iter()
        .map(|row| row.iter().map(|&(v, c)| c * w.values[v]).sum())
        .collect())
}

/// Coefficient vector of `p` in the basis of degree `d`.
pub fn coefficient_vector(p: &Polynomial, d: u32) -> Vec<f64> {
    let basis = enumerate_basis(p.nvars(), d);
    let mut v = vec![0.0; basis.len()];
    for (m, c) in p.terms() {
        if let Some(i) = basis.position(m) {
            v[i] = c;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(n: usize, terms: &[(f64, &[u32])]) -> Polynomial {
        Polynomial::from_terms(n, terms.iter().map(|(c, e)| (*c, e.to_vec()))).unwrap()
    }

    /// A tms whose entries encode their own exponent, `w_{ab} = 10 a + b + 1`,
    /// so printed layouts can be compared symbolically.
    fn labelled_tms() -> Tms {
        let b = enumerate_basis(2, 4);
        let vals = b
            .monomials()
            .iter()
            .map(|m| 10.0 * m.exps()[0] as f64 + m.exps()[1] as f64 + 1.0)
            .collect();
        Tms::new(2, 4, vals).unwrap()
    }

    fn lab(a: u32, b: u32) -> f64 {
        10.0 * a as f64 + b as f64 + 1.0
    }

    #[test]
    fn pair_cases() {
        let w = labelled_tms();
        assert_eq!(pair(&Polynomial::constant(2, 1.0), &w).unwrap(), w.values()[0]);
        let mu = AtomicMeasure::new(vec![Atom {
            weight: 1.0,
            point: vec![1.0, 2.0],
        }]);
        let y = tms_from_atoms(&mu, 2, 2);
        assert_eq!(pair(&p(2, &[(1.0, &[1, 1])]), &y).unwrap(), 2.0);
        let too_big = p(2, &[(1.0, &[5, 0])]);
        assert!(matches!(pair(&too_big, &w), Err(MomentError::DegreeOverflow { .. })));
    }

    #[test]
    fn tms_from_atoms_cases() {
        let mu = AtomicMeasure::new(vec![Atom {
            weight: 1.0,
            point: vec![0.0, 0.0],
        }]);
        let y = tms_from_atoms(&mu, 2, 2);
        assert_eq!(y.values(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let mu = AtomicMeasure::new(vec![Atom {
            weight: 1.0,
            point: vec![1.0, 2.0],
        }]);
        assert_eq!(tms_from_atoms(&mu, 2, 2).values(), &[1.0, 1.0, 2.0, 1.0, 2.0, 4.0]);
        let s = 1.0 / 3f64.sqrt();
        let mu = AtomicMeasure::new(vec![
            Atom {
                weight: 0.5,
                point: vec![s, s, s],
            },
            Atom {
                weight: 0.5,
                point: vec![-s, -s, -s],
            },
        ]);
        let f = p(3, &[(1.0, &[6, 0, 0]), (1.0, &[0, 6, 0]), (1.0, &[0, 0, 6])]);
        let y = tms_from_atoms(&mu, 3, 6);
        assert!((pair(&f, &y).unwrap() - 1.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn moment_matrix_matches_printed_layout() {
        let w = labelled_tms();
        let m = moment_matrix(&w, 2).unwrap();
        let expect = [
            [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)],
            [(1, 0), (2, 0), (1, 1), (3, 0), (2, 1), (1, 2)],
            [(0, 1), (1, 1), (0, 2), (2, 1), (1, 2), (0, 3)],
            [(2, 0), (3, 0), (2, 1), (4, 0), (3, 1), (2, 2)],
            [(1, 1), (2, 1), (1, 2), (3, 1), (2, 2), (1, 3)],
            [(0, 2), (1, 2), (0, 3), (2, 2), (1, 3), (0, 4)],
        ];
        for r in 0..6 {
            for c in 0..6 {
                let (a, b) = expect[r][c];
                assert_eq!(m[(r, c)], lab(a, b), "entry ({r},{c})");
            }
        }
        let m0 = moment_matrix(&w, 0).unwrap();
        assert_eq!(m0.shape(), (1, 1));
        assert_eq!(m0[(0, 0)], w.values()[0]);
        assert!(moment_matrix(&w, 3).is_err());
    }

    #[test]
    fn localizing_matrix_matches_printed_layout() {
        let w = labelled_tms();
        let q = p(2, &[(1.0, &[1, 0]), (-1.0, &[0, 2])]);
        let l = localizing_matrix(&q, &w, 2).unwrap();
        let d = |a: (u32, u32), b: (u32, u32)| lab(a.0, a.1) - lab(b.0, b.1);
        let expect = [
            [d((1, 0), (0, 2)), d((2, 0), (1, 2)), d((1, 1), (0, 3))],
            [d((2, 0), (1, 2)), d((3, 0), (2, 2)), d((2, 1), (1, 3))],
            [d((1, 1), (0, 3)), d((2, 1), (1, 3)), d((1, 2), (0, 4))],
        ];
        assert_eq!(l.shape(), (3, 3));
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(l[(r, c)], expect[r][c]);
            }
        }
        let one = Polynomial::constant(2, 1.0);
        assert_eq!(localizing_matrix(&one, &w, 2).unwrap(), moment_matrix(&w, 2).unwrap());
    }

    #[test]
    fn localizing_matrix_annihilates_at_zero_of_q() {
        // q(u) = 0 at u = (4, 2) for q = x1 - x2^2
        let u = vec![4.0, 2.0];
        let mu = AtomicMeasure::new(vec![Atom {
            weight: 1.3,
            point: u.clone(),
        }]);
        let w = tms_from_atoms(&mu, 2, 4);
        let q = p(2, &[(1.0, &[1, 0]), (-1.0, &[0, 2])]);
        let l = localizing_matrix(&q, &w, 2).unwrap();
        let us = nalgebra::DVector::from_vec(enumerate_basis(2, 1).evaluate(&u));
        let prod = &l * &us;
        assert!(prod.amax() < 1e-9, "{prod}");
    }

    #[test]
    fn localizing_vector_cases() {
        let w = labelled_tms();
        let one = Polynomial::constant(2, 1.0);
        assert_eq!(localizing_vector(&one, &w, 3).unwrap(), w.truncate(3).unwrap().values());
        let c = Polynomial::constant(2, -2.5);
        let v = localizing_vector(&c, &w, 4).unwrap();
        for (a, b) in v.iter().zip(w.values()) {
            assert_eq!(*a, -2.5 * b);
        }
        let q = p(2, &[(1.0, &[3, 0])]);
        assert_eq!(localizing_vector(&q, &w, 4).unwrap().len(), 3);
    }

    #[test]
    fn truncate_cases() {
        let w = labelled_tms();
        assert_eq!(w.truncate(4).unwrap(), w);
        assert_eq!(w.truncate(0).unwrap().values(), &[w.values()[0]]);
        let mu = AtomicMeasure::new(vec![Atom {
            weight: 0.7,
            point: vec![0.3, -1.1],
        }]);
        let a = tms_from_atoms(&mu, 2, 5).truncate(3).unwrap();
        let b = tms_from_atoms(&mu, 2, 3);
        assert_eq!(a, b);
        assert!(w.truncate(5).is_err());
    }

    #[test]
    fn tms_json_shape() {
        let w = Tms::new(1, 2, vec![1.0, 0.5, 0.25]).unwrap();
        let v = serde_json::to_value(&w).unwrap();
        assert_eq!(v, serde_json::json!({"n": 1, "d": 2, "values": [1.0, 0.5, 0.25]}));
        let bad: Tms = serde_json::from_value(serde_json::json!({"n": 1, "d": 2, "values": [1.0]})).unwrap();
        assert!(bad.validate().is_err());
    }
}
