//! Problem models and their moment relaxations.
//!
//! Every relaxation here is compiled in moment form: the decision vector
//! is a tms `w` of degree `2k`, and the sum-of-squares side is read off the
//! dual of the compiled SDP ([`extract_sos_dual`]).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::{self, Certificate, FlatOutcome, FlatTruncation, PairingView};
use crate::moments::{localizing_terms_in, localizing_vector_terms_in, AtomicMeasure, MomentError, Tms};
use crate::poly::{enumerate_basis, Monomial, MonomialBasis, PolyError, Polynomial};
use crate::sdp::{self, LinearRow, PsdBlock, Residuals, SdpError, SdpProblem, SdpSolution, SdpStatus, SolverSettings};

#[derive(Debug, Error)]
pub enum RelaxError {
    #[error("relaxation order {k} is below the minimum order {min}")]
    OrderTooSmall { k: u32, min: u32 },
    #[error("{what} has {found} variables, expected {expected}")]
    DimensionMismatch { what: String, found: usize, expected: usize },
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error(
        "the even-degree variant needs an even-degree objective (it relies on the objective's \
         top form being a positive definite form of even degree); got degree {degree}"
    )]
    OddDegree { degree: u32 },
    #[error("expected {expected} multipliers, got {found}")]
    LengthMismatch { found: usize, expected: usize },
    #[error("solution status is {0:?}, not Optimal")]
    NotOptimal(SdpStatus),
    #[error("the denominator variant applies to polynomial optimization problems only")]
    DenominatorNeedsPop,
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Moment(#[from] MomentError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

/// `K = { x : c_j(x) = 0 (j in E), c_j(x) >= 0 (j in I) }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemialgebraicSet {
    pub nvars: usize,
    pub eq: Vec<Polynomial>,
    pub ineq: Vec<Polynomial>,
    /// Asserted by the user; never checked.
    pub archimedean: bool,
    /// Asserted by the user; never checked.
    pub closed_at_infinity: bool,
}

impl SemialgebraicSet {
    pub fn whole_space(nvars: usize) -> Self {
        SemialgebraicSet {
            nvars,
            eq: vec![],
            ineq: vec![],
            archimedean: false,
            closed_at_infinity: false,
        }
    }

    pub fn validate(&self) -> Result<(), RelaxError> {
        for (kind, list) in [("eq", &self.eq), ("ineq", &self.ineq)] {
            for (j, c) in list.iter().enumerate() {
                if c.nvars() != self.nvars {
                    return Err(RelaxError::DimensionMismatch {
                        what: format!("set.{kind}[{j}]"),
                        found: c.nvars(),
                        expected: self.nvars,
                    });
                }
            }
        }
        Ok(())
    }

    fn constraints(&self) -> impl Iterator<Item = &Polynomial> {
        self.eq.iter().chain(&self.ineq)
    }
}

fn half_ceil(d: u32) -> u32 {
    d.div_ceil(2)
}

/// `d_K = max_j ceil(deg c_j / 2)`, zero without constraints.
pub fn degree_dk(set: &SemialgebraicSet) -> u32 {
    set.constraints().map(|c| half_ceil(c.degree())).max().unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmpProblem {
    pub set: SemialgebraicSet,
    pub f: Polynomial,
    pub a: Vec<Polynomial>,
    pub b: Vec<f64>,
    /// Pairings `0..m1` are equalities, the rest are `>=`.
    pub m1: usize,
    pub d: u32,
}

impl GmpProblem {
    pub fn validate(&self) -> Result<(), RelaxError> {
        self.set.validate()?;
        let n = self.set.nvars;
        if self.f.nvars() != n {
            return Err(RelaxError::DimensionMismatch {
                what: "f".into(),
                found: self.f.nvars(),
                expected: n,
            });
        }
        for (i, a) in self.a.iter().enumerate() {
            if a.nvars() != n {
                return Err(RelaxError::DimensionMismatch {
                    what: format!("gmp.a[{i}]"),
                    found: a.nvars(),
                    expected: n,
                });
            }
        }
        if self.a.len() != self.b.len() {
            return Err(RelaxError::Invalid(format!(
                "{} pairing polynomials but {} right-hand sides",
                self.a.len(),
                self.b.len()
            )));
        }
        if self.m1 > self.a.len() {
            return Err(RelaxError::Invalid(format!(
                "m1 = {} exceeds the number of pairings {}",
                self.m1,
                self.a.len()
            )));
        }
        let top = self.a.iter().map(Polynomial::degree).chain([self.f.degree()]).max().unwrap_or(0);
        if top > self.d {
            return Err(RelaxError::Invalid(format!(
                "degree bound d = {} is below the data degree {top}",
                self.d
            )));
        }
        if self.b.iter().any(|v| !v.is_finite()) {
            return Err(RelaxError::Invalid("non-finite right-hand side".into()));
        }
        Ok(())
    }
}

/// `d_0 = max(ceil(deg f / 2), d_K, max_i ceil(deg a_i / 2))`.
pub fn degree_d0(gmp: &GmpProblem) -> u32 {
    gmp.a
        .iter()
        .map(|a| half_ceil(a.degree()))
        .chain([half_ceil(gmp.f.degree()), degree_dk(&gmp.set)])
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopProblem {
    pub set: SemialgebraicSet,
    pub f: Polynomial,
}

impl PopProblem {
    pub fn validate(&self) -> Result<(), RelaxError> {
        self.set.validate()?;
        if self.f.nvars() != self.set.nvars {
            return Err(RelaxError::DimensionMismatch {
                what: "f".into(),
                found: self.f.nvars(),
                expected: self.set.nvars,
            });
        }
        Ok(())
    }

    /// The measure formulation: minimize `<f, mu>` over probability
    /// measures on `K`.
    pub fn as_gmp(&self) -> GmpProblem {
        GmpProblem {
            set: self.set.clone(),
            f: self.f.clone(),
            a: vec![Polynomial::constant(self.set.nvars, 1.0)],
            b: vec![1.0],
            m1: 1,
            d: self.f.degree(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    Gmp(GmpProblem),
    Pop(PopProblem),
}

impl Problem {
    pub fn set(&self) -> &SemialgebraicSet {
        match self {
            Problem::Gmp(g) => &g.set,
            Problem::Pop(p) => &p.set,
        }
    }

    pub fn objective(&self) -> &Polynomial {
        match self {
            Problem::Gmp(g) => &g.f,
            Problem::Pop(p) => &p.f,
        }
    }

    pub fn validate(&self) -> Result<(), RelaxError> {
        match self {
            Problem::Gmp(g) => g.validate(),
            Problem::Pop(p) => p.validate(),
        }
    }
}

/// `f_theta = f - sum_i theta_i a_i` over the same set.
pub fn build_subproblem(gmp: &GmpProblem, theta: &[f64]) -> Result<PopProblem, RelaxError> {
    if theta.len() != gmp.a.len() {
        return Err(RelaxError::LengthMismatch {
            found: theta.len(),
            expected: gmp.a.len(),
        });
    }
    let mut f = gmp.f.clone();
    for (t, a) in theta.iter().zip(&gmp.a) {
        f = f.checked_sub(&a.scale(*t))?;
    }
    Ok(PopProblem {
        set: gmp.set.clone(),
        f,
    })
}

// ---------------------------------------------------------------------------
// Compilation
// ---------------------------------------------------------------------------

/// Where an equality row of the compiled SDP comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowOrigin {
    Pairing(usize),
    /// Row `row` of the localizing vector of equality `constraint`.
    Ideal { constraint: usize, row: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockOrigin {
    Moment,
    Localizing(usize),
}

/// A compiled moment relaxation and the bookkeeping needed to read it back.
#[derive(Debug, Clone)]
pub struct MomentSdp {
    pub sdp: SdpProblem,
    pub nvars: usize,
    /// Half the tms degree.
    pub order: u32,
    pub objective: Polynomial,
    pub set: SemialgebraicSet,
    pub pairings: Vec<Polynomial>,
    pub rhs: Vec<f64>,
    pub m1: usize,
    pub eq_rows: Vec<RowOrigin>,
    /// Pairing index of each inequality row.
    pub ineq_rows: Vec<usize>,
    pub blocks: Vec<BlockOrigin>,
    /// Half degree `s` of each block's basis `[x]_s`.
    pub block_half_degrees: Vec<u32>,
    pub d0: u32,
    pub dk: u32,
}

impl MomentSdp {
    pub fn tms(&self, x: &[f64]) -> Tms {
        Tms::new(self.nvars, 2 * self.order, x.to_vec()).expect("compiled length")
    }

    pub fn solve(&self, settings: &SolverSettings) -> Result<SdpSolution, RelaxError> {
        Ok(sdp::solve(&self.sdp, settings)?)
    }
}

fn poly_row(p: &Polynomial, full: &MonomialBasis) -> Vec<(usize, f64)> {
    p.terms()
        .map(|(m, c)| (full.position(m).expect("degree checked"), c))
        .collect()
}

/// Compiles
///
/// ```text
/// min <objective, w>  s.t.  <p_i, w> = r_i (i < m1),  <p_i, w> >= r_i (i >= m1),
///     V_{c_j}[w] = 0 (j in E),  L_{c_j}[w] ⪰ 0 (j in I),  M_k[w] ⪰ 0
/// ```
pub fn compile_moment_sdp(
    set: &SemialgebraicSet,
    objective: &Polynomial,
    pairings: &[Polynomial],
    rhs: &[f64],
    m1: usize,
    k: u32,
) -> Result<MomentSdp, RelaxError> {
    set.validate()?;
    let n = set.nvars;
    let d0 = pairings
        .iter()
        .map(|a| half_ceil(a.degree()))
        .chain([half_ceil(objective.degree()), degree_dk(set)])
        .max()
        .unwrap_or(0);
    if k < d0 {
        return Err(RelaxError::OrderTooSmall { k, min: d0 });
    }
    for (what, p) in std::iter::once(("objective".to_string(), objective))
        .chain(pairings.iter().enumerate().map(|(i, p)| (format!("pairing {i}"), p)))
    {
        if p.nvars() != n {
            return Err(RelaxError::DimensionMismatch {
                what,
                found: p.nvars(),
                expected: n,
            });
        }
    }
    let full = enumerate_basis(n, 2 * k);
    let mut sdp = SdpProblem::new(full.len());
    for (j, c) in poly_row(objective, &full) {
        sdp.objective[j] += c;
    }
    let mut eq_rows = Vec::new();
    let mut ineq_rows = Vec::new();
    for (i, (p, &r)) in pairings.iter().zip(rhs).enumerate() {
        let row = LinearRow {
            coeffs: poly_row(p, &full),
            rhs: r,
        };
        if i < m1 {
            sdp.equalities.push(row);
            eq_rows.push(RowOrigin::Pairing(i));
        } else {
            sdp.inequalities.push(row);
            ineq_rows.push(i);
        }
    }
    for (j, c) in set.eq.iter().enumerate() {
        for (row, coeffs) in localizing_vector_terms_in(&full, c, 2 * k)?.into_iter().enumerate() {
            sdp.equalities.push(LinearRow { coeffs, rhs: 0.0 });
            eq_rows.push(RowOrigin::Ideal { constraint: j, row });
        }
    }
    let mut blocks = Vec::new();
    let mut halves = Vec::new();
    let one = Polynomial::constant(n, 1.0);
    for (origin, q) in std::iter::once((BlockOrigin::Moment, &one))
        .chain(set.ineq.iter().enumerate().map(|(j, c)| (BlockOrigin::Localizing(j), c)))
    {
        let st = localizing_terms_in(&full, q, k)?;
        sdp.blocks.push(PsdBlock {
            side: st.side,
            constant: vec![],
            terms: st.terms,
        });
        blocks.push(origin);
        halves.push(st.half_degree);
    }
    Ok(MomentSdp {
        sdp,
        nvars: n,
        order: k,
        objective: objective.clone(),
        set: set.clone(),
        pairings: pairings.to_vec(),
        rhs: rhs.to_vec(),
        m1,
        eq_rows,
        ineq_rows,
        blocks,
        block_half_degrees: halves,
        d0,
        dk: degree_dk(set),
    })
}

pub fn build_gmp_moment_sdp(gmp: &GmpProblem, k: u32) -> Result<MomentSdp, RelaxError> {
    gmp.validate()?;
    let min = degree_d0(gmp);
    if k < min {
        return Err(RelaxError::OrderTooSmall { k, min });
    }
    compile_moment_sdp(&gmp.set, &gmp.f, &gmp.a, &gmp.b, gmp.m1, k)
}

/// The moment relaxation with the single pairing `<1, w> = 1`.
pub fn build_pop_moment_sdp(pop: &PopProblem, k: u32) -> Result<MomentSdp, RelaxError> {
    pop.validate()?;
    build_gmp_moment_sdp(&pop.as_gmp(), k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum X0Sign {
    Nonneg,
    Free,
}

/// The unit sphere `|x~|^2 - 1` in `nvars` variables.
fn sphere(nvars: usize) -> Polynomial {
    let mut p = Polynomial::constant(nvars, -1.0);
    for i in 0..nvars {
        let mut e = vec![0; nvars];
        e[i] = 2;
        p.add_term(Monomial::new(e), 1.0);
    }
    p
}

/// The homogenized set in `(x0, x)`: equalities `c~_j` and `|x~|^2 - 1`,
/// inequalities `c~_j`, plus `x0 >= 0` for [`X0Sign::Nonneg`].
pub fn homogenize_set(set: &SemialgebraicSet, sign: X0Sign) -> Result<SemialgebraicSet, RelaxError> {
    set.validate()?;
    let m = set.nvars + 1;
    let mut eq = set.eq.iter().map(Polynomial::homogenize).collect::<Result<Vec<_>, _>>()?;
    eq.push(sphere(m));
    let mut ineq = set.ineq.iter().map(Polynomial::homogenize).collect::<Result<Vec<_>, _>>()?;
    if sign == X0Sign::Nonneg {
        ineq.push(Polynomial::var(m, 0));
    }
    Ok(SemialgebraicSet {
        nvars: m,
        eq,
        ineq,
        archimedean: true,
        closed_at_infinity: set.closed_at_infinity,
    })
}

/// Degree-`d` homogenization of `f` and every `a_i` over the homogenized
/// set with `x0 >= 0`.
pub fn homogenize_gmp(gmp: &GmpProblem) -> Result<GmpProblem, RelaxError> {
    gmp.validate()?;
    Ok(GmpProblem {
        set: homogenize_set(&gmp.set, X0Sign::Nonneg)?,
        f: gmp.f.homogenize_to_degree(gmp.d)?,
        a: gmp.a.iter().map(|a| a.homogenize_to_degree(gmp.d)).collect::<Result<_, _>>()?,
        b: gmp.b.clone(),
        m1: gmp.m1,
        d: gmp.d,
    })
}

fn x0_power(nvars: usize, d: u32) -> Polynomial {
    let mut e = vec![0; nvars];
    e[0] = d;
    Polynomial::monomial(Monomial::new(e), 1.0)
}

/// A homogenized POP in `(x0, x)`: minimize `f~` over the set with the
/// normalization `<x0^d, w> = 1`.
fn compile_normalized(pop: &PopProblem, d: u32, k: u32) -> Result<MomentSdp, RelaxError> {
    let n = pop.set.nvars;
    compile_moment_sdp(&pop.set, &pop.f, &[x0_power(n, d)], &[1.0], 1, k)
}

fn homogenized_pop(pop: &PopProblem, sign: X0Sign) -> Result<(PopProblem, u32), RelaxError> {
    pop.validate()?;
    if pop.f.is_zero() {
        return Err(RelaxError::Invalid("objective is the zero polynomial".into()));
    }
    Ok((
        PopProblem {
            set: homogenize_set(&pop.set, sign)?,
            f: pop.f.homogenize()?,
        },
        pop.f.degree(),
    ))
}

/// Minimum order of [`build_homogenized_pop_sdp`].
pub fn homogenized_pop_min_order(pop: &PopProblem) -> Result<u32, RelaxError> {
    let (h, d) = homogenized_pop(pop, X0Sign::Nonneg)?;
    Ok(half_ceil(d).max(degree_dk(&h.set)))
}

/// `min <f~, w>` s.t. `<x0^d, w> = 1`, the homogenized constraints and
/// `L_{x0} ⪰ 0`, in `n + 1` variables with `d = deg f`.
pub fn build_homogenized_pop_sdp(pop: &PopProblem, k: u32) -> Result<MomentSdp, RelaxError> {
    let (h, d) = homogenized_pop(pop, X0Sign::Nonneg)?;
    compile_normalized(&h, d, k)
}

fn theta_power(nvars: usize, k: u32) -> Polynomial {
    let mut theta = sphere(nvars);
    theta.add_term(Monomial::one(nvars), 2.0);
    theta.pow(k)
}

/// Order of the tms used by [`build_denominator_sdp`] at power `k`.
pub fn denominator_tms_order(pop: &PopProblem, k: u32) -> u32 {
    k + half_ceil(pop.f.degree())
}

/// Moment form of `max gamma` s.t. `theta^k (f - gamma)` lies in the
/// truncated ideal plus quadratic module, `theta = 1 + |x|^2`. The
/// certificate degree is `2k + 2 ceil(deg f / 2)`, the smallest even degree
/// that holds `theta^k f`: minimize `<theta^k f, w>` s.t. `<theta^k, w> = 1`
/// and the constraints of `K`.
pub fn build_denominator_sdp(pop: &PopProblem, k: u32) -> Result<MomentSdp, RelaxError> {
    pop.validate()?;
    let min = half_ceil(pop.f.degree());
    if k < min {
        return Err(RelaxError::OrderTooSmall { k, min });
    }
    let n = pop.set.nvars;
    let tk = theta_power(n, k);
    let obj = tk.checked_mul(&pop.f)?;
    let kk = denominator_tms_order(pop, k);
    let dk = degree_dk(&pop.set);
    if kk < dk {
        return Err(RelaxError::OrderTooSmall {
            k,
            min: dk.saturating_sub(half_ceil(pop.f.degree())),
        });
    }
    compile_moment_sdp(&pop.set, &obj, &[tk], &[1.0], 1, kk)
}

/// The homogenized problem with `x0` free and each inequality multiplied by
/// `x0^{theta_j}`, `theta_j = 2 ceil(deg c_j / 2) - deg c_j`.
pub fn build_pv_even_variant(pop: &PopProblem) -> Result<PopProblem, RelaxError> {
    pop.validate()?;
    let d = pop.f.degree();
    if d % 2 == 1 {
        return Err(RelaxError::OddDegree { degree: d });
    }
    let (mut h, _) = homogenized_pop(pop, X0Sign::Free)?;
    let m = h.set.nvars;
    for (c, orig) in h.set.ineq.iter_mut().zip(&pop.set.ineq) {
        let deg = orig.degree();
        let th = 2 * half_ceil(deg) - deg;
        if th > 0 {
            *c = c.checked_mul(&x0_power(m, th))?;
        }
    }
    Ok(h)
}

/// The normalized moment relaxation of a problem already in homogenized
/// coordinates (such as the output of [`build_pv_even_variant`]).
pub fn build_normalized_sdp(hpop: &PopProblem, d: u32, k: u32) -> Result<MomentSdp, RelaxError> {
    hpop.validate()?;
    compile_normalized(hpop, d, k)
}

// ---------------------------------------------------------------------------
// Reading the SOS side off the dual
// ---------------------------------------------------------------------------

/// `objective - sum_i theta_i p_i = sum_j h_j c_j + sigma_0 + sum_j sigma_j c_j`
/// with Gram matrices `sigma = [x]_s' G [x]_s`.
#[derive(Debug, Clone)]
pub struct SosCertificate {
    pub theta: Vec<f64>,
    /// `b' theta`.
    pub value: f64,
    /// Ideal multiplier per equality constraint.
    pub ideal_multipliers: Vec<Polynomial>,
    /// Moment Gram matrix first, then one per inequality.
    pub grams: Vec<DMatrix<f64>>,
    pub gram_half_degrees: Vec<u32>,
    /// Smallest eigenvalue among the Gram matrices.
    pub min_gram_eigenvalue: f64,
    /// Largest coefficient of the replayed identity's residual.
    pub residual: f64,
}

fn gram_polynomial(g: &DMatrix<f64>, basis: &[Monomial], nvars: usize) -> Polynomial {
    let mut p = Polynomial::zero(nvars);
    for a in 0..basis.len() {
        for b in a..basis.len() {
            let w = if a == b { 1.0 } else { 2.0 };
            let v = w * g[(a, b)];
            if v != 0.0 {
                p.add_term(basis[a].mul(&basis[b]), v);
            }
        }
    }
    p
}

/// Reconstructs the multipliers, ideal polynomials and Gram matrices from
/// an Optimal solution and replays the polynomial identity.
pub fn extract_sos_dual(relax: &MomentSdp, sol: &SdpSolution) -> Result<SosCertificate, RelaxError> {
    if sol.status != SdpStatus::Optimal {
        return Err(RelaxError::NotOptimal(sol.status));
    }
    let n = relax.nvars;
    let mut theta = vec![0.0; relax.pairings.len()];
    let basis = enumerate_basis(n, 2 * relax.order);
    let mut ideal: Vec<Polynomial> = relax.set.eq.iter().map(|_| Polynomial::zero(n)).collect();
    for (origin, &y) in relax.eq_rows.iter().zip(&sol.eq_dual) {
        match *origin {
            RowOrigin::Pairing(i) => theta[i] = y,
            RowOrigin::Ideal { constraint, row } => {
                if y != 0.0 {
                    ideal[constraint].add_term(basis.get(row).clone(), y);
                }
            }
        }
    }
    for (&i, &z) in relax.ineq_rows.iter().zip(&sol.ineq_dual) {
        theta[i] = z;
    }
    let value = theta.iter().zip(&relax.rhs).map(|(t, b)| t * b).sum();

    let mut residual = relax.objective.clone();
    for (t, p) in theta.iter().zip(&relax.pairings) {
        residual = &residual - &p.scale(*t);
    }
    for (h, c) in ideal.iter().zip(&relax.set.eq) {
        residual = &residual - &(h * c);
    }
    let mut min_eig = f64::INFINITY;
    for ((origin, g), &s) in relax.blocks.iter().zip(&sol.block_duals).zip(&relax.block_half_degrees) {
        let sb = &basis.monomials()[..crate::poly::basis_len(n, s)];
        let sigma = gram_polynomial(g, sb, n);
        let term = match origin {
            BlockOrigin::Moment => sigma,
            BlockOrigin::Localizing(j) => &sigma * &relax.set.ineq[*j],
        };
        residual = &residual - &term;
        if g.nrows() > 0 {
            min_eig = min_eig.min(g.clone().symmetric_eigenvalues().min());
        }
    }
    Ok(SosCertificate {
        theta,
        value,
        ideal_multipliers: ideal,
        grams: sol.block_duals.clone(),
        gram_half_degrees: relax.block_half_degrees.clone(),
        min_gram_eigenvalue: min_eig,
        residual: residual.max_abs_coeff(),
    })
}

// ---------------------------------------------------------------------------
// Hierarchy driver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Plain,
    Homogenized,
    Denominator,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HierarchyOptions {
    pub solver: SolverSettings,
    pub rank_tol: f64,
    pub feas_tol: f64,
    pub tau_tol: f64,
}

impl Default for HierarchyOptions {
    fn default() -> Self {
        HierarchyOptions {
            solver: SolverSettings::default(),
            rank_tol: 1e-6,
            feas_tol: 1e-4,
            tau_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderRecord {
    pub k: u32,
    pub status: SdpStatus,
    /// `phi_k`, the moment relaxation value.
    pub moment_value: Option<f64>,
    /// `vartheta_k`, the SOS relaxation value.
    pub sos_value: Option<f64>,
    pub residuals: Option<Residuals>,
    pub iterations: usize,
    pub sdp_variables: usize,
    pub moment_block_side: usize,
    pub flat: Option<FlatTruncation>,
    /// Replay residual of the SOS identity.
    pub sos_residual: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HierarchyStatus {
    Converged { order: u32 },
    /// Flat with rank zero: the relaxation's optimal tms vanishes and no
    /// atoms certify the value.
    ZeroMeasure { order: u32 },
    Unresolved { max_order: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyResult {
    pub variant: Variant,
    pub records: Vec<OrderRecord>,
    pub status: HierarchyStatus,
    /// Certified value (the moment value at the converged order).
    pub value: Option<f64>,
    /// GMP multipliers from the dual at the last Optimal order.
    pub theta: Option<Vec<f64>>,
    /// POP lower bound from the dual at the last Optimal order.
    pub gamma: Option<f64>,
    /// Certificate in the coordinates of the solved relaxation.
    pub certificate: Option<Certificate>,
    /// Atoms in the coordinates of the input problem.
    pub atoms: Option<AtomicMeasure>,
    /// Atoms of the homogenized relaxation before dehomogenization.
    pub homogenized_atoms: Option<AtomicMeasure>,
    pub atoms_at_infinity: Vec<crate::moments::Atom>,
    pub warnings: Vec<String>,
}

impl HierarchyResult {
    pub fn converged(&self) -> bool {
        matches!(self.status, HierarchyStatus::Converged { .. })
    }

    pub fn any_solver_failure(&self) -> bool {
        self.records.iter().any(|r| r.status != SdpStatus::Optimal)
    }
}

/// How atoms of a relaxation map back to the input problem.
enum AtomMap {
    Identity,
    Dehomogenize { d: u32 },
    /// Reweight by `theta(u)^k`.
    Denominator { k: u32 },
}

/// Builds the relaxation of `problem` at order `k` for `variant`.
pub fn build_relaxation(problem: &Problem, variant: Variant, k: u32) -> Result<MomentSdp, RelaxError> {
    Ok(build_with_map(problem, variant, k)?.0)
}

fn build_with_map(problem: &Problem, variant: Variant, k: u32) -> Result<(MomentSdp, AtomMap), RelaxError> {
    match (variant, problem) {
        (Variant::Plain, Problem::Gmp(g)) => Ok((build_gmp_moment_sdp(g, k)?, AtomMap::Identity)),
        (Variant::Plain, Problem::Pop(p)) => Ok((build_pop_moment_sdp(p, k)?, AtomMap::Identity)),
        (Variant::Homogenized, Problem::Gmp(g)) => {
            let h = homogenize_gmp(g)?;
            Ok((build_gmp_moment_sdp(&h, k)?, AtomMap::Dehomogenize { d: g.d }))
        }
        (Variant::Homogenized, Problem::Pop(p)) => Ok((
            build_homogenized_pop_sdp(p, k)?,
            AtomMap::Dehomogenize { d: p.f.degree() },
        )),
        (Variant::Denominator, Problem::Pop(p)) => Ok((build_denominator_sdp(p, k)?, AtomMap::Denominator { k })),
        (Variant::Denominator, Problem::Gmp(_)) => Err(RelaxError::DenominatorNeedsPop),
    }
}

/// The smallest order `variant` accepts for `problem`.
pub fn min_order(problem: &Problem, variant: Variant) -> Result<u32, RelaxError> {
    problem.validate()?;
    match (variant, problem) {
        (Variant::Plain, Problem::Gmp(g)) => Ok(degree_d0(g)),
        (Variant::Plain, Problem::Pop(p)) => Ok(degree_d0(&p.as_gmp())),
        (Variant::Homogenized, Problem::Gmp(g)) => Ok(degree_d0(&homogenize_gmp(g)?)),
        (Variant::Homogenized, Problem::Pop(p)) => homogenized_pop_min_order(p),
        (Variant::Denominator, Problem::Pop(p)) => {
            let base = half_ceil(p.f.degree());
            let dk = degree_dk(&p.set);
            Ok(base.max(dk.saturating_sub(base)))
        }
        (Variant::Denominator, Problem::Gmp(_)) => Err(RelaxError::DenominatorNeedsPop),
    }
}

/// Solves orders `k_min..=k_max` (default `k_min` is the variant's minimum),
/// certifying after every Optimal solve and stopping at the first certified
/// order.
pub fn solve_hierarchy(
    problem: &Problem,
    variant: Variant,
    k_min: Option<u32>,
    k_max: u32,
    opts: &HierarchyOptions,
) -> Result<HierarchyResult, RelaxError> {
    let min = min_order(problem, variant)?;
    let k_min = k_min.unwrap_or(min);
    if k_min < min {
        return Err(RelaxError::OrderTooSmall { k: k_min, min });
    }
    if k_max < k_min {
        return Err(RelaxError::Invalid(format!("k_max = {k_max} is below k_min = {k_min}")));
    }
    let mut result = HierarchyResult {
        variant,
        records: vec![],
        status: HierarchyStatus::Unresolved { max_order: k_max },
        value: None,
        theta: None,
        gamma: None,
        certificate: None,
        atoms: None,
        homogenized_atoms: None,
        atoms_at_infinity: vec![],
        warnings: vec![],
    };
    if variant == Variant::Homogenized && !problem.set().closed_at_infinity {
        result.warnings.push(
            "the set is not asserted to be closed at infinity; homogenized values may differ from the original".into(),
        );
    }
    if variant == Variant::Plain && !problem.set().archimedean {
        log::debug!("plain hierarchy on a set not asserted archimedean");
    }

    for k in k_min..=k_max {
        let (relax, map) = build_with_map(problem, variant, k)?;
        let moment_block_side = relax.sdp.blocks.first().map_or(0, |b| b.side);
        log::info!(
            "order {k}: {} variables, {} equalities, moment block {moment_block_side}",
            relax.sdp.nvars,
            relax.sdp.equalities.len()
        );
        let mut record = OrderRecord {
            k,
            status: SdpStatus::NumericalFailure,
            moment_value: None,
            sos_value: None,
            residuals: None,
            iterations: 0,
            sdp_variables: relax.sdp.nvars,
            moment_block_side,
            flat: None,
            sos_residual: None,
            note: None,
        };
        let sol = match relax.solve(&opts.solver) {
            Ok(s) => s,
            Err(e) => {
                record.note = Some(e.to_string());
                result.records.push(record);
                continue;
            }
        };
        record.status = sol.status;
        record.iterations = sol.iterations;
        record.residuals = Some(sol.residuals);
        if sol.status != SdpStatus::Optimal {
            record.note = Some(format!("solver stopped with {:?}", sol.status));
            result.records.push(record);
            continue;
        }
        record.moment_value = Some(sol.primal_objective);
        record.sos_value = Some(sol.dual_objective);
        match extract_sos_dual(&relax, &sol) {
            Ok(cert) => {
                record.sos_residual = Some(cert.residual);
                match problem {
                    Problem::Gmp(_) => result.theta = Some(cert.theta.clone()),
                    Problem::Pop(_) => result.gamma = Some(cert.value),
                }
            }
            Err(e) => record.note = Some(e.to_string()),
        }

        let w = relax.tms(&sol.primal);
        let pairings = PairingView {
            polys: &relax.pairings,
            rhs: &relax.rhs,
            m1: relax.m1,
        };
        let outcome = certify::certify_tms(
            &w,
            relax.d0,
            relax.dk,
            opts.rank_tol,
            &relax.set,
            Some(pairings),
            Some((&relax.objective, sol.primal_objective)),
            opts.feas_tol,
        );
        match outcome {
            FlatOutcome::NotFlat => {
                record.note.get_or_insert_with(|| "no flat truncation".into());
            }
            FlatOutcome::ExtractionFailed(flat, msg) => {
                record.flat = Some(flat);
                record.note = Some(msg);
            }
            FlatOutcome::Certified(cert) => {
                record.flat = Some(cert.flat);
                if cert.flat.rank_high == 0 {
                    record.note = Some("flat with rank zero: the optimal tms vanishes".into());
                    result.records.push(record);
                    result.status = HierarchyStatus::ZeroMeasure { order: k };
                    result.value = Some(sol.primal_objective);
                    return Ok(result);
                }
                if !cert.verification.passed {
                    record.note = Some("extracted atoms failed verification".into());
                    result.records.push(record);
                    continue;
                }
                let (atoms, hom) = match map {
                    AtomMap::Identity => (cert.atoms.clone(), None),
                    AtomMap::Dehomogenize { d } => {
                        let out = certify::dehomogenize_atoms(&cert.atoms, d, opts.tau_tol);
                        if !out.at_infinity.is_empty() {
                            result.warnings.push(format!(
                                "{} atom(s) at infinity; the value may not be attained",
                                out.at_infinity.len()
                            ));
                        }
                        result.atoms_at_infinity = out.at_infinity;
                        (out.measure, Some(cert.atoms.clone()))
                    }
                    AtomMap::Denominator { k } => {
                        let mut m = cert.atoms.clone();
                        for a in &mut m.atoms {
                            let theta = 1.0 + a.point.iter().map(|v| v * v).sum::<f64>();
                            a.weight *= theta.powi(k as i32);
                        }
                        (m, None)
                    }
                };
                result.records.push(record);
                result.status = HierarchyStatus::Converged { order: k };
                result.value = Some(sol.primal_objective);
                result.certificate = Some(cert);
                result.atoms = Some(atoms);
                result.homogenized_atoms = hom;
                return Ok(result);
            }
        }
        result.records.push(record);
    }
    Ok(result)
}
