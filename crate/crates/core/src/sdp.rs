//! A dense primal-dual interior-point solver for linear SDPs in free
//! variables:
//!
//! ```text
//! minimize    c' x
//! subject to  a_i' x  = b_i              (equalities)
//!             g_i' x >= h_i              (inequalities)
//!             F0_k + sum_j x_j F_jk  ⪰ 0  (PSD blocks)
//! ```
//!
//! with the dual
//!
//! ```text
//! maximize    b' y + h' z - sum_k <F0_k, Z_k>
//! subject to  c = sum_i y_i a_i + sum_i z_i g_i + sum_k F_k^*(Z_k),
//!             z >= 0,  Z_k ⪰ 0,
//! ```
//!
//! where `F_k^*(Z)_j = <F_jk, Z>`. Internally the pair is solved through a
//! homogeneous self-dual embedding with Nesterov-Todd scaling and a
//! Mehrotra predictor-corrector, so primal or dual infeasibility shows up as
//! a certificate instead of divergence.

use std::io::{BufRead, Write};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SVD};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::moments::MatrixTerm;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("malformed SDP: {0}")]
    Malformed(String),
    #[error("dump parse error on line {line}: {msg}")]
    Dump { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A sparse linear functional with right-hand side.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearRow {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    fn norm(&self) -> f64 {
        self.coeffs.iter().map(|(_, a)| a * a).sum::<f64>().sqrt()
    }
}

/// The affine symmetric map `x -> F0 + sum_j x_j F_j`, stored as upper
/// triangle entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PsdBlock {
    pub side: usize,
    /// `(row, col, value)` with `row <= col`.
    pub constant: Vec<(usize, usize, f64)>,
    pub terms: Vec<MatrixTerm>,
}

impl PsdBlock {
    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.side, self.side);
        for &(r, c, v) in &self.constant {
            m[(r, c)] += v;
        }
        for t in &self.terms {
            m[(t.row, t.col)] += t.coeff * x[t.var];
        }
        symmetrize_upper(&mut m);
        m
    }

    fn constant_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.side, self.side);
        for &(r, c, v) in &self.constant {
            m[(r, c)] += v;
        }
        symmetrize_upper(&mut m);
        m
    }

    /// `F^*(Z)` accumulated into `out` with factor `scale`.
    fn adjoint_into(&self, z: &DMatrix<f64>, scale: f64, out: &mut [f64]) {
        for t in &self.terms {
            let w = if t.row == t.col { 1.0 } else { 2.0 };
            out[t.var] += scale * w * t.coeff * z[(t.row, t.col)];
        }
    }
}

fn symmetrize_upper(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for a in 0..n {
        for b in (a + 1)..n {
            m[(b, a)] = m[(a, b)];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SdpProblem {
    pub nvars: usize,
    pub objective: Vec<f64>,
    pub equalities: Vec<LinearRow>,
    /// `row' x >= rhs`.
    pub inequalities: Vec<LinearRow>,
    pub blocks: Vec<PsdBlock>,
}

impl SdpProblem {
    pub fn new(nvars: usize) -> Self {
        SdpProblem {
            nvars,
            objective: vec![0.0; nvars],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        let bad = |msg: String| Err(SdpError::Malformed(msg));
        if self.objective.len() != self.nvars {
            return bad(format!(
                "objective has length {}, expected {}",
                self.objective.len(),
                self.nvars
            ));
        }
        for (kind, rows) in [("equality", &self.equalities), ("inequality", &self.inequalities)] {
            for (i, r) in rows.iter().enumerate() {
                if let Some(&(j, _)) = r.coeffs.iter().find(|(j, _)| *j >= self.nvars) {
                    return bad(format!("{kind} row {i} references variable {j}"));
                }
                if !r.rhs.is_finite() || r.coeffs.iter().any(|(_, a)| !a.is_finite()) {
                    return bad(format!("{kind} row {i} has non-finite data"));
                }
            }
        }
        for (k, b) in self.blocks.iter().enumerate() {
            for t in &b.terms {
                if t.row > t.col || t.col >= b.side || t.var >= self.nvars || !t.coeff.is_finite() {
                    return bad(format!("block {k} has an invalid term {t:?}"));
                }
            }
            for &(r, c, v) in &b.constant {
                if r > c || c >= b.side || !v.is_finite() {
                    return bad(format!("block {k} has an invalid constant entry ({r},{c})"));
                }
            }
        }
        Ok(())
    }

    pub fn dual_objective(&self, eq_dual: &[f64], ineq_dual: &[f64], block_duals: &[DMatrix<f64>]) -> f64 {
        let mut v: f64 = self.equalities.iter().zip(eq_dual).map(|(r, y)| r.rhs * y).sum();
        v += self.inequalities.iter().zip(ineq_dual).map(|(r, z)| r.rhs * z).sum::<f64>();
        for (b, z) in self.blocks.iter().zip(block_duals) {
            v -= b.constant_matrix().dot(z);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdpStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap)
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub primal: Vec<f64>,
    pub eq_dual: Vec<f64>,
    pub ineq_dual: Vec<f64>,
    pub block_duals: Vec<DMatrix<f64>>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub residuals: Residuals,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

/// Certificates must beat this ratio before infeasibility is reported.
const INFEASIBILITY_CONFIDENCE: f64 = 1e6;
const STEP_FRACTION: f64 = 0.99;

fn neg_part_sq_eigs(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .filter(|&&e| e < 0.0)
        .map(|e| e * e)
        .sum()
}

/// Recomputes relative primal/dual infeasibility and duality gap from
/// scratch. Cone violations count through the negative parts of `z` and
/// the eigenvalues of each block (primal `F(x)`, dual `Z`).
pub fn residuals(prob: &SdpProblem, sol: &SdpSolution) -> Residuals {
    residuals_of(prob, &sol.primal, &sol.eq_dual, &sol.ineq_dual, &sol.block_duals)
}

fn residuals_of(
    prob: &SdpProblem,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    zs: &[DMatrix<f64>],
) -> Residuals {
    let mut p2 = 0.0;
    let mut scale_p = 1.0;
    let mut bn = 0.0;
    for r in &prob.equalities {
        let d = r.eval(x) - r.rhs;
        p2 += d * d;
        bn += r.rhs * r.rhs;
    }
    let mut hn = 0.0;
    for r in &prob.inequalities {
        let d = (r.rhs - r.eval(x)).max(0.0);
        p2 += d * d;
        hn += r.rhs * r.rhs;
    }
    scale_p += bn.sqrt() + hn.sqrt();
    for b in &prob.blocks {
        p2 += neg_part_sq_eigs(&b.value(x));
        scale_p += b.constant_matrix().norm();
    }

    let mut grad = prob.objective.clone();
    for (r, &yi) in prob.equalities.iter().zip(y) {
        for &(j, a) in &r.coeffs {
            grad[j] -= a * yi;
        }
    }
    let mut d2 = 0.0;
    for (r, &zi) in prob.inequalities.iter().zip(z) {
        for &(j, a) in &r.coeffs {
            grad[j] -= a * zi;
        }
        d2 += zi.min(0.0).powi(2);
    }
    for (b, zm) in prob.blocks.iter().zip(zs) {
        b.adjoint_into(zm, -1.0, &mut grad);
        d2 += neg_part_sq_eigs(zm);
    }
    d2 += grad.iter().map(|g| g * g).sum::<f64>();
    let cn = prob.objective.iter().map(|c| c * c).sum::<f64>().sqrt();

    let pobj: f64 = prob.objective.iter().zip(x).map(|(c, x)| c * x).sum();
    let dobj = prob.dual_objective(y, z, zs);
    Residuals {
        primal: p2.sqrt() / scale_p,
        dual: d2.sqrt() / (1.0 + cn),
        gap: (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
    }
}

// ---------------------------------------------------------------------------
// Internal conic form:  min c'x  s.t.  A x = b,  G x + s = h,  s in K.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct ConeVec {
    lp: DVector<f64>,
    psd: Vec<DMatrix<f64>>,
}

impl ConeVec {
    fn zeros(l: usize, sides: &[usize]) -> Self {
        ConeVec {
            lp: DVector::zeros(l),
            psd: sides.iter().map(|&s| DMatrix::zeros(s, s)).collect(),
        }
    }

    fn dot(&self, o: &ConeVec) -> f64 {
        self.lp.dot(&o.lp) + self.psd.iter().zip(&o.psd).map(|(a, b)| a.dot(b)).sum::<f64>()
    }

    fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    fn axpy(&mut self, a: f64, o: &ConeVec) {
        self.lp.axpy(a, &o.lp, 1.0);
        for (m, n) in self.psd.iter_mut().zip(&o.psd) {
            m.zip_apply(n, |u, v| *u += a * v);
        }
    }

    fn scaled(&self, a: f64) -> ConeVec {
        ConeVec {
            lp: &self.lp * a,
            psd: self.psd.iter().map(|m| m * a).collect(),
        }
    }

    /// Largest `t` with `-min_eig(self) = t`, i.e. the shift that reaches the
    /// cone boundary.
    fn max_violation(&self) -> f64 {
        let mut t = f64::NEG_INFINITY;
        for &v in self.lp.iter() {
            t = t.max(-v);
        }
        for m in &self.psd {
            if m.nrows() > 0 {
                let e = m.clone().symmetric_eigenvalues();
                t = t.max(-e.min());
            }
        }
        t
    }

    fn add_identity(&mut self, a: f64) {
        self.lp.add_scalar_mut(a);
        for m in &mut self.psd {
            for i in 0..m.nrows() {
                m[(i, i)] += a;
            }
        }
    }
}

struct BlockOps {
    side: usize,
    f0: DMatrix<f64>,
    /// Terms grouped by variable: `(var, [(row, col, coeff)])`.
    by_var: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

struct Model {
    n: usize,
    c: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    eq_kept: Vec<usize>,
    eq_scale: Vec<f64>,
    lp_rows: Vec<Vec<(usize, f64)>>,
    lp_h: DVector<f64>,
    lp_scale: Vec<f64>,
    blocks: Vec<BlockOps>,
    sides: Vec<usize>,
}

impl Model {
    fn l(&self) -> usize {
        self.lp_rows.len()
    }

    fn p(&self) -> usize {
        self.a.nrows()
    }

    fn degree(&self) -> f64 {
        (self.l() + self.sides.iter().sum::<usize>()) as f64
    }

    fn h(&self) -> ConeVec {
        ConeVec {
            lp: self.lp_h.clone(),
            psd: self.blocks.iter().map(|b| b.f0.clone()).collect(),
        }
    }

    /// `G x`.
    fn g_apply(&self, x: &DVector<f64>) -> ConeVec {
        let lp = DVector::from_iterator(
            self.l(),
            self.lp_rows
                .iter()
                .map(|r| -r.iter().map(|&(j, a)| a * x[j]).sum::<f64>()),
        );
        let psd = self
            .blocks
            .iter()
            .map(|b| {
                let mut m = DMatrix::zeros(b.side, b.side);
                for (var, entries) in &b.by_var {
                    let xv = x[*var];
                    if xv == 0.0 {
                        continue;
                    }
                    for &(r, c, v) in entries {
                        m[(r, c)] -= v * xv;
                    }
                }
                symmetrize_upper(&mut m);
                m
            })
            .collect();
        ConeVec { lp, psd }
    }

    /// `G' u`.
    fn gt_apply(&self, u: &ConeVec) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for (r, &ui) in self.lp_rows.iter().zip(u.lp.iter()) {
            for &(j, a) in r {
                out[j] -= a * ui;
            }
        }
        for (b, m) in self.blocks.iter().zip(&u.psd) {
            for (var, entries) in &b.by_var {
                let mut s = 0.0;
                for &(r, c, v) in entries {
                    let w = if r == c { 1.0 } else { 2.0 };
                    s += w * v * m[(r, c)];
                }
                out[*var] -= s;
            }
        }
        out
    }
}

/// Nesterov-Todd scaling `W` with `W z = W^{-T} s = lambda`.
struct Scaling {
    d: DVector<f64>,
    lam_lp: DVector<f64>,
    r: Vec<DMatrix<f64>>,
    lam_psd: Vec<DVector<f64>>,
    /// `(R R')^{-1}`, the PSD part of `(W'W)^{-1}`.
    t: Vec<DMatrix<f64>>,
}

impl Scaling {
    fn identity(l: usize, sides: &[usize]) -> Self {
        Scaling {
            d: DVector::from_element(l, 1.0),
            lam_lp: DVector::from_element(l, 1.0),
            r: sides.iter().map(|&s| DMatrix::identity(s, s)).collect(),
            lam_psd: sides.iter().map(|&s| DVector::from_element(s, 1.0)).collect(),
            t: sides.iter().map(|&s| DMatrix::identity(s, s)).collect(),
        }
    }

    fn nt(s: &ConeVec, z: &ConeVec) -> Option<Self> {
        let mut d = DVector::zeros(s.lp.len());
        let mut lam_lp = DVector::zeros(s.lp.len());
        for i in 0..s.lp.len() {
            if s.lp[i] <= 0.0 || z.lp[i] <= 0.0 {
                return None;
            }
            d[i] = (s.lp[i] / z.lp[i]).sqrt();
            lam_lp[i] = (s.lp[i] * z.lp[i]).sqrt();
        }
        let mut r = Vec::new();
        let mut lam_psd = Vec::new();
        let mut t = Vec::new();
        for (sm, zm) in s.psd.iter().zip(&z.psd) {
            if sm.nrows() == 0 {
                r.push(DMatrix::zeros(0, 0));
                lam_psd.push(DVector::zeros(0));
                t.push(DMatrix::zeros(0, 0));
                continue;
            }
            let ls = Cholesky::new(sym(sm))?.l();
            let lz = Cholesky::new(sym(zm))?.l();
            let prod = lz.transpose() * &ls;
            let svd = SVD::new(prod, true, true);
            let u = svd.u?;
            let vt = svd.v_t?;
            let lam = svd.singular_values;
            if lam.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return None;
            }
            let isq = lam.map(|v| 1.0 / v.sqrt());
            // R = Ls V diag(1/sqrt(lam)),  R^{-1} = diag(1/sqrt(lam)) U' Lz'
            let rk = (&ls * vt.transpose()) * DMatrix::from_diagonal(&isq);
            let rik = DMatrix::from_diagonal(&isq) * (u.transpose() * lz.transpose());
            let tk = sym(&(rik.transpose() * &rik));
            r.push(rk);
            lam_psd.push(lam);
            t.push(tk);
        }
        Some(Scaling {
            d,
            lam_lp,
            r,
            lam_psd,
            t,
        })
    }

    fn lambda(&self) -> ConeVec {
        ConeVec {
            lp: self.lam_lp.clone(),
            psd: self.lam_psd.iter().map(|l| DMatrix::from_diagonal(l)).collect(),
        }
    }

    /// `W u`.
    fn w(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            lp: u.lp.component_mul(&self.d),
            psd: u
                .psd
                .iter()
                .zip(&self.r)
                .map(|(m, r)| sym(&(r.transpose() * m * r)))
                .collect(),
        }
    }

    /// `W^T u`.
    fn wt(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            lp: u.lp.component_mul(&self.d),
            psd: u
                .psd
                .iter()
                .zip(&self.r)
                .map(|(m, r)| sym(&(r * m * r.transpose())))
                .collect(),
        }
    }

    /// `(W'W)^{-1} u`.
    fn wtw_inv(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            lp: u.lp.component_div(&self.d.component_mul(&self.d)),
            psd: u.psd.iter().zip(&self.t).map(|(m, t)| sym(&(t * m * t))).collect(),
        }
    }

    /// `lambda \ r`: the solution `x` of `lambda ∘ x = r`.
    fn lam_solve(&self, r: &ConeVec) -> ConeVec {
        ConeVec {
            lp: r.lp.component_div(&self.lam_lp),
            psd: r
                .psd
                .iter()
                .zip(&self.lam_psd)
                .map(|(m, l)| {
                    let n = m.nrows();
                    DMatrix::from_fn(n, n, |i, j| 2.0 * m[(i, j)] / (l[i] + l[j]))
                })
                .collect(),
        }
    }

    /// Largest step `a` with `lambda + a * d` in the cone.
    fn max_step(&self, dir: &ConeVec) -> f64 {
        let mut amax = f64::INFINITY;
        for i in 0..dir.lp.len() {
            if dir.lp[i] < 0.0 {
                amax = amax.min(-self.lam_lp[i] / dir.lp[i]);
            }
        }
        for (m, l) in dir.psd.iter().zip(&self.lam_psd) {
            let n = m.nrows();
            if n == 0 {
                continue;
            }
            let isq = l.map(|v| 1.0 / v.sqrt());
            let scaled = DMatrix::from_fn(n, n, |i, j| m[(i, j)] * isq[i] * isq[j]);
            let e = sym(&scaled).symmetric_eigenvalues().min();
            if e < 0.0 {
                amax = amax.min(-1.0 / e);
            }
        }
        amax
    }
}

/// Jordan product `u ∘ v`.
fn jordan(u: &ConeVec, v: &ConeVec) -> ConeVec {
    ConeVec {
        lp: u.lp.component_mul(&v.lp),
        psd: u
            .psd
            .iter()
            .zip(&v.psd)
            .map(|(a, b)| {
                let p = a * b;
                (&p + p.transpose()) * 0.5
            })
            .collect(),
    }
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Factorization of `[0 A' G'; A 0 0; G 0 -W'W]`.
struct Kkt<'a> {
    model: &'a Model,
    scaling: &'a Scaling,
    chol_k: Cholesky<f64, Dyn>,
    augmented: bool,
    /// `L^{-1} A'`.
    y: DMatrix<f64>,
    chol_s: Option<Cholesky<f64, Dyn>>,
}

/// `tr(E_ab T E_cd T)` with `E_ab = e_a e_b' + e_b e_a'` off the diagonal and
/// `e_a e_a'` on it.
#[inline]
fn sym_trace(t: &DMatrix<f64>, a: usize, b: usize, c: usize, d: usize) -> f64 {
    let wa = if a == b { 0.5 } else { 1.0 };
    let wc = if c == d { 0.5 } else { 1.0 };
    2.0 * wa * wc * (t[(b, c)] * t[(a, d)] + t[(b, d)] * t[(a, c)])
}

fn schur_complement_h(model: &Model, scaling: &Scaling) -> DMatrix<f64> {
    let n = model.n;
    let mut h = DMatrix::<f64>::zeros(n, n);
    for (r, &di) in model.lp_rows.iter().zip(scaling.d.iter()) {
        let w = 1.0 / (di * di);
        for &(i, ai) in r {
            for &(j, aj) in r {
                h[(i, j)] += w * ai * aj;
            }
        }
    }
    for (b, t) in model.blocks.iter().zip(&scaling.t) {
        let vars = &b.by_var;
        for p in 0..vars.len() {
            let (vi, ref ei) = vars[p];
            for q in p..vars.len() {
                let (vj, ref ej) = vars[q];
                let mut s = 0.0;
                for &(a, bb, u) in ei {
                    for &(c, d, v) in ej {
                        s += u * v * sym_trace(t, a, bb, c, d);
                    }
                }
                h[(vi, vj)] += s;
                if vi != vj {
                    h[(vj, vi)] += s;
                }
            }
        }
    }
    h
}

impl<'a> Kkt<'a> {
    fn factor(model: &'a Model, scaling: &'a Scaling) -> Option<Self> {
        let h = schur_complement_h(model, scaling);
        let (chol_k, augmented) = match Cholesky::new(h.clone()) {
            Some(c) => (c, false),
            None => {
                let mut k = h + model.a.transpose() * &model.a;
                match Cholesky::new(k.clone()) {
                    Some(c) => (c, true),
                    None => {
                        let diag_max = k.diagonal().amax().max(1.0);
                        for i in 0..k.nrows() {
                            k[(i, i)] += 1e-13 * diag_max;
                        }
                        (Cholesky::new(k)?, true)
                    }
                }
            }
        };
        let p = model.p();
        let (y, chol_s) = if p > 0 {
            let y = chol_k.l_dirty().clone();
            let l = lower(&y);
            let ymat = l.solve_lower_triangular(&model.a.transpose())?;
            let s = ymat.transpose() * &ymat;
            let chol_s = match Cholesky::new(s.clone()) {
                Some(c) => c,
                None => {
                    let mut s = s;
                    let dm = s.diagonal().amax().max(1e-300);
                    for i in 0..s.nrows() {
                        s[(i, i)] += 1e-13 * dm;
                    }
                    Cholesky::new(s)?
                }
            };
            (ymat, Some(chol_s))
        } else {
            (DMatrix::zeros(model.n, 0), None)
        };
        Some(Kkt {
            model,
            scaling,
            chol_k,
            augmented,
            y,
            chol_s,
        })
    }

    fn solve_once(
        &self,
        bx: &DVector<f64>,
        by: &DVector<f64>,
        bz: &ConeVec,
    ) -> (DVector<f64>, DVector<f64>, ConeVec) {
        let m = self.model;
        let mut r1 = bx + m.gt_apply(&self.scaling.wtw_inv(bz));
        if self.augmented && m.p() > 0 {
            r1 += m.a.transpose() * by;
        }
        let l = self.chol_k.l_dirty();
        let mut v = r1.clone();
        lower_solve_in_place(l, &mut v);
        let dy = match &self.chol_s {
            Some(cs) => {
                let rhs = self.y.transpose() * &v - by;
                cs.solve(&rhs)
            }
            None => DVector::zeros(0),
        };
        let mut dx = r1;
        if m.p() > 0 {
            dx -= m.a.transpose() * &dy;
        }
        let dx = self.chol_k.solve(&dx);
        let mut gdx = m.g_apply(&dx);
        gdx.axpy(-1.0, bz);
        let dz = self.scaling.wtw_inv(&gdx);
        (dx, dy, dz)
    }

    /// Solves with one step of iterative refinement.
    fn solve(&self, bx: &DVector<f64>, by: &DVector<f64>, bz: &ConeVec) -> (DVector<f64>, DVector<f64>, ConeVec) {
        let (mut dx, mut dy, mut dz) = self.solve_once(bx, by, bz);
        let m = self.model;
        // residual of the unreduced system
        let mut rx = bx - m.gt_apply(&dz);
        if m.p() > 0 {
            rx -= m.a.transpose() * &dy;
        }
        let ry = if m.p() > 0 { by - &m.a * &dx } else { DVector::zeros(0) };
        let wtw = self.scaling.wt(&self.scaling.w(&dz));
        let mut rz = bz.clone();
        rz.axpy(-1.0, &m.g_apply(&dx));
        rz.axpy(1.0, &wtw);
        let (cx, cy, cz) = self.solve_once(&rx, &ry, &rz);
        dx += cx;
        dy += cy;
        dz.axpy(1.0, &cz);
        (dx, dy, dz)
    }
}

fn lower(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut l = m.clone();
    l.fill_upper_triangle(0.0, 1);
    l
}

fn lower_solve_in_place(l_dirty: &DMatrix<f64>, v: &mut DVector<f64>) {
    let n = v.len();
    for i in 0..n {
        let mut s = v[i];
        for j in 0..i {
            s -= l_dirty[(i, j)] * v[j];
        }
        v[i] = s / l_dirty[(i, i)];
    }
}

/// Drops linearly dependent equality rows (after unit normalization).
/// Returns `Err(row)` when a dependent row has an inconsistent right-hand
/// side.
fn independent_rows(
    rows: &[LinearRow],
    n: usize,
) -> Result<(Vec<usize>, Vec<f64>, DMatrix<f64>, DVector<f64>), usize> {
    let mut basis: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut kept = Vec::new();
    let mut scales = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let nrm = r.norm();
        if nrm == 0.0 {
            if r.rhs.abs() > 1e-12 {
                return Err(i);
            }
            continue;
        }
        let mut a = DVector::zeros(n);
        for &(j, v) in &r.coeffs {
            a[j] += v / nrm;
        }
        let mut beta = r.rhs / nrm;
        let bscale = 1.0 + beta.abs();
        for _ in 0..2 {
            for (q, qb) in &basis {
                let c = q.dot(&a);
                a.axpy(-c, q, 1.0);
                beta -= c * qb;
            }
        }
        let res = a.norm();
        if res > 1e-9 {
            basis.push((a / res, beta / res));
            kept.push(i);
            scales.push(nrm);
        } else if beta.abs() > 1e-8 * bscale {
            return Err(i);
        }
    }
    let p = kept.len();
    let mut amat = DMatrix::zeros(p, n);
    let mut b = DVector::zeros(p);
    for (k, (&i, &s)) in kept.iter().zip(&scales).enumerate() {
        for &(j, v) in &rows[i].coeffs {
            amat[(k, j)] += v / s;
        }
        b[k] = rows[i].rhs / s;
    }
    Ok((kept, scales, amat, b))
}

fn build_model(prob: &SdpProblem) -> Result<Model, usize> {
    let n = prob.nvars;
    let (eq_kept, eq_scale, a, b) = independent_rows(&prob.equalities, n)?;
    let mut lp_rows = Vec::new();
    let mut lp_h = Vec::new();
    let mut lp_scale = Vec::new();
    for r in &prob.inequalities {
        let s = r.norm().max(1e-300);
        lp_rows.push(r.coeffs.iter().map(|&(j, v)| (j, v / s)).collect());
        lp_h.push(-r.rhs / s);
        lp_scale.push(s);
    }
    let blocks: Vec<BlockOps> = prob
        .blocks
        .iter()
        .map(|blk| {
            let mut by_var: std::collections::BTreeMap<usize, Vec<(usize, usize, f64)>> = Default::default();
            for t in &blk.terms {
                if t.coeff != 0.0 {
                    by_var.entry(t.var).or_default().push((t.row, t.col, t.coeff));
                }
            }
            // merge duplicate positions per variable
            let by_var = by_var
                .into_iter()
                .map(|(v, mut es)| {
                    es.sort_by_key(|&(r, c, _)| (r, c));
                    let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(es.len());
                    for (r, c, x) in es {
                        match merged.last_mut() {
                            Some(last) if last.0 == r && last.1 == c => last.2 += x,
                            _ => merged.push((r, c, x)),
                        }
                    }
                    (v, merged)
                })
                .collect();
            BlockOps {
                side: blk.side,
                f0: blk.constant_matrix(),
                by_var,
            }
        })
        .collect();
    let sides = prob.blocks.iter().map(|b| b.side).collect();
    Ok(Model {
        n,
        c: DVector::from_column_slice(&prob.objective),
        a,
        b,
        eq_kept,
        eq_scale,
        lp_h: DVector::from_vec(lp_h),
        lp_rows,
        lp_scale,
        blocks,
        sides,
    })
}

struct Iterate {
    x: DVector<f64>,
    y: DVector<f64>,
    s: ConeVec,
    z: ConeVec,
    tau: f64,
    kappa: f64,
}

fn unscale(
    prob: &SdpProblem,
    model: &Model,
    it: &Iterate,
    scale: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<DMatrix<f64>>) {
    let x: Vec<f64> = it.x.iter().map(|v| v * scale).collect();
    let mut y = vec![0.0; prob.equalities.len()];
    for (k, (&i, &s)) in model.eq_kept.iter().zip(&model.eq_scale).enumerate() {
        y[i] = -it.y[k] * scale / s;
    }
    let z: Vec<f64> = it
        .z
        .lp
        .iter()
        .zip(&model.lp_scale)
        .map(|(v, s)| v * scale / s)
        .collect();
    let zs = it.z.psd.iter().map(|m| m * scale).collect();
    (x, y, z, zs)
}

fn finish(
    prob: &SdpProblem,
    model: &Model,
    it: &Iterate,
    scale: f64,
    status: SdpStatus,
    iterations: usize,
) -> SdpSolution {
    let (x, y, z, zs) = unscale(prob, model, it, scale);
    let res = residuals_of(prob, &x, &y, &z, &zs);
    let pobj = prob.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    let dobj = prob.dual_objective(&y, &z, &zs);
    SdpSolution {
        status,
        primal: x,
        eq_dual: y,
        ineq_dual: z,
        block_duals: zs,
        primal_objective: pobj,
        dual_objective: dobj,
        residuals: res,
        iterations,
    }
}

fn failure(prob: &SdpProblem, status: SdpStatus) -> SdpSolution {
    SdpSolution {
        status,
        primal: vec![0.0; prob.nvars],
        eq_dual: vec![0.0; prob.equalities.len()],
        ineq_dual: vec![0.0; prob.inequalities.len()],
        block_duals: prob.blocks.iter().map(|b| DMatrix::zeros(b.side, b.side)).collect(),
        primal_objective: f64::NAN,
        dual_objective: f64::NAN,
        residuals: Residuals {
            primal: f64::INFINITY,
            dual: f64::INFINITY,
            gap: f64::INFINITY,
        },
        iterations: 0,
    }
}

/// Solves the SDP. Malformed input is an error; every other outcome is
/// reported through [`SdpSolution::status`].
pub fn solve(prob: &SdpProblem, settings: &SolverSettings) -> Result<SdpSolution, SdpError> {
    prob.validate()?;
    if !(settings.tol > 0.0) {
        return Err(SdpError::Malformed("tolerance must be positive".into()));
    }
    let model = match build_model(prob) {
        Ok(m) => m,
        Err(row) => {
            log::debug!("equality row {row} is inconsistent with the others");
            return Ok(failure(prob, SdpStatus::PrimalInfeasible));
        }
    };
    Ok(run_ipm(prob, &model, settings))
}

fn run_ipm(prob: &SdpProblem, model: &Model, settings: &SolverSettings) -> SdpSolution {
    let l = model.l();
    let sides = model.sides.clone();
    let nu = model.degree();
    let h = model.h();
    let c = &model.c;
    let b = &model.b;

    let id = Scaling::identity(l, &sides);
    let kkt0 = match Kkt::factor(model, &id) {
        Some(k) => k,
        None => return failure(prob, SdpStatus::NumericalFailure),
    };
    // primal start: least squares for G x + s = h, A x = b
    let (x0, _, mut s0) = kkt0.solve(&DVector::zeros(model.n), b, &h);
    s0 = s0.scaled(-1.0);
    // dual start: minimum norm z with G' z + A' y + c = 0
    let (_, y0, mut z0) = kkt0.solve(&(-c), &DVector::zeros(model.p()), &ConeVec::zeros(l, &sides));
    drop(kkt0);
    let nrms = s0.norm();
    let ts = s0.max_violation();
    if ts >= -1e-8 * nrms.max(1.0) {
        s0.add_identity(1.0 + ts);
    }
    let nrmz = z0.norm();
    let tz = z0.max_violation();
    if tz >= -1e-8 * nrmz.max(1.0) {
        z0.add_identity(1.0 + tz);
    }
    if nu == 0.0 {
        // no cone at all: pure equality system
        let it = Iterate {
            x: x0,
            y: y0,
            s: s0,
            z: z0,
            tau: 1.0,
            kappa: 0.0,
        };
        let sol = finish(prob, model, &it, 1.0, SdpStatus::Optimal, 0);
        let st = if sol.residuals.max() <= settings.tol {
            SdpStatus::Optimal
        } else {
            SdpStatus::NumericalFailure
        };
        return SdpSolution { status: st, ..sol };
    }

    let mut it = Iterate {
        x: x0,
        y: y0,
        s: s0,
        z: z0,
        tau: 1.0,
        kappa: 1.0,
    };
    let resx0 = c.norm().max(1.0);
    let resy0 = b.norm().max(1.0);
    let resz0 = h.norm().max(1.0);

    for iter in 0..=settings.max_iter {
        // convergence tests on the rescaled iterate
        let candidate = finish(prob, model, &it, 1.0 / it.tau, SdpStatus::Optimal, iter);
        if candidate.residuals.max() <= settings.tol {
            log::debug!("optimal after {iter} iterations: {:?}", candidate.residuals);
            return candidate;
        }
        let hrx = {
            let mut v = model.gt_apply(&it.z);
            if model.p() > 0 {
                v += model.a.transpose() * &it.y;
            }
            v
        };
        let hz = h.dot(&it.z);
        let by = b.dot(&it.y);
        let cx = c.dot(&it.x);
        if hz + by < 0.0 {
            let pinf = hrx.norm() / resx0 / (-hz - by);
            if pinf * INFEASIBILITY_CONFIDENCE <= 1.0 {
                let mut sol = finish(prob, model, &it, 1.0 / (-hz - by), SdpStatus::PrimalInfeasible, iter);
                sol.primal = vec![f64::NAN; prob.nvars];
                return sol;
            }
        }
        if cx < 0.0 {
            let hry = if model.p() > 0 { &model.a * &it.x } else { DVector::zeros(0) };
            let mut hrz = model.g_apply(&it.x);
            hrz.axpy(1.0, &it.s);
            let dinf = (hry.norm() / resy0).max(hrz.norm() / resz0) / (-cx);
            if dinf * INFEASIBILITY_CONFIDENCE <= 1.0 {
                let mut sol = finish(prob, model, &it, 1.0 / (-cx), SdpStatus::DualInfeasible, iter);
                sol.eq_dual.iter_mut().for_each(|v| *v = f64::NAN);
                return sol;
            }
        }
        if iter == settings.max_iter {
            break;
        }

        let scaling = match Scaling::nt(&it.s, &it.z) {
            Some(s) => s,
            None => return finish(prob, model, &it, 1.0 / it.tau, SdpStatus::NumericalFailure, iter),
        };
        let lam = scaling.lambda();
        let kkt = match Kkt::factor(model, &scaling) {
            Some(k) => k,
            None => return finish(prob, model, &it, 1.0 / it.tau, SdpStatus::NumericalFailure, iter),
        };

        // residuals of the embedding
        let mut rx = hrx.clone();
        rx.axpy(it.tau, c, 1.0);
        let ry = if model.p() > 0 {
            &model.a * &it.x - b * it.tau
        } else {
            DVector::zeros(0)
        };
        let mut rz = model.g_apply(&it.x);
        rz.axpy(1.0, &it.s);
        rz.axpy(-it.tau, &h);
        let rt = it.kappa + cx + by + hz;
        let gap = it.s.dot(&it.z);
        let mu = (gap + it.tau * it.kappa) / (nu + 1.0);

        let (x1, y1, z1) = kkt.solve(&(-c), b, &h);
        let denom_base = c.dot(&x1) + b.dot(&y1) + h.dot(&z1) - it.kappa / it.tau;

        let lamlam = jordan(&lam, &lam);
        let direction = |eta: f64, rc: &ConeVec, rtk: f64| {
            // rc: right side of lambda ∘ (ds~ + dz~) = rc
            let lrc = scaling.lam_solve(rc);
            let mut bz = rz.scaled(-eta);
            bz.axpy(-1.0, &scaling.wt(&lrc));
            let bx = &rx * (-eta);
            let byv = &ry * (-eta);
            let (x0, y0, z0) = kkt.solve(&bx, &byv, &bz);
            let num = -eta * rt - rtk / it.tau - (c.dot(&x0) + b.dot(&y0) + h.dot(&z0));
            let dtau = num / denom_base;
            let dx = x0 + &x1 * dtau;
            let dy = y0 + &y1 * dtau;
            let mut dz = z0;
            dz.axpy(dtau, &z1);
            let dkappa = (rtk - it.kappa * dtau) / it.tau;
            let dzt = scaling.w(&dz);
            let mut dst = lrc;
            dst.axpy(-1.0, &dzt);
            (dx, dy, dz, dtau, dkappa, dst, dzt)
        };
        let step_len = |dst: &ConeVec, dzt: &ConeVec, dtau: f64, dkappa: f64| {
            let mut a = scaling.max_step(dst).min(scaling.max_step(dzt));
            if dtau < 0.0 {
                a = a.min(-it.tau / dtau);
            }
            if dkappa < 0.0 {
                a = a.min(-it.kappa / dkappa);
            }
            a
        };

        // predictor
        let rc_aff = lamlam.scaled(-1.0);
        let (_, _, _, dtau_a, dkap_a, dst_a, dzt_a) = direction(1.0, &rc_aff, -it.tau * it.kappa);
        let alpha_aff = step_len(&dst_a, &dzt_a, dtau_a, dkap_a).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3);

        // corrector
        let mut rc = lamlam.scaled(-1.0);
        rc.add_identity(sigma * mu);
        rc.axpy(-1.0, &jordan(&dst_a, &dzt_a));
        let rtk = -it.tau * it.kappa + sigma * mu - dtau_a * dkap_a;
        let (dx, dy, dz, dtau, dkappa, dst, dzt) = direction(1.0 - sigma, &rc, rtk);
        let amax = step_len(&dst, &dzt, dtau, dkappa);
        let alpha = (STEP_FRACTION * amax).min(1.0);
        if !(alpha.is_finite()) || alpha < 1e-12 || !dx.iter().all(|v| v.is_finite()) {
            log::debug!("step breakdown at iteration {iter}: alpha = {alpha}");
            return finish(prob, model, &it, 1.0 / it.tau, SdpStatus::NumericalFailure, iter);
        }
        let ds = scaling.wt(&dst);
        it.x.axpy(alpha, &dx, 1.0);
        if model.p() > 0 {
            it.y.axpy(alpha, &dy, 1.0);
        }
        it.s.axpy(alpha, &ds);
        it.z.axpy(alpha, &dz);
        for m in it.s.psd.iter_mut().chain(it.z.psd.iter_mut()) {
            *m = sym(m);
        }
        it.tau += alpha * dtau;
        it.kappa += alpha * dkappa;
        log::trace!(
            "iter {iter:3}  pobj {:+.8e}  dobj {:+.8e}  mu {mu:.2e}  alpha {alpha:.3}  tau {:.2e}  kappa {:.2e}",
            cx / it.tau,
            -(by + hz) / it.tau,
            it.tau,
            it.kappa
        );
    }
    finish(prob, model, &it, 1.0 / it.tau, SdpStatus::MaxIterations, settings.max_iter)
}

// ---------------------------------------------------------------------------
// Sparse text dump
// ---------------------------------------------------------------------------

/// Writes the problem in a line-oriented sparse format:
///
/// ```text
/// # comments
/// nvars <N>
/// block <k> psd <side> | block 1 eq <count> | block 2 ineq <count>
/// <block> <row> <col> <var> <value>
/// ```
///
/// Block 0 holds the objective (`0 0 0 <var> <c_var>`), block 1 the
/// equality rows and block 2 the inequality rows (`<row> 0 <var> <coeff>`,
/// with `var = 0` carrying the right-hand side), blocks `3..` the PSD maps
/// (`<row> <col> <var> <coeff>` on the upper triangle, `var = 0` is the
/// constant term). Rows, columns and variables are 1-based.
pub fn write_dump<W: Write>(prob: &SdpProblem, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# momsos sparse SDP dump")?;
    writeln!(out, "nvars {}", prob.nvars)?;
    writeln!(out, "block 1 eq {}", prob.equalities.len())?;
    writeln!(out, "block 2 ineq {}", prob.inequalities.len())?;
    for (k, b) in prob.blocks.iter().enumerate() {
        writeln!(out, "block {} psd {}", k + 3, b.side)?;
    }
    for (j, &c) in prob.objective.iter().enumerate() {
        if c != 0.0 {
            writeln!(out, "0 0 0 {} {:e}", j + 1, c)?;
        }
    }
    for (blk, rows) in [(1, &prob.equalities), (2, &prob.inequalities)] {
        for (i, r) in rows.iter().enumerate() {
            writeln!(out, "{blk} {} 0 0 {:e}", i + 1, r.rhs)?;
            for &(j, a) in &r.coeffs {
                writeln!(out, "{blk} {} 0 {} {:e}", i + 1, j + 1, a)?;
            }
        }
    }
    for (k, b) in prob.blocks.iter().enumerate() {
        for &(r, c, v) in &b.constant {
            writeln!(out, "{} {} {} 0 {:e}", k + 3, r + 1, c + 1, v)?;
        }
        for t in &b.terms {
            writeln!(out, "{} {} {} {} {:e}", k + 3, t.row + 1, t.col + 1, t.var + 1, t.coeff)?;
        }
    }
    Ok(())
}

/// Reads the format produced by [`write_dump`].
pub fn read_dump<R: BufRead>(input: R) -> Result<SdpProblem, SdpError> {
    let mut prob = SdpProblem::default();
    let mut have_nvars = false;
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        let err = |msg: &str| SdpError::Dump {
            line: lineno + 1,
            msg: msg.to_string(),
        };
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "nvars" => {
                let n: usize = toks.get(1).and_then(|t| t.parse().ok()).ok_or_else(|| err("bad nvars"))?;
                prob.nvars = n;
                prob.objective = vec![0.0; n];
                have_nvars = true;
            }
            "block" => {
                if toks.len() != 4 {
                    return Err(err("block header needs 3 fields"));
                }
                let k: usize = toks[1].parse().map_err(|_| err("bad block index"))?;
                let size: usize = toks[3].parse().map_err(|_| err("bad block size"))?;
                match (k, toks[2]) {
                    (1, "eq") => prob.equalities = vec![LinearRow::default(); size],
                    (2, "ineq") => prob.inequalities = vec![LinearRow::default(); size],
                    (k, "psd") if k >= 3 => {
                        if prob.blocks.len() != k - 3 {
                            return Err(err("psd blocks must be declared in order"));
                        }
                        prob.blocks.push(PsdBlock {
                            side: size,
                            ..Default::default()
                        });
                    }
                    _ => return Err(err("unknown block kind")),
                }
            }
            _ => {
                if !have_nvars {
                    return Err(err("entry before nvars"));
                }
                if toks.len() != 5 {
                    return Err(err("entry needs 5 fields"));
                }
                let nums: Vec<usize> = toks[..4]
                    .iter()
                    .map(|t| t.parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| err("bad index"))?;
                let val: f64 = toks[4].parse().map_err(|_| err("bad value"))?;
                let (blk, row, col, var) = (nums[0], nums[1], nums[2], nums[3]);
                match blk {
                    0 => {
                        let j = var.checked_sub(1).filter(|&j| j < prob.nvars).ok_or_else(|| err("bad variable"))?;
                        prob.objective[j] = val;
                    }
                    1 | 2 => {
                        let rows = if blk == 1 { &mut prob.equalities } else { &mut prob.inequalities };
                        let r = row
                            .checked_sub(1)
                            .and_then(|i| rows.get_mut(i))
                            .ok_or_else(|| err("row out of range"))?;
                        if var == 0 {
                            r.rhs = val;
                        } else {
                            r.coeffs.push((var - 1, val));
                        }
                    }
                    k => {
                        let b = prob.blocks.get_mut(k - 3).ok_or_else(|| err("undeclared block"))?;
                        if row == 0 || col == 0 {
                            return Err(err("psd indices are 1-based"));
                        }
                        if var == 0 {
                            b.constant.push((row - 1, col - 1, val));
                        } else {
                            b.terms.push(MatrixTerm {
                                row: row - 1,
                                col: col - 1,
                                var: var - 1,
                                coeff: val,
                            });
                        }
                    }
                }
            }
        }
    }
    prob.validate()?;
    Ok(prob)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn term(row: usize, col: usize, var: usize, coeff: f64) -> MatrixTerm {
        MatrixTerm { row, col, var, coeff }
    }

    fn row(coeffs: &[(usize, f64)], rhs: f64) -> LinearRow {
        LinearRow {
            coeffs: coeffs.to_vec(),
            rhs,
        }
    }

    #[test]
    fn lp_corner() {
        let mut p = SdpProblem::new(1);
        p.objective = vec![1.0];
        p.inequalities.push(row(&[(0, 1.0)], 1.0));
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.primal[0] - 1.0).abs() < 1e-7);
        assert!((sol.ineq_dual[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn one_by_one_block_with_fixed_value() {
        let mut p = SdpProblem::new(1);
        p.equalities.push(row(&[(0, 1.0)], 5.0));
        p.blocks.push(PsdBlock {
            side: 1,
            constant: vec![],
            terms: vec![term(0, 0, 0, 1.0)],
        });
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!(sol.primal_objective.abs() < 1e-8);
        assert!((sol.primal[0] - 5.0).abs() < 1e-7);
    }

    #[test]
    fn schur_condition_two_by_two() {
        // min w2 s.t. [[1, w1], [w1, w2]] ⪰ 0, w1 = 1  =>  w2 >= w1^2 = 1
        let mut p = SdpProblem::new(2);
        p.objective = vec![0.0, 1.0];
        p.equalities.push(row(&[(0, 1.0)], 1.0));
        p.blocks.push(PsdBlock {
            side: 2,
            constant: vec![(0, 0, 1.0)],
            terms: vec![term(0, 1, 0, 1.0), term(1, 1, 1, 1.0)],
        });
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.primal[1] - 1.0).abs() < 1e-6, "{:?}", sol.primal);
        assert!(residuals(&p, &sol).max() <= 1e-8);
    }

    #[test]
    fn residuals_of_hand_built_optimum() {
        let mut p = SdpProblem::new(2);
        p.objective = vec![0.0, 1.0];
        p.equalities.push(row(&[(0, 1.0)], 1.0));
        p.blocks.push(PsdBlock {
            side: 2,
            constant: vec![(0, 0, 1.0)],
            terms: vec![term(0, 1, 0, 1.0), term(1, 1, 1, 1.0)],
        });
        // Z = [[1, -1], [-1, 1]]: adjoint gives (2 * -1, 1) = (-2, 1);
        // c = (0, 1) = y (1, 0) + (-2, 1) => y = 2; dual obj = 2 - 1 = 1.
        let sol = SdpSolution {
            status: SdpStatus::Optimal,
            primal: vec![1.0, 1.0],
            eq_dual: vec![2.0],
            ineq_dual: vec![],
            block_duals: vec![DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])],
            primal_objective: 1.0,
            dual_objective: 1.0,
            residuals: Residuals::default(),
            iterations: 0,
        };
        let r = residuals(&p, &sol);
        assert!(r.max() <= 1e-12, "{r:?}");
        let eps = 1e-3;
        let mut pert = sol.clone();
        pert.primal[0] += eps;
        let r1 = residuals(&p, &pert).primal;
        pert.primal[0] = 1.0 + 2.0 * eps;
        let r2 = residuals(&p, &pert).primal;
        assert!(r1 > 0.0 && (r2 / r1 - 2.0).abs() < 0.05, "{r1} {r2}");
    }

    #[test]
    fn detects_unbounded_primal() {
        // min x s.t. x >= 0 reversed: min -x s.t. x >= 0 is unbounded
        let mut p = SdpProblem::new(1);
        p.objective = vec![-1.0];
        p.inequalities.push(row(&[(0, 1.0)], 0.0));
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::DualInfeasible);
    }

    #[test]
    fn detects_infeasible_primal() {
        // x >= 1 and [[-x]] ⪰ 0
        let mut p = SdpProblem::new(1);
        p.objective = vec![1.0];
        p.inequalities.push(row(&[(0, 1.0)], 1.0));
        p.blocks.push(PsdBlock {
            side: 1,
            constant: vec![],
            terms: vec![term(0, 0, 0, -1.0)],
        });
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::PrimalInfeasible);
    }

    #[test]
    fn dependent_equalities_are_tolerated() {
        let mut p = SdpProblem::new(2);
        p.objective = vec![1.0, 1.0];
        p.equalities.push(row(&[(0, 1.0), (1, -1.0)], 0.0));
        p.equalities.push(row(&[(0, 2.0), (1, -2.0)], 0.0));
        p.inequalities.push(row(&[(0, 1.0)], 1.0));
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.primal_objective - 2.0).abs() < 1e-7);
        p.equalities[1].rhs = 1.0;
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::PrimalInfeasible);
    }

    #[test]
    fn dump_round_trip() {
        let mut p = SdpProblem::new(2);
        p.objective = vec![0.5, 1.0];
        p.equalities.push(row(&[(0, 1.0)], 1.0));
        p.inequalities.push(row(&[(1, 2.0)], -1.0));
        p.blocks.push(PsdBlock {
            side: 2,
            constant: vec![(0, 0, 1.0)],
            terms: vec![term(0, 1, 0, 1.0), term(1, 1, 1, 1.0)],
        });
        let mut buf = Vec::new();
        write_dump(&p, &mut buf).unwrap();
        let back = read_dump(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, p);
        let bad = "nvars 1\n0 0 0 3 1.0\n";
        assert!(read_dump(std::io::Cursor::new(bad)).is_err());
    }
}
