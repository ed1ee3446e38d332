//! Flat truncation, atom extraction, dehomogenization of atoms, atom
//! verification and numerical first/second order optimality checks.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::moments::{moment_matrix, Atom, AtomicMeasure, Tms};
use crate::poly::{basis_len, enumerate_basis, Monomial, Polynomial};
use crate::relax::SemialgebraicSet;

/// A leading eigenvalue at or below this is treated as an exactly zero
/// moment matrix (zero measure).
pub const ZERO_MATRIX_TOL: f64 = 1e-12;

const EXTRACTION_SEED: u64 = 0x6d6f_6d73_6f73;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("atom extraction failed: {0}")]
    Extraction(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlatTruncation {
    pub t: u32,
    pub rank_low: usize,
    pub rank_high: usize,
}

/// Eigenvalues of a symmetric matrix sorted in decreasing order.
fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(m.nrows(), idx.len(), |r, c| eig.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

/// Number of singular values `sigma_i > rank_tol * sigma_1`; zero for a
/// (numerically) vanishing matrix.
pub fn numerical_rank(m: &DMatrix<f64>, rank_tol: f64) -> usize {
    if m.nrows() == 0 {
        return 0;
    }
    let sv = m.clone().symmetric_eigenvalues().map(f64::abs);
    let s1 = sv.max();
    if s1 <= ZERO_MATRIX_TOL {
        return 0;
    }
    sv.iter().filter(|&&s| s > rank_tol * s1).count()
}

/// Searches `t = d0, ..., k` (with `deg w = 2k`) for the first order at
/// which `rank M_{t - dK}[w] = rank M_t[w]`. A drop of at least one degree
/// is always required, so `dK = 0` is treated as `1`.
pub fn flat_truncation(w: &Tms, d0: u32, dk: u32, rank_tol: f64) -> Option<FlatTruncation> {
    let k = w.degree() / 2;
    let step = dk.max(1);
    for t in d0.max(step)..=k {
        let high = moment_matrix(w, t).ok()?;
        let low = moment_matrix(w, t - step).ok()?;
        let rank_high = numerical_rank(&high, rank_tol);
        let rank_low = numerical_rank(&low, rank_tol);
        if rank_high == rank_low {
            return Some(FlatTruncation {
                t,
                rank_low,
                rank_high,
            });
        }
    }
    None
}

fn pseudo_inverse(m: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>, CertifyError> {
    let svd = SVD::new(m.clone(), true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > rank_tol * smax) {
        return Err(CertifyError::Extraction(format!(
            "lower-degree rows are rank deficient (sigma ratio {:.2e})",
            smin / smax
        )));
    }
    svd.pseudo_inverse(0.0).map_err(|e| CertifyError::Extraction(e.to_string()))
}

/// Recovers the atoms of a flat moment matrix `M_t[w]` from its column
/// space: multiplication matrices on the rank-`r` range are diagonalized
/// simultaneously through the Schur form of a random combination, then
/// weights come from a least-squares Vandermonde solve on moments of degree
/// at most `t`.
pub fn extract_atoms(w: &Tms, t: u32, rank_tol: f64) -> Result<AtomicMeasure, CertifyError> {
    let n = w.nvars();
    let m = moment_matrix(w, t).map_err(|e| CertifyError::Dimension(e.to_string()))?;
    let (vals, vecs) = sorted_eigen(&m);
    let s1 = vals.first().copied().unwrap_or(0.0);
    if s1 <= ZERO_MATRIX_TOL {
        return Ok(AtomicMeasure::default());
    }
    let r = vals.iter().filter(|&&v| v > rank_tol * s1).count();
    let basis = enumerate_basis(n, t);
    if t == 0 {
        return Err(CertifyError::Extraction(
            "order 0 carries no multiplication structure".into(),
        ));
    }
    let v = DMatrix::from_fn(basis.len(), r, |i, j| vecs[(i, j)] * vals[j].sqrt());
    let low = basis_len(n, t - 1);
    let v_low = v.rows(0, low).into_owned();
    let pinv = pseudo_inverse(&v_low, rank_tol)?;

    let mut mult = Vec::with_capacity(n);
    for i in 0..n {
        let xi = Monomial::var(n, i);
        let rows: Vec<usize> = basis.monomials()[..low]
            .iter()
            .map(|beta| basis.position(&beta.mul(&xi)).expect("degree <= t"))
            .collect();
        let vi = DMatrix::from_fn(low, r, |a, b| v[(rows[a], b)]);
        mult.push(&pinv * vi);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(EXTRACTION_SEED);
    let mut coeffs: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = coeffs.iter().sum();
    coeffs.iter_mut().for_each(|c| *c /= total);
    let mut comb = DMatrix::zeros(r, r);
    for (c, mi) in coeffs.iter().zip(&mult) {
        comb += mi * *c;
    }
    let scale = comb.amax().max(1.0);
    let (q, tri) = comb
        .clone()
        .try_schur(1e-14, 10_000)
        .ok_or_else(|| CertifyError::Extraction("Schur iteration did not converge".into()))?
        .unpack();
    for j in 1..r {
        if tri[(j, j - 1)].abs() > 1e-8 * scale {
            return Err(CertifyError::Extraction(
                "multiplication operators have complex eigenvalues".into(),
            ));
        }
    }

    let points: Vec<Vec<f64>> = (0..r)
        .map(|j| {
            let qj = q.column(j);
            mult.iter().map(|mi| (qj.transpose() * mi * qj)[(0, 0)]).collect()
        })
        .collect();

    let vand = DMatrix::from_fn(basis.len(), r, |a, j| basis.get(a).eval(&points[j]));
    let rhs = DVector::from_column_slice(&w.values()[..basis.len()]);
    let weights = SVD::new(vand, true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| CertifyError::Extraction(e.to_string()))?;
    if let Some(bad) = weights.iter().find(|&&l| !(l > 0.0)) {
        return Err(CertifyError::Extraction(format!("non-positive weight {bad:.3e}")));
    }
    Ok(AtomicMeasure::new(
        weights
            .iter()
            .zip(points)
            .map(|(&weight, point)| Atom { weight, point })
            .collect(),
    ))
}

/// Atoms of a measure on the homogenized set mapped back to the original
/// space, with those too close to `x0 = 0` kept apart.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dehomogenized {
    pub measure: AtomicMeasure,
    pub at_infinity: Vec<Atom>,
}

/// `(tau, v)` with weight `lambda` becomes `v / tau` with weight
/// `lambda * tau^d`; atoms with `|tau| <= tau_tol` are reported as atoms at
/// infinity.
pub fn dehomogenize_atoms(mu: &AtomicMeasure, d: u32, tau_tol: f64) -> Dehomogenized {
    let mut out = Dehomogenized::default();
    for a in &mu.atoms {
        let tau = a.point[0];
        if tau.abs() <= tau_tol {
            out.at_infinity.push(a.clone());
            continue;
        }
        out.measure.atoms.push(Atom {
            weight: a.weight * tau.powi(d as i32),
            point: a.point[1..].iter().map(|v| v / tau).collect(),
        });
    }
    out
}

/// The inverse map: `u` becomes `(1, u) / sqrt(1 + |u|^2)` with weight
/// `lambda * (1 + |u|^2)^{d/2}`.
pub fn normalize_atoms(mu: &AtomicMeasure, d: u32) -> AtomicMeasure {
    AtomicMeasure::new(
        mu.atoms
            .iter()
            .map(|a| {
                let theta = 1.0 + a.point.iter().map(|v| v * v).sum::<f64>();
                let s = theta.sqrt();
                let mut point = Vec::with_capacity(a.point.len() + 1);
                point.push(1.0 / s);
                point.extend(a.point.iter().map(|v| v / s));
                Atom {
                    weight: a.weight * s.powi(d as i32),
                    point,
                }
            })
            .collect(),
    )
}

/// Pairing data checked against a candidate measure.
#[derive(Debug, Clone, Copy)]
pub struct PairingView<'a> {
    pub polys: &'a [Polynomial],
    pub rhs: &'a [f64],
    pub m1: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomResidual {
    /// `|c_j(u)|` for `j` in E.
    pub eq: Vec<f64>,
    /// `max(0, -c_j(u))` for `j` in I.
    pub ineq: Vec<f64>,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomVerification {
    pub atoms: Vec<AtomResidual>,
    /// Equality pairings report `|sum lambda a_i(u) - b_i|`, inequality
    /// pairings the shortfall `max(0, b_i - sum lambda a_i(u))`.
    pub pairing_residuals: Vec<f64>,
    pub objective_value: Option<f64>,
    pub objective_residual: Option<f64>,
    pub passed: bool,
}

/// Checks each atom against the set and, when given, the measure against
/// the pairings and an objective value. Pairing and objective residuals are
/// compared to `feas_tol * (1 + |target|)`.
pub fn verify_atoms(
    mu: &AtomicMeasure,
    set: &SemialgebraicSet,
    pairings: Option<PairingView<'_>>,
    objective: Option<(&Polynomial, f64)>,
    feas_tol: f64,
) -> AtomVerification {
    let mut passed = true;
    let atoms: Vec<AtomResidual> = mu
        .atoms
        .iter()
        .map(|a| {
            let eq: Vec<f64> = set.eq.iter().map(|c| c.evaluate(&a.point).abs()).collect();
            let ineq: Vec<f64> = set.ineq.iter().map(|c| (-c.evaluate(&a.point)).max(0.0)).collect();
            let feasible = eq.iter().chain(&ineq).all(|&r| r <= feas_tol);
            passed &= feasible;
            AtomResidual { eq, ineq, feasible }
        })
        .collect();
    let mut pairing_residuals = Vec::new();
    if let Some(p) = pairings {
        for (i, (a, &b)) in p.polys.iter().zip(p.rhs).enumerate() {
            let v = mu.integrate(a);
            let r = if i < p.m1 { (v - b).abs() } else { (b - v).max(0.0) };
            passed &= r <= feas_tol * (1.0 + b.abs());
            pairing_residuals.push(r);
        }
    }
    let (objective_value, objective_residual) = match objective {
        Some((f, target)) => {
            let v = mu.integrate(f);
            let r = (v - target).abs();
            passed &= r <= feas_tol * (1.0 + target.abs());
            (Some(v), Some(r))
        }
        None => (None, None),
    };
    AtomVerification {
        atoms,
        pairing_residuals,
        objective_value,
        objective_residual,
        passed,
    }
}

/// A certified flat truncation together with the extracted, verified atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub flat: FlatTruncation,
    pub atoms: AtomicMeasure,
    pub verification: AtomVerification,
    /// Max entry deviation between the atoms' moments and `w` up to degree
    /// `2 (t - dK)`.
    pub moment_residual: f64,
}

/// Outcome of trying to certify a tms.
#[derive(Debug, Clone, PartialEq)]
pub enum FlatOutcome {
    NotFlat,
    ExtractionFailed(FlatTruncation, String),
    Certified(Certificate),
}

/// Flat truncation, extraction and verification in one pass.
pub fn certify_tms(
    w: &Tms,
    d0: u32,
    dk: u32,
    rank_tol: f64,
    set: &SemialgebraicSet,
    pairings: Option<PairingView<'_>>,
    objective: Option<(&Polynomial, f64)>,
    feas_tol: f64,
) -> FlatOutcome {
    let Some(flat) = flat_truncation(w, d0, dk, rank_tol) else {
        return FlatOutcome::NotFlat;
    };
    let atoms = match extract_atoms(w, flat.t, rank_tol) {
        Ok(a) => a,
        Err(e) => return FlatOutcome::ExtractionFailed(flat, e.to_string()),
    };
    let low_deg = 2 * (flat.t - dk.max(1).min(flat.t));
    let moments = crate::moments::tms_from_atoms(&atoms, w.nvars(), low_deg);
    let moment_residual = moments
        .values()
        .iter()
        .zip(w.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let verification = verify_atoms(&atoms, set, pairings, objective, feas_tol);
    FlatOutcome::Certified(Certificate {
        flat,
        atoms,
        verification,
        moment_residual,
    })
}

// ---------------------------------------------------------------------------
// Optimality conditions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub point: Vec<f64>,
    /// Indices into the equality list whose value is within `act_tol`.
    pub active_eq: Vec<usize>,
    /// Indices into the inequality list whose value is within `act_tol`.
    pub active_ineq: Vec<usize>,
    pub licq: bool,
    pub jacobian_singular_values: Vec<f64>,
    /// Multipliers per equality (zero when not active).
    pub multipliers_eq: Vec<f64>,
    /// Multipliers per inequality (zero when not active).
    pub multipliers_ineq: Vec<f64>,
    pub kkt_residual: f64,
    /// Set when LICQ fails and the multipliers are only one least-squares
    /// choice among many.
    pub degenerate: bool,
    pub scc: bool,
    pub scc_margin: Option<f64>,
    pub sosc: bool,
    pub projected_hessian_eigenvalues: Vec<f64>,
}

/// `min |A x - b|` subject to `x >= 0` (Lawson-Hanson active set).
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return x;
    }
    let mut passive = vec![false; n];
    let tol = 1e-12 * a.amax().max(1.0) * b.amax().max(1.0) * (n as f64);
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let mut out = DVector::zeros(n);
        if idx.is_empty() {
            return out;
        }
        let sub = DMatrix::from_fn(a.nrows(), idx.len(), |r, c| a[(r, idx[c])]);
        if let Ok(s) = SVD::new(sub, true, true).solve(b, 1e-14) {
            for (k, &j) in idx.iter().enumerate() {
                out[j] = s[k];
            }
        }
        out
    };
    for _outer in 0..(3 * n + 10) {
        let grad = a.transpose() * (b - a * &x);
        let cand = (0..n)
            .filter(|&j| !passive[j] && grad[j] > tol)
            .max_by(|&i, &j| grad[i].total_cmp(&grad[j]));
        let Some(j) = cand else { break };
        passive[j] = true;
        for _inner in 0..(3 * n + 10) {
            let z = solve_passive(&passive);
            if (0..n).filter(|&i| passive[i]).all(|i| z[i] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for i in 0..n {
                if passive[i] && z[i] <= 0.0 {
                    alpha = alpha.min(x[i] / (x[i] - z[i]));
                }
            }
            x += (z - &x) * alpha;
            for i in 0..n {
                if passive[i] && x[i] <= tol {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
        }
    }
    x
}

fn eval_gradient(p: &Polynomial, x: &[f64]) -> DVector<f64> {
    DVector::from_iterator(p.nvars(), p.gradient().iter().map(|g| g.evaluate(x)))
}

fn eval_hessian(p: &Polynomial, x: &[f64]) -> DMatrix<f64> {
    let h = p.hessian();
    let n = p.nvars();
    DMatrix::from_fn(n, n, |i, j| h[i][j].evaluate(x))
}

/// Numerical LICQ, KKT multipliers, strict complementarity and the second
/// order sufficient condition at `x` for `min f` over `set`.
pub fn check_optimality(
    f: &Polynomial,
    set: &SemialgebraicSet,
    x: &[f64],
    act_tol: f64,
    tol: f64,
) -> Result<OptimalityReport, CertifyError> {
    let n = f.nvars();
    if x.len() != n || set.nvars != n {
        return Err(CertifyError::Dimension(format!(
            "point has {} coordinates, problem has {n} variables",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CertifyError::Dimension("point must be finite".into()));
    }
    let active_eq: Vec<usize> = (0..set.eq.len())
        .filter(|&j| set.eq[j].evaluate(x).abs() <= act_tol)
        .collect();
    let active_ineq: Vec<usize> = (0..set.ineq.len())
        .filter(|&j| set.ineq[j].evaluate(x).abs() <= act_tol)
        .collect();
    let grads: Vec<DVector<f64>> = active_eq
        .iter()
        .map(|&j| eval_gradient(&set.eq[j], x))
        .chain(active_ineq.iter().map(|&j| eval_gradient(&set.ineq[j], x)))
        .collect();
    let na = grads.len();
    let ne = active_eq.len();
    // columns are the active gradients
    let jac_t = DMatrix::from_fn(n, na, |r, c| grads[c][r]);

    let (licq, jacobian_singular_values) = if na == 0 {
        (true, vec![])
    } else {
        let sv = SVD::new(jac_t.clone(), false, false).singular_values;
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let ok = na <= n && s[0] > 0.0 && *s.last().unwrap() > tol * s[0];
        (ok, s)
    };

    // multipliers: free on equalities, nonnegative on inequalities
    let g = eval_gradient(f, x);
    let mut lambda = DVector::zeros(na);
    if na > 0 {
        let ae = jac_t.columns(0, ne).into_owned();
        let ai = jac_t.columns(ne, na - ne).into_owned();
        let (proj, ae_pinv) = if ne > 0 {
            let pinv = SVD::new(ae.clone(), true, true)
                .pseudo_inverse(1e-12)
                .map_err(|e| CertifyError::Dimension(e.to_string()))?;
            (DMatrix::identity(n, n) - &ae * &pinv, Some(pinv))
        } else {
            (DMatrix::identity(n, n), None)
        };
        let li = nnls(&(&proj * &ai), &(&proj * &g));
        let le = match ae_pinv {
            Some(p) => p * (&g - &ai * &li),
            None => DVector::zeros(0),
        };
        lambda.rows_mut(0, ne).copy_from(&le);
        lambda.rows_mut(ne, na - ne).copy_from(&li);
    }
    let mut multipliers_eq = vec![0.0; set.eq.len()];
    let mut multipliers_ineq = vec![0.0; set.ineq.len()];
    for (k, &j) in active_eq.iter().enumerate() {
        multipliers_eq[j] = lambda[k];
    }
    for (k, &j) in active_ineq.iter().enumerate() {
        multipliers_ineq[j] = lambda[ne + k];
    }
    let mut lag_grad = g.clone();
    for (k, gr) in grads.iter().enumerate() {
        lag_grad.axpy(-lambda[k], gr, 1.0);
    }
    let kkt_residual = lag_grad.norm();

    let scc_margin = (0..set.ineq.len())
        .map(|j| multipliers_ineq[j] + set.ineq[j].evaluate(x))
        .reduce(f64::min);
    let scc = scc_margin.is_none_or(|m| m > tol);

    // Hessian of the Lagrangian on the null space of the active gradients
    let mut hess = eval_hessian(f, x);
    for (k, &j) in active_eq.iter().enumerate() {
        hess -= eval_hessian(&set.eq[j], x) * lambda[k];
    }
    for (k, &j) in active_ineq.iter().enumerate() {
        hess -= eval_hessian(&set.ineq[j], x) * lambda[ne + k];
    }
    let null = if na == 0 {
        DMatrix::identity(n, n)
    } else {
        let jtj = &jac_t * jac_t.transpose();
        let (vals, vecs) = sorted_eigen(&jtj);
        let smax = vals[0].max(0.0).sqrt();
        let cols: Vec<usize> = (0..n)
            .filter(|&i| vals[i].max(0.0).sqrt() <= tol * smax.max(f64::MIN_POSITIVE))
            .collect();
        DMatrix::from_fn(n, cols.len(), |r, c| vecs[(r, cols[c])])
    };
    let (sosc, projected_hessian_eigenvalues) = if null.ncols() == 0 {
        (true, vec![])
    } else {
        let ph = null.transpose() * &hess * &null;
        let ph = (&ph + ph.transpose()) * 0.5;
        let mut e: Vec<f64> = ph.symmetric_eigenvalues().iter().copied().collect();
        e.sort_by(|a, b| a.total_cmp(b));
        (e[0] > tol, e)
    };

    Ok(OptimalityReport {
        point: x.to_vec(),
        active_eq,
        active_ineq,
        licq,
        jacobian_singular_values,
        multipliers_eq,
        multipliers_ineq,
        kkt_residual,
        degenerate: !licq,
        scc,
        scc_margin,
        sosc,
        projected_hessian_eigenvalues,
    })
}
