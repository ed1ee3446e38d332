use nalgebra::DVector;
use proptest::prelude::*;

use momsos::certify::{dehomogenize_atoms, extract_atoms, flat_truncation, normalize_atoms};
use momsos::moments::{
    coefficient_vector, localizing_matrix, localizing_vector, moment_matrix, pair, tms_from_atoms, Atom,
    AtomicMeasure, Tms,
};
use momsos::poly::{basis_len, enumerate_basis, Monomial, Polynomial};
use momsos::relax::{build_pop_moment_sdp, PopProblem, SemialgebraicSet};

fn poly(n: usize, max_deg: u32, max_terms: usize) -> impl Strategy<Value = Polynomial> {
    let term = (proptest::collection::vec(0..=max_deg, n), -2.0..2.0f64);
    proptest::collection::vec(term, 1..=max_terms).prop_map(move |terms| {
        let mut p = Polynomial::zero(n);
        for (mut e, c) in terms {
            // trim exponents down to the degree cap
            while e.iter().sum::<u32>() > max_deg {
                let i = e.iter().position(|&v| v > 0).unwrap();
                e[i] -= 1;
            }
            p.add_term(Monomial::new(e), c);
        }
        p
    })
}

fn tms(n: usize, d: u32) -> impl Strategy<Value = Tms> {
    proptest::collection::vec(-1.0..1.0f64, basis_len(n, d)).prop_map(move |v| Tms::new(n, d, v).unwrap())
}

fn measure(n: usize, max_atoms: usize) -> impl Strategy<Value = AtomicMeasure> {
    proptest::collection::vec((0.2..1.0f64, proptest::collection::vec(-1.0..1.0f64, n)), 1..=max_atoms)
        .prop_map(|atoms| {
            AtomicMeasure::new(atoms.into_iter().map(|(weight, point)| Atom { weight, point }).collect())
        })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn separated(mu: &AtomicMeasure, gap: f64) -> bool {
    let a = &mu.atoms;
    (0..a.len()).all(|i| (i + 1..a.len()).all(|j| dist(&a[i].point, &a[j].point) > gap))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn localizing_matrix_identity(
        (_n, k, q, p, w) in (1usize..=3, 1u32..=3).prop_flat_map(|(n, k)| {
            (Just(n), Just(k), poly(n, 2 * k, 4)).prop_flat_map(move |(n, k, q)| {
                let s = (2 * k - q.degree()) / 2;
                (Just(n), Just(k), Just(q), poly(n, s, 5), tms(n, 2 * k))
            })
        })
    ) {
        let s = (2 * k - q.degree()) / 2;
        let l = localizing_matrix(&q, &w, k).unwrap();
        let v = DVector::from_vec(coefficient_vector(&p, s));
        let lhs = (v.transpose() * &l * &v)[(0, 0)];
        let rhs = pair(&(&q * &(&p * &p)), &w).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn localizing_vector_identity(
        (n, q, w) in (1usize..=3, 1u32..=4).prop_flat_map(|(n, two_k)| {
            (Just(n), poly(n, two_k, 4), tms(n, two_k))
        })
    ) {
        let two_k = w.degree();
        let v = localizing_vector(&q, &w, two_k).unwrap();
        let basis = enumerate_basis(n, two_k - q.degree());
        prop_assert_eq!(v.len(), basis.len());
        for (entry, m) in v.iter().zip(basis.monomials()) {
            let shifted = &q * &Polynomial::monomial(m.clone(), 1.0);
            let want = pair(&shifted, &w).unwrap();
            prop_assert!((entry - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn moment_matrix_of_a_measure_is_psd(mu in measure(2, 4)) {
        let w = tms_from_atoms(&mu, 2, 4);
        let m = moment_matrix(&w, 2).unwrap();
        let eig = m.symmetric_eigen().eigenvalues;
        prop_assert!(eig.min() >= -1e-10 * (1.0 + eig.max()));
    }

    #[test]
    fn distributivity(
        (a, b, c) in (1usize..=3).prop_flat_map(|n| (poly(n, 3, 4), poly(n, 3, 4), poly(n, 3, 4))),
        x in proptest::collection::vec(-1.0..1.0f64, 3)
    ) {
        let lhs = &a * &(&b + &c);
        let rhs = &(&a * &b) + &(&a * &c);
        let pt = &x[..a.nvars()];
        prop_assert!((lhs.evaluate(pt) - rhs.evaluate(pt)).abs() <= 1e-10 * (1.0 + rhs.max_abs_coeff()));
        prop_assert!((&lhs - &rhs).clean(1e-12).is_zero());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn extraction_round_trip(
        mu in (1usize..=4).prop_flat_map(|n| measure(n, 4)).prop_filter("well separated", |m| separated(m, 0.3))
    ) {
        let n = mu.atoms[0].point.len();
        let r = mu.len();
        let mut t = 1;
        while basis_len(n, t - 1) < r {
            t += 1;
        }
        let w = tms_from_atoms(&mu, n, 2 * t);
        let flat = flat_truncation(&w, 1, 1, 1e-9).expect("flat");
        prop_assert_eq!(flat.rank_high, r);
        let got = extract_atoms(&w, flat.t, 1e-9).unwrap();
        prop_assert_eq!(got.len(), r);
        for a in &mu.atoms {
            let best = got
                .atoms
                .iter()
                .map(|b| dist(&a.point, &b.point).max((a.weight - b.weight).abs()))
                .fold(f64::INFINITY, f64::min);
            prop_assert!(best <= 1e-6, "atom {:?} off by {best}", a);
        }
    }

    #[test]
    fn homogenize_preserves_pairings(
        (p, mu, d) in (1usize..=3, 1u32..=4).prop_flat_map(|(n, d)| (poly(n, d, 5), measure(n, 3), Just(d)))
    ) {
        let hp = p.homogenize_to_degree(d).unwrap();
        prop_assert!(hp.is_homogeneous());
        let hmu = normalize_atoms(&mu, d);
        for a in &hmu.atoms {
            prop_assert!((a.point.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let direct = mu.integrate(&p);
        let lifted = hmu.integrate(&hp);
        let back = dehomogenize_atoms(&hmu, d, 1e-12).measure.integrate(&p);
        prop_assert!((direct - lifted).abs() <= 1e-8 * (1.0 + direct.abs()));
        prop_assert!((direct - back).abs() <= 1e-8 * (1.0 + direct.abs()));
    }

    #[test]
    fn derivatives_match_finite_differences(
        (p, x) in (1usize..=4).prop_flat_map(|n| (poly(n, 5, 6), proptest::collection::vec(-1.0..1.0f64, n)))
    ) {
        let h = 1e-4;
        let g = p.gradient();
        let hs = p.hessian();
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (p.evaluate(&xp) - p.evaluate(&xm)) / (2.0 * h);
            prop_assert!((fd - g[i].evaluate(&x)).abs() <= 1e-5);
            for j in 0..x.len() {
                let fd = (g[j].evaluate(&xp) - g[j].evaluate(&xm)) / (2.0 * h);
                prop_assert!((fd - hs[i][j].evaluate(&x)).abs() <= 1e-5);
                prop_assert_eq!(&hs[i][j], &hs[j][i]);
            }
        }
    }

    /// The tms of a probability measure on K is feasible for the compiled
    /// relaxation, so the relaxation can only lower the value.
    #[test]
    fn measures_on_k_are_feasible(
        angles in proptest::collection::vec(-1.2..1.2f64, 1..=4),
        weights in proptest::collection::vec(0.1..1.0f64, 4),
        f in poly(2, 4, 5),
        k in 2u32..=3
    ) {
        // unit circle intersected with x1 >= 0
        let mut set = SemialgebraicSet::whole_space(2);
        set.eq.push(
            Polynomial::from_terms(2, [(1.0, vec![2, 0]), (1.0, vec![0, 2]), (-1.0, vec![0, 0])]).unwrap(),
        );
        set.ineq.push(Polynomial::var(2, 0));
        let total: f64 = weights[..angles.len()].iter().sum();
        let mu = AtomicMeasure::new(
            angles
                .iter()
                .zip(&weights)
                .map(|(t, w)| Atom { weight: w / total, point: vec![t.cos(), t.sin()] })
                .collect(),
        );
        let relax = build_pop_moment_sdp(&PopProblem { set, f: f.clone() }, k).unwrap();
        let w = tms_from_atoms(&mu, 2, 2 * k);
        let x = w.values();
        for r in &relax.sdp.equalities {
            prop_assert!((r.eval(x) - r.rhs).abs() <= 1e-10);
        }
        for b in &relax.sdp.blocks {
            let e = b.value(x).symmetric_eigen().eigenvalues;
            prop_assert!(e.min() >= -1e-10 * (1.0 + e.max()));
        }
        let obj: f64 = relax.sdp.objective.iter().zip(x).map(|(c, v)| c * v).sum();
        prop_assert!((obj - mu.integrate(&f)).abs() <= 1e-10 * (1.0 + obj.abs()));
    }
}
