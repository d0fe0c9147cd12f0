use exante_core::characterizer::{characterize_payoffs, critical_multiplier, deviation_sets};
use exante_core::model::{InterimRules, Payoffs, PlayerModel, Strategy as Mixed, Tolerances, TypeSpace, Valuation};
use exante_core::oracle::{exhaustive_best_response, solve_best_response, verify_payoffs, ExhaustiveOptions, OracleOptions};
use exante_core::surrogate::{reconstruct_payment, surrogate_field};
use exante_core::sweep::oracle_boundary;
use exante_core::Error;
use proptest::prelude::*;

fn payoffs() -> impl proptest::strategy::Strategy<Value = Payoffs> {
    (2usize..6).prop_flat_map(|n| {
        (
            prop::collection::vec(-1.0f64..1.0, n * n),
            prop::collection::vec(-1.0f64..1.0, n * n),
            prop::collection::vec(0.1f64..1.0, n),
            -1.0f64..0.5,
        )
            .prop_map(|(a, b, w, level)| {
                let total: f64 = w.iter().sum();
                Payoffs::from_matrices(a, b, w.iter().map(|x| x / total).collect(), level).unwrap()
            })
    })
}

fn stochastic(n: usize) -> impl proptest::strategy::Strategy<Value = Mixed> {
    prop::collection::vec(0.01f64..1.0, n * n).prop_map(move |raw| {
        let mut m = raw;
        for row in m.chunks_mut(n) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
            let drift: f64 = 1.0 - row.iter().sum::<f64>();
            row[0] += drift;
        }
        Mixed::from_matrix(n, m).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn value_is_linear_in_strategy(
        (p, s1, s2) in payoffs().prop_flat_map(|p| { let n = p.len(); (Just(p), stochastic(n), stochastic(n)) }),
        lambda in 0.0f64..1.0,
    ) {
        let mixed = s1.mix(&s2, lambda).unwrap();
        let (u1, c1) = p.value(&s1);
        let (u2, c2) = p.value(&s2);
        let (um, cm) = p.value(&mixed);
        prop_assert!((um - (lambda * u1 + (1.0 - lambda) * u2)).abs() < 1e-12);
        prop_assert!((cm - (lambda * c1 + (1.0 - lambda) * c2)).abs() < 1e-12);
    }

    #[test]
    fn best_response_is_feasible_with_one_split_row(p in payoffs()) {
        let opts = OracleOptions::default();
        match solve_best_response(&p, &opts) {
            Ok(br) => {
                prop_assert!(br.constraint_value >= p.level() - 1e-9);
                prop_assert!(br.strategy.fractional_rows().len() <= 1);
                prop_assert!(br.duality_gap(&p).abs() <= 1e-8 * (1.0 + br.value.abs()), "gap {}", br.duality_gap(&p));
                if p.truthful_constraint() >= p.level() {
                    prop_assert!(br.value >= p.truthful_utility() - 1e-12);
                }
            }
            Err(Error::Infeasible { best, .. }) => prop_assert!(best < p.level()),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn best_value_is_monotone_in_level(p in payoffs(), step in 0.01f64..0.3) {
        let opts = OracleOptions::default();
        let lower = p.with_level(p.level() - step);
        if let Ok(hi) = solve_best_response(&p, &opts) {
            let lo = solve_best_response(&lower, &opts).unwrap();
            prop_assert!(lo.value >= hi.value - 1e-12);
        }
    }

    #[test]
    fn verdict_is_scale_invariant(p in payoffs(), alpha in 0.1f64..10.0) {
        let n = p.len();
        let scale = |f: &dyn Fn(usize, usize) -> f64| (0..n * n).map(|k| alpha * f(k / n, k % n)).collect::<Vec<_>>();
        let q = Payoffs::from_matrices(scale(&|i, j| p.a(i, j)), scale(&|i, j| p.b(i, j)), p.weights().to_vec(), alpha * p.level()).unwrap();
        let opts = OracleOptions::default();
        let tol = Tolerances::default();
        let (x, y) = (verify_payoffs(&p, &opts).unwrap(), verify_payoffs(&q, &opts).unwrap());
        let fragile = oracle_boundary(&x, p.level(), &tol) || oracle_boundary(&y, q.level(), &tol)
            || (x.best_deviation_gain.abs() < 1e-6 && x.best_deviation_gain.abs() > 0.0);
        if !fragile {
            prop_assert_eq!(x.ic, y.ic);
        }
        if let (Ok(a), Ok(b)) = (solve_best_response(&p, &opts), solve_best_response(&q, &opts)) {
            prop_assert!((alpha * a.value - b.value).abs() <= 1e-8 * (1.0 + b.value.abs()));
        }
    }

    #[test]
    fn relabelling_types_changes_nothing(p in payoffs(), shift in 0usize..5) {
        let n = p.len();
        let perm: Vec<usize> = (0..n).map(|k| (k + shift) % n).collect();
        let q = p.permuted(&perm);
        let opts = OracleOptions::default();
        match (solve_best_response(&p, &opts), solve_best_response(&q, &opts)) {
            (Ok(a), Ok(b)) => prop_assert!((a.value - b.value).abs() < 1e-9),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
        }
        let tol = Tolerances::default();
        prop_assert_eq!(characterize_payoffs(&p, &tol).ic, characterize_payoffs(&q, &tol).ic);
    }

    #[test]
    fn deviation_masses_are_monotone(p in payoffs(), r in 0.0f64..5.0, dr in 0.0f64..5.0) {
        let tol = Tolerances::default();
        let (a, b) = (deviation_sets(&p, r, &tol), deviation_sets(&p, r + dr, &tol));
        prop_assert!(b.rho_plus <= a.rho_plus + 1e-15);
        prop_assert!(b.rho_minus >= a.rho_minus - 1e-15);
        let r0 = critical_multiplier(&p, &tol).unwrap();
        prop_assert_eq!(deviation_sets(&p, r0, &tol).rho_plus, 0.0);
    }

    #[test]
    fn exhaustive_search_brackets_the_optimum(p in payoffs()) {
        prop_assume!(p.len() <= 4);
        let opts = ExhaustiveOptions::default();
        match (solve_best_response(&p, &opts.oracle), exhaustive_best_response(&p, &opts)) {
            (Ok(lp), Ok(ex)) => {
                prop_assert!(ex.value <= lp.value + 1e-9);
                prop_assert!(lp.value - ex.value <= opts.mix_resolution * 2.0 * p.max_abs_utility() + 1e-12);
            }
            (Err(Error::Infeasible { .. }), Err(Error::Infeasible { .. })) => {}
            (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
        }
    }

    #[test]
    fn characterization_matches_oracle(p in payoffs()) {
        let tol = Tolerances::default();
        let opts = OracleOptions::default();
        let verdict = verify_payoffs(&p, &opts).unwrap();
        let cert = characterize_payoffs(&p, &tol);
        if !(cert.boundary || oracle_boundary(&verdict, p.level(), &tol)) {
            prop_assert_eq!(verdict.ic, cert.ic, "{:?} {:?}", verdict, cert);
        }
    }

    #[test]
    fn anchor_shifts_payments_by_a_constant(u0 in -1.0f64..1.0, slope in 0.1f64..2.0) {
        let space = TypeSpace::line(0.0, 1.0, 21).unwrap();
        let alloc: Vec<Vec<f64>> = space.points().map(|v| vec![slope * v[0]]).collect();
        let a = reconstruct_payment(&alloc, &|q| q.to_vec(), 0.0, 1.0, 1.0, &space, (0, 0.0), None).unwrap();
        let b = reconstruct_payment(&alloc, &|q| q.to_vec(), 0.0, 1.0, 1.0, &space, (0, u0), None).unwrap();
        for (x, y) in a.payments.iter().zip(&b.payments) {
            prop_assert!((x - y - u0).abs() < 1e-12);
        }
        let model = PlayerModel::budget(10.0, Valuation::dot()).unwrap();
        let fa = surrogate_field(&a.rules, &model, &space, 0.0, None).unwrap();
        let fb = surrogate_field(&b.rules, &model, &space, 0.0, None).unwrap();
        prop_assert!((fa.convexity_margin - fb.convexity_margin).abs() < 1e-12);
    }
}

#[test]
fn reconstruction_inverts_the_surrogate_field() {
    let space = TypeSpace::line(0.0, 1.0, 51).unwrap();
    let model = PlayerModel::budget(10.0, Valuation::dot()).unwrap();
    let outcomes: Vec<Vec<f64>> = space.points().map(|v| vec![v[0]]).collect();
    let payments: Vec<f64> = space.points().map(|v| 0.5 * v[0] * v[0] + 0.1).collect();
    let rules = InterimRules::tabulated(space.clone(), outcomes.clone(), payments.clone()).unwrap();
    let field = surrogate_field(&rules, &model, &space, 0.0, None).unwrap();
    let rec = reconstruct_payment(&outcomes, &|q| q.to_vec(), 0.0, 1.0, 1.0, &space, (0, field.utility[0]), None).unwrap();
    for (x, y) in rec.payments.iter().zip(&payments) {
        assert!((x - y).abs() < 1e-12);
    }
}
