//! Fixtures shared by the benchmarks.

use exante_core::builder::{solve_multiplier, AutoBidMechanism, MenuItem};
use exante_core::model::{InterimRules, Payoffs, PlayerModel, TypeSpace, Valuation};

/// A budget-constrained player on an `n`-node line facing a menu of `k`
/// quadratically priced items, with the multiplier solved.
pub fn line_market(n: usize, k: usize, budget: f64) -> (AutoBidMechanism, PlayerModel, TypeSpace) {
    let space = TypeSpace::line(0.0, 1.0, n).expect("grid");
    let menu: Vec<MenuItem> = (0..k)
        .map(|j| {
            let q = j as f64 / (k - 1) as f64;
            MenuItem {
                outcome: vec![q],
                price: 0.4 * q * q,
            }
        })
        .collect();
    let model = PlayerModel::budget(budget, Valuation::dot()).expect("model");
    let out = solve_multiplier(menu, &model, &space, 1e-12).expect("build");
    (out.mechanism, model, space)
}

/// Payoffs of an `n`-node posted price with a surcharge on the top node, so
/// that the best response is not the identity.
pub fn broken_payoffs(n: usize) -> Payoffs {
    let space = TypeSpace::line(0.0, 1.0, n).expect("grid");
    let outcomes: Vec<Vec<f64>> = space.points().map(|v| vec![if v[0] >= 0.4 { 1.0 } else { 0.0 }]).collect();
    let mut payments: Vec<f64> = outcomes.iter().map(|q| 0.4 * q[0]).collect();
    payments[n - 1] += 0.3;
    let rules = InterimRules::tabulated(space.clone(), outcomes, payments).expect("rules");
    let model = PlayerModel::budget(0.3, Valuation::dot()).expect("model");
    Payoffs::build(&rules, &model, &space).expect("payoffs")
}
