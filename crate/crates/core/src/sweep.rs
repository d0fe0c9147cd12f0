//! Seeded random scenarios for agreement sweeps between the verifiers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::builder::{induce_rules, solve_multiplier, MenuItem};
use crate::characterizer::{characterize_payoffs, BOUNDARY_BAND};
use crate::error::{Error, Result};
use crate::model::{Axis, InterimRules, Payoffs, PlayerModel, Tolerances, TypeSpace, Valuation};
use crate::oracle::{verify_payoffs, ICVerdict, OracleOptions};
use crate::surrogate::surrogate_check;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Arbitrary outcomes and payments per node.
    RandomTable,
    /// Rules induced by a menu through the multiplier search.
    BuiltMenu,
    /// Built rules with one payment moved or the level shifted.
    PerturbedMenu,
    /// Non-decreasing 1-D allocation priced by the discrete envelope formula.
    EnvelopePricing,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub kind: ScenarioKind,
    pub space: TypeSpace,
    pub model: PlayerModel,
    pub rules: InterimRules,
    /// Multiplier chosen by the builder, when one was run.
    pub built_r: Option<f64>,
}

fn random_space(rng: &mut ChaCha8Rng, dim: usize) -> Result<TypeSpace> {
    let axes = (0..dim)
        .map(|_| {
            let nodes = if dim == 1 { rng.random_range(3..=9) } else { rng.random_range(3..=5) };
            let lo = rng.random_range(0.0..0.5);
            Axis::new(lo, lo + rng.random_range(0.5..1.5), nodes)
        })
        .collect::<Result<Vec<_>>>()?;
    let space = TypeSpace::regular(axes)?;
    if rng.random_bool(0.5) {
        return Ok(space);
    }
    let raw: Vec<f64> = (0..space.len()).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    space.with_weights(raw.iter().map(|w| w / total).collect())
}

fn random_model(rng: &mut ChaCha8Rng) -> Result<PlayerModel> {
    if rng.random_bool(0.5) {
        PlayerModel::budget(rng.random_range(0.02..0.6), Valuation::dot())
    } else {
        PlayerModel::roi(rng.random_range(0.0..1.0), Valuation::dot())
    }
}

fn random_menu(rng: &mut ChaCha8Rng, dim: usize) -> Vec<MenuItem> {
    let k = rng.random_range(2..=8);
    let mut menu = vec![MenuItem {
        outcome: vec![0.0; dim],
        price: 0.0,
    }];
    for _ in 1..k {
        let outcome: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
        let size: f64 = outcome.iter().sum();
        menu.push(MenuItem {
            price: size * rng.random_range(0.1..0.9),
            outcome,
        });
    }
    menu
}

/// A menu, a model whose constraint the menu's unconstrained choices violate
/// by a random factor, and a grid, for exercising the multiplier search.
pub fn builder_fixture(seed: u64) -> Result<(Vec<MenuItem>, PlayerModel, TypeSpace)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = if rng.random_bool(0.7) { 1 } else { 2 };
    let space = random_space(&mut rng, dim)?;
    let menu = random_menu(&mut rng, dim);
    let model = if rng.random_bool(0.5) {
        // tighten the budget below the unconstrained spend
        let free = crate::builder::AutoBidMechanism::new(menu.clone(), 0.0)?;
        let probe = PlayerModel::budget(1.0, Valuation::dot())?;
        let spend: f64 = space
            .points()
            .zip(space.weights())
            .map(|(v, w)| w * free.menu[free.choose(&probe, v)].price)
            .sum();
        PlayerModel::budget(spend * rng.random_range(0.2..0.9), Valuation::dot())?
    } else {
        PlayerModel::roi(rng.random_range(0.0..1.0), Valuation::dot())?
    };
    Ok((menu, model, space))
}

fn random_table(rng: &mut ChaCha8Rng, space: &TypeSpace) -> Result<InterimRules> {
    let d = space.dim();
    let distinct = rng.random_range(2..=4);
    let palette: Vec<Vec<f64>> = (0..distinct)
        .map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let outcomes: Vec<Vec<f64>> = (0..space.len())
        .map(|_| palette[rng.random_range(0..distinct)].clone())
        .collect();
    let payments = outcomes
        .iter()
        .map(|q| q.iter().sum::<f64>() * rng.random_range(0.0..0.8))
        .collect();
    InterimRules::tabulated(space.clone(), outcomes, payments)
}

/// `p_i = x_i·v_i − Σ_{k<i} x_k·(v_{k+1} − v_k)`: each type is indifferent to
/// imitating the type just below it.
fn envelope_rules(rng: &mut ChaCha8Rng, space: &TypeSpace) -> Result<InterimRules> {
    let n = space.len();
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    x.sort_by(f64::total_cmp);
    let v: Vec<f64> = space.points().map(|p| p[0]).collect();
    let mut payments = Vec::with_capacity(n);
    let mut rent = 0.0;
    for i in 0..n {
        if i > 0 {
            rent += x[i - 1] * (v[i] - v[i - 1]);
        }
        payments.push(x[i] * v[i] - rent);
    }
    InterimRules::tabulated(space.clone(), x.into_iter().map(|q| vec![q]).collect(), payments)
}

pub fn random_scenario(seed: u64) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    let dim = if rng.random_bool(0.6) { 1 } else { 2 };
    let space = random_space(&mut rng, dim)?;
    let roll: f64 = rng.random();
    let mut kind = if roll < 0.3 {
        ScenarioKind::RandomTable
    } else if roll < 0.6 {
        ScenarioKind::BuiltMenu
    } else if roll < 0.85 {
        ScenarioKind::PerturbedMenu
    } else {
        ScenarioKind::EnvelopePricing
    };
    if kind == ScenarioKind::EnvelopePricing && dim != 1 {
        kind = ScenarioKind::BuiltMenu;
    }
    let mut model = random_model(&mut rng)?;
    let mut built_r = None;
    let rules = match kind {
        ScenarioKind::RandomTable => random_table(&mut rng, &space)?,
        ScenarioKind::EnvelopePricing => {
            let rules = envelope_rules(&mut rng, &space)?;
            let probe = PlayerModel::budget(0.0, Valuation::dot())?;
            let spend = -Payoffs::build(&rules, &probe, &space)?.truthful_constraint();
            model = PlayerModel::budget(spend.max(0.0) + rng.random_range(0.0..0.2), Valuation::dot())?;
            rules
        }
        ScenarioKind::BuiltMenu | ScenarioKind::PerturbedMenu => {
            let menu = random_menu(&mut rng, dim);
            match solve_multiplier(menu, &model, &space, 1e-12) {
                Ok(out) => {
                    built_r = Some(out.mechanism.r);
                    let rules = induce_rules(&out.mechanism, &model, &space)?;
                    if kind == ScenarioKind::PerturbedMenu {
                        perturb(&mut rng, &rules, &space, &mut model)?
                    } else {
                        rules
                    }
                }
                Err(Error::Infeasible { .. } | Error::DegenerateScaling(_)) => {
                    kind = ScenarioKind::RandomTable;
                    random_table(&mut rng, &space)?
                }
                Err(e) => return Err(e),
            }
        }
    };
    Ok(Scenario {
        seed,
        kind,
        space,
        model,
        rules,
        built_r,
    })
}

fn perturb(rng: &mut ChaCha8Rng, rules: &InterimRules, space: &TypeSpace, model: &mut PlayerModel) -> Result<InterimRules> {
    let table = rules.tabulate(space)?;
    let mut payments = table.payments.clone();
    if rng.random_bool(0.3) {
        // loosen the constraint so a positive multiplier no longer binds
        *model = model.with_level(model.level() - rng.random_range(0.01..0.1));
    } else {
        let node = rng.random_range(0..space.len());
        let delta = rng.random_range(1e-3..0.1);
        payments[node] += if rng.random_bool(0.5) { delta } else { -delta };
    }
    InterimRules::tabulated(space.clone(), table.outcomes, payments)
}

/// Oracle verdicts within `BOUNDARY_BAND` of a tolerance.
pub fn oracle_boundary(verdict: &ICVerdict, level: f64, tol: &Tolerances) -> bool {
    let near = |x: f64, t: f64| x > t && x <= t + BOUNDARY_BAND;
    near(verdict.best_deviation_gain, tol.ic)
        || near((verdict.truthful_constraint - level).abs(), tol.bind)
        || near(level - verdict.truthful_constraint, tol.feas)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agreement {
    pub seed: u64,
    pub kind: ScenarioKind,
    pub oracle: bool,
    pub characterizer: bool,
    /// `None` when the surrogate route is unavailable for the scenario.
    pub surrogate: Option<bool>,
    pub boundary: bool,
}

impl Agreement {
    pub fn agrees(&self) -> bool {
        self.oracle == self.characterizer && self.surrogate.is_none_or(|s| s == self.oracle)
    }
}

/// Runs all three verifiers on one scenario.
pub fn cross_check(scenario: &Scenario, tol: &Tolerances) -> Result<Agreement> {
    let payoffs = Payoffs::build(&scenario.rules, &scenario.model, &scenario.space)?;
    let opts = OracleOptions {
        tol: *tol,
        ..OracleOptions::default()
    };
    let verdict = verify_payoffs(&payoffs, &opts)?;
    let cert = characterize_payoffs(&payoffs, tol);
    let surrogate = match surrogate_check(&scenario.rules, &scenario.model, &scenario.space, tol) {
        Ok(s) => Some(s),
        Err(Error::MissingLinearForm | Error::DegenerateScaling(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(Agreement {
        seed: scenario.seed,
        kind: scenario.kind,
        oracle: verdict.ic,
        characterizer: cert.ic,
        surrogate: surrogate.as_ref().map(|s| s.ic_candidate),
        boundary: oracle_boundary(&verdict, payoffs.level(), tol)
            || cert.boundary
            || surrogate.is_some_and(|s| s.boundary),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenarios_are_reproducible() {
        let a = random_scenario(11).unwrap();
        let b = random_scenario(11).unwrap();
        assert_eq!(a.kind, b.kind);
        assert_eq!(a.space, b.space);
        assert_eq!(a.rules.tabulate(&a.space).unwrap(), b.rules.tabulate(&b.space).unwrap());
    }

    #[test]
    fn envelope_pricing_is_ic() {
        for seed in 0..40 {
            let s = random_scenario(seed).unwrap();
            if s.kind == ScenarioKind::EnvelopePricing {
                let a = cross_check(&s, &Tolerances::default()).unwrap();
                assert!(a.oracle, "seed {seed}");
            }
        }
    }
}
