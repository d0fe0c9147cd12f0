//! Exact best responses to a mechanism under the ex-ante constraint.
//!
//! On a grid the player's problem is the linear program
//!
//! ```text
//! max_s  Σ_i ρ_i Σ_j s_ij a_ij   s.t.  Σ_i ρ_i Σ_j s_ij b_ij ≥ C,  rows of s stochastic
//! ```
//!
//! with a single linking constraint. It is solved through its Lagrangian: for a
//! fixed multiplier λ every row independently picks `argmax_j a_ij + λ·b_ij`, the
//! achieved constraint value is a non-decreasing step function of λ, and at the
//! critical λ exactly one row is split between its two tied reports.

mod exhaustive;

pub use exhaustive::{exhaustive_best_response, exhaustive_verify, exhaustive_verify_payoffs, ExhaustiveOptions};

use crate::error::{Error, Result};
use crate::model::{InterimRules, Payoffs, PlayerModel, Strategy, Tolerances, TypeSpace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub tol: Tolerances,
    /// Upper end of the multiplier bracket.
    pub lambda_max: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
            lambda_max: 1e6,
        }
    }
}

/// An optimal feasible report strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub strategy: Strategy,
    pub value: f64,
    pub constraint_value: f64,
    /// Optimal multiplier on the ex-ante constraint.
    pub lambda_star: f64,
    /// The single type split between two reports, if any.
    pub breakpoint_type: Option<usize>,
}

impl BestResponse {
    /// `dual(λ*) − value`, where `dual(λ) = Σ_i ρ_i max_j (a_ij + λ b_ij) − λ·C`.
    pub fn duality_gap(&self, payoffs: &Payoffs) -> f64 {
        lagrangian_dual(payoffs, self.lambda_star) - self.value
    }
}

pub fn lagrangian_dual(payoffs: &Payoffs, lambda: f64) -> f64 {
    let n = payoffs.len();
    let mut total = 0.0;
    for i in 0..n {
        let best = (0..n)
            .map(|j| payoffs.a(i, j) + lambda * payoffs.b(i, j))
            .fold(f64::NEG_INFINITY, f64::max);
        total += payoffs.weight(i) * best;
    }
    total - lambda * payoffs.level()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerdictMode {
    OracleLp,
    Exhaustive,
}

/// Whether truthful reporting is feasible and optimal among all feasible strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct ICVerdict {
    pub ic: bool,
    pub feasible: bool,
    pub truthful_utility: f64,
    pub truthful_constraint: f64,
    /// Best feasible value minus truthful utility. NaN when no strategy is feasible.
    pub best_deviation_gain: f64,
    pub witness: Option<BestResponse>,
    pub mode: VerdictMode,
}

/// Row-wise maximizer of `a_ij + λ·b_ij`; ties go to the lowest report index.
fn lagrangian_choice(p: &Payoffs, lambda: f64) -> Vec<usize> {
    let n = p.len();
    (0..n)
        .map(|i| {
            let mut best = 0;
            let mut best_val = p.a(i, 0) + lambda * p.b(i, 0);
            for j in 1..n {
                let val = p.a(i, j) + lambda * p.b(i, j);
                if val > best_val {
                    best = j;
                    best_val = val;
                }
            }
            best
        })
        .collect()
}

fn achieved(p: &Payoffs, choice: &[usize]) -> (f64, f64) {
    choice.iter().enumerate().fold((0.0, 0.0), |(u, c), (i, &j)| {
        (u + p.weight(i) * p.a(i, j), c + p.weight(i) * p.b(i, j))
    })
}

fn pure(p: &Payoffs, choice: &[usize], lambda: f64) -> Result<BestResponse> {
    let (value, constraint_value) = achieved(p, choice);
    Ok(BestResponse {
        strategy: Strategy::deterministic(choice)?,
        value,
        constraint_value,
        lambda_star: lambda,
        breakpoint_type: None,
    })
}

/// Solves the player's constrained best-response problem on precomputed payoffs.
pub fn solve_best_response(p: &Payoffs, opts: &OracleOptions) -> Result<BestResponse> {
    let n = p.len();
    if n == 0 {
        return Err(Error::Invalid("empty type grid".into()));
    }
    let level = p.level();
    let tol = opts.tol.feas;

    let free = lagrangian_choice(p, 0.0);
    let (_, g_free) = achieved(p, &free);
    if g_free >= level - tol {
        return pure(p, &free, 0.0);
    }

    let best_possible: f64 = (0..n)
        .map(|i| p.weight(i) * (0..n).map(|j| p.b(i, j)).fold(f64::NEG_INFINITY, f64::max))
        .sum();
    if best_possible < level - tol {
        return Err(Error::Infeasible {
            best: best_possible,
            level,
        });
    }

    let (mut lo, mut hi) = (0.0, opts.lambda_max);
    let mut lo_choice = free;
    let mut hi_choice = lagrangian_choice(p, hi);
    let (_, mut g_hi) = achieved(p, &hi_choice);
    if g_hi < level - tol {
        return Err(Error::UnboundedMultiplier {
            max: hi,
            achieved: g_hi,
            level,
        });
    }
    while hi - lo > 1e-12 * (1.0 + hi) && g_hi - level > tol {
        let mid = 0.5 * (lo + hi);
        let choice = lagrangian_choice(p, mid);
        let (_, g) = achieved(p, &choice);
        if g >= level - tol {
            hi = mid;
            hi_choice = choice;
            g_hi = g;
        } else {
            lo = mid;
            lo_choice = choice;
        }
    }
    if g_hi <= level + tol {
        return pure(p, &hi_choice, hi);
    }

    // Walk from the low-λ solution towards the high-λ one, one switching row at
    // a time, and split the row that crosses the constraint level.
    let (_, mut g) = achieved(p, &lo_choice);
    let mut current = lo_choice.clone();
    for i in 0..n {
        let (from, to) = (lo_choice[i], hi_choice[i]);
        if from == to {
            continue;
        }
        let delta = p.weight(i) * (p.b(i, to) - p.b(i, from));
        if delta <= 0.0 {
            continue;
        }
        if g + delta < level {
            g += delta;
            current[i] = to;
            continue;
        }
        let w = ((level - g) / delta).clamp(0.0, 1.0);
        let mut matrix = vec![0.0; n * n];
        for (k, &j) in current.iter().enumerate() {
            matrix[k * n + j] = 1.0;
        }
        matrix[i * n + from] = 1.0 - w;
        matrix[i * n + to] += w;
        let strategy = Strategy::from_matrix(n, matrix)?;
        let (value, constraint_value) = p.value(&strategy);
        let db = p.b(i, to) - p.b(i, from);
        let lambda = ((p.a(i, from) - p.a(i, to)) / db).clamp(lo, hi);
        return Ok(BestResponse {
            strategy,
            value,
            constraint_value,
            lambda_star: lambda,
            breakpoint_type: Some(i),
        });
    }
    pure(p, &hi_choice, hi)
}

/// Best response to `rules` for the player `model` on `space`.
pub fn best_response(
    rules: &InterimRules,
    model: &PlayerModel,
    space: &TypeSpace,
    opts: &OracleOptions,
) -> Result<BestResponse> {
    solve_best_response(&Payoffs::build(rules, model, space)?, opts)
}

/// Incentive-compatibility verdict from precomputed payoffs.
pub fn verify_payoffs(p: &Payoffs, opts: &OracleOptions) -> Result<ICVerdict> {
    let truthful_utility = p.truthful_utility();
    let truthful_constraint = p.truthful_constraint();
    let feasible = truthful_constraint >= p.level() - opts.tol.feas;
    let br = match solve_best_response(p, opts) {
        Ok(br) => Some(br),
        Err(Error::Infeasible { .. }) if !feasible => None,
        Err(e) => return Err(e),
    };
    let gain = br.as_ref().map_or(f64::NAN, |b| b.value - truthful_utility);
    let ic = feasible && gain <= opts.tol.ic;
    Ok(ICVerdict {
        ic,
        feasible,
        truthful_utility,
        truthful_constraint,
        best_deviation_gain: gain,
        witness: if ic { None } else { br },
        mode: VerdictMode::OracleLp,
    })
}

/// Decides incentive compatibility by solving the best-response problem exactly.
pub fn verify_ic(rules: &InterimRules, model: &PlayerModel, space: &TypeSpace, opts: &OracleOptions) -> Result<ICVerdict> {
    verify_payoffs(&Payoffs::build(rules, model, space)?, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Valuation;

    fn posted(n: usize, budget: f64) -> (InterimRules, PlayerModel, TypeSpace) {
        (
            InterimRules::posted_price(0.4, 0.4),
            PlayerModel::budget(budget, Valuation::dot()).unwrap(),
            TypeSpace::line(0.0, 1.0, n).unwrap(),
        )
    }

    #[test]
    fn constant_mechanism_has_no_gain() {
        let space = TypeSpace::line(0.0, 1.0, 5).unwrap();
        let model = PlayerModel::budget(0.5, Valuation::dot()).unwrap();
        let rules = InterimRules::constant(vec![0.7], 0.2);
        let br = best_response(&rules, &model, &space, &OracleOptions::default()).unwrap();
        let truth = Payoffs::build(&rules, &model, &space).unwrap().truthful_utility();
        assert!((br.value - truth).abs() < 1e-15);
        assert_eq!(br.lambda_star, 0.0);
    }

    #[test]
    fn slack_posted_price_is_ic() {
        let (rules, model, space) = posted(5, 0.3);
        let v = verify_ic(&rules, &model, &space, &OracleOptions::default()).unwrap();
        assert!(v.ic && v.feasible);
        assert!(v.best_deviation_gain.abs() <= 1e-12);
        assert!(v.witness.is_none());
    }

    #[test]
    fn truth_infeasible_is_never_ic() {
        let (rules, model, space) = posted(5, 0.1);
        let v = verify_ic(&rules, &model, &space, &OracleOptions::default()).unwrap();
        assert!(!v.feasible && !v.ic);
    }

    #[test]
    fn inflated_top_price_has_profitable_deviation() {
        let space = TypeSpace::line(0.0, 1.0, 5).unwrap();
        let model = PlayerModel::budget(0.3, Valuation::dot()).unwrap();
        let payments = [0.0, 0.0, 0.4, 0.4, 0.6];
        let outcomes = [0.0, 0.0, 1.0, 1.0, 1.0].iter().map(|&q| vec![q]).collect();
        let rules = InterimRules::tabulated(space.clone(), outcomes, payments.to_vec()).unwrap();
        let v = verify_ic(&rules, &model, &space, &OracleOptions::default()).unwrap();
        assert!(v.feasible && !v.ic);
        // the top type reports 0.75 instead: same item, 0.2 cheaper, weight 1/5
        assert!(v.best_deviation_gain >= 0.2 / 5.0 - 1e-12);
        let w = v.witness.unwrap();
        assert!(w.strategy.get(4, 4) < 1.0);
    }

    #[test]
    fn binding_constraint_mixes_one_row() {
        // Two types; truth-telling costs nothing, the profitable lie breaks the budget.
        let a = vec![0.0, 1.0, 0.0, 1.0];
        let b = vec![0.0, -1.0, 0.0, -1.0];
        let p = Payoffs::from_matrices(a, b, vec![0.5, 0.5], -0.25).unwrap();
        let br = solve_best_response(&p, &OracleOptions::default()).unwrap();
        assert!((br.value - 0.25).abs() < 1e-12, "{br:?}");
        assert!((br.constraint_value + 0.25).abs() < 1e-12);
        assert_eq!(br.strategy.fractional_rows().len(), 1);
        assert!((br.lambda_star - 1.0).abs() < 1e-9);
        assert!(br.duality_gap(&p).abs() < 1e-8);
    }

    #[test]
    fn infeasible_problem_reported() {
        let p = Payoffs::from_matrices(vec![0.0; 4], vec![-1.0; 4], vec![0.5, 0.5], 0.0).unwrap();
        assert!(matches!(
            solve_best_response(&p, &OracleOptions::default()),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn relaxing_the_level_never_hurts() {
        let (rules, model, space) = posted(6, 0.2);
        let p = Payoffs::build(&rules, &model, &space).unwrap();
        let opts = OracleOptions::default();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..10 {
            let level = p.level() - 0.05 * k as f64;
            let v = solve_best_response(&p.with_level(level), &opts).unwrap().value;
            assert!(v >= prev - 1e-12);
            prev = v;
        }
    }
}
