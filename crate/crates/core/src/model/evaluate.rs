//! Ex-ante utility and constraint values of a report strategy.

use rayon::prelude::*;

use super::player::PlayerModel;
use super::rules::{InterimRules, RuleTable};
use super::space::TypeSpace;
use super::strategy::Strategy;
use crate::error::{Error, Result};

/// Numerical tolerances shared by every verifier so that they agree on
/// what "feasible" and "binding" mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Constraint value ≥ C − feas counts as feasible.
    pub feas: f64,
    /// |constraint value − C| ≤ bind counts as binding.
    pub bind: f64,
    /// Allowed utility gain of a deviation before truth-telling is rejected.
    pub ic: f64,
    /// Margin used to decide strict inequalities between payoffs.
    pub strict: f64,
    /// Probability mass of violations ignored as "measure zero".
    pub measure: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            feas: 1e-9,
            bind: 1e-9,
            ic: 1e-9,
            strict: 1e-12,
            measure: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluationReport {
    pub utility: f64,
    pub constraint_value: f64,
    pub feasible: bool,
    pub binding: bool,
}

impl EvaluationReport {
    fn new(utility: f64, constraint_value: f64, level: f64, tol: &Tolerances) -> Self {
        Self {
            utility,
            constraint_value,
            feasible: constraint_value >= level - tol.feas,
            binding: (constraint_value - level).abs() <= tol.bind,
        }
    }
}

/// `U(x,p,s)` and `E[f − c2·p]` under strategy `s`, summed in index order.
pub fn evaluate(
    rules: &InterimRules,
    model: &PlayerModel,
    space: &TypeSpace,
    strategy: &Strategy,
    tol: &Tolerances,
) -> Result<EvaluationReport> {
    if strategy.len() != space.len() {
        return Err(Error::DimensionMismatch {
            context: "strategy size vs grid",
            expected: space.len(),
            found: strategy.len(),
        });
    }
    let table = rules.tabulate(space)?;
    let mut utility = 0.0;
    let mut constraint = 0.0;
    for i in 0..space.len() {
        let v = space.point(i);
        let (mut ui, mut fi) = (0.0, 0.0);
        for (j, &s) in strategy.row(i).iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            let q = &table.outcomes[j];
            let p = table.payments[j];
            let a = model.u(q, v) - model.c1() * p;
            let b = model.f(q, v) - model.c2() * p;
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::Evaluation {
                    node: i,
                    reason: format!("non-finite payoff for report {j}"),
                });
            }
            ui += s * a;
            fi += s * b;
        }
        utility += space.weight(i) * ui;
        constraint += space.weight(i) * fi;
    }
    Ok(EvaluationReport::new(utility, constraint, model.level(), tol))
}

/// Truthful reporting shortcut.
pub fn evaluate_truthful(
    rules: &InterimRules,
    model: &PlayerModel,
    space: &TypeSpace,
    tol: &Tolerances,
) -> Result<EvaluationReport> {
    evaluate(rules, model, space, &Strategy::identity(space.len()), tol)
}

/// Per-pair payoffs on a grid:
/// `a[i][j] = u(x(v_j), v_i) − c1·p(v_j)` and `b[i][j] = f(x(v_j), v_i) − c2·p(v_j)`.
///
/// The best-response oracle, the deviation-set characterization and the
/// exhaustive enumerator all work from this one table.
#[derive(Debug, Clone, PartialEq)]
pub struct Payoffs {
    n: usize,
    utility: Vec<f64>,
    constraint: Vec<f64>,
    weights: Vec<f64>,
    level: f64,
}

impl Payoffs {
    pub fn build(rules: &InterimRules, model: &PlayerModel, space: &TypeSpace) -> Result<Self> {
        let table = rules.tabulate(space)?;
        Self::from_table(&table, model, space)
    }

    pub fn from_table(table: &RuleTable, model: &PlayerModel, space: &TypeSpace) -> Result<Self> {
        let n = space.len();
        if table.len() != n {
            return Err(Error::DimensionMismatch {
                context: "rule table vs grid",
                expected: n,
                found: table.len(),
            });
        }
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let v = space.point(i);
                let mut a = Vec::with_capacity(n);
                let mut b = Vec::with_capacity(n);
                for j in 0..n {
                    let q = &table.outcomes[j];
                    let p = table.payments[j];
                    let aij = model.u(q, v) - model.c1() * p;
                    let bij = model.f(q, v) - model.c2() * p;
                    if !(aij.is_finite() && bij.is_finite()) {
                        return Err(Error::Evaluation {
                            node: i,
                            reason: format!("non-finite payoff for report {j}"),
                        });
                    }
                    a.push(aij);
                    b.push(bij);
                }
                Ok((a, b))
            })
            .collect::<Result<_>>()?;
        let mut utility = Vec::with_capacity(n * n);
        let mut constraint = Vec::with_capacity(n * n);
        for (a, b) in rows {
            utility.extend(a);
            constraint.extend(b);
        }
        Ok(Self {
            n,
            utility,
            constraint,
            weights: space.weights().to_vec(),
            level: model.level(),
        })
    }

    /// Direct construction from matrices (row-major, `n × n`).
    pub fn from_matrices(utility: Vec<f64>, constraint: Vec<f64>, weights: Vec<f64>, level: f64) -> Result<Self> {
        let n = weights.len();
        if utility.len() != n * n || constraint.len() != n * n {
            return Err(Error::DimensionMismatch {
                context: "payoff matrices",
                expected: n * n,
                found: utility.len().min(constraint.len()),
            });
        }
        Ok(Self {
            n,
            utility,
            constraint,
            weights,
            level,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.utility[i * self.n + j]
    }

    #[inline]
    pub fn b(&self, i: usize, j: usize) -> f64 {
        self.constraint[i * self.n + j]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn with_level(&self, level: f64) -> Self {
        Self { level, ..self.clone() }
    }

    pub fn truthful_utility(&self) -> f64 {
        (0..self.n).map(|i| self.weights[i] * self.a(i, i)).sum()
    }

    pub fn truthful_constraint(&self) -> f64 {
        (0..self.n).map(|i| self.weights[i] * self.b(i, i)).sum()
    }

    /// `(utility, constraint value)` of a strategy.
    pub fn value(&self, s: &Strategy) -> (f64, f64) {
        let mut u = 0.0;
        let mut c = 0.0;
        for i in 0..self.n {
            let (mut ui, mut ci) = (0.0, 0.0);
            for (j, &x) in s.row(i).iter().enumerate() {
                if x != 0.0 {
                    ui += x * self.a(i, j);
                    ci += x * self.b(i, j);
                }
            }
            u += self.weights[i] * ui;
            c += self.weights[i] * ci;
        }
        (u, c)
    }

    /// Largest |a| entry, used to scale tolerances.
    pub fn max_abs_utility(&self) -> f64 {
        self.utility.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Payoffs on a reordered grid (new node `k` is old node `perm[k]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        let mut utility = vec![0.0; n * n];
        let mut constraint = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                utility[a * n + b] = self.a(perm[a], perm[b]);
                constraint[a * n + b] = self.b(perm[a], perm[b]);
            }
        }
        Self {
            n,
            utility,
            constraint,
            weights: perm.iter().map(|&i| self.weights[i]).collect(),
            level: self.level,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::player::Valuation;

    #[test]
    fn three_type_posted_price_budget() {
        // V = {0, 0.5, 1}, uniform; x = 1{v ≥ 0.4}, p = 0.4·x; B = 0.3.
        let space = TypeSpace::line(0.0, 1.0, 3).unwrap();
        let rules = InterimRules::posted_price(0.4, 0.4);
        let model = PlayerModel::budget(0.3, Valuation::dot()).unwrap();
        let r = evaluate_truthful(&rules, &model, &space, &Tolerances::default()).unwrap();
        // hand sum: (0 + (0.5 − 0.4) + (1 − 0.4)) / 3 and −(0 + 0.4 + 0.4) / 3
        let u = (0.0 + (0.5 - 0.4) + (1.0 - 0.4)) / 3.0;
        let c = -(0.0 + 0.4 + 0.4) / 3.0;
        assert!((r.utility - u).abs() < 1e-12);
        assert!((r.constraint_value - c).abs() < 1e-12);
        assert!(r.feasible && !r.binding);
    }

    #[test]
    fn constant_mechanism_is_strategy_independent() {
        let space = TypeSpace::line(0.0, 1.0, 4).unwrap();
        let rules = InterimRules::constant(vec![0.5], 0.1);
        let model = PlayerModel::budget(1.0, Valuation::dot()).unwrap();
        let tol = Tolerances::default();
        let truth = evaluate_truthful(&rules, &model, &space, &tol).unwrap();
        let expected: f64 = space.points().map(|v| 0.25 * (0.5 * v[0])).sum::<f64>() - 0.1;
        assert!((truth.utility - expected).abs() < 1e-15);
        assert!((truth.constraint_value + 0.1).abs() < 1e-15);
        let other = evaluate(&rules, &model, &space, &Strategy::deterministic(&[3, 0, 0, 2]).unwrap(), &tol).unwrap();
        assert!((other.utility - truth.utility).abs() < 1e-15);
    }

    #[test]
    fn budget_spend_feasible_not_binding() {
        // truthful spend 0.2 against budget 0.3
        let space = TypeSpace::line(0.0, 1.0, 2).unwrap();
        let rules = InterimRules::posted_price(0.5, 0.4);
        let model = PlayerModel::budget(0.3, Valuation::dot()).unwrap();
        let r = evaluate_truthful(&rules, &model, &space, &Tolerances::default()).unwrap();
        assert!((r.constraint_value + 0.2).abs() < 1e-15);
        assert!(r.feasible && !r.binding);
        let broke = PlayerModel::budget(0.0, Valuation::dot()).unwrap();
        let r = evaluate_truthful(&rules, &broke, &space, &Tolerances::default()).unwrap();
        assert!(!r.feasible);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let space = TypeSpace::line(0.0, 1.0, 3).unwrap();
        let model = PlayerModel::budget(1.0, Valuation::dot()).unwrap();
        let err = evaluate(
            &InterimRules::constant(vec![0.0], 0.0),
            &model,
            &space,
            &Strategy::identity(2),
            &Tolerances::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn payoffs_agree_with_evaluate() {
        let space = TypeSpace::line(0.0, 1.0, 4).unwrap();
        let rules = InterimRules::expressions(&["v1".into()], "v1^2/2").unwrap();
        let model = PlayerModel::roi(0.5, Valuation::dot()).unwrap();
        let pay = Payoffs::build(&rules, &model, &space).unwrap();
        let s = Strategy::deterministic(&[1, 2, 3, 3]).unwrap();
        let direct = evaluate(&rules, &model, &space, &s, &Tolerances::default()).unwrap();
        let (u, c) = pay.value(&s);
        assert!((u - direct.utility).abs() < 1e-15 && (c - direct.constraint_value).abs() < 1e-15);
    }
}
