//! Interim rules `(x, p)`: outcome and expected payment as functions of the report.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use super::space::TypeSpace;
use crate::builder::MenuRule;
use crate::error::{Error, Result};
use crate::expr::Expr;

/// Outcomes closer than this in sup-norm are treated as the same outcome.
pub const OUTCOME_DEDUP_TOL: f64 = 1e-9;

pub type RuleFn = Arc<dyn Fn(&[f64]) -> (Vec<f64>, f64) + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    Parametric,
    Tabulated,
}

/// `p(v) = ½·vᵀMv + l·v + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub matrix: Vec<Vec<f64>>,
    pub linear: Vec<f64>,
    pub constant: f64,
}

impl Quadratic {
    pub fn constant(c: f64) -> Self {
        Self {
            matrix: Vec::new(),
            linear: Vec::new(),
            constant: c,
        }
    }

    pub fn eval(&self, v: &[f64]) -> f64 {
        let quad: f64 = self
            .matrix
            .iter()
            .zip(v)
            .map(|(row, vi)| vi * row.iter().zip(v).map(|(m, vj)| m * vj).sum::<f64>())
            .sum();
        0.5 * quad + self.linear.iter().zip(v).map(|(l, x)| l * x).sum::<f64>() + self.constant
    }
}

/// Named parametric families.
#[derive(Clone)]
pub enum Family {
    Constant {
        outcome: Vec<f64>,
        payment: f64,
    },
    /// `x(v) = 1{v1 ≥ threshold}`, `p(v) = price·x(v)`.
    PostedPrice {
        threshold: f64,
        price: f64,
    },
    /// `x(v) = clip(A·v + b)` with a quadratic payment.
    Affine {
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
        clip: Option<(f64, f64)>,
        payment: Quadratic,
    },
    Expression {
        outcome: Vec<Expr>,
        payment: Expr,
    },
    /// Outcomes chosen from a priced menu on the player's behalf.
    Menu(Arc<MenuRule>),
    Custom {
        outcome_dim: usize,
        label: String,
        eval: RuleFn,
    },
}

/// Rule values tabulated on a type grid; off-grid evaluation interpolates multilinearly.
#[derive(Debug, Clone)]
pub struct Table {
    pub space: TypeSpace,
    pub outcomes: Vec<Vec<f64>>,
    pub payments: Vec<f64>,
}

#[derive(Clone)]
enum Repr {
    Parametric(Family),
    Tabulated(Arc<Table>),
}

/// The mechanism from one player's perspective.
#[derive(Clone)]
pub struct InterimRules {
    repr: Repr,
    outcome_dim: usize,
}

impl InterimRules {
    pub fn constant(outcome: Vec<f64>, payment: f64) -> Self {
        let outcome_dim = outcome.len();
        Self {
            repr: Repr::Parametric(Family::Constant { outcome, payment }),
            outcome_dim,
        }
    }

    pub fn posted_price(threshold: f64, price: f64) -> Self {
        Self {
            repr: Repr::Parametric(Family::PostedPrice { threshold, price }),
            outcome_dim: 1,
        }
    }

    pub fn affine(matrix: Vec<Vec<f64>>, offset: Vec<f64>, clip: Option<(f64, f64)>, payment: Quadratic) -> Result<Self> {
        if matrix.len() != offset.len() || offset.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "affine rule offset",
                expected: matrix.len(),
                found: offset.len(),
            });
        }
        let outcome_dim = offset.len();
        Ok(Self {
            repr: Repr::Parametric(Family::Affine {
                matrix,
                offset,
                clip,
                payment,
            }),
            outcome_dim,
        })
    }

    pub fn expressions(outcome: &[String], payment: &str) -> Result<Self> {
        if outcome.is_empty() {
            return Err(Error::Invalid("expression rule needs at least one outcome coordinate".into()));
        }
        let exprs = outcome.iter().map(|s| Expr::parse(s)).collect::<Result<Vec<_>>>()?;
        if let Some(e) = exprs.iter().find(|e| e.arity().0 > 0) {
            return Err(Error::Expression(format!("`{}`: rules may only depend on v", e.source())));
        }
        let payment = Expr::parse(payment)?;
        if payment.arity().0 > 0 {
            return Err(Error::Expression(format!("`{}`: rules may only depend on v", payment.source())));
        }
        Ok(Self {
            outcome_dim: exprs.len(),
            repr: Repr::Parametric(Family::Expression { outcome: exprs, payment }),
        })
    }

    pub fn custom(outcome_dim: usize, label: impl Into<String>, eval: RuleFn) -> Self {
        Self {
            repr: Repr::Parametric(Family::Custom {
                outcome_dim,
                label: label.into(),
                eval,
            }),
            outcome_dim,
        }
    }

    pub(crate) fn menu(rule: MenuRule) -> Self {
        let outcome_dim = rule.outcome_dim();
        Self {
            repr: Repr::Parametric(Family::Menu(Arc::new(rule))),
            outcome_dim,
        }
    }

    pub fn tabulated(space: TypeSpace, outcomes: Vec<Vec<f64>>, payments: Vec<f64>) -> Result<Self> {
        if outcomes.len() != space.len() || payments.len() != space.len() {
            return Err(Error::DimensionMismatch {
                context: "tabulated rule rows",
                expected: space.len(),
                found: outcomes.len().min(payments.len()),
            });
        }
        let outcome_dim = outcomes.first().map(Vec::len).unwrap_or(0);
        if outcome_dim == 0 {
            return Err(Error::Invalid("tabulated outcomes must have dimension >= 1".into()));
        }
        if let Some(q) = outcomes.iter().find(|q| q.len() != outcome_dim) {
            return Err(Error::DimensionMismatch {
                context: "tabulated outcome",
                expected: outcome_dim,
                found: q.len(),
            });
        }
        if outcomes.iter().flatten().chain(&payments).any(|x| !x.is_finite()) {
            return Err(Error::Invalid("tabulated rule contains non-finite values".into()));
        }
        Ok(Self {
            repr: Repr::Tabulated(Arc::new(Table {
                space,
                outcomes,
                payments,
            })),
            outcome_dim,
        })
    }

    pub fn kind(&self) -> RuleKind {
        match self.repr {
            Repr::Parametric(_) => RuleKind::Parametric,
            Repr::Tabulated(_) => RuleKind::Tabulated,
        }
    }

    pub fn family(&self) -> Option<&Family> {
        match &self.repr {
            Repr::Parametric(f) => Some(f),
            Repr::Tabulated(_) => None,
        }
    }

    pub fn table(&self) -> Option<&Table> {
        match &self.repr {
            Repr::Tabulated(t) => Some(t),
            Repr::Parametric(_) => None,
        }
    }

    pub fn outcome_dim(&self) -> usize {
        self.outcome_dim
    }

    /// `(x(v), p(v))` at an arbitrary report `v`.
    pub fn eval(&self, v: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (q, p) = match &self.repr {
            Repr::Parametric(family) => eval_family(family, v)?,
            Repr::Tabulated(table) => eval_table(table, v)?,
        };
        if q.len() != self.outcome_dim {
            return Err(Error::DimensionMismatch {
                context: "rule outcome",
                expected: self.outcome_dim,
                found: q.len(),
            });
        }
        if !p.is_finite() || q.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid(format!("rule is not finite at {v:?}")));
        }
        Ok((q, p))
    }

    /// Rule values at every node of `space`, with the deduplicated outcome range.
    pub fn tabulate(&self, space: &TypeSpace) -> Result<RuleTable> {
        if let Repr::Tabulated(t) = &self.repr {
            if t.space.len() == space.len() && t.space.points().zip(space.points()).all(|(a, b)| a == b) {
                return Ok(RuleTable::new(t.outcomes.clone(), t.payments.clone()));
            }
        }
        let rows: Vec<(Vec<f64>, f64)> = (0..space.len())
            .into_par_iter()
            .map(|i| {
                self.eval(space.point(i)).map_err(|e| Error::Evaluation {
                    node: i,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        let (outcomes, payments) = rows.into_iter().unzip();
        Ok(RuleTable::new(outcomes, payments))
    }

    pub fn describe(&self) -> String {
        match &self.repr {
            Repr::Tabulated(t) => format!("tabulated on {} nodes", t.space.len()),
            Repr::Parametric(f) => match f {
                Family::Constant { outcome, payment } => format!("constant(q={outcome:?}, p={payment})"),
                Family::PostedPrice { threshold, price } => format!("posted_price(t={threshold}, price={price})"),
                Family::Affine { .. } => "affine".into(),
                Family::Expression { outcome, payment } => format!(
                    "expression(x=[{}], p={})",
                    outcome.iter().map(Expr::source).collect::<Vec<_>>().join(", "),
                    payment.source()
                ),
                Family::Menu(m) => format!("menu({} items, r={})", m.mechanism().menu.len(), m.mechanism().r),
                Family::Custom { label, .. } => format!("custom({label})"),
            },
        }
    }
}

impl fmt::Debug for InterimRules {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "InterimRules({})", self.describe())
    }
}

fn eval_family(family: &Family, v: &[f64]) -> Result<(Vec<f64>, f64)> {
    Ok(match family {
        Family::Constant { outcome, payment } => (outcome.clone(), *payment),
        Family::PostedPrice { threshold, price } => {
            let win = v.first().is_some_and(|x| *x >= *threshold);
            if win {
                (vec![1.0], *price)
            } else {
                (vec![0.0], 0.0)
            }
        }
        Family::Affine {
            matrix,
            offset,
            clip,
            payment,
        } => {
            let q = matrix
                .iter()
                .zip(offset)
                .map(|(row, b)| {
                    let x = row.iter().zip(v).map(|(a, vi)| a * vi).sum::<f64>() + b;
                    match clip {
                        Some((lo, hi)) => x.clamp(*lo, *hi),
                        None => x,
                    }
                })
                .collect();
            (q, payment.eval(v))
        }
        Family::Expression { outcome, payment } => {
            let q = outcome.iter().map(|e| e.eval(&[], v)).collect::<Result<Vec<_>>>()?;
            (q, payment.eval(&[], v)?)
        }
        Family::Menu(rule) => rule.eval(v)?,
        Family::Custom { eval, .. } => eval(v),
    })
}

fn eval_table(table: &Table, v: &[f64]) -> Result<(Vec<f64>, f64)> {
    if table.space.is_regular() {
        let stencil = table.space.stencil(v).ok_or_else(|| Error::Invalid("bad stencil".into()))?;
        let dim = table.outcomes[0].len();
        let mut q = vec![0.0; dim];
        let mut p = 0.0;
        for (node, w) in stencil {
            for (acc, x) in q.iter_mut().zip(&table.outcomes[node]) {
                *acc += w * x;
            }
            p += w * table.payments[node];
        }
        Ok((q, p))
    } else {
        let node = table
            .space
            .find(v, 1e-12)
            .ok_or_else(|| Error::Invalid(format!("{v:?} is not a node of the tabulated point cloud")))?;
        Ok((table.outcomes[node].clone(), table.payments[node]))
    }
}

/// Rule values on a grid plus the attained outcome range `Q_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleTable {
    pub outcomes: Vec<Vec<f64>>,
    pub payments: Vec<f64>,
    /// Distinct outcomes in order of first occurrence.
    pub range: Vec<Vec<f64>>,
    /// `range_of[i]` indexes `range` for node `i`.
    pub range_of: Vec<usize>,
}

impl RuleTable {
    pub fn new(outcomes: Vec<Vec<f64>>, payments: Vec<f64>) -> Self {
        let mut range: Vec<Vec<f64>> = Vec::new();
        let mut range_of = Vec::with_capacity(outcomes.len());
        for q in &outcomes {
            let k = range.iter().position(|r| same_outcome(r, q)).unwrap_or_else(|| {
                range.push(q.clone());
                range.len() - 1
            });
            range_of.push(k);
        }
        Self {
            outcomes,
            payments,
            range,
            range_of,
        }
    }

    pub fn len(&self) -> usize {
        self.payments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payments.is_empty()
    }

    /// Nodes grouped by the range element they map to.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.range.len()];
        for (i, &k) in self.range_of.iter().enumerate() {
            groups[k].push(i);
        }
        groups
    }

    pub fn into_rules(self, space: &TypeSpace) -> Result<InterimRules> {
        InterimRules::tabulated(space.clone(), self.outcomes, self.payments)
    }
}

pub fn same_outcome(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= OUTCOME_DEDUP_TOL)
}

/// The deduplicated range `Q_x = {x(v) : v in the grid}`.
pub fn outcome_range(rules: &InterimRules, space: &TypeSpace) -> Result<Vec<Vec<f64>>> {
    Ok(rules.tabulate(space)?.range)
}
