//! Type spaces, player models, interim rules, strategies and the expectation engine.

mod evaluate;
mod player;
mod rules;
mod space;
mod strategy;

pub use evaluate::{evaluate, evaluate_truthful, EvaluationReport, Payoffs, Tolerances};
pub use player::{make_model_budget, make_model_roi, LinearForm, PayoffFn, PlayerModel, Valuation, VectorFn};
pub use rules::{
    outcome_range, same_outcome, Family, InterimRules, Quadratic, RuleFn, RuleKind, RuleTable, Table,
    OUTCOME_DEDUP_TOL,
};
pub use space::{Axis, OutcomeSpace, TypeSpace};
pub use strategy::Strategy;

pub(crate) use player::dot;
