//! JSON renderings of verdicts and certificates. Floats use serde_json's
//! shortest round-trip form; non-finite values become `null`.

use exante_core::builder::{AutoBidMechanism, BidRegime, BuildOutcome};
use exante_core::characterizer::{CharacterizationCertificate, Regime};
use exante_core::model::{Strategy, Tolerances};
use exante_core::oracle::{BestResponse, ICVerdict, VerdictMode};
use exante_core::simulator::{Comparison, EpisodeResult};
use exante_core::surrogate::{MultiplierSource, Route, SurrogateCheck};
use serde_json::{json, Value};

use crate::scenario::Scenario;

pub const VERSION: &str = concat!("exante ", env!("CARGO_PKG_VERSION"));

fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn opt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

pub fn header(command: &str, scenario: Option<&Scenario>, tol: &Tolerances) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("command".into(), json!(command));
    m.insert("version".into(), json!(VERSION));
    if let Some(s) = scenario {
        m.insert(
            "scenario".into(),
            json!({
                "name": s.name,
                "path": s.source.path.display().to_string(),
                "sha256": s.source.sha256,
                "inputs": s.inputs.iter().map(|p| json!({
                    "path": p.path.display().to_string(),
                    "sha256": p.sha256,
                })).collect::<Vec<_>>(),
                "model": s.model.label(),
                "nodes": s.space.len(),
                "dim": s.space.dim(),
            }),
        );
    }
    m.insert(
        "tolerances".into(),
        json!({
            "feas": num(tol.feas),
            "bind": num(tol.bind),
            "ic": num(tol.ic),
            "strict": num(tol.strict),
            "measure": num(tol.measure),
        }),
    );
    m
}

pub fn strategy(s: &Strategy) -> Value {
    Value::Array(
        s.triples()
            .into_iter()
            .map(|(i, j, x)| json!({ "true_type": i, "report": j, "probability": num(x) }))
            .collect(),
    )
}

pub fn best_response(br: &BestResponse) -> Value {
    json!({
        "value": num(br.value),
        "constraint_value": num(br.constraint_value),
        "lambda": num(br.lambda_star),
        "split_type": br.breakpoint_type,
        "strategy": strategy(&br.strategy),
    })
}

pub fn verdict(v: &ICVerdict) -> Value {
    json!({
        "ic": v.ic,
        "feasible": v.feasible,
        "truthful_utility": num(v.truthful_utility),
        "truthful_constraint": num(v.truthful_constraint),
        "best_deviation_gain": num(v.best_deviation_gain),
        "witness": v.witness.as_ref().map(best_response),
        "mode": match v.mode {
            VerdictMode::OracleLp => "lp",
            VerdictMode::Exhaustive => "exhaustive",
        },
    })
}

pub fn certificate(c: &CharacterizationCertificate) -> Value {
    json!({
        "ic": c.ic,
        "regime": c.regime.map(|r| match r {
            Regime::Slack => "slack",
            Regime::Binding => "binding",
        }),
        "r": opt(c.r),
        "r0": opt(c.r0),
        "r1": num(c.r1),
        "feasible": c.feasible,
        "binding": c.binding,
        "truthful_constraint": num(c.truthful_constraint),
        "margin": num(c.margin),
        "violations": c.violations.iter().map(|v| json!({
            "true_type": v.true_type,
            "report": v.report,
            "excess": num(v.excess),
        })).collect::<Vec<_>>(),
        "deviation": c.deviation.as_ref().map(|d| json!({
            "r": num(d.r),
            "utility_gain": num(d.utility_gain),
            "constraint_change": num(d.constraint_change),
            "strategy": strategy(&d.strategy),
        })),
        "boundary": c.boundary,
    })
}

pub fn surrogate(s: &SurrogateCheck) -> Value {
    let f = &s.field;
    json!({
        "ic": s.ic_candidate,
        "r": num(s.r),
        "multiplier_source": match s.source {
            MultiplierSource::Zero => "zero",
            MultiplierSource::Critical => "critical",
            MultiplierSource::Fitted => "fitted",
        },
        "route": match s.route {
            Route::Surrogate => "surrogate",
            Route::ConstraintFree => "constraint_free",
        },
        "feasible": s.feasible,
        "binding": s.binding,
        "tolerance": num(s.tolerance),
        "convexity_margin": num(f.convexity_margin),
        "sandwich_margin": num(f.sandwich_margin),
        "max_gradient_residual": num(f.gradient_residual.iter().copied().fold(0.0, f64::max)),
        "gradient_step": num(f.gradient_step),
        "gradient_from_grid": f.gradient_from_grid,
        "boundary": s.boundary,
        "diagnostics": s.diagnostics,
    })
}

pub fn mechanism(m: &AutoBidMechanism) -> Value {
    json!({
        "r": num(m.r),
        "regime": match m.regime {
            BidRegime::Multiplier => "multiplier",
            BidRegime::ConstraintMaximizer => "constraint_maximizer",
        },
        "items": m.menu.len(),
        "pinned": m.pinned.iter().map(|&(node, item)| json!({ "node": node, "item": item })).collect::<Vec<_>>(),
        "mixing": m.mixing.as_ref().map(|x| json!({
            "node": x.node,
            "from": x.from,
            "to": x.to,
            "weight": num(x.weight),
        })),
    })
}

pub fn build(out: &BuildOutcome) -> Value {
    json!({
        "mechanism": mechanism(&out.mechanism),
        "constraint_value": num(out.constraint_value),
        "residual": num(out.residual),
        "diagnostics": out.diagnostics,
    })
}

pub fn episode(r: &EpisodeResult) -> Value {
    json!({
        "controller": r.controller,
        "rounds": r.rounds,
        "realized_utility": num(r.realized_utility),
        "utility_stderr": num(r.utility_stderr),
        "realized_constraint": num(r.realized_constraint),
        "constraint_stderr": num(r.constraint_stderr),
        "feasible": !r.violation,
    })
}

pub fn comparison(c: &Comparison) -> Value {
    json!({
        "table": c.results.iter().map(episode).collect::<Vec<_>>(),
        "feasible": c.feasible,
        "all_infeasible": c.all_infeasible,
    })
}
