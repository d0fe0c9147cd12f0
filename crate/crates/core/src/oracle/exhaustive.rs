//! Brute-force enumeration of report maps, for cross-checking the exact oracle
//! on small grids.

use super::{BestResponse, ICVerdict, OracleOptions, VerdictMode};
use crate::error::{Error, Result};
use crate::model::{InterimRules, Payoffs, PlayerModel, Strategy, TypeSpace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExhaustiveOptions {
    pub oracle: OracleOptions,
    /// Grid step for the weight placed on the deviating report in single-row mixtures.
    pub mix_resolution: f64,
    /// Largest number of deterministic report maps enumerated.
    pub cap: f64,
}

impl Default for ExhaustiveOptions {
    fn default() -> Self {
        Self {
            oracle: OracleOptions::default(),
            mix_resolution: 1e-3,
            cap: 1e8,
        }
    }
}

struct Best {
    value: f64,
    constraint: f64,
    map: Vec<usize>,
    mix: Option<(usize, usize, f64)>,
}

/// Best feasible strategy among all deterministic maps and all of their
/// single-row mixtures at `mix_resolution`.
pub fn exhaustive_best_response(p: &Payoffs, opts: &ExhaustiveOptions) -> Result<BestResponse> {
    let n = p.len();
    if n == 0 {
        return Err(Error::Invalid("empty type grid".into()));
    }
    let candidates = (n as f64).powi(n as i32);
    if candidates > opts.cap {
        return Err(Error::CapExceeded {
            candidates,
            cap: opts.cap,
        });
    }
    let res = opts.mix_resolution;
    if !(res > 0.0 && res <= 1.0) {
        return Err(Error::Invalid(format!("mix resolution must lie in (0, 1], got {res}")));
    }
    let floor = p.level() - opts.oracle.tol.feas;

    let mut map = vec![0usize; n];
    let mut best: Option<Best> = None;
    let mut consider = |value: f64, constraint: f64, map: &[usize], mix| {
        if best.as_ref().is_none_or(|b| value > b.value) {
            best = Some(Best {
                value,
                constraint,
                map: map.to_vec(),
                mix,
            });
        }
    };
    loop {
        let (mut total_a, mut total_b) = (0.0, 0.0);
        for (i, &h) in map.iter().enumerate() {
            total_a += p.weight(i) * p.a(i, h);
            total_b += p.weight(i) * p.b(i, h);
        }
        let feasible = total_b >= floor;
        if feasible {
            consider(total_a, total_b, &map, None);
        }
        for (i, &h) in map.iter().enumerate() {
            let rho = p.weight(i);
            if rho == 0.0 {
                continue;
            }
            for j in (0..n).filter(|&j| j != h) {
                let da = rho * (p.a(i, j) - p.a(i, h));
                let db = rho * (p.b(i, j) - p.b(i, h));
                let w = if feasible && da > 0.0 && db < 0.0 {
                    // as much of the better report as the slack allows
                    let w = ((total_b - floor) / -db / res).floor() * res;
                    if w <= 0.0 {
                        continue;
                    }
                    w.min(1.0)
                } else if !feasible && db > 0.0 {
                    // just enough of the report that restores feasibility
                    let w = ((floor - total_b) / db / res).ceil() * res;
                    if w > 1.0 {
                        continue;
                    }
                    w
                } else {
                    continue;
                };
                let constraint = total_b + w * db;
                if constraint >= floor {
                    consider(total_a + w * da, constraint, &map, Some((i, j, w)));
                }
            }
        }

        let mut k = 0;
        while k < n {
            map[k] += 1;
            if map[k] < n {
                break;
            }
            map[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
    }

    let Some(best) = best else {
        let best_possible = (0..n)
            .map(|i| p.weight(i) * (0..n).map(|j| p.b(i, j)).fold(f64::NEG_INFINITY, f64::max))
            .sum();
        return Err(Error::Infeasible {
            best: best_possible,
            level: p.level(),
        });
    };
    let mut matrix = vec![0.0; n * n];
    for (i, &h) in best.map.iter().enumerate() {
        matrix[i * n + h] = 1.0;
    }
    if let Some((i, j, w)) = best.mix {
        matrix[i * n + best.map[i]] = 1.0 - w;
        matrix[i * n + j] = w;
    }
    Ok(BestResponse {
        strategy: Strategy::from_matrix(n, matrix)?,
        value: best.value,
        constraint_value: best.constraint,
        lambda_star: f64::NAN,
        breakpoint_type: best.mix.map(|(i, _, _)| i),
    })
}

pub fn exhaustive_verify_payoffs(p: &Payoffs, opts: &ExhaustiveOptions) -> Result<ICVerdict> {
    let truthful_utility = p.truthful_utility();
    let truthful_constraint = p.truthful_constraint();
    let feasible = truthful_constraint >= p.level() - opts.oracle.tol.feas;
    let br = match exhaustive_best_response(p, opts) {
        Ok(br) => Some(br),
        Err(Error::Infeasible { .. }) if !feasible => None,
        Err(e) => return Err(e),
    };
    let gain = br.as_ref().map_or(f64::NAN, |b| b.value - truthful_utility);
    let ic = feasible && gain <= opts.oracle.tol.ic;
    Ok(ICVerdict {
        ic,
        feasible,
        truthful_utility,
        truthful_constraint,
        best_deviation_gain: gain,
        witness: if ic { None } else { br },
        mode: VerdictMode::Exhaustive,
    })
}

/// Incentive-compatibility verdict by enumeration. Grids with more than
/// `cap` deterministic report maps are refused.
pub fn exhaustive_verify(
    rules: &InterimRules,
    model: &PlayerModel,
    space: &TypeSpace,
    opts: &ExhaustiveOptions,
) -> Result<ICVerdict> {
    exhaustive_verify_payoffs(&Payoffs::build(rules, model, space)?, opts)
}
