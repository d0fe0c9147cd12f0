//! Incentive compatibility through a single multiplier on the constraint.
//!
//! Truthful reporting is optimal for the player exactly when it is feasible and
//! some `r ≥ 0` makes every type weakly prefer its own report under the
//! Lagrangian payoff `a_ij + r·b_ij`, with `r > 0` only if the constraint binds.
//! The deviation sets `V⁺(r)` and `V⁻(r)` collect the types that still gain
//! from a constraint-reducing (resp. constraint-increasing) misreport at `r`.

use crate::error::Result;
use crate::model::{InterimRules, Payoffs, PlayerModel, Strategy, Tolerances, TypeSpace};

/// Width of the band above a tolerance inside which a verdict is considered fragile.
pub const BOUNDARY_BAND: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationSets {
    pub r: f64,
    /// Types with a profitable deviation that lowers their constraint term.
    pub plus: Vec<usize>,
    /// Types with a profitable deviation that raises their constraint term.
    pub minus: Vec<usize>,
    pub rho_plus: f64,
    pub rho_minus: f64,
}

/// Lagrangian gain of reporting `j` when the true type is `i`.
fn lagrangian_gain(p: &Payoffs, i: usize, j: usize, r: f64) -> f64 {
    (p.a(i, j) - p.a(i, i)) + r * (p.b(i, j) - p.b(i, i))
}

pub fn deviation_sets(p: &Payoffs, r: f64, tol: &Tolerances) -> DeviationSets {
    let n = p.len();
    let strict = tol.strict;
    let (mut plus, mut minus) = (Vec::new(), Vec::new());
    for i in 0..n {
        if p.weight(i) <= tol.measure {
            continue;
        }
        let bii = p.b(i, i);
        let gains = |pred: &dyn Fn(f64) -> bool| {
            (0..n).any(|j| pred(p.b(i, j)) && lagrangian_gain(p, i, j, r) > strict)
        };
        if gains(&|b| b < bii - strict) {
            plus.push(i);
        }
        if gains(&|b| b > bii + strict) {
            minus.push(i);
        }
    }
    let mass = |set: &[usize]| set.iter().fold(0.0, |m, &i| m + p.weight(i));
    DeviationSets {
        r,
        rho_plus: mass(&plus),
        rho_minus: mass(&minus),
        plus,
        minus,
    }
}

/// Smallest `r ≥ 0` at which no constraint-reducing deviation is profitable.
/// `None` when that threshold is not finite.
pub fn critical_multiplier(p: &Payoffs, tol: &Tolerances) -> Option<f64> {
    let n = p.len();
    let mut r0: f64 = 0.0;
    for i in 0..n {
        if p.weight(i) <= tol.measure {
            continue;
        }
        for j in 0..n {
            let db = p.b(i, i) - p.b(i, j);
            if db > tol.strict {
                r0 = r0.max((p.a(i, j) - p.a(i, i)) / db);
            }
        }
    }
    r0.is_finite().then_some(r0)
}

/// Largest `r` at which no constraint-raising deviation is profitable (may be
/// negative or infinite).
pub fn upper_multiplier(p: &Payoffs, tol: &Tolerances) -> f64 {
    let n = p.len();
    let mut r1 = f64::INFINITY;
    for i in 0..n {
        if p.weight(i) <= tol.measure {
            continue;
        }
        for j in 0..n {
            let db = p.b(i, j) - p.b(i, i);
            if db > tol.strict {
                r1 = r1.min((p.a(i, i) - p.a(i, j)) / db);
            }
        }
    }
    r1
}

/// Every `r > 0` at which some type is indifferent between truth and a
/// report, with the midpoints between them, `0` and a point past the last.
/// `ρ⁺` and `ρ⁻` are step functions whose steps all sit in this set.
pub fn breakpoint_sweep(p: &Payoffs) -> Vec<f64> {
    let n = p.len();
    let mut out = vec![0.0];
    for i in 0..n {
        for j in 0..n {
            let db = p.b(i, j) - p.b(i, i);
            if db != 0.0 {
                let r = -(p.a(i, j) - p.a(i, i)) / db;
                if r > 0.0 && r.is_finite() {
                    out.push(r);
                }
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    let mids: Vec<f64> = out.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let last = out.last().copied().unwrap_or(0.0);
    out.extend(mids);
    out.push(2.0 * last + 1.0);
    out.sort_by(f64::total_cmp);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoSample {
    pub r: f64,
    pub rho_plus: f64,
    pub rho_minus: f64,
}

pub fn rho_curve(p: &Payoffs, rs: &[f64], tol: &Tolerances) -> Vec<RhoSample> {
    rs.iter()
        .map(|&r| {
            let s = deviation_sets(p, r, tol);
            RhoSample {
                r,
                rho_plus: s.rho_plus,
                rho_minus: s.rho_minus,
            }
        })
        .collect()
}

/// Largest Lagrangian gain over positive-weight types and all reports.
pub fn lagrangian_margin(p: &Payoffs, r: f64, tol: &Tolerances) -> f64 {
    let n = p.len();
    let mut m = f64::NEG_INFINITY;
    for i in (0..n).filter(|&i| p.weight(i) > tol.measure) {
        for j in 0..n {
            m = m.max(lagrangian_gain(p, i, j, r));
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Truthful reporting is optimal without pricing the constraint (`r = 0`).
    Slack,
    /// The constraint binds and carries a positive multiplier.
    Binding,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub true_type: usize,
    pub report: usize,
    pub excess: f64,
}

/// A strategy that keeps the constraint value of truth-telling but raises utility.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedDeviation {
    pub r: f64,
    pub strategy: Strategy,
    pub utility_gain: f64,
    pub constraint_change: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterizationCertificate {
    pub ic: bool,
    pub regime: Option<Regime>,
    /// Multiplier certifying the verdict, when one exists.
    pub r: Option<f64>,
    pub r0: Option<f64>,
    pub r1: f64,
    pub feasible: bool,
    pub binding: bool,
    pub truthful_constraint: f64,
    /// Largest Lagrangian gain at the multiplier used for the verdict.
    pub margin: f64,
    pub violations: Vec<Violation>,
    pub deviation: Option<MixedDeviation>,
    /// The verdict sits within `BOUNDARY_BAND` of a tolerance.
    pub boundary: bool,
}

const MAX_VIOLATIONS: usize = 20;

fn violations(p: &Payoffs, r: f64, tol: &Tolerances) -> Vec<Violation> {
    let n = p.len();
    let mut out = Vec::new();
    for i in (0..n).filter(|&i| p.weight(i) > tol.measure) {
        for j in 0..n {
            let excess = lagrangian_gain(p, i, j, r);
            if excess > tol.ic {
                out.push(Violation {
                    true_type: i,
                    report: j,
                    excess,
                });
            }
        }
    }
    out.sort_by(|x, y| y.excess.total_cmp(&x.excess));
    out.truncate(MAX_VIOLATIONS);
    out
}

pub fn characterize_payoffs(p: &Payoffs, tol: &Tolerances) -> CharacterizationCertificate {
    let truthful_constraint = p.truthful_constraint();
    let level = p.level();
    let feasible = truthful_constraint >= level - tol.feas;
    let slack = truthful_constraint - level;
    let binding = slack.abs() <= tol.bind;
    let r0 = critical_multiplier(p, tol);
    let r1 = upper_multiplier(p, tol);

    let margin0 = lagrangian_margin(p, 0.0, tol);
    let at_r0 = r0.filter(|&r| r > 0.0).map(|r| (r, lagrangian_margin(p, r, tol)));

    let certified = if margin0 <= tol.ic {
        Some((0.0, margin0, Regime::Slack))
    } else {
        at_r0
            .filter(|&(_, m)| binding && m <= tol.ic)
            .map(|(r, m)| (r, m, Regime::Binding))
    };
    let ic = feasible && certified.is_some();
    let regime = certified.filter(|_| ic).map(|c| c.2);
    let r = certified.filter(|_| ic).map(|c| c.0);

    // Without a certificate, report against the best admissible multiplier.
    let (used_r, margin) = match certified {
        Some((r, m, _)) => (r, m),
        None => match at_r0 {
            Some((r, m)) if binding && m < margin0 => (r, m),
            _ => (0.0, margin0),
        },
    };
    let near = |x: f64, t: f64| x > t && x <= t + BOUNDARY_BAND;
    let best = at_r0.map_or(margin0, |(_, m)| m.min(margin0));
    let boundary = near(margin, tol.ic) || near(best, tol.ic) || near(slack.abs(), tol.bind) || near(-slack, tol.feas);

    let (violations, deviation) = if ic {
        (Vec::new(), None)
    } else {
        let dev_r = match r0 {
            Some(r0) if r1 < r0 => 0.5 * (r1.max(0.0) + r0),
            Some(r0) => r0,
            None => 0.0,
        };
        (violations(p, used_r, tol), mixed_deviation(p, dev_r, tol))
    };

    CharacterizationCertificate {
        ic,
        regime,
        r,
        r0,
        r1,
        feasible,
        binding,
        truthful_constraint,
        margin,
        violations,
        deviation,
        boundary,
    }
}

pub fn characterize(
    rules: &InterimRules,
    model: &PlayerModel,
    space: &TypeSpace,
    tol: &Tolerances,
) -> Result<CharacterizationCertificate> {
    Ok(characterize_payoffs(&Payoffs::build(rules, model, space)?, tol))
}

/// Combines the most profitable deviations of `V⁺(r)` and `V⁻(r)` with weights
/// chosen so the aggregate constraint value is unchanged. When only one set is
/// non-empty its deviation is returned alone if it does not lower the constraint.
pub fn mixed_deviation(p: &Payoffs, r: f64, tol: &Tolerances) -> Option<MixedDeviation> {
    let n = p.len();
    let sets = deviation_sets(p, r, tol);
    let pick = |i: usize, lower: bool| {
        let bii = p.b(i, i);
        (0..n)
            .filter(|&j| {
                if lower {
                    p.b(i, j) < bii - tol.strict
                } else {
                    p.b(i, j) > bii + tol.strict
                }
            })
            .max_by(|&x, &y| lagrangian_gain(p, i, x, r).total_cmp(&lagrangian_gain(p, i, y, r)))
            .filter(|&j| lagrangian_gain(p, i, j, r) > tol.strict)
    };
    let h1: Vec<(usize, usize)> = sets.plus.iter().filter_map(|&i| pick(i, true).map(|j| (i, j))).collect();
    let h2: Vec<(usize, usize)> = sets.minus.iter().filter_map(|&i| pick(i, false).map(|j| (i, j))).collect();
    let delta = |h: &[(usize, usize)]| {
        h.iter().fold((0.0, 0.0), |(du, dc), &(i, j)| {
            let w = p.weight(i);
            (du + w * (p.a(i, j) - p.a(i, i)), dc + w * (p.b(i, j) - p.b(i, i)))
        })
    };
    let (du1, dc1) = delta(&h1);
    let (du2, dc2) = delta(&h2);

    let (mut mu1, mut mu2) = match (h1.is_empty(), h2.is_empty()) {
        (true, true) => return None,
        (false, true) if dc1 >= 0.0 => (1.0, 0.0),
        (true, false) => (0.0, 1.0),
        (false, true) => return None,
        (false, false) if dc1 >= 0.0 => (1.0, 0.0),
        (false, false) => {
            let (m1, m2) = (dc2, -dc1);
            let scale = m1.max(m2);
            (m1 / scale, m2 / scale)
        }
    };
    if mu1 > 0.0 && mu2 > 0.0 && h1.iter().any(|(i, _)| h2.iter().any(|(k, _)| k == i)) {
        mu1 *= 0.5;
        mu2 *= 0.5;
    }

    let mut matrix = vec![0.0; n * n];
    for i in 0..n {
        matrix[i * n + i] = 1.0;
    }
    for (h, mu) in [(&h1, mu1), (&h2, mu2)] {
        if mu == 0.0 {
            continue;
        }
        for &(i, j) in h.iter() {
            matrix[i * n + i] -= mu;
            matrix[i * n + j] += mu;
        }
    }
    for x in matrix.iter_mut() {
        *x = x.clamp(0.0, 1.0);
    }
    let strategy = Strategy::from_matrix(n, matrix).ok()?;
    Some(MixedDeviation {
        r,
        strategy,
        utility_gain: mu1 * du1 + mu2 * du2,
        constraint_change: mu1 * dc1 + mu2 * dc2,
    })
}
