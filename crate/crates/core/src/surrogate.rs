//! Surrogate utilities for models that are linear in the type.
//!
//! With `u(q,v) = u*(q)·v` and `f(q,v) = f*(q)·v`, fixing a multiplier `r`
//! turns the player's Lagrangian into a quasi-linear problem with value
//! `ũ(q) = u*(q) + r·f*(q)` and surrogate indirect utility
//! `Ũ(v) = ũ(x(v))·v − (c1 + r·c2)·p(v)`. Truthful reporting is optimal for
//! the Lagrangian exactly when `Ũ` is convex with subgradient `ũ(x(v))`, and
//! payments are then pinned down by integrating `ũ(x(·))` along any path.

use rayon::prelude::*;

use crate::characterizer::{characterize_payoffs, critical_multiplier, BOUNDARY_BAND};
use crate::error::{Error, Result};
use crate::model::{dot, InterimRules, LinearForm, Payoffs, PlayerModel, RuleKind, Tolerances, TypeSpace};

/// Absolute part of the convexity tolerance.
pub const CONVEXITY_ATOL: f64 = 1e-9;
/// Relative part, scaled by `max |Ũ|`.
pub const CONVEXITY_RTOL: f64 = 1e-8;
/// `f̂` is treated as identically zero below this sup-norm.
pub const VANISHING_TOL: f64 = 1e-10;

/// Default finite-difference step: a small fraction of the narrowest axis extent.
pub fn default_step(space: &TypeSpace) -> f64 {
    let extent = space
        .bounds()
        .iter()
        .map(|(lo, hi)| hi - lo)
        .fold(f64::INFINITY, f64::min);
    1e-4 * if extent.is_finite() && extent > 0.0 { extent } else { 1.0 }
}

/// Report perturbations `(outcome, payment)` at `v ± h·e_k`, with the step used.
type Stencil = ((Vec<f64>, f64), (Vec<f64>, f64), f64);

fn stencil(rules: &InterimRules, space: &TypeSpace, node: usize, axis: usize, step: f64) -> Result<Option<Stencil>> {
    if rules.kind() == RuleKind::Tabulated {
        let (Some(up), Some(down)) = (space.neighbor(node, axis, 1), space.neighbor(node, axis, -1)) else {
            return Ok(None);
        };
        let h = 0.5 * (space.point(up)[axis] - space.point(down)[axis]);
        return Ok(Some((rules.eval(space.point(up))?, rules.eval(space.point(down))?, h)));
    }
    let mut v = space.point(node).to_vec();
    let c = v[axis];
    v[axis] = c + step;
    let plus = rules.eval(&v)?;
    v[axis] = c - step;
    let minus = rules.eval(&v)?;
    Ok(Some((plus, minus, step)))
}

/// Report-gradients `û`, `f̂` of the utility and constraint terms at interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferentialReport {
    /// Interior nodes, in index order; the remaining fields are aligned with it.
    pub nodes: Vec<usize>,
    pub u_hat: Vec<Vec<f64>>,
    pub f_hat: Vec<Vec<f64>>,
    /// `‖û + r·f̂‖∞` at the multiplier `r`.
    pub residual: Vec<f64>,
    pub r: f64,
    /// Least-squares multiplier, clipped at 0.
    pub r_fit: f64,
    pub max_residual: f64,
    pub step: f64,
    /// Differences were taken between grid neighbours rather than at `step`.
    pub from_grid: bool,
    pub f_hat_vanishes: bool,
}

/// Finite-difference check of `û(v) + r·f̂(v) = 0`. Uses `r_fit` when `r` is `None`.
pub fn differential_check(
    rules: &InterimRules,
    model: &PlayerModel,
    space: &TypeSpace,
    r: Option<f64>,
    step: f64,
) -> Result<DifferentialReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Invalid(format!("finite-difference step must be positive, got {step}")));
    }
    if !space.is_regular() {
        return Err(Error::Invalid("differential check needs a regular grid".into()));
    }
    let from_grid = rules.kind() == RuleKind::Tabulated;
    let nodes = space.interior();
    let d = space.dim();
    let (c1, c2) = (model.c1(), model.c2());
    let grads: Vec<(Vec<f64>, Vec<f64>)> = nodes
        .par_iter()
        .map(|&i| {
            let v = space.point(i);
            let (mut uh, mut fh) = (vec![0.0; d], vec![0.0; d]);
            for k in 0..d {
                let Some(((qp, pp), (qm, pm), h)) = stencil(rules, space, i, k, step)? else {
                    continue;
                };
                uh[k] = ((model.u(&qp, v) - c1 * pp) - (model.u(&qm, v) - c1 * pm)) / (2.0 * h);
                fh[k] = ((model.f(&qp, v) - c2 * pp) - (model.f(&qm, v) - c2 * pm)) / (2.0 * h);
            }
            Ok((uh, fh))
        })
        .collect::<Result<_>>()?;
    let (u_hat, f_hat): (Vec<_>, Vec<_>) = grads.into_iter().unzip();

    let (mut num, mut den) = (0.0, 0.0);
    for (idx, &i) in nodes.iter().enumerate() {
        num += space.weight(i) * dot(&u_hat[idx], &f_hat[idx]);
        den += space.weight(i) * dot(&f_hat[idx], &f_hat[idx]);
    }
    let f_max = f_hat.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let f_hat_vanishes = f_max <= VANISHING_TOL;
    let r_fit = if den > 0.0 { (-num / den).max(0.0) } else { 0.0 };
    let r = r.unwrap_or(r_fit);
    let residual: Vec<f64> = u_hat
        .iter()
        .zip(&f_hat)
        .map(|(u, f)| u.iter().zip(f).fold(0.0f64, |m, (a, b)| m.max((a + r * b).abs())))
        .collect();
    let max_residual = residual.iter().copied().fold(0.0, f64::max);
    Ok(DifferentialReport {
        nodes,
        u_hat,
        f_hat,
        residual,
        r,
        r_fit,
        max_residual,
        step: if from_grid { f64::NAN } else { step },
        from_grid,
        f_hat_vanishes,
    })
}

/// `Ũ` and `ũ(x(·))` on the grid for a fixed multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateField {
    pub r: f64,
    /// `c1 + r·c2`.
    pub scale: f64,
    pub u_tilde: Vec<Vec<f64>>,
    pub utility: Vec<f64>,
    /// Interior nodes where the gradient identity was evaluated.
    pub interior: Vec<usize>,
    /// `‖∇Ũ(v) − ũ(x(v))‖∞` by central differences, aligned with `interior`.
    pub gradient_residual: Vec<f64>,
    pub gradient_step: f64,
    pub gradient_from_grid: bool,
    /// `max Ũ(v') − Ũ(v) − ũ(x(v'))·(v' − v)` over positive-weight true types
    /// `v` and all reports `v'`; at most 0 when `Ũ` is convex with subgradient `ũ(x(·))`.
    pub convexity_margin: f64,
    /// Worst violation of `ũ(x(v))·Δ ≤ Ũ(v+Δ) − Ũ(v) ≤ ũ(x(v+Δ))·Δ` over axis neighbours.
    pub sandwich_margin: f64,
}

impl SurrogateField {
    pub fn max_abs_utility(&self) -> f64 {
        self.utility.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `atol + rtol·max|Ũ|`.
    pub fn tolerance(&self) -> f64 {
        CONVEXITY_ATOL + CONVEXITY_RTOL * self.max_abs_utility()
    }
}

fn surrogate_value(lf: &LinearForm, r: f64, q: &[f64]) -> Vec<f64> {
    let us = (lf.u_star)(q);
    if r == 0.0 {
        return us;
    }
    let fs = (lf.f_star)(q);
    us.iter().zip(&fs).map(|(a, b)| a + r * b).collect()
}

pub fn surrogate_field(
    rules: &InterimRules,
    model: &PlayerModel,
    space: &TypeSpace,
    r: f64,
    step: Option<f64>,
) -> Result<SurrogateField> {
    let lf = model.linear_form().ok_or(Error::MissingLinearForm)?;
    // a zero scale is fine here: payments simply drop out of Ũ
    let scale = model.payment_scale(r);
    let table = rules.tabulate(space)?;
    let n = space.len();
    let u_tilde: Vec<Vec<f64>> = table.outcomes.iter().map(|q| surrogate_value(lf, r, q)).collect();
    if let Some(bad) = u_tilde.iter().find(|u| u.len() != space.dim()) {
        return Err(Error::DimensionMismatch {
            context: "surrogate value",
            expected: space.dim(),
            found: bad.len(),
        });
    }
    let utility: Vec<f64> = (0..n)
        .map(|i| dot(&u_tilde[i], space.point(i)) - scale * table.payments[i])
        .collect();

    let convexity_margin = (0..n)
        .into_par_iter()
        .filter(|&i| space.weight(i) > 0.0)
        .map(|i| {
            let v = space.point(i);
            (0..n)
                .map(|j| {
                    let w = space.point(j);
                    let dv: f64 = u_tilde[j].iter().zip(w.iter().zip(v)).map(|(g, (a, b))| g * (a - b)).sum();
                    utility[j] - utility[i] - dv
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);

    let mut sandwich_margin = f64::NEG_INFINITY;
    let d = space.dim();
    if space.is_regular() {
        for i in 0..n {
            for k in 0..d {
                let Some(j) = space.neighbor(i, k, 1) else { continue };
                let delta = space.point(j)[k] - space.point(i)[k];
                let rise = utility[j] - utility[i];
                sandwich_margin = sandwich_margin
                    .max(u_tilde[i][k] * delta - rise)
                    .max(rise - u_tilde[j][k] * delta);
            }
        }
    }

    let gradient_from_grid = rules.kind() == RuleKind::Tabulated;
    let gradient_step = step.unwrap_or_else(|| default_step(space));
    let interior = if space.is_regular() { space.interior() } else { Vec::new() };
    let at = |q: &[f64], p: f64, v: &[f64]| dot(&surrogate_value(lf, r, q), v) - scale * p;
    let gradient_residual: Vec<f64> = interior
        .par_iter()
        .map(|&i| {
            let mut worst: f64 = 0.0;
            let v = space.point(i);
            for k in 0..d {
                let Some(((qp, pp), (qm, pm), h)) = stencil(rules, space, i, k, gradient_step)? else {
                    continue;
                };
                let (mut vp, mut vm) = (v.to_vec(), v.to_vec());
                vp[k] += h;
                vm[k] -= h;
                let grad = (at(&qp, pp, &vp) - at(&qm, pm, &vm)) / (2.0 * h);
                worst = worst.max((grad - u_tilde[i][k]).abs());
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;

    Ok(SurrogateField {
        r,
        scale,
        u_tilde,
        utility,
        interior,
        gradient_residual,
        gradient_step,
        gradient_from_grid,
        convexity_margin,
        sandwich_margin,
    })
}

/// Residuals below this are roundoff and carry no order information.
const ROUNDOFF_RESIDUAL: f64 = 1e-12;

/// Largest gradient residual at each step, and the observed order of the last halving.
pub fn gradient_decay(
    rules: &InterimRules,
    model: &PlayerModel,
    space: &TypeSpace,
    r: f64,
    steps: &[f64],
) -> Result<(Vec<(f64, f64)>, Option<f64>)> {
    let mut out = Vec::with_capacity(steps.len());
    for &h in steps {
        let field = surrogate_field(rules, model, space, r, Some(h))?;
        out.push((h, field.gradient_residual.iter().copied().fold(0.0, f64::max)));
    }
    let order = match out.as_slice() {
        [.., (h0, e0), (h1, e1)] if *e0 > ROUNDOFF_RESIDUAL && *e1 > ROUNDOFF_RESIDUAL => Some((e0 / e1).ln() / (h0 / h1).ln()),
        _ => None,
    };
    Ok((out, order))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiplierSource {
    /// `r = 0` already certifies.
    Zero,
    /// Smallest multiplier clearing constraint-reducing deviations.
    Critical,
    /// Least-squares fit of the differential condition.
    Fitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Surrogate,
    /// The constraint term does not respond to reports; decided by the
    /// multiplier characterization instead.
    ConstraintFree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateCheck {
    pub ic_candidate: bool,
    pub r: f64,
    pub source: MultiplierSource,
    pub route: Route,
    pub field: SurrogateField,
    pub feasible: bool,
    pub binding: bool,
    pub tolerance: f64,
    pub boundary: bool,
    pub diagnostics: Vec<String>,
}

/// Surrogate certificate: `Ũ` convex with subgradient `ũ(x(·))` (checked on
/// all node pairs, which also covers the discrete gradient identity between
/// neighbours), truth-telling feasible, and `r > 0` only if the constraint binds.
pub fn surrogate_check(
    rules: &InterimRules,
    model: &PlayerModel,
    space: &TypeSpace,
    tol: &Tolerances,
) -> Result<SurrogateCheck> {
    if !space.is_regular() {
        return Err(Error::Invalid("surrogate analysis needs a regular grid".into()));
    }
    let range = rules.tabulate(space)?.range;
    let types: Vec<&[f64]> = space.points().collect();
    model.check_linear_form(range.iter().map(Vec::as_slice), types.iter().copied())?;
    let payoffs = Payoffs::build(rules, model, space)?;
    let slack = payoffs.truthful_constraint() - payoffs.level();
    let feasible = slack >= -tol.feas;
    let binding = slack.abs() <= tol.bind;
    let mut diagnostics = Vec::new();
    let near = |x: f64, t: f64| x > t && x <= t + BOUNDARY_BAND;

    let diff = if space.interior().is_empty() {
        None
    } else {
        Some(differential_check(rules, model, space, None, default_step(space))?)
    };
    if diff.as_ref().is_some_and(|d| d.f_hat_vanishes) {
        diagnostics.push("constraint term does not depend on the report; deciding through the multiplier characterization".into());
        let cert = characterize_payoffs(&payoffs, tol);
        let r = cert.r.unwrap_or(0.0);
        let field = surrogate_field(rules, model, space, r, None)?;
        return Ok(SurrogateCheck {
            ic_candidate: cert.ic,
            r,
            source: if r == 0.0 { MultiplierSource::Zero } else { MultiplierSource::Critical },
            route: Route::ConstraintFree,
            tolerance: field.tolerance(),
            field,
            feasible,
            binding,
            boundary: cert.boundary,
            diagnostics,
        });
    }

    let zero = surrogate_field(rules, model, space, 0.0, None)?;
    let passes = |f: &SurrogateField| f.convexity_margin <= f.tolerance() && f.sandwich_margin <= f.tolerance();
    let fragile = near(zero.convexity_margin, zero.tolerance());
    let (field, source) = if passes(&zero) {
        (zero, MultiplierSource::Zero)
    } else {
        let (r, source) = match critical_multiplier(&payoffs, tol) {
            Some(r) => (r, MultiplierSource::Critical),
            None => {
                let fit = diff.as_ref().map_or(0.0, |d| d.r_fit);
                diagnostics.push(format!("critical multiplier is not finite; using fitted r = {fit}"));
                (fit, MultiplierSource::Fitted)
            }
        };
        (surrogate_field(rules, model, space, r, None)?, source)
    };
    finish(field, source, feasible, binding, fragile, slack, tol, diagnostics)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    field: SurrogateField,
    source: MultiplierSource,
    feasible: bool,
    binding: bool,
    boundary: bool,
    slack: f64,
    tol: &Tolerances,
    diagnostics: Vec<String>,
) -> Result<SurrogateCheck> {
    let tolerance = field.tolerance();
    let convex = field.convexity_margin <= tolerance && field.sandwich_margin <= tolerance;
    let ic_candidate = feasible && convex && (field.r == 0.0 || binding);
    let near = |x: f64, t: f64| x > t && x <= t + BOUNDARY_BAND;
    let boundary = boundary
        || near(field.convexity_margin, tolerance)
        || near(slack.abs(), tol.bind)
        || near(-slack, tol.feas);
    Ok(SurrogateCheck {
        ic_candidate,
        r: field.r,
        source,
        route: Route::Surrogate,
        tolerance,
        field,
        feasible,
        binding,
        boundary,
        diagnostics,
    })
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub rules: InterimRules,
    /// `Ũ` along the primary path.
    pub utility: Vec<f64>,
    pub payments: Vec<f64>,
    /// Largest difference between the two integration paths.
    pub discrepancy: f64,
}

/// Integrates `ũ(x(·))` with the trapezoid rule from the anchor node along two
/// axis-aligned paths (axes in increasing order, then in decreasing order) and
/// recovers `p(v) = (ũ(x(v))·v − Ũ(v)) / (c1 + r·c2)` from the first.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct_payment(
    allocation: &[Vec<f64>],
    u_tilde: &dyn Fn(&[f64]) -> Vec<f64>,
    r: f64,
    c1: f64,
    c2: f64,
    space: &TypeSpace,
    anchor: (usize, f64),
    max_discrepancy: Option<f64>,
) -> Result<Reconstruction> {
    let scale = c1 + r * c2;
    if !(scale > 0.0) {
        return Err(Error::DegenerateScaling(r));
    }
    if !space.is_regular() {
        return Err(Error::Invalid("payment reconstruction needs a regular grid".into()));
    }
    let n = space.len();
    if allocation.len() != n {
        return Err(Error::DimensionMismatch {
            context: "allocation",
            expected: n,
            found: allocation.len(),
        });
    }
    let (v0, u0) = anchor;
    if v0 >= n {
        return Err(Error::Invalid(format!("anchor node {v0} out of range")));
    }
    let grad: Vec<Vec<f64>> = allocation.iter().map(|q| u_tilde(q)).collect();
    let d = space.dim();
    let start = space.multi_index(v0).expect("regular grid");

    let integrate = |order: &[usize]| -> Vec<f64> {
        (0..n)
            .map(|target| {
                let goal = space.multi_index(target).expect("regular grid");
                let mut idx = start.clone();
                let mut cur = v0;
                let mut total = u0;
                for &axis in order {
                    while idx[axis] != goal[axis] {
                        if idx[axis] < goal[axis] {
                            idx[axis] += 1;
                        } else {
                            idx[axis] -= 1;
                        }
                        let next = space.flat_index(&idx).expect("in range");
                        let dv = space.point(next)[axis] - space.point(cur)[axis];
                        total += 0.5 * (grad[cur][axis] + grad[next][axis]) * dv;
                        cur = next;
                    }
                }
                total
            })
            .collect()
    };
    let forward: Vec<usize> = (0..d).collect();
    let backward: Vec<usize> = (0..d).rev().collect();
    let utility = integrate(&forward);
    let other = integrate(&backward);
    let discrepancy = utility.iter().zip(&other).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if let Some(limit) = max_discrepancy {
        if discrepancy > limit {
            return Err(Error::PathDiscrepancy {
                discrepancy,
                tolerance: limit,
            });
        }
    }
    let payments: Vec<f64> = (0..n)
        .map(|i| (dot(&grad[i], space.point(i)) - utility[i]) / scale)
        .collect();
    let rules = InterimRules::tabulated(space.clone(), allocation.to_vec(), payments.clone())?;
    Ok(Reconstruction {
        rules,
        utility,
        payments,
        discrepancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Axis, Valuation};
    use std::sync::Arc;

    fn smooth_1d() -> (InterimRules, PlayerModel, TypeSpace) {
        let rules = InterimRules::custom(1, "square", Arc::new(|v: &[f64]| (vec![v[0] * v[0]], 2.0 * v[0].powi(3) / 3.0)));
        let model = PlayerModel::budget(10.0, Valuation::dot()).unwrap();
        (rules, model, TypeSpace::line(0.0, 1.0, 21).unwrap())
    }

    #[test]
    fn zero_multiplier_recovers_quasilinear_utility() {
        let (rules, model, space) = smooth_1d();
        let field = surrogate_field(&rules, &model, &space, 0.0, None).unwrap();
        for (i, v) in space.points().enumerate() {
            let (q, p) = rules.eval(v).unwrap();
            assert!((field.utility[i] - (model.u(&q, v) - p)).abs() < 1e-15);
        }
        assert!(field.convexity_margin <= 1e-12);
    }

    #[test]
    fn gradient_residual_is_second_order() {
        let (rules, model, space) = smooth_1d();
        let (curve, order) = gradient_decay(&rules, &model, &space, 0.0, &[1e-2, 5e-3]).unwrap();
        assert!(curve[1].1 < curve[0].1);
        assert!(order.unwrap() > 1.8, "{curve:?}");
    }

    #[test]
    fn raising_one_price_breaks_convexity() {
        // the type at the posted price is indifferent, so any surcharge there is a violation
        let space = TypeSpace::line(0.0, 1.0, 11).unwrap();
        let model = PlayerModel::budget(10.0, Valuation::dot()).unwrap();
        let outcomes: Vec<Vec<f64>> = space.points().map(|v| vec![if v[0] >= 0.5 { 1.0 } else { 0.0 }]).collect();
        let mut payments: Vec<f64> = outcomes.iter().map(|q| 0.5 * q[0]).collect();
        let ok = InterimRules::tabulated(space.clone(), outcomes.clone(), payments.clone()).unwrap();
        let field = surrogate_field(&ok, &model, &space, 0.0, None).unwrap();
        assert!(field.convexity_margin <= field.tolerance());
        payments[5] += 1e-7;
        let bad = InterimRules::tabulated(space.clone(), outcomes, payments).unwrap();
        let field = surrogate_field(&bad, &model, &space, 0.0, None).unwrap();
        assert!(field.convexity_margin > 10.0 * field.tolerance());
    }

    #[test]
    fn constant_rules_have_no_differential_signal() {
        let space = TypeSpace::line(0.0, 1.0, 7).unwrap();
        let model = PlayerModel::roi(0.2, Valuation::dot()).unwrap();
        let rules = InterimRules::constant(vec![0.5], 0.1);
        let d = differential_check(&rules, &model, &space, None, 1e-3).unwrap();
        assert_eq!(d.max_residual, 0.0);
        assert!(d.f_hat_vanishes);
    }

    #[test]
    fn quadratic_payment_reconstructs_exactly() {
        let space = TypeSpace::line(0.0, 1.0, 101).unwrap();
        let alloc: Vec<Vec<f64>> = space.points().map(|v| vec![v[0]]).collect();
        let rec = reconstruct_payment(&alloc, &|q| q.to_vec(), 0.0, 1.0, 1.0, &space, (0, 0.0), None).unwrap();
        for (i, v) in space.points().enumerate() {
            assert!((rec.payments[i] - 0.5 * v[0] * v[0]).abs() < 1e-12);
        }
        assert_eq!(rec.discrepancy, 0.0);
    }

    #[test]
    fn curl_shows_up_as_path_discrepancy() {
        let axis = Axis::new(0.0, 1.0, 11).unwrap();
        let space = TypeSpace::regular(vec![axis, axis]).unwrap();
        let alloc: Vec<Vec<f64>> = space.points().map(|v| vec![v[0] + 0.5 * v[1], v[1]]).collect();
        let err = reconstruct_payment(&alloc, &|q| q.to_vec(), 0.0, 1.0, 1.0, &space, (0, 0.0), Some(1e-6));
        assert!(matches!(err, Err(Error::PathDiscrepancy { discrepancy, .. }) if discrepancy > 0.4));
    }
}
