//! Player models `(u, f, c1, c2, C)`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Expr;

/// A payoff map `Q × V → R`, called as `(q, v)`.
pub type PayoffFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
/// A map `Q → R^d`.
pub type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Tolerance for the load-time check that a declared linear form reproduces `u` and `f`.
pub const LINEAR_FORM_TOL: f64 = 1e-10;

/// Coefficients `u*`, `f*` for models with `u(q,v) = u*(q)·v`, `f(q,v) = f*(q)·v`.
#[derive(Clone)]
pub struct LinearForm {
    pub u_star: VectorFn,
    pub f_star: VectorFn,
}

/// The value term of a builtin model.
#[derive(Clone)]
pub struct Valuation {
    u: PayoffFn,
    u_star: Option<VectorFn>,
    label: String,
}

impl Valuation {
    /// `u(q, v) = q·v`; requires outcome and type dimensions to agree.
    pub fn dot() -> Self {
        Self {
            u: Arc::new(|q, v| q.iter().zip(v).map(|(a, b)| a * b).sum()),
            u_star: Some(Arc::new(|q| q.to_vec())),
            label: "q·v".into(),
        }
    }

    /// `u(q, v) = u_star(q)·v`.
    pub fn linear(u_star: VectorFn) -> Self {
        let coef = u_star.clone();
        Self {
            u: Arc::new(move |q, v| coef(q).iter().zip(v).map(|(a, b)| a * b).sum()),
            u_star: Some(u_star),
            label: "linear".into(),
        }
    }

    /// Any value function; surrogate analysis needs a linear form and is unavailable.
    pub fn general(u: PayoffFn) -> Self {
        Self {
            u,
            u_star: None,
            label: "general".into(),
        }
    }

    /// `u` given as an expression in `q1..`, `v1..`.
    pub fn expression(source: &str) -> Result<Self> {
        let expr = Expr::parse(source)?;
        let label = format!("u = {source}");
        Ok(Self {
            u: Arc::new(move |q, v| expr.eval(q, v).unwrap_or(f64::NAN)),
            u_star: None,
            label,
        })
    }

    /// `u_star` given as one expression per type coordinate, in `q1..` only.
    pub fn linear_expressions(sources: &[String]) -> Result<Self> {
        let exprs = sources.iter().map(|s| Expr::parse(s)).collect::<Result<Vec<_>>>()?;
        if let Some(e) = exprs.iter().find(|e| e.arity().1 > 0) {
            return Err(Error::Expression(format!("`{}`: u* may only depend on q", e.source())));
        }
        let mut v = Self::linear(Arc::new(move |q| exprs.iter().map(|e| e.eval(q, &[]).unwrap_or(f64::NAN)).collect()));
        v.label = format!("u* = [{}]", sources.join(", "));
        Ok(v)
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

/// A single player's utility and ex-ante constraint.
///
/// Ex-ante utility is `E[u(x(v'), v) − c1·p(v')]`; the constraint is
/// `E[f(x(v'), v) − c2·p(v')] ≥ C`.
#[derive(Clone)]
pub struct PlayerModel {
    u: PayoffFn,
    f: PayoffFn,
    c1: f64,
    c2: f64,
    level: f64,
    linear: Option<LinearForm>,
    label: String,
}

fn switch(name: &str, value: u8) -> Result<f64> {
    match value {
        0 | 1 => Ok(value as f64),
        _ => Err(Error::Invalid(format!("{name} must be 0 or 1, got {value}"))),
    }
}

impl PlayerModel {
    pub fn new(label: impl Into<String>, u: PayoffFn, f: PayoffFn, c1: u8, c2: u8, level: f64) -> Result<Self> {
        if !level.is_finite() {
            return Err(Error::Invalid(format!("constraint level must be finite, got {level}")));
        }
        Ok(Self {
            u,
            f,
            c1: switch("c1", c1)?,
            c2: switch("c2", c2)?,
            level,
            linear: None,
            label: label.into(),
        })
    }

    /// Model with `u` and `f` given as expressions in `q1..`, `v1..`.
    pub fn from_expressions(label: impl Into<String>, u: &str, f: &str, c1: u8, c2: u8, level: f64) -> Result<Self> {
        let (ue, fe) = (Expr::parse(u)?, Expr::parse(f)?);
        Self::new(
            label,
            Arc::new(move |q, v| ue.eval(q, v).unwrap_or(f64::NAN)),
            Arc::new(move |q, v| fe.eval(q, v).unwrap_or(f64::NAN)),
            c1,
            c2,
            level,
        )
    }

    /// Attaches `u*`, `f*`. Use [`PlayerModel::check_linear_form`] to validate it.
    pub fn with_linear_form(mut self, form: LinearForm) -> Self {
        self.linear = Some(form);
        self
    }

    /// Value maximizer with an ROI floor: `E[u] ≥ (1+γ)·E[p]`.
    pub fn roi(gamma: f64, valuation: Valuation) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::Invalid(format!("ROI target gamma must be >= 0, got {gamma}")));
        }
        let scale = 1.0 / (1.0 + gamma);
        let u = valuation.u.clone();
        let f: PayoffFn = if gamma == 0.0 { u.clone() } else { Arc::new(move |q, v| u(q, v) * scale) };
        let mut model = Self::new(format!("roi(gamma={gamma}, {})", valuation.label), valuation.u, f, 0, 1, 0.0)?;
        if let Some(u_star) = valuation.u_star {
            let us = u_star.clone();
            model.linear = Some(LinearForm {
                u_star,
                f_star: Arc::new(move |q| us(q).into_iter().map(|x| x * scale).collect()),
            });
        }
        Ok(model)
    }

    /// Quasi-linear utility with an ex-ante budget: `E[p] ≤ budget`.
    pub fn budget(budget: f64, valuation: Valuation) -> Result<Self> {
        if !(budget >= 0.0 && budget.is_finite()) {
            return Err(Error::Invalid(format!("budget must be >= 0, got {budget}")));
        }
        let mut model = Self::new(
            format!("budget(B={budget}, {})", valuation.label),
            valuation.u,
            Arc::new(|_, _| 0.0),
            1,
            1,
            -budget,
        )?;
        if let Some(u_star) = valuation.u_star {
            let us = u_star.clone();
            model.linear = Some(LinearForm {
                u_star,
                f_star: Arc::new(move |q| vec![0.0; us(q).len()]),
            });
        }
        Ok(model)
    }

    pub fn u(&self, q: &[f64], v: &[f64]) -> f64 {
        (self.u)(q, v)
    }

    pub fn f(&self, q: &[f64], v: &[f64]) -> f64 {
        (self.f)(q, v)
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    /// The constraint level `C`.
    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn linear_form(&self) -> Option<&LinearForm> {
        self.linear.as_ref()
    }

    /// Same model with a different constraint level.
    pub fn with_level(&self, level: f64) -> Self {
        let mut m = self.clone();
        m.level = level;
        m
    }

    /// `u/scale`, `f/scale` with everything else kept.
    pub fn scaled(&self, scale: f64) -> Self {
        let (u, f) = (self.u.clone(), self.f.clone());
        let mut m = self.clone();
        m.u = Arc::new(move |q, v| u(q, v) / scale);
        m.f = Arc::new(move |q, v| f(q, v) / scale);
        m.linear = self.linear.as_ref().map(|lf| {
            let (us, fs) = (lf.u_star.clone(), lf.f_star.clone());
            LinearForm {
                u_star: Arc::new(move |q| us(q).into_iter().map(|x| x / scale).collect()),
                f_star: Arc::new(move |q| fs(q).into_iter().map(|x| x / scale).collect()),
            }
        });
        m
    }

    /// Payment scaling `c1 + r·c2` used by taxed prices and surrogate utilities.
    pub fn payment_scale(&self, r: f64) -> f64 {
        self.c1 + r * self.c2
    }

    /// Verifies `u(q,v) = u*(q)·v` and `f(q,v) = f*(q)·v` on the given samples.
    pub fn check_linear_form<'a>(
        &self,
        outcomes: impl IntoIterator<Item = &'a [f64]> + Clone,
        types: impl IntoIterator<Item = &'a [f64]> + Clone,
    ) -> Result<()> {
        let lf = self.linear.as_ref().ok_or(Error::MissingLinearForm)?;
        let mut worst: f64 = 0.0;
        for q in outcomes {
            let (us, fs) = ((lf.u_star)(q), (lf.f_star)(q));
            for v in types.clone() {
                if us.len() != v.len() || fs.len() != v.len() {
                    return Err(Error::DimensionMismatch {
                        context: "linear form coefficients",
                        expected: v.len(),
                        found: us.len().max(fs.len()),
                    });
                }
                let du = self.u(q, v) - dot(&us, v);
                let df = self.f(q, v) - dot(&fs, v);
                worst = worst.max(du.abs()).max(df.abs());
                if worst.is_nan() {
                    return Err(Error::LinearFormMismatch { deviation: f64::NAN });
                }
            }
        }
        if worst > LINEAR_FORM_TOL {
            return Err(Error::LinearFormMismatch { deviation: worst });
        }
        Ok(())
    }
}

impl fmt::Debug for PlayerModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlayerModel")
            .field("label", &self.label)
            .field("c1", &self.c1)
            .field("c2", &self.c2)
            .field("level", &self.level)
            .field("linear", &self.linear.is_some())
            .finish()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Builtin ROI model, see [`PlayerModel::roi`].
pub fn make_model_roi(gamma: f64, valuation: Valuation) -> Result<PlayerModel> {
    PlayerModel::roi(gamma, valuation)
}

/// Builtin budget model, see [`PlayerModel::budget`].
pub fn make_model_budget(budget: f64, valuation: Valuation) -> Result<PlayerModel> {
    PlayerModel::budget(budget, valuation)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roi_constants() {
        let m = make_model_roi(0.25, Valuation::dot()).unwrap();
        assert_eq!((m.c1(), m.c2(), m.level()), (0.0, 1.0, 0.0));
        assert!((m.f(&[1.0], &[0.5]) - 0.5 / 1.25).abs() < 1e-15);
    }

    #[test]
    fn roi_gamma_zero_collapses_f_to_u() {
        let m = make_model_roi(0.0, Valuation::dot()).unwrap();
        for (q, v) in [(0.3, 0.9), (1.0, 0.2)] {
            assert_eq!(m.f(&[q], &[v]), m.u(&[q], &[v]));
        }
        assert_eq!(m.level(), 0.0);
    }

    #[test]
    fn roi_gamma_one_halves_value() {
        let m = make_model_roi(1.0, Valuation::dot()).unwrap();
        assert!((m.f(&[1.0], &[0.6]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn budget_constants() {
        let m = make_model_budget(0.3, Valuation::dot()).unwrap();
        assert_eq!((m.c1(), m.c2(), m.level()), (1.0, 1.0, -0.3));
        assert_eq!(m.f(&[1.0], &[1.0]), 0.0);
        let zero = make_model_budget(0.0, Valuation::dot()).unwrap();
        assert_eq!(zero.level(), 0.0);
    }

    #[test]
    fn negative_parameters_rejected() {
        assert!(make_model_roi(-0.1, Valuation::dot()).is_err());
        assert!(make_model_budget(-1.0, Valuation::dot()).is_err());
    }

    #[test]
    fn switches_must_be_binary() {
        let zero: PayoffFn = Arc::new(|_, _| 0.0);
        assert!(PlayerModel::new("x", zero.clone(), zero, 2, 1, 0.0).is_err());
    }

    #[test]
    fn linear_form_check() {
        let m = make_model_roi(0.5, Valuation::dot()).unwrap();
        let qs = [vec![0.0, 1.0], vec![0.3, 0.7]];
        let vs = [vec![0.2, 0.9], vec![1.0, 1.0]];
        m.check_linear_form(qs.iter().map(Vec::as_slice), vs.iter().map(Vec::as_slice)).unwrap();

        let bad = PlayerModel::from_expressions("bad", "q1*v1*v1", "0", 1, 1, 0.0)
            .unwrap()
            .with_linear_form(LinearForm {
                u_star: Arc::new(|q| q.to_vec()),
                f_star: Arc::new(|q| vec![0.0; q.len()]),
            });
        let err = bad
            .check_linear_form([[1.0].as_slice()], [[0.5].as_slice()])
            .unwrap_err();
        assert!(matches!(err, Error::LinearFormMismatch { .. }));
    }
}
