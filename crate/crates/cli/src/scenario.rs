//! Scenario files: TOML describing the type grid, the player model, and either
//! interim rules or a priced menu.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use exante_core::builder::MenuItem;
use exante_core::io::{read_menu_csv, read_rules_csv};
use exante_core::model::{Axis, InterimRules, PlayerModel, Quadratic, Tolerances, TypeSpace, Valuation};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::InputError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    space: SpaceSpec,
    model: ModelSpec,
    rules: Option<RulesSpec>,
    menu: Option<MenuSpec>,
    #[serde(default)]
    tolerances: ToleranceSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AxisSpec {
    lo: f64,
    hi: f64,
    nodes: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceSpec {
    axes: Option<Vec<AxisSpec>>,
    points: Option<Vec<Vec<f64>>>,
    weights: Option<Vec<f64>>,
    /// Expression in `v1..` proportional to the weight of each node.
    density: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ModelSpec {
    Budget {
        budget: f64,
        #[serde(default)]
        value: ValueSpec,
    },
    Roi {
        gamma: f64,
        #[serde(default)]
        value: ValueSpec,
    },
    Custom {
        u: String,
        f: String,
        c1: u8,
        c2: u8,
        level: f64,
    },
}

/// `u(q, v)` of a builtin model.
#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
struct ValueSpec {
    /// `u* (q)` per type coordinate, giving `u = u*(q)·v`.
    linear: Option<Vec<String>>,
    /// Arbitrary `u(q, v)`; disables surrogate analysis.
    expression: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RulesSpec {
    Constant {
        outcome: Vec<f64>,
        payment: f64,
    },
    PostedPrice {
        threshold: f64,
        price: f64,
    },
    Affine {
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
        clip: Option<[f64; 2]>,
        #[serde(default)]
        payment_matrix: Vec<Vec<f64>>,
        #[serde(default)]
        payment_linear: Vec<f64>,
        #[serde(default)]
        payment_constant: f64,
    },
    Expressions {
        outcome: Vec<String>,
        payment: String,
    },
    Table {
        outcomes: Vec<Vec<f64>>,
        payments: Vec<f64>,
    },
    File {
        path: PathBuf,
        sha256: Option<String>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MenuItemSpec {
    outcome: Vec<f64>,
    price: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MenuSpec {
    items: Option<Vec<MenuItemSpec>>,
    path: Option<PathBuf>,
    sha256: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSpec {
    pub feas: Option<f64>,
    pub bind: Option<f64>,
    pub ic: Option<f64>,
    pub strict: Option<f64>,
    pub measure: Option<f64>,
}

impl ToleranceSpec {
    pub fn apply(&self, tol: &mut Tolerances) {
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut tol.feas, self.feas);
        set(&mut tol.bind, self.bind);
        set(&mut tol.ic, self.ic);
        set(&mut tol.strict, self.strict);
        set(&mut tol.measure, self.measure);
    }
}

/// Hash of a file referenced by the scenario.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub path: PathBuf,
    pub sha256: String,
}

pub struct Scenario {
    pub name: String,
    pub source: Provenance,
    pub inputs: Vec<Provenance>,
    pub space: TypeSpace,
    pub model: PlayerModel,
    pub rules: Option<InterimRules>,
    pub menu: Option<Vec<MenuItem>>,
    pub tolerances: Tolerances,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn input<T>(r: exante_core::Result<T>, what: &str) -> anyhow::Result<T> {
    r.map_err(|e| anyhow!(InputError(format!("{what}: {e}"))))
}

fn read_input(base: &Path, rel: &Path, expected: Option<&str>) -> anyhow::Result<(Vec<u8>, Provenance)> {
    let path = base.join(rel);
    let bytes = fs::read(&path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(|e| anyhow!(InputError(format!("{e:#}"))))?;
    let sha256 = sha256_hex(&bytes);
    if let Some(want) = expected {
        if !want.eq_ignore_ascii_case(&sha256) {
            bail!(InputError(format!(
                "{} is stale: content hash {sha256} does not match the recorded {want}",
                path.display()
            )));
        }
    }
    Ok((bytes, Provenance { path, sha256 }))
}

fn build_space(spec: &SpaceSpec) -> anyhow::Result<TypeSpace> {
    let space = match (&spec.axes, &spec.points) {
        (Some(axes), None) => {
            let axes = axes
                .iter()
                .map(|a| Axis::new(a.lo, a.hi, a.nodes))
                .collect::<exante_core::Result<Vec<_>>>();
            input(axes.and_then(TypeSpace::regular), "space.axes")?
        }
        (None, Some(points)) => {
            let n = points.len();
            let uniform = vec![1.0 / n as f64; n];
            input(TypeSpace::from_points(points.clone(), uniform), "space.points")?
        }
        _ => bail!(InputError("space needs exactly one of `axes` or `points`".into())),
    };
    match (&spec.weights, &spec.density) {
        (Some(w), None) => input(space.with_weights(w.clone()), "space.weights"),
        (None, Some(src)) => {
            let expr = input(exante_core::expr::Expr::parse(src), "space.density")?;
            for v in space.points() {
                if let Err(e) = expr.eval(&[], v) {
                    bail!(InputError(format!("space.density at {v:?}: {e}")));
                }
            }
            let res = space.with_density(|v| expr.eval(&[], v).unwrap_or(f64::NAN));
            input(res, "space.density")
        }
        (None, None) => Ok(space),
        _ => bail!(InputError("space takes `weights` or `density`, not both".into())),
    }
}

fn valuation(spec: &ValueSpec) -> anyhow::Result<Valuation> {
    match (&spec.linear, &spec.expression) {
        (None, None) => Ok(Valuation::dot()),
        (Some(lin), None) => input(Valuation::linear_expressions(lin), "model.value.linear"),
        (None, Some(e)) => input(Valuation::expression(e), "model.value.expression"),
        _ => bail!(InputError("model.value takes `linear` or `expression`, not both".into())),
    }
}

fn build_model(spec: &ModelSpec) -> anyhow::Result<PlayerModel> {
    match spec {
        ModelSpec::Budget { budget, value } => input(PlayerModel::budget(*budget, valuation(value)?), "model"),
        ModelSpec::Roi { gamma, value } => input(PlayerModel::roi(*gamma, valuation(value)?), "model"),
        ModelSpec::Custom { u, f, c1, c2, level } => {
            input(PlayerModel::from_expressions("custom", u, f, *c1, *c2, *level), "model")
        }
    }
}

fn build_rules(spec: &RulesSpec, space: &TypeSpace, base: &Path, inputs: &mut Vec<Provenance>) -> anyhow::Result<InterimRules> {
    Ok(match spec {
        RulesSpec::Constant { outcome, payment } => InterimRules::constant(outcome.clone(), *payment),
        RulesSpec::PostedPrice { threshold, price } => InterimRules::posted_price(*threshold, *price),
        RulesSpec::Affine {
            matrix,
            offset,
            clip,
            payment_matrix,
            payment_linear,
            payment_constant,
        } => input(
            InterimRules::affine(
                matrix.clone(),
                offset.clone(),
                clip.map(|[lo, hi]| (lo, hi)),
                Quadratic {
                    matrix: payment_matrix.clone(),
                    linear: payment_linear.clone(),
                    constant: *payment_constant,
                },
            ),
            "rules",
        )?,
        RulesSpec::Expressions { outcome, payment } => input(InterimRules::expressions(outcome, payment), "rules")?,
        RulesSpec::Table { outcomes, payments } => {
            input(InterimRules::tabulated(space.clone(), outcomes.clone(), payments.clone()), "rules")?
        }
        RulesSpec::File { path, sha256 } => {
            let (bytes, prov) = read_input(base, path, sha256.as_deref())?;
            let rules = input(read_rules_csv(bytes.as_slice(), space), &prov.path.display().to_string())?;
            inputs.push(prov);
            rules
        }
    })
}

fn build_menu(spec: &MenuSpec, base: &Path, inputs: &mut Vec<Provenance>) -> anyhow::Result<Vec<MenuItem>> {
    match (&spec.items, &spec.path) {
        (Some(items), None) => Ok(items
            .iter()
            .map(|it| MenuItem {
                outcome: it.outcome.clone(),
                price: it.price,
            })
            .collect()),
        (None, Some(path)) => {
            let (bytes, prov) = read_input(base, path, spec.sha256.as_deref())?;
            let menu = input(read_menu_csv(bytes.as_slice()), &prov.path.display().to_string())?;
            inputs.push(prov);
            Ok(menu)
        }
        _ => bail!(InputError("menu needs exactly one of `items` or `path`".into())),
    }
}

/// Parses a scenario from its text; relative paths resolve against `base`.
pub fn parse(text: &str, source: Provenance, base: &Path) -> anyhow::Result<Scenario> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| anyhow!(InputError(format!("{}: {e}", source.path.display()))))?;
    let space = build_space(&file.space)?;
    let model = build_model(&file.model)?;
    let mut inputs = Vec::new();
    let rules = file
        .rules
        .as_ref()
        .map(|r| build_rules(r, &space, base, &mut inputs))
        .transpose()?;
    let menu = file.menu.as_ref().map(|m| build_menu(m, base, &mut inputs)).transpose()?;
    if rules.is_none() && menu.is_none() {
        bail!(InputError("scenario needs a [rules] or a [menu] table".into()));
    }
    let mut tolerances = Tolerances::default();
    file.tolerances.apply(&mut tolerances);
    let name = file.name.unwrap_or_else(|| {
        source
            .path
            .file_stem()
            .map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned())
    });
    Ok(Scenario {
        name,
        source,
        inputs,
        space,
        model,
        rules,
        menu,
        tolerances,
    })
}

pub fn load(path: &Path) -> anyhow::Result<Scenario> {
    let base = path.parent().unwrap_or(Path::new("."));
    let (bytes, source) = read_input(Path::new(""), path, None)?;
    let text = String::from_utf8(bytes).map_err(|_| anyhow!(InputError(format!("{} is not UTF-8", path.display()))))?;
    parse(&text, source, base)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_str(text: &str) -> anyhow::Result<Scenario> {
        let source = Provenance {
            path: "inline.toml".into(),
            sha256: sha256_hex(text.as_bytes()),
        };
        parse(text, source, Path::new("."))
    }

    #[test]
    fn posted_price_on_a_line() {
        let s = parse_str(
            r#"
            [space]
            axes = [{ lo = 0.0, hi = 1.0, nodes = 5 }]
            [model]
            kind = "budget"
            budget = 0.3
            [rules]
            kind = "posted_price"
            threshold = 0.4
            price = 0.4
            "#,
        )
        .unwrap();
        assert_eq!(s.space.len(), 5);
        assert_eq!(s.model.level(), -0.3);
        assert_eq!(s.name, "inline");
    }

    #[test]
    fn density_sets_weights() {
        let s = parse_str(
            r#"
            [space]
            axes = [{ lo = 1.0, hi = 3.0, nodes = 3 }]
            density = "v1"
            [model]
            kind = "roi"
            gamma = 0.0
            [menu]
            items = [{ outcome = [0.0], price = 0.0 }, { outcome = [1.0], price = 0.5 }]
            "#,
        )
        .unwrap();
        assert_eq!(s.space.weights(), &[1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]);
        assert_eq!(s.menu.unwrap().len(), 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_str(
            r#"
            [space]
            axes = [{ lo = 0.0, hi = 1.0, nodes = 2 }]
            [model]
            kind = "budget"
            budget = 1.0
            budgt = 2.0
            [rules]
            kind = "constant"
            outcome = [0.0]
            payment = 0.0
            "#,
        )
        .err()
        .unwrap();
        assert!(err.downcast_ref::<InputError>().is_some());
        assert!(err.to_string().contains("budgt"), "{err}");
    }
}
