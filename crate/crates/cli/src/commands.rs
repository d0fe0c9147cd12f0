use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use exante_core::builder::{extract_menu, induce_rules, solve_multiplier, BuildOutcome};
use exante_core::characterizer::{breakpoint_sweep, characterize_payoffs, rho_curve};
use exante_core::io::{write_field_csv, write_menu_csv, write_rho_csv, write_rules_csv};
use exante_core::model::{InterimRules, Payoffs, RuleKind, Tolerances};
use exante_core::oracle::{exhaustive_verify_payoffs, verify_payoffs, ExhaustiveOptions, OracleOptions};
use exante_core::simulator::{compare_controllers, Controller, EpisodeConfig, Market};
use exante_core::surrogate::{gradient_decay, reconstruct_payment, surrogate_check, surrogate_field, SurrogateCheck};
use exante_core::sweep::{builder_fixture, cross_check, random_scenario};
use exante_core::Error;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::report::{self, header};
use crate::scenario::{self, Scenario};
use crate::{Command, GlobalOpts, InputError, Mode};

const SUCCESS: u8 = 0;
const FINDING: u8 = 1;

struct Timer(Instant);

impl Timer {
    fn start() -> Self {
        Self(Instant::now())
    }

    /// Timing goes to stderr so that reports stay byte-reproducible.
    fn lap(&mut self, phase: &str) {
        eprintln!("timing {phase}: {:.3}s", self.0.elapsed().as_secs_f64());
        self.0 = Instant::now();
    }
}

pub fn dispatch(cmd: Command, global: &GlobalOpts) -> anyhow::Result<u8> {
    match cmd {
        Command::Verify {
            scenario,
            mode,
            exhaustive,
        } => verify(&scenario, mode, exhaustive, global),
        Command::Characterize { scenario, rho_out } => characterize(&scenario, rho_out.as_deref(), global),
        Command::Build {
            scenario,
            extract_r,
            menu_out,
            rules_out,
        } => build(&scenario, extract_r, menu_out.as_deref(), rules_out.as_deref(), global),
        Command::Surrogate {
            scenario,
            step,
            field_out,
        } => surrogate(&scenario, step, field_out.as_deref(), global),
        Command::Reconstruct {
            scenario,
            r,
            anchor_node,
            anchor_utility,
            max_discrepancy,
            rules_out,
        } => reconstruct(&scenario, r, anchor_node, anchor_utility, max_discrepancy, rules_out.as_deref(), global),
        Command::Simulate {
            scenario,
            episode,
            seed,
            trace_dir,
        } => simulate(&scenario, &episode, seed, trace_dir.as_deref(), global),
        Command::Sweep { count, seed, builds } => sweep(count, seed, builds, global),
    }
}

fn tolerances(base: Tolerances, g: &GlobalOpts) -> Tolerances {
    let mut t = base;
    let spec = scenario::ToleranceSpec {
        feas: g.tol_feas,
        bind: g.tol_bind,
        ic: g.tol_ic,
        strict: g.tol_strict,
        measure: g.tol_measure,
    };
    spec.apply(&mut t);
    t
}

fn load(path: &Path, g: &GlobalOpts) -> anyhow::Result<(Scenario, Tolerances)> {
    let s = scenario::load(path)?;
    let tol = tolerances(s.tolerances, g);
    Ok((s, tol))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn emit(report: Map<String, Value>, g: &GlobalOpts) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(&Value::Object(report))?;
    text.push('\n');
    match &g.out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn oracle_opts(tol: &Tolerances) -> OracleOptions {
    OracleOptions {
        tol: *tol,
        ..OracleOptions::default()
    }
}

/// The scenario's rules, or the rules induced by building its menu.
fn target_rules(s: &Scenario, tol: &Tolerances) -> anyhow::Result<(InterimRules, Option<BuildOutcome>)> {
    if let Some(rules) = &s.rules {
        return Ok((rules.clone(), None));
    }
    let menu = s.menu.clone().expect("scenario has rules or a menu");
    let out = solve_multiplier(menu, &s.model, &s.space, tol.bind.min(1e-9))?;
    let rules = induce_rules(&out.mechanism, &s.model, &s.space)?;
    Ok((rules, Some(out)))
}

/// Results of the requested verifiers, their agreement, and the exit code.
fn run_verifiers(
    rules: &InterimRules,
    s: &Scenario,
    tol: &Tolerances,
    mode: Mode,
    exhaustive: bool,
    timer: &mut Timer,
) -> anyhow::Result<(Map<String, Value>, u8)> {
    let payoffs = Payoffs::build(rules, &s.model, &s.space)?;
    timer.lap("payoffs");
    let mut out = Map::new();
    let mut votes: Vec<(&str, bool)> = Vec::new();
    if matches!(mode, Mode::Oracle | Mode::All) {
        let v = verify_payoffs(&payoffs, &oracle_opts(tol))?;
        timer.lap("oracle");
        votes.push(("oracle", v.ic));
        out.insert("oracle".into(), report::verdict(&v));
    }
    if exhaustive {
        let opts = ExhaustiveOptions {
            oracle: oracle_opts(tol),
            ..ExhaustiveOptions::default()
        };
        let v = exhaustive_verify_payoffs(&payoffs, &opts)?;
        timer.lap("exhaustive");
        votes.push(("exhaustive", v.ic));
        out.insert("exhaustive".into(), report::verdict(&v));
    }
    if matches!(mode, Mode::Characterize | Mode::All) {
        let c = characterize_payoffs(&payoffs, tol);
        timer.lap("characterize");
        votes.push(("characterize", c.ic));
        out.insert("characterize".into(), report::certificate(&c));
    }
    if matches!(mode, Mode::Surrogate | Mode::All) {
        match surrogate_check(rules, &s.model, &s.space, tol) {
            Ok(c) => {
                timer.lap("surrogate");
                votes.push(("surrogate", c.ic_candidate));
                out.insert("surrogate".into(), report::surrogate(&c));
            }
            Err(e @ (Error::MissingLinearForm | Error::LinearFormMismatch { .. })) if mode == Mode::All => {
                out.insert("surrogate".into(), json!({ "skipped": surrogate_precondition(&e) }));
            }
            Err(e @ (Error::MissingLinearForm | Error::LinearFormMismatch { .. })) => {
                bail!(InputError(surrogate_precondition(&e)))
            }
            Err(e) => return Err(e.into()),
        }
    }
    let ic = votes.first().is_some_and(|v| v.1);
    let agree = votes.iter().all(|v| v.1 == ic);
    let finding = if !agree {
        "disagreement"
    } else if ic {
        "ic"
    } else {
        "not_ic"
    };
    if votes.len() > 1 {
        out.insert(
            "agreement".into(),
            json!({
                "agree": agree,
                "votes": votes.iter().map(|(k, v)| json!({ "verifier": k, "ic": v })).collect::<Vec<_>>(),
            }),
        );
    }
    out.insert("finding".into(), json!(finding));
    Ok((out, if finding == "ic" { SUCCESS } else { FINDING }))
}

fn surrogate_precondition(e: &Error) -> String {
    format!("surrogate analysis needs payoffs of the form u = u*(q)·v and f = f*(q)·v ({e})")
}

fn verify(path: &Path, mode: Mode, exhaustive: bool, g: &GlobalOpts) -> anyhow::Result<u8> {
    let mut timer = Timer::start();
    let (s, tol) = load(path, g)?;
    timer.lap("load");
    let (rules, built) = target_rules(&s, &tol)?;
    let mut rep = header("verify", Some(&s), &tol);
    if let Some(b) = &built {
        rep.insert("build".into(), report::build(b));
    }
    let (results, code) = run_verifiers(&rules, &s, &tol, mode, exhaustive, &mut timer)?;
    rep.extend(results);
    emit(rep, g)?;
    Ok(code)
}

fn characterize(path: &Path, rho_out: Option<&Path>, g: &GlobalOpts) -> anyhow::Result<u8> {
    let mut timer = Timer::start();
    let (s, tol) = load(path, g)?;
    let (rules, _) = target_rules(&s, &tol)?;
    let payoffs = Payoffs::build(&rules, &s.model, &s.space)?;
    timer.lap("payoffs");
    let cert = characterize_payoffs(&payoffs, &tol);
    let curve = rho_curve(&payoffs, &breakpoint_sweep(&payoffs), &tol);
    timer.lap("characterize");
    if let Some(p) = rho_out {
        let mut w = create(p)?;
        write_rho_csv(&curve, &mut w)?;
        w.flush()?;
    }
    let mut rep = header("characterize", Some(&s), &tol);
    rep.insert("characterize".into(), report::certificate(&cert));
    rep.insert("breakpoints".into(), json!(curve.len()));
    emit(rep, g)?;
    Ok(if cert.ic { SUCCESS } else { FINDING })
}

fn build(
    path: &Path,
    extract_r: Option<f64>,
    menu_out: Option<&Path>,
    rules_out: Option<&Path>,
    g: &GlobalOpts,
) -> anyhow::Result<u8> {
    let mut timer = Timer::start();
    let (s, tol) = load(path, g)?;
    let mut rep = header("build", Some(&s), &tol);
    let menu = match (&s.menu, &s.rules) {
        (Some(menu), _) => menu.clone(),
        (None, Some(rules)) => {
            let r = extract_r.unwrap_or(if s.model.c1() > 0.0 { 0.0 } else { 1.0 });
            let ex = extract_menu(rules, &s.model, &s.space, Some(r))?;
            rep.insert(
                "extraction".into(),
                json!({ "r": r, "items": ex.mechanism.menu.len(), "overpaying_nodes": ex.overpaying }),
            );
            ex.mechanism.menu
        }
        (None, None) => unreachable!("scenario has rules or a menu"),
    };
    let out = match solve_multiplier(menu, &s.model, &s.space, tol.bind.min(1e-9)) {
        Ok(out) => out,
        Err(e @ (Error::Infeasible { .. } | Error::UnboundedMultiplier { .. })) => {
            bail!(InputError(format!("no multiplier meets the constraint: {e}")))
        }
        Err(e) => return Err(e.into()),
    };
    timer.lap("build");
    let rules = induce_rules(&out.mechanism, &s.model, &s.space)?;
    let table = rules.tabulate(&s.space)?;
    if let Some(p) = menu_out {
        let mut w = create(p)?;
        write_menu_csv(&out.mechanism.menu, &mut w)?;
        w.flush()?;
    }
    if let Some(p) = rules_out {
        let mut w = create(p)?;
        write_rules_csv(&table, &s.space, &mut w)?;
        w.flush()?;
    }
    rep.insert("build".into(), report::build(&out));
    // verify the tabulated rules, which is what was written out
    let tabulated = InterimRules::tabulated(s.space.clone(), table.outcomes, table.payments)?;
    let (results, code) = run_verifiers(&tabulated, &s, &tol, Mode::All, false, &mut timer)?;
    rep.insert("verify".into(), Value::Object(results));
    emit(rep, g)?;
    Ok(code)
}

fn surrogate(path: &Path, step: Option<f64>, field_out: Option<&Path>, g: &GlobalOpts) -> anyhow::Result<u8> {
    let mut timer = Timer::start();
    let (s, tol) = load(path, g)?;
    let (rules, _) = target_rules(&s, &tol)?;
    let check = match surrogate_check(&rules, &s.model, &s.space, &tol) {
        Ok(c) => c,
        Err(e @ (Error::MissingLinearForm | Error::LinearFormMismatch { .. })) => bail!(InputError(surrogate_precondition(&e))),
        Err(e) => return Err(e.into()),
    };
    timer.lap("surrogate");
    let mut rep = header("surrogate", Some(&s), &tol);
    rep.insert("surrogate".into(), report::surrogate(&check));
    if rules.kind() == RuleKind::Parametric && !s.space.interior().is_empty() {
        let h = step.unwrap_or_else(|| exante_core::surrogate::default_step(&s.space) * 100.0);
        let (curve, order) = gradient_decay(&rules, &s.model, &s.space, check.r, &[h, 0.5 * h])?;
        rep.insert(
            "gradient_decay".into(),
            json!({
                "steps": curve.iter().map(|(h, e)| json!({ "step": h, "max_residual": e })).collect::<Vec<_>>(),
                "order": order,
            }),
        );
        timer.lap("gradient decay");
    }
    if let Some(p) = field_out {
        let mut w = create(p)?;
        write_field_csv(&check.field, &s.space, &mut w)?;
        w.flush()?;
    }
    emit(rep, g)?;
    Ok(if check.ic_candidate { SUCCESS } else { FINDING })
}

#[allow(clippy::too_many_arguments)]
fn reconstruct(
    path: &Path,
    r: Option<f64>,
    anchor_node: usize,
    anchor_utility: Option<f64>,
    max_discrepancy: f64,
    rules_out: Option<&Path>,
    g: &GlobalOpts,
) -> anyhow::Result<u8> {
    let (s, tol) = load(path, g)?;
    let (rules, _) = target_rules(&s, &tol)?;
    let r = match r {
        Some(r) => r,
        None => surrogate_or_input(surrogate_check(&rules, &s.model, &s.space, &tol))?.r,
    };
    let lf = s
        .model
        .linear_form()
        .ok_or_else(|| anyhow!(InputError(surrogate_precondition(&Error::MissingLinearForm))))?
        .clone();
    if anchor_node >= s.space.len() {
        bail!(InputError(format!("anchor node {anchor_node} is outside the grid of {} nodes", s.space.len())));
    }
    let field = surrogate_field(&rules, &s.model, &s.space, r, None)?;
    let table = rules.tabulate(&s.space)?;
    let u0 = anchor_utility.unwrap_or(field.utility[anchor_node]);
    let u_tilde = |q: &[f64]| -> Vec<f64> {
        let (us, fs) = ((lf.u_star)(q), (lf.f_star)(q));
        us.iter().zip(&fs).map(|(a, b)| a + r * b).collect()
    };
    let rec = reconstruct_payment(
        &table.outcomes,
        &u_tilde,
        r,
        s.model.c1(),
        s.model.c2(),
        &s.space,
        (anchor_node, u0),
        None,
    )?;
    let shift = rec.payments[anchor_node] - table.payments[anchor_node];
    let error = rec
        .payments
        .iter()
        .zip(&table.payments)
        .fold(0.0f64, |m, (a, b)| m.max((a - b - shift).abs()));
    if let Some(p) = rules_out {
        let mut w = create(p)?;
        write_rules_csv(&rec.rules.tabulate(&s.space)?, &s.space, &mut w)?;
        w.flush()?;
    }
    let integrable = rec.discrepancy <= max_discrepancy;
    let mut rep = header("reconstruct", Some(&s), &tol);
    rep.insert(
        "reconstruct".into(),
        json!({
            "r": r,
            "anchor": { "node": anchor_node, "utility": u0 },
            "path_discrepancy": rec.discrepancy,
            "max_discrepancy": max_discrepancy,
            "integrable": integrable,
            "max_payment_error_up_to_constant": error,
            "constant": shift,
        }),
    );
    emit(rep, g)?;
    Ok(if integrable { SUCCESS } else { FINDING })
}

fn surrogate_or_input(r: exante_core::Result<SurrogateCheck>) -> anyhow::Result<SurrogateCheck> {
    match r {
        Err(e @ (Error::MissingLinearForm | Error::LinearFormMismatch { .. })) => Err(anyhow!(InputError(surrogate_precondition(&e)))),
        other => Ok(other?),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeFile {
    rounds: u64,
    seed: u64,
    #[serde(default)]
    trace: bool,
    controllers: Vec<ControllerSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ControllerSpec {
    /// `r` defaults to the multiplier of the built mechanism.
    LinearMultiplier { r: Option<f64> },
    Truthful,
    UniformScale { k: f64 },
    FixedReport { node: usize },
    /// Replays the oracle's best response.
    OracleWitness,
}

fn simulate(path: &Path, episode: &Path, seed: Option<u64>, trace_dir: Option<&Path>, g: &GlobalOpts) -> anyhow::Result<u8> {
    let mut timer = Timer::start();
    let (s, tol) = load(path, g)?;
    let text = fs::read_to_string(episode)
        .with_context(|| format!("reading {}", episode.display()))
        .map_err(|e| anyhow!(InputError(format!("{e:#}"))))?;
    let ep: EpisodeFile = toml::from_str(&text).map_err(|e| anyhow!(InputError(format!("{}: {e}", episode.display()))))?;
    if ep.controllers.is_empty() {
        bail!(InputError("episode config lists no controllers".into()));
    }
    let (market, default_r, rules) = match &s.menu {
        Some(menu) => {
            let out = solve_multiplier(menu.clone(), &s.model, &s.space, tol.bind.min(1e-9))?;
            let rules = induce_rules(&out.mechanism, &s.model, &s.space)?;
            (Market::Menu(out.mechanism.clone()), Some(out.mechanism.r), rules)
        }
        None => {
            let rules = s.rules.clone().expect("scenario has rules or a menu");
            let payoffs = Payoffs::build(&rules, &s.model, &s.space)?;
            (Market::Rules(rules.clone()), characterize_payoffs(&payoffs, &tol).r, rules)
        }
    };
    timer.lap("market");
    let seed = seed.unwrap_or(ep.seed);
    let configs = ep
        .controllers
        .iter()
        .map(|c| {
            let controller = match c {
                ControllerSpec::LinearMultiplier { r } => Controller::LinearMultiplier(
                    r.or(default_r)
                        .ok_or_else(|| anyhow!(InputError("linear_multiplier needs `r`: the mechanism has no certifying multiplier".into())))?,
                ),
                ControllerSpec::Truthful => Controller::Truthful,
                ControllerSpec::UniformScale { k } => Controller::UniformScale(*k),
                ControllerSpec::FixedReport { node } => Controller::FixedReport(*node),
                ControllerSpec::OracleWitness => {
                    let payoffs = Payoffs::build(&rules, &s.model, &s.space)?;
                    let v = verify_payoffs(&payoffs, &oracle_opts(&tol))?;
                    match v.witness {
                        Some(w) => Controller::Replay(w.strategy),
                        None => Controller::Truthful,
                    }
                }
            };
            Ok(EpisodeConfig {
                rounds: ep.rounds,
                seed,
                controller,
                trace: ep.trace && trace_dir.is_some(),
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let cmp = compare_controllers(&configs, &market, &s.model, &s.space)?;
    timer.lap("simulate");
    let mut traces = Vec::new();
    if let Some(dir) = trace_dir {
        for (k, res) in cmp.results.iter().enumerate() {
            if let Some(t) = &res.trace {
                let file: PathBuf = dir.join(format!("trace_{k:02}_{}.csv", slug(&res.controller)));
                let mut w = create(&file)?;
                t.write_csv(&s.space, &mut w)?;
                w.flush()?;
                traces.push(file.display().to_string());
            }
        }
        timer.lap("traces");
    }
    let mut rep = header("simulate", Some(&s), &tol);
    rep.insert(
        "episode".into(),
        json!({
            "path": episode.display().to_string(),
            "sha256": scenario::sha256_hex(text.as_bytes()),
            "rounds": ep.rounds,
            "seed": seed,
            "sampling": "i.i.d. type draws from the grid weights",
            "market": match market { Market::Menu(_) => "menu", Market::Rules(_) => "rules" },
        }),
    );
    rep.insert("comparison".into(), report::comparison(&cmp));
    rep.insert("traces".into(), json!(traces));
    emit(rep, g)?;
    Ok(SUCCESS)
}

fn slug(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect();
    s.trim_matches('_').to_string()
}

fn sweep(count: u64, seed: u64, builds: u64, g: &GlobalOpts) -> anyhow::Result<u8> {
    let mut timer = Timer::start();
    let tol = tolerances(Tolerances::default(), g);
    let rows = (seed..seed + count)
        .into_par_iter()
        .map(|k| cross_check(&random_scenario(k)?, &tol))
        .collect::<exante_core::Result<Vec<_>>>()?;
    timer.lap("agreement");
    let disagreements: Vec<Value> = rows
        .iter()
        .filter(|a| !a.agrees() && !a.boundary)
        .map(|a| json!({ "seed": a.seed, "kind": format!("{:?}", a.kind), "oracle": a.oracle, "characterize": a.characterizer, "surrogate": a.surrogate }))
        .collect();
    let boundary: Vec<u64> = rows.iter().filter(|a| a.boundary).map(|a| a.seed).collect();

    let opts = oracle_opts(&tol);
    let built = (seed..seed + builds)
        .into_par_iter()
        .map(|k| -> exante_core::Result<Option<(u64, f64, f64)>> {
            let (menu, model, space) = builder_fixture(k)?;
            let out = match solve_multiplier(menu, &model, &space, tol.bind.min(1e-9)) {
                Ok(out) => out,
                Err(Error::DegenerateScaling(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let rules = induce_rules(&out.mechanism, &model, &space)?;
            let v = verify_payoffs(&Payoffs::build(&rules, &model, &space)?, &opts)?;
            let bind = if out.mechanism.r > 0.0 { (v.truthful_constraint - model.level()).abs() } else { 0.0 };
            Ok(Some((k, if v.feasible { v.best_deviation_gain.max(0.0) } else { f64::INFINITY }, bind)))
        })
        .collect::<exante_core::Result<Vec<_>>>()?;
    timer.lap("builds");
    let failed: Vec<u64> = built
        .iter()
        .flatten()
        .filter(|(_, gain, bind)| *gain > tol.ic || *bind > tol.bind)
        .map(|x| x.0)
        .collect();

    let mut rep = header("sweep", None, &tol);
    rep.insert(
        "agreement".into(),
        json!({
            "seeds": [seed, seed + count],
            "scenarios": rows.len(),
            "ic": rows.iter().filter(|a| a.oracle).count(),
            "with_surrogate": rows.iter().filter(|a| a.surrogate.is_some()).count(),
            "disagreements": disagreements,
            "boundary_seeds": boundary,
        }),
    );
    rep.insert(
        "builds".into(),
        json!({
            "fixtures": builds,
            "built": built.iter().flatten().count(),
            "failed_seeds": failed,
        }),
    );
    let clean = disagreements.is_empty() && failed.is_empty();
    rep.insert("finding".into(), json!(if clean { "consistent" } else { "inconsistent" }));
    emit(rep, g)?;
    Ok(if clean { SUCCESS } else { FINDING })
}
