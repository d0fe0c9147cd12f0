//! Repeated-round harness. Each round draws a type i.i.d. from the grid
//! weights, a controller picks an offer on the player's behalf, and realized
//! utility and constraint terms are averaged over the episode. The constraint
//! is judged on the episode mean, not per round.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::builder::{AutoBidMechanism, TIE_TOL};
use crate::error::{Error, Result};
use crate::io::fmt_float;
use crate::model::{InterimRules, PlayerModel, Strategy, TypeSpace};

/// Stream used for randomized reports; type draws use stream 0.
const REPORT_STREAM: u64 = 1;

/// What the player faces each round.
#[derive(Debug, Clone)]
pub enum Market {
    /// A priced menu; payments are `P / (c1 + r·c2)` at the mechanism's `r`.
    Menu(AutoBidMechanism),
    /// A direct mechanism: the offers are the reports.
    Rules(InterimRules),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Controller {
    /// `argmax u + r·f − (c1 + r·c2)·p`.
    LinearMultiplier(f64),
    /// Report the true type.
    Truthful,
    /// `argmax k·u − p`.
    UniformScale(f64),
    /// Always report the given node.
    FixedReport(usize),
    /// Report according to a strategy matrix.
    Replay(Strategy),
}

impl Controller {
    pub fn label(&self) -> String {
        match self {
            Self::LinearMultiplier(r) => format!("linear_multiplier(r={r})"),
            Self::Truthful => "truthful".into(),
            Self::UniformScale(k) => format!("uniform_scale(k={k})"),
            Self::FixedReport(j) => format!("fixed_report({j})"),
            Self::Replay(_) => "replay".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub rounds: u64,
    pub seed: u64,
    pub controller: Controller,
    pub trace: bool,
}

/// An outcome and the payment charged for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Offer {
    pub outcome: Vec<f64>,
    pub payment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub offers: Vec<Offer>,
    /// `(node, offer)` per round.
    pub rows: Vec<(u32, u32)>,
}

impl Trace {
    /// CSV with columns `round,type_index,v_1..v_d,q_1..q_D,payment,cumulative_spend`.
    pub fn write_csv<W: Write>(&self, space: &TypeSpace, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = space.dim();
        let dq = self.offers.first().map_or(0, |o| o.outcome.len());
        let mut header = vec!["round".to_string(), "type_index".to_string()];
        header.extend((1..=d).map(|k| format!("v_{k}")));
        header.extend((1..=dq).map(|k| format!("q_{k}")));
        header.extend(["payment".to_string(), "cumulative_spend".to_string()]);
        w.write_record(&header)?;
        let mut spend = 0.0;
        let mut record = Vec::with_capacity(header.len());
        for (round, &(node, offer)) in self.rows.iter().enumerate() {
            let o = &self.offers[offer as usize];
            spend += o.payment;
            record.clear();
            record.push(round.to_string());
            record.push(node.to_string());
            record.extend(space.point(node as usize).iter().map(|x| fmt_float(*x)));
            record.extend(o.outcome.iter().map(|x| fmt_float(*x)));
            record.push(fmt_float(o.payment));
            record.push(fmt_float(spend));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub controller: String,
    pub rounds: u64,
    /// Mean of `u − c1·p`.
    pub realized_utility: f64,
    /// Mean of `f − c2·p`.
    pub realized_constraint: f64,
    pub utility_stderr: f64,
    pub constraint_stderr: f64,
    /// Mean constraint more than three standard errors below the level.
    pub violation: bool,
    pub trace: Option<Trace>,
}

/// Per-node offer table with the controller's choice distribution.
struct Plan {
    offers: Vec<Offer>,
    /// `(offer, cumulative probability)` per node.
    choices: Vec<Vec<(usize, f64)>>,
    /// `(u − c1·p, f − c2·p)` per `(node, offer)`, row-major.
    values: Vec<(f64, f64)>,
}

/// Offers available at every node; offer `i < n` is what reporting node `i` yields.
fn offers_for(market: &Market, model: &PlayerModel, space: &TypeSpace) -> Result<Vec<Offer>> {
    match market {
        Market::Rules(rules) => {
            let table = rules.tabulate(space)?;
            let offers = table
                .outcomes
                .into_iter()
                .zip(table.payments)
                .map(|(outcome, payment)| Offer { outcome, payment })
                .collect();
            Ok(offers)
        }
        Market::Menu(mech) => {
            if mech.menu.is_empty() {
                return Err(Error::Invalid("menu must contain at least one item".into()));
            }
            // Induced outcomes at each node come first so that ties favour what
            // the mechanism itself would pick.
            let rules = crate::builder::induce_rules(mech, model, space)?;
            let table = rules.tabulate(space)?;
            let mut offers: Vec<Offer> = table
                .outcomes
                .into_iter()
                .zip(table.payments)
                .map(|(outcome, payment)| Offer { outcome, payment })
                .collect();
            for it in &mech.menu {
                offers.push(Offer {
                    outcome: it.outcome.clone(),
                    payment: mech.charge(model, it.price)?,
                });
            }
            Ok(offers)
        }
    }
}

fn argmax(scores: impl Iterator<Item = (usize, f64)>, preferred: usize) -> usize {
    let scores: Vec<(usize, f64)> = scores.collect();
    let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let tie = TIE_TOL * (1.0 + best.abs());
    if scores.iter().any(|&(k, s)| k == preferred && s >= best - tie) {
        return preferred;
    }
    scores.iter().find(|s| s.1 >= best - tie).map_or(preferred, |s| s.0)
}

fn plan(market: &Market, controller: &Controller, model: &PlayerModel, space: &TypeSpace) -> Result<Plan> {
    let offers = offers_for(market, model, space)?;
    let n = space.len();
    let m = offers.len();
    let mut values = Vec::with_capacity(n * m);
    for i in 0..n {
        let v = space.point(i);
        for o in &offers {
            values.push((
                model.u(&o.outcome, v) - model.c1() * o.payment,
                model.f(&o.outcome, v) - model.c2() * o.payment,
            ));
        }
    }
    let choose = |i: usize, score: &dyn Fn(&Offer, &[f64]) -> f64| {
        let v = space.point(i);
        argmax(offers.iter().enumerate().map(|(k, o)| (k, score(o, v))), i)
    };
    let choices: Vec<Vec<(usize, f64)>> = match controller {
        Controller::LinearMultiplier(r) => {
            let (r, scale) = (*r, model.payment_scale(*r));
            (0..n)
                .map(|i| vec![(choose(i, &|o, v| model.u(&o.outcome, v) + r * model.f(&o.outcome, v) - scale * o.payment), 1.0)])
                .collect()
        }
        Controller::UniformScale(k) => {
            let k = *k;
            (0..n)
                .map(|i| vec![(choose(i, &|o, v| k * model.u(&o.outcome, v) - o.payment), 1.0)])
                .collect()
        }
        Controller::Truthful => (0..n).map(|i| vec![(i, 1.0)]).collect(),
        Controller::FixedReport(j) => {
            if *j >= n {
                return Err(Error::Invalid(format!("fixed report {j} is not a node of the grid")));
            }
            (0..n).map(|_| vec![(*j, 1.0)]).collect()
        }
        Controller::Replay(s) => {
            if s.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "replayed strategy",
                    expected: n,
                    found: s.len(),
                });
            }
            (0..n)
                .map(|i| {
                    let mut acc = 0.0;
                    s.row(i)
                        .iter()
                        .enumerate()
                        .filter(|(_, &x)| x > 0.0)
                        .map(|(j, &x)| {
                            acc += x;
                            (j, acc)
                        })
                        .collect()
                })
                .collect()
        }
    };
    Ok(Plan { offers, choices, values })
}

/// Running sum and Welford variance.
#[derive(Default)]
struct Stat {
    sum: f64,
    mean: f64,
    m2: f64,
    n: u64,
}

impl Stat {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    fn stderr(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
    }
}

pub fn run_episode(config: &EpisodeConfig, market: &Market, model: &PlayerModel, space: &TypeSpace) -> Result<EpisodeResult> {
    if config.rounds == 0 {
        return Err(Error::Invalid("an episode needs at least one round".into()));
    }
    let plan = plan(market, &config.controller, model, space)?;
    let weights = space.weights();
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);

    let mut types = ChaCha8Rng::seed_from_u64(config.seed);
    let mut reports = ChaCha8Rng::seed_from_u64(config.seed);
    reports.set_stream(REPORT_STREAM);

    let m = plan.offers.len();
    let (mut util, mut cons) = (Stat::default(), Stat::default());
    let mut rows = Vec::with_capacity(if config.trace { config.rounds as usize } else { 0 });
    for _ in 0..config.rounds {
        let x: f64 = types.random();
        let node = cdf.partition_point(|&c| c <= x).min(last);
        let choice = &plan.choices[node];
        let offer = if choice.len() == 1 {
            choice[0].0
        } else {
            let y: f64 = reports.random::<f64>() * choice.last().map_or(1.0, |c| c.1);
            choice.iter().find(|c| y < c.1).unwrap_or(&choice[choice.len() - 1]).0
        };
        let (u, c) = plan.values[node * m + offer];
        util.push(u);
        cons.push(c);
        if config.trace {
            rows.push((node as u32, offer as u32));
        }
    }
    let realized_constraint = cons.mean();
    let constraint_stderr = cons.stderr();
    Ok(EpisodeResult {
        controller: config.controller.label(),
        rounds: config.rounds,
        realized_utility: util.mean(),
        realized_constraint,
        utility_stderr: util.stderr(),
        constraint_stderr,
        violation: realized_constraint < model.level() - 3.0 * constraint_stderr,
        trace: config.trace.then_some(Trace {
            offers: plan.offers,
            rows,
        }),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// Feasible runs by decreasing utility, then infeasible runs in input order.
    pub results: Vec<EpisodeResult>,
    pub feasible: usize,
    pub all_infeasible: bool,
}

/// Runs every configuration on common random numbers and ranks the feasible ones.
pub fn compare_controllers(
    configs: &[EpisodeConfig],
    market: &Market,
    model: &PlayerModel,
    space: &TypeSpace,
) -> Result<Comparison> {
    let Some(first) = configs.first() else {
        return Err(Error::Invalid("no controllers to compare".into()));
    };
    if configs.iter().any(|c| c.seed != first.seed || c.rounds != first.rounds) {
        return Err(Error::Invalid(
            "common random numbers need the same seed and round count for every controller".into(),
        ));
    }
    let runs: Vec<EpisodeResult> = configs
        .par_iter()
        .map(|c| run_episode(c, market, model, space))
        .collect::<Result<_>>()?;
    let (mut ok, bad): (Vec<_>, Vec<_>) = runs.into_iter().partition(|r| !r.violation);
    ok.sort_by(|a, b| b.realized_utility.total_cmp(&a.realized_utility));
    let feasible = ok.len();
    ok.extend(bad);
    Ok(Comparison {
        results: ok,
        feasible,
        all_infeasible: feasible == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{evaluate_truthful, Tolerances, Valuation};

    fn setup() -> (Market, PlayerModel, TypeSpace, InterimRules) {
        let space = TypeSpace::line(0.0, 1.0, 5).unwrap();
        let model = PlayerModel::budget(0.3, Valuation::dot()).unwrap();
        let rules = InterimRules::posted_price(0.4, 0.4);
        (Market::Rules(rules.clone()), model, space, rules)
    }

    fn config(controller: Controller, rounds: u64) -> EpisodeConfig {
        EpisodeConfig {
            rounds,
            seed: 7,
            controller,
            trace: true,
        }
    }

    #[test]
    fn truthful_mean_tracks_expectation() {
        let (market, model, space, rules) = setup();
        let res = run_episode(&config(Controller::Truthful, 200_000), &market, &model, &space).unwrap();
        let exact = evaluate_truthful(&rules, &model, &space, &Tolerances::default()).unwrap();
        assert!((res.realized_utility - exact.utility).abs() <= 3.0 * res.utility_stderr);
        assert!(!res.violation);
    }

    #[test]
    fn same_seed_same_trace() {
        let (market, model, space, _) = setup();
        let cfg = config(Controller::UniformScale(0.8), 1000);
        let a = run_episode(&cfg, &market, &model, &space).unwrap();
        let b = run_episode(&cfg, &market, &model, &space).unwrap();
        assert_eq!(a, b);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.trace.unwrap().write_csv(&space, &mut x).unwrap();
        b.trace.unwrap().write_csv(&space, &mut y).unwrap();
        assert_eq!(x, y);
        assert!(String::from_utf8(x).unwrap().starts_with("round,type_index,v_1,q_1,payment,cumulative_spend\n"));
    }

    #[test]
    fn means_match_trace() {
        let (market, model, space, _) = setup();
        let res = run_episode(&config(Controller::Truthful, 999), &market, &model, &space).unwrap();
        let trace = res.trace.as_ref().unwrap();
        let mut sum = 0.0;
        for &(node, offer) in &trace.rows {
            let o = &trace.offers[offer as usize];
            sum += model.u(&o.outcome, space.point(node as usize)) - o.payment;
        }
        assert_eq!(sum / 999.0, res.realized_utility);
    }

    #[test]
    fn infeasible_runs_are_ranked_last() {
        let (market, model, space, _) = setup();
        let configs = vec![config(Controller::FixedReport(4), 5000), config(Controller::Truthful, 5000)];
        let cmp = compare_controllers(&configs, &market, &model, &space).unwrap();
        assert_eq!(cmp.feasible, 1);
        assert_eq!(cmp.results[0].controller, "truthful");
        assert!(cmp.results[1].violation);

        let bad = vec![config(Controller::FixedReport(4), 5000)];
        assert!(compare_controllers(&bad, &market, &model, &space).unwrap().all_infeasible);
        let mut mismatched = configs.clone();
        mismatched[1].seed = 8;
        assert!(compare_controllers(&mismatched, &market, &model, &space).is_err());
    }
}
