//! Auto-bidding mechanisms: a priced menu of outcomes from which the player's
//! bidder picks on its behalf, either with a fixed multiplier `r` on the
//! constraint or by maximizing the constraint term outright.
//!
//! Menu prices are quoted in scaled units `P = (c1 + r·c2)·p`, so the bidder
//! with multiplier `r` picks `argmax_k u(q_k, v) + r·f(q_k, v) − P_k` and the
//! player is charged `p = P_k / (c1 + r·c2)`.

use crate::error::{Error, Result};
use crate::model::{InterimRules, Payoffs, PlayerModel, TypeSpace};

/// Nodes paying more than the menu price for their outcome by this much are flagged.
pub const OVERPAY_TOL: f64 = 1e-9;
/// Nodes sharing an outcome must agree on its price within this in the
/// constraint-maximizing regime.
pub const PRICE_CONSISTENCY_TOL: f64 = 1e-9;
/// Relative width of a score tie.
pub const TIE_TOL: f64 = 1e-12;
/// Payoffs at a mixed outcome must match the mixture of payoffs within this.
pub const AFFINE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MenuItem {
    pub outcome: Vec<f64>,
    /// Price in scaled units.
    pub price: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BidRegime {
    /// Maximize `u + r·f − P`.
    Multiplier,
    /// Maximize `f − P`, ties broken by `u − c1·P/c2`.
    ConstraintMaximizer,
}

/// A node that randomizes between two menu items.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mixing {
    pub node: usize,
    pub from: usize,
    pub to: usize,
    /// Probability of `to`.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoBidMechanism {
    pub menu: Vec<MenuItem>,
    /// Multiplier; infinite in the constraint-maximizing regime.
    pub r: f64,
    pub regime: BidRegime,
    /// Nodes sitting on a tie whose item is fixed explicitly.
    pub pinned: Vec<(usize, usize)>,
    pub mixing: Option<Mixing>,
}

impl AutoBidMechanism {
    pub fn new(menu: Vec<MenuItem>, r: f64) -> Result<Self> {
        check_menu(&menu)?;
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::Invalid(format!("multiplier must be finite and non-negative, got {r}")));
        }
        Ok(Self {
            menu,
            r,
            regime: BidRegime::Multiplier,
            pinned: Vec::new(),
            mixing: None,
        })
    }

    pub fn constraint_maximizer(menu: Vec<MenuItem>) -> Result<Self> {
        check_menu(&menu)?;
        Ok(Self {
            menu,
            r: f64::INFINITY,
            regime: BidRegime::ConstraintMaximizer,
            pinned: Vec::new(),
            mixing: None,
        })
    }

    /// Converts a scaled price into the payment charged to the player.
    pub fn charge(&self, model: &PlayerModel, price: f64) -> Result<f64> {
        let scale = match self.regime {
            BidRegime::Multiplier => model.payment_scale(self.r),
            BidRegime::ConstraintMaximizer => model.c2(),
        };
        if scale == 0.0 {
            return Err(Error::DegenerateScaling(self.r));
        }
        Ok(price / scale)
    }

    /// Menu item chosen at type `v`, ignoring pins and mixing.
    pub fn choose(&self, model: &PlayerModel, v: &[f64]) -> usize {
        let scores: Vec<(f64, f64)> = self
            .menu
            .iter()
            .map(|it| {
                let u = model.u(&it.outcome, v);
                let f = model.f(&it.outcome, v);
                match self.regime {
                    BidRegime::Multiplier => (u + self.r * f - it.price, 0.0),
                    BidRegime::ConstraintMaximizer => {
                        let tie = if model.c2() == 0.0 { u } else { u - model.c1() * it.price / model.c2() };
                        (f - it.price, tie)
                    }
                }
            })
            .collect();
        pick(&scores)
    }
}

fn check_menu(menu: &[MenuItem]) -> Result<()> {
    let Some(first) = menu.first() else {
        return Err(Error::Invalid("menu must contain at least one item".into()));
    };
    let d = first.outcome.len();
    for it in menu {
        if it.outcome.len() != d {
            return Err(Error::DimensionMismatch {
                context: "menu outcome",
                expected: d,
                found: it.outcome.len(),
            });
        }
        if !it.price.is_finite() || it.outcome.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("menu entries must be finite".into()));
        }
    }
    Ok(())
}

/// Lowest index whose primary score is within a relative tie of the maximum,
/// preferring the larger secondary score among ties.
fn pick(scores: &[(f64, f64)]) -> usize {
    let best = scores.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let tie = TIE_TOL * (1.0 + best.abs());
    let mut chosen = None::<usize>;
    for (k, s) in scores.iter().enumerate() {
        if s.0 >= best - tie && chosen.is_none_or(|c| s.1 > scores[c].1) {
            chosen = Some(k);
        }
    }
    chosen.unwrap_or(0)
}

/// The menu bound to a player model, evaluable at any type.
#[derive(Debug, Clone)]
pub struct MenuRule {
    mechanism: AutoBidMechanism,
    model: PlayerModel,
    space: TypeSpace,
}

impl MenuRule {
    pub fn mechanism(&self) -> &AutoBidMechanism {
        &self.mechanism
    }

    pub fn model(&self) -> &PlayerModel {
        &self.model
    }

    pub fn outcome_dim(&self) -> usize {
        self.mechanism.menu[0].outcome.len()
    }

    /// Chosen item at `v`, or the mixing pair when `v` is the mixing node.
    fn node_override(&self, v: &[f64]) -> Option<Choice> {
        let m = &self.mechanism;
        if m.pinned.is_empty() && m.mixing.is_none() {
            return None;
        }
        let node = self.space.find(v, 1e-12)?;
        if let Some(mx) = m.mixing.filter(|mx| mx.node == node) {
            return Some(Choice::Mixed(mx));
        }
        m.pinned.iter().find(|(k, _)| *k == node).map(|&(_, item)| Choice::Item(item))
    }

    pub fn eval(&self, v: &[f64]) -> Result<(Vec<f64>, f64)> {
        let m = &self.mechanism;
        let choice = self.node_override(v).unwrap_or_else(|| Choice::Item(m.choose(&self.model, v)));
        let (outcome, price) = match choice {
            Choice::Item(k) => (m.menu[k].outcome.clone(), m.menu[k].price),
            Choice::Mixed(mx) => {
                let (a, b) = (&m.menu[mx.from], &m.menu[mx.to]);
                let w = mx.weight;
                let q = a.outcome.iter().zip(&b.outcome).map(|(x, y)| (1.0 - w) * x + w * y).collect();
                (q, (1.0 - w) * a.price + w * b.price)
            }
        };
        Ok((outcome, m.charge(&self.model, price)?))
    }
}

#[derive(Clone, Copy)]
enum Choice {
    Item(usize),
    Mixed(Mixing),
}

/// Interim rules induced by letting the bidder choose from the menu at every type.
pub fn induce_rules(mechanism: &AutoBidMechanism, model: &PlayerModel, space: &TypeSpace) -> Result<InterimRules> {
    check_menu(&mechanism.menu)?;
    if mechanism.regime == BidRegime::Multiplier && model.payment_scale(mechanism.r) == 0.0 {
        return Err(Error::DegenerateScaling(mechanism.r));
    }
    if mechanism.regime == BidRegime::ConstraintMaximizer && model.c2() == 0.0 {
        return Err(Error::DegenerateScaling(mechanism.r));
    }
    Ok(InterimRules::menu(MenuRule {
        mechanism: mechanism.clone(),
        model: model.clone(),
        space: space.clone(),
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MenuExtraction {
    pub mechanism: AutoBidMechanism,
    /// Nodes charged more than the cheapest node receiving the same outcome.
    pub overpaying: Vec<usize>,
}

/// Reads a menu off tabulated rules: one item per distinct outcome, priced at
/// the lowest scaled payment among the nodes that receive it. `r = None`
/// selects the constraint-maximizing regime.
pub fn extract_menu(
    rules: &InterimRules,
    model: &PlayerModel,
    space: &TypeSpace,
    r: Option<f64>,
) -> Result<MenuExtraction> {
    let table = rules.tabulate(space)?;
    let scale = match r {
        Some(r) => model.payment_scale(r),
        None => model.c2(),
    };
    if scale == 0.0 {
        return Err(Error::DegenerateScaling(r.unwrap_or(f64::INFINITY)));
    }
    let mut menu = Vec::new();
    let mut overpaying = Vec::new();
    for (k, group) in table.groups().iter().enumerate() {
        let scaled: Vec<f64> = group.iter().map(|&i| scale * table.payments[i]).collect();
        let low = scaled.iter().copied().fold(f64::INFINITY, f64::min);
        let high = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if r.is_none() && high - low > PRICE_CONSISTENCY_TOL {
            return Err(Error::InconsistentPrice { outcome: k, low, high });
        }
        overpaying.extend(group.iter().zip(&scaled).filter(|(_, &s)| s > low + OVERPAY_TOL).map(|(&i, _)| i));
        menu.push(MenuItem {
            outcome: table.outcomes[group[0]].clone(),
            price: low,
        });
    }
    overpaying.sort_unstable();
    let mechanism = match r {
        Some(r) => AutoBidMechanism::new(menu, r)?,
        None => AutoBidMechanism::constraint_maximizer(menu)?,
    };
    Ok(MenuExtraction { mechanism, overpaying })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOutcome {
    pub mechanism: AutoBidMechanism,
    /// Truthful constraint value of the induced rules.
    pub constraint_value: f64,
    /// `constraint_value − C`.
    pub residual: f64,
    pub diagnostics: Vec<String>,
}

/// Per-node payoffs of every menu item, with `c2 = 1`.
struct Grid<'a> {
    menu: &'a [MenuItem],
    weights: &'a [f64],
    u: Vec<f64>,
    f: Vec<f64>,
    k: usize,
    c1: f64,
}

impl Grid<'_> {
    fn score(&self, i: usize, k: usize, r: f64) -> f64 {
        self.u[i * self.k + k] + r * self.f[i * self.k + k] - self.menu[k].price
    }

    fn choices(&self, r: f64) -> Vec<usize> {
        (0..self.weights.len())
            .map(|i| {
                let scores: Vec<(f64, f64)> = (0..self.k).map(|k| (self.score(i, k, r), 0.0)).collect();
                pick(&scores)
            })
            .collect()
    }

    /// Choices just to the right of `r`: ties go to the larger constraint term.
    fn right_choices(&self, r: f64) -> Vec<usize> {
        (0..self.weights.len())
            .map(|i| {
                let scores: Vec<(f64, f64)> = (0..self.k)
                    .map(|k| (self.score(i, k, r), self.f[i * self.k + k]))
                    .collect();
                pick(&scores)
            })
            .collect()
    }

    /// `(F, S)` with `g(r) = F − S/(c1 + r)`.
    fn parts(&self, choice: &[usize]) -> (f64, f64) {
        choice.iter().enumerate().fold((0.0, 0.0), |(f, s), (i, &k)| {
            (f + self.weights[i] * self.f[i * self.k + k], s + self.weights[i] * self.menu[k].price)
        })
    }

    fn g(&self, choice: &[usize], r: f64) -> f64 {
        let (f, s) = self.parts(choice);
        let scale = self.c1 + r;
        if scale > 0.0 {
            f - s / scale
        } else if s > 0.0 {
            f64::NEG_INFINITY
        } else if s < 0.0 {
            f64::INFINITY
        } else {
            f
        }
    }

    /// Smallest `r' ≥ r` solving `F − S/(c1 + r') = level` for fixed choices.
    fn solve_within(&self, choice: &[usize], level: f64) -> Option<f64> {
        let (f, s) = self.parts(choice);
        if f - level <= 0.0 {
            return None;
        }
        let r = s / (f - level) - self.c1;
        r.is_finite().then_some(r)
    }
}

/// Finds the multiplier at which the bidder's choices from `menu` make the
/// player's constraint bind, or `r = 0` when it already holds there. When the
/// constraint value jumps across the level, one node randomizes between the
/// two items it is indifferent between.
pub fn solve_multiplier(menu: Vec<MenuItem>, model: &PlayerModel, space: &TypeSpace, tol: f64) -> Result<BuildOutcome> {
    check_menu(&menu)?;
    if model.c2() != 1.0 {
        return Err(Error::Invalid("multiplier search requires c2 = 1".into()));
    }
    const R_MAX: f64 = 1e6;
    let n = space.len();
    let k = menu.len();
    let mut u = vec![0.0; n * k];
    let mut f = vec![0.0; n * k];
    for i in 0..n {
        let v = space.point(i);
        for (j, it) in menu.iter().enumerate() {
            u[i * k + j] = model.u(&it.outcome, v);
            f[i * k + j] = model.f(&it.outcome, v);
        }
    }
    let grid = Grid {
        menu: &menu,
        weights: space.weights(),
        u,
        f,
        k,
        c1: model.c1(),
    };
    let level = model.level();
    let mut diagnostics = Vec::new();

    let free = grid.choices(0.0);
    let r_star;
    let mut pinned = Vec::new();
    let mut mixing = None;
    if model.c1() > 0.0 && grid.g(&free, 0.0) >= level - tol {
        r_star = 0.0;
    } else {
        let top = grid.choices(R_MAX);
        let g_top = grid.g(&top, R_MAX);
        if g_top < level - tol {
            return Err(Error::Infeasible { best: g_top, level });
        }
        let monotone = is_monotone(&grid, R_MAX);
        let found = if monotone {
            bisect(&grid, level, tol, R_MAX)
        } else {
            diagnostics.push("constraint value is not monotone in the multiplier; scanning breakpoints".to_string());
            scan(&grid, level, tol, R_MAX)
        };
        match found {
            Some(Found::Interior(r)) => r_star = r,
            Some(Found::Jump { r, lo, hi }) => {
                let (pins, mx) = resolve_jump(&grid, model, space, &lo, &hi, r, level)?;
                r_star = r;
                pinned = pins;
                mixing = mx;
            }
            None => return Err(Error::Infeasible { best: g_top, level }),
        }
    }
    if model.payment_scale(r_star) == 0.0 {
        return Err(Error::DegenerateScaling(r_star));
    }
    let mut mechanism = AutoBidMechanism::new(menu, r_star)?;
    mechanism.pinned = pinned;
    mechanism.mixing = mixing;

    let rules = induce_rules(&mechanism, model, space)?;
    let constraint_value = Payoffs::build(&rules, model, space)?.truthful_constraint();
    Ok(BuildOutcome {
        mechanism,
        constraint_value,
        residual: constraint_value - level,
        diagnostics,
    })
}

enum Found {
    Interior(f64),
    Jump { r: f64, lo: Vec<usize>, hi: Vec<usize> },
}

fn is_monotone(grid: &Grid, r_max: f64) -> bool {
    let mut rs = vec![0.0];
    let steps = 64;
    for s in 0..=steps {
        rs.push(1e-6 * (r_max / 1e-6f64).powf(s as f64 / steps as f64));
    }
    let gs: Vec<f64> = rs.iter().map(|&r| grid.g(&grid.choices(r), r)).collect();
    gs.windows(2).all(|w| w[1] >= w[0] - 1e-12 * (1.0 + w[0].abs()))
}

/// Root of `g(r) = level` for non-decreasing `g`.
fn bisect(grid: &Grid, level: f64, tol: f64, r_max: f64) -> Option<Found> {
    let (mut lo, mut hi) = (0.0, r_max);
    let mut lo_choice = grid.choices(lo);
    let mut hi_choice = grid.choices(hi);
    for _ in 0..400 {
        if lo_choice == hi_choice {
            let r = grid.solve_within(&lo_choice, level)?.clamp(lo, hi);
            return Some(Found::Interior(r));
        }
        if hi - lo <= 1e-14 * (1.0 + hi) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let choice = grid.choices(mid);
        if grid.g(&choice, mid) >= level - tol {
            hi = mid;
            hi_choice = choice;
        } else {
            lo = mid;
            lo_choice = choice;
        }
    }
    // ties within TIE_TOL can leave the exact crossing marginally outside the bracket
    let slack = 1e-9 * (1.0 + hi);
    let r = jump_point(grid, &lo_choice, &hi_choice).map_or(hi, |r| r.clamp((lo - slack).max(0.0), hi + slack));
    if grid.g(&hi_choice, r) <= level + tol && grid.g(&hi_choice, r) >= level - tol {
        return Some(Found::Interior(r));
    }
    Some(Found::Jump {
        r,
        lo: lo_choice,
        hi: hi_choice,
    })
}

/// The multiplier at which the first switching node is exactly indifferent.
fn jump_point(grid: &Grid, lo: &[usize], hi: &[usize]) -> Option<f64> {
    lo.iter().zip(hi).enumerate().find(|(_, (a, b))| a != b).and_then(|(i, (&a, &b))| {
        let kk = grid.k;
        let fa = grid.f[i * kk + a];
        let fb = grid.f[i * kk + b];
        let num = (grid.u[i * kk + b] - grid.menu[b].price) - (grid.u[i * kk + a] - grid.menu[a].price);
        let r = num / (fa - fb);
        (r.is_finite() && fa != fb).then_some(r)
    })
}

/// Walks the breakpoints of the choice map from `r = 0` upward and returns the
/// first point where the constraint value reaches `level`.
fn scan(grid: &Grid, level: f64, tol: f64, r_max: f64) -> Option<Found> {
    let n = grid.weights.len();
    let kk = grid.k;
    let mut r = 0.0;
    let mut choice = grid.right_choices(r);
    loop {
        if grid.g(&choice, r) >= level - tol {
            return Some(Found::Interior(r));
        }
        // next point where a higher-f item overtakes some node's current choice
        let mut next = f64::INFINITY;
        for (i, &c) in choice.iter().enumerate().take(n) {
            for k in 0..kk {
                let df = grid.f[i * kk + k] - grid.f[i * kk + c];
                if df > 0.0 {
                    let x = (grid.score(i, c, 0.0) - grid.score(i, k, 0.0)) / df;
                    if x > r * (1.0 + 1e-15) && x < next {
                        next = x;
                    }
                }
            }
        }
        let end = next.min(r_max);
        if let Some(x) = grid.solve_within(&choice, level) {
            if x >= r && x <= end {
                return Some(Found::Interior(x));
            }
        }
        if !next.is_finite() || next > r_max {
            return None;
        }
        let right = grid.right_choices(next);
        if grid.g(&choice, next) < level - tol && grid.g(&right, next) >= level - tol {
            return Some(Found::Jump { r: next, lo: choice, hi: right });
        }
        r = next;
        choice = right;
    }
}

/// Moves switching nodes from their low-side item to their high-side item in
/// index order and splits the node at which the constraint reaches `level`.
fn resolve_jump(
    grid: &Grid,
    model: &PlayerModel,
    space: &TypeSpace,
    lo: &[usize],
    hi: &[usize],
    r: f64,
    level: f64,
) -> Result<(Vec<(usize, usize)>, Option<Mixing>)> {
    let kk = grid.k;
    let scale = grid.c1 + r;
    let term = |i: usize, k: usize| grid.weights[i] * (grid.f[i * kk + k] - grid.menu[k].price / scale);
    let mut g = grid.g(lo, r);
    let switching: Vec<usize> = (0..lo.len()).filter(|&i| lo[i] != hi[i]).collect();
    let mut pinned: Vec<(usize, usize)> = switching.iter().map(|&i| (i, lo[i])).collect();
    for (slot, &i) in switching.iter().enumerate() {
        let delta = term(i, hi[i]) - term(i, lo[i]);
        if g + delta < level {
            g += delta;
            pinned[slot].1 = hi[i];
            continue;
        }
        let weight = ((level - g) / delta).clamp(0.0, 1.0);
        let mx = Mixing {
            node: i,
            from: lo[i],
            to: hi[i],
            weight,
        };
        check_affine(model, space, &grid.menu[mx.from].outcome, &grid.menu[mx.to].outcome, weight, i)?;
        pinned.remove(slot);
        return Ok((pinned, Some(mx)));
    }
    Ok((switching.iter().map(|&i| (i, hi[i])).collect(), None))
}

fn check_affine(model: &PlayerModel, space: &TypeSpace, qa: &[f64], qb: &[f64], w: f64, node: usize) -> Result<()> {
    let q: Vec<f64> = qa.iter().zip(qb).map(|(a, b)| (1.0 - w) * a + w * b).collect();
    for v in space.points() {
        for h in [PlayerModel::u, PlayerModel::f] {
            let mixed = h(model, &q, v);
            let expected = (1.0 - w) * h(model, qa, v) + w * h(model, qb, v);
            if (mixed - expected).abs() > AFFINE_TOL * (1.0 + expected.abs()) {
                return Err(Error::NonAffineMixing { node });
            }
        }
    }
    Ok(())
}
