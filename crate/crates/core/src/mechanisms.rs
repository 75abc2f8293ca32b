//! Sequential posted prices for unit-demand clients.
//!
//! Every client owns a group of items, each with an independent discrete
//! value law on `{0, ..., B}`. Clients are visited in random order; a
//! client sees a randomized take-it-or-leave-it menu built from the LP
//! solution and picks the offer of highest nonnegative utility (ties go to
//! the lower item id). Feasibility over items is kept by the same
//! controllers as the contention resolution scheme, driven by
//! `z_c = Σ_p x_{c,p} Pr[v_c ≥ p]`.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraint::{Constraint, ConstraintSpec};
use crate::crs::{build_variants, draw_pattern, needs_reduction, Variant};
use crate::error::{Error, Result};
use crate::relaxations::{solve_bmumd, BmumdSolution};
use crate::seed::trial_rng;
use crate::set::{ElementSet, MAX_ELEMENTS};
use crate::stats::{MeanAccumulator, MeanEstimate};

/// Tolerance on distribution sums and menu-vector rows.
pub const MENU_TOL: f64 = 1e-9;
/// Largest value bound accepted in an instance.
pub const MAX_VALUE_BOUND: usize = 1000;
/// Largest number of items one client may own.
pub const MAX_CLIENT_ITEMS: usize = 20;

/// Instance file: `{"max_value": B, "clients": [[items]..], "pmf": [[..]..],
/// "constraints": [..]}`; `pmf[c][v]` is `Pr[v_c = v]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuctionFile {
    pub max_value: usize,
    pub clients: Vec<Vec<usize>>,
    pub pmf: Vec<Vec<f64>>,
    pub constraints: Vec<ConstraintSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduction: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct AuctionInstance {
    max_value: usize,
    clients: Vec<Vec<usize>>,
    pmf: Vec<Vec<f64>>,
    /// `tail[c][p] = Pr[v_c ≥ p]` for `p ≤ B + 1`.
    tail: Vec<Vec<f64>>,
    constraints: Vec<Constraint>,
    reduction: bool,
}

impl AuctionInstance {
    pub fn new(
        max_value: usize,
        clients: Vec<Vec<usize>>,
        pmf: Vec<Vec<f64>>,
        constraints: Vec<Constraint>,
    ) -> Result<Self> {
        let reduction = needs_reduction(&constraints);
        Self::with_reduction(max_value, clients, pmf, constraints, reduction)
    }

    pub fn with_reduction(
        max_value: usize,
        mut clients: Vec<Vec<usize>>,
        pmf: Vec<Vec<f64>>,
        constraints: Vec<Constraint>,
        reduction: bool,
    ) -> Result<Self> {
        if max_value > MAX_VALUE_BOUND {
            return Err(Error::Capacity {
                what: "value bound B",
                got: max_value,
                cap: MAX_VALUE_BOUND,
            });
        }
        let m = pmf.len();
        if m > MAX_ELEMENTS {
            return Err(Error::Capacity {
                what: "items",
                got: m,
                cap: MAX_ELEMENTS,
            });
        }
        let mut owner = vec![None; m];
        for (i, group) in clients.iter_mut().enumerate() {
            group.sort_unstable();
            if group.len() > MAX_CLIENT_ITEMS {
                return Err(Error::Capacity {
                    what: "items of one client",
                    got: group.len(),
                    cap: MAX_CLIENT_ITEMS,
                });
            }
            for &c in group.iter() {
                if c >= m {
                    return Err(Error::input(format!("client {i} owns unknown item {c}")));
                }
                if let Some(j) = owner[c].replace(i) {
                    return Err(Error::input(format!(
                        "item {c} owned by clients {j} and {i}"
                    )));
                }
            }
        }
        if let Some(c) = owner.iter().position(Option::is_none) {
            return Err(Error::input(format!("item {c} belongs to no client")));
        }
        let mut tail = Vec::with_capacity(m);
        for (c, law) in pmf.iter().enumerate() {
            if law.len() != max_value + 1 {
                return Err(Error::input(format!(
                    "pmf of item {c} has {} entries, expected {}",
                    law.len(),
                    max_value + 1
                )));
            }
            if law.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
                return Err(Error::input(format!(
                    "pmf of item {c} has a negative or non-finite entry"
                )));
            }
            let total: f64 = law.iter().sum();
            if (total - 1.0).abs() > MENU_TOL {
                return Err(Error::input(format!("pmf of item {c} sums to {total}")));
            }
            let mut t = vec![0.0; max_value + 2];
            for v in (0..=max_value).rev() {
                t[v] = t[v + 1] + law[v];
            }
            t[0] = 1.0;
            tail.push(t);
        }
        for (i, c) in constraints.iter().enumerate() {
            if c.n() != m {
                return Err(Error::input(format!(
                    "constraint {i} has {} elements, instance has {m} items",
                    c.n()
                )));
            }
        }
        Ok(AuctionInstance {
            max_value,
            clients,
            pmf,
            tail,
            constraints,
            reduction,
        })
    }

    pub fn from_file(file: &AuctionFile) -> Result<Self> {
        let m = file.pmf.len();
        let constraints = file
            .constraints
            .iter()
            .map(|c| Constraint::from_spec(c, m))
            .collect::<Result<Vec<_>>>()?;
        let reduction = file
            .reduction
            .unwrap_or_else(|| needs_reduction(&constraints));
        Self::with_reduction(
            file.max_value,
            file.clients.clone(),
            file.pmf.clone(),
            constraints,
            reduction,
        )
    }

    pub fn to_file(&self) -> AuctionFile {
        AuctionFile {
            max_value: self.max_value,
            clients: self.clients.clone(),
            pmf: self.pmf.clone(),
            constraints: self.constraints.iter().map(Constraint::to_spec).collect(),
            reduction: Some(self.reduction),
        }
    }

    /// A single client owning every item, with no constraints.
    pub fn single_client(max_value: usize, pmf: Vec<Vec<f64>>) -> Result<Self> {
        let items = (0..pmf.len()).collect();
        Self::new(max_value, vec![items], pmf, Vec::new())
    }

    pub fn max_value(&self) -> usize {
        self.max_value
    }

    pub fn num_items(&self) -> usize {
        self.pmf.len()
    }

    pub fn clients(&self) -> &[Vec<usize>] {
        &self.clients
    }

    pub fn pmf(&self, c: usize) -> &[f64] {
        &self.pmf[c]
    }

    /// `Pr[v_c ≥ p]`; zero above `B`.
    pub fn tail(&self, c: usize, p: usize) -> f64 {
        self.tail[c][p.min(self.max_value + 1)]
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn uses_reduction(&self) -> bool {
        self.reduction
    }

    pub fn is_feasible(&self, s: ElementSet) -> bool {
        self.constraints.iter().all(|c| c.is_feasible(s))
    }

    fn draw_value<R: Rng + ?Sized>(&self, c: usize, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (v, &p) in self.pmf[c].iter().enumerate() {
            acc += p;
            if u < acc {
                return v;
            }
        }
        self.pmf[c].iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

/// Menu probabilities for one client: `x[l][p]` for the `l`-th item of
/// `items` (ascending ids) at price `p ∈ {0, ..., B}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MenuVector {
    pub items: Vec<usize>,
    pub x: Vec<Vec<f64>>,
}

impl MenuVector {
    pub fn zeros(items: Vec<usize>, max_value: usize) -> Self {
        let x = vec![vec![0.0; max_value + 1]; items.len()];
        MenuVector { items, x }
    }

    /// The LP's variables restricted to one client.
    pub fn from_solution(inst: &AuctionInstance, sol: &BmumdSolution, client: usize) -> Self {
        let items = inst.clients[client].clone();
        let x = items.iter().map(|&c| sol.x[c].clone()).collect();
        MenuVector { items, x }
    }

    /// Checks `Σ_p x_{c,p} ≤ 1` per item and `Σ_{c,p} x_{c,p} Pr[v_c ≥ p] ≤ 1`.
    pub fn validate(&self, inst: &AuctionInstance) -> Result<()> {
        if self.items.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input("menu items must be strictly ascending"));
        }
        let mut demand = 0.0;
        for (l, &c) in self.items.iter().enumerate() {
            if c >= inst.num_items() || self.x[l].len() != inst.max_value + 1 {
                return Err(Error::input(format!("menu row for item {c} is malformed")));
            }
            if self.x[l].iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
                return Err(Error::input(format!(
                    "menu row for item {c} has a negative entry"
                )));
            }
            let row: f64 = self.x[l].iter().sum();
            if row > 1.0 + MENU_TOL {
                return Err(Error::input(format!("menu row for item {c} sums to {row}")));
            }
            demand += self.x[l]
                .iter()
                .enumerate()
                .map(|(p, &v)| v * inst.tail(c, p))
                .sum::<f64>();
        }
        if demand > 1.0 + MENU_TOL {
            return Err(Error::input(format!(
                "expected demand of the menu is {demand}"
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        MenuVector {
            items: self.items.clone(),
            x: self
                .x
                .iter()
                .map(|row| row.iter().map(|v| v * factor).collect())
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.x.iter().flatten().all(|&v| v == 0.0)
    }
}

/// Exact `Pr[X_{c,p}]`: item `c` is offered at price `p` and tops the menu.
///
/// Items are priced independently, so for each value `v ≥ p` of `c` the
/// event factorizes over the other items: none may offer strictly larger
/// utility, and a lower-id item may not tie.
pub fn top_probability_exact(inst: &AuctionInstance, mv: &MenuVector) -> Vec<Vec<f64>> {
    let b = inst.max_value;
    let k = mv.items.len();
    // beats[d][u]: (strictly better, better-or-equal) than utility u.
    let beats: Vec<Vec<(f64, f64)>> = (0..k)
        .map(|d| {
            let c = mv.items[d];
            (0..=b)
                .map(|u| {
                    let mut strict = 0.0;
                    let mut weak = 0.0;
                    for (p, &x) in mv.x[d].iter().enumerate() {
                        if x > 0.0 {
                            strict += x * inst.tail(c, p + u + 1);
                            weak += x * inst.tail(c, p + u);
                        }
                    }
                    (strict, weak)
                })
                .collect()
        })
        .collect();
    let mut out = vec![vec![0.0; b + 1]; k];
    for l in 0..k {
        let c = mv.items[l];
        for p in 0..=b {
            let x = mv.x[l][p];
            if x <= 0.0 {
                continue;
            }
            let mut total = 0.0;
            for v in p..=b {
                let pv = inst.pmf[c][v];
                if pv == 0.0 {
                    continue;
                }
                let u = v - p;
                let mut free = 1.0;
                for d in 0..k {
                    if d == l {
                        continue;
                    }
                    let (strict, weak) = beats[d][u];
                    free *= 1.0 - if mv.items[d] < c { weak } else { strict };
                }
                total += pv * free;
            }
            out[l][p] = x * total;
        }
    }
    out
}

/// A realized menu with the client's response.
#[derive(Debug, Clone, PartialEq)]
pub struct MenuOutcome {
    /// Offered price per menu item, `None` when the item is absent.
    pub offers: Vec<Option<usize>>,
    /// Values drawn after the menu was fixed.
    pub values: Vec<usize>,
    /// Index into the menu's items.
    pub chosen: Option<usize>,
    pub payment: usize,
}

/// Prices every item independently: price `p` with probability `x[l][p]`,
/// absent otherwise. Depends only on the vector and the random stream.
pub fn realize_menu<R: Rng + ?Sized>(mv: &MenuVector, rng: &mut R) -> Vec<Option<usize>> {
    mv.x.iter().map(|row| pick_price(row, rng)).collect()
}

fn pick_price<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> Option<usize> {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (p, &v) in row.iter().enumerate() {
        acc += v;
        if u < acc {
            return Some(p);
        }
    }
    None
}

/// Offer of highest utility `v - p ≥ 0`; ties go to the lower item id.
pub fn simulate_client_choice(
    items: &[usize],
    offers: &[Option<usize>],
    values: &[usize],
) -> Option<usize> {
    let mut best: Option<(usize, i64)> = None;
    for l in 0..items.len() {
        let Some(p) = offers[l] else { continue };
        let u = values[l] as i64 - p as i64;
        if u < 0 {
            continue;
        }
        let better = match best {
            None => true,
            Some((b, bu)) => u > bu || (u == bu && items[l] < items[b]),
        };
        if better {
            best = Some((l, u));
        }
    }
    best.map(|(l, _)| l)
}

fn respond<R: Rng + ?Sized>(
    inst: &AuctionInstance,
    items: &[usize],
    offers: Vec<Option<usize>>,
    rng: &mut R,
) -> MenuOutcome {
    let values: Vec<usize> = items.iter().map(|&c| inst.draw_value(c, rng)).collect();
    let chosen = simulate_client_choice(items, &offers, &values);
    let payment = chosen.map_or(0, |l| offers[l].expect("chosen item is offered"));
    MenuOutcome {
        offers,
        values,
        chosen,
        payment,
    }
}

/// Serves one client from `mv` as is.
pub fn run_menu<R: Rng + ?Sized>(
    inst: &AuctionInstance,
    mv: &MenuVector,
    rng: &mut R,
) -> MenuOutcome {
    let offers = realize_menu(mv, rng);
    respond(inst, &mv.items, offers, rng)
}

/// The simple menu: every item is discarded with probability 1/2, and
/// otherwise priced from its row of `x`.
pub fn first_attempt_menu<R: Rng + ?Sized>(
    inst: &AuctionInstance,
    mv: &MenuVector,
    rng: &mut R,
) -> MenuOutcome {
    let offers =
        mv.x.iter()
            .map(|row| {
                if rng.gen::<bool>() {
                    None
                } else {
                    pick_price(row, rng)
                }
            })
            .collect();
    respond(inst, &mv.items, offers, rng)
}

/// Monte-Carlo counterpart of [`top_probability_exact`].
pub fn top_probability_mc<R: Rng + ?Sized>(
    inst: &AuctionInstance,
    mv: &MenuVector,
    samples: u64,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let mut counts = vec![vec![0u64; inst.max_value + 1]; mv.items.len()];
    for _ in 0..samples {
        let o = run_menu(inst, mv, rng);
        if let Some(l) = o.chosen {
            counts[l][o.payment] += 1;
        }
    }
    counts
        .into_iter()
        .map(|row| row.into_iter().map(|k| k as f64 / samples as f64).collect())
        .collect()
}

/// State of the local search at the start of one round.
#[derive(Debug, Clone)]
pub struct RefineRound {
    pub x: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
    /// Pairs `(l, p)` scaled down at the end of this round.
    pub scaled: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct Refinement {
    pub y: MenuVector,
    /// `q(c,p) = x_{c,p} Pr[v_c ≥ p] / 4` for the input vector.
    pub q: Vec<Vec<f64>>,
    /// Exact top probabilities under `y`.
    pub probs: Vec<Vec<f64>>,
    pub rounds: usize,
    pub eps: f64,
    pub trace: Vec<RefineRound>,
}

impl Refinement {
    /// Largest `Pr[Y_{c,p}] / q(c,p)` over pairs with `q > 0`.
    pub fn max_ratio(&self) -> f64 {
        ratio_extremes(&self.probs, &self.q).1
    }

    pub fn min_ratio(&self) -> f64 {
        ratio_extremes(&self.probs, &self.q).0
    }

    /// Checks the per-round guarantees of the local search on a recorded
    /// trace and returns a description of every violation:
    /// unscaled entries never lose probability and gain at most `ε q`,
    /// scaled entries lose between `2ε² q` and `2ε q`, and `q ≤ Pr`
    /// throughout.
    pub fn round_property_violations(&self, tol: f64) -> Vec<String> {
        let eps = self.eps;
        let mut bad = Vec::new();
        for (t, round) in self.trace.iter().enumerate() {
            for (l, row) in round.probs.iter().enumerate() {
                for (p, &pr) in row.iter().enumerate() {
                    let q = self.q[l][p];
                    if q > 0.0 && pr < q - tol {
                        bad.push(format!("round {t}: Pr[{l},{p}] = {pr} below q = {q}"));
                    }
                }
            }
            let Some(next) = self.trace.get(t + 1) else {
                continue;
            };
            for (l, row) in round.probs.iter().enumerate() {
                for (p, &before) in row.iter().enumerate() {
                    let q = self.q[l][p];
                    if q <= 0.0 {
                        continue;
                    }
                    let after = next.probs[l][p];
                    let delta = after - before;
                    if round.scaled.contains(&(l, p)) {
                        if delta > -2.0 * eps * eps * q + tol || delta < -2.0 * eps * q - tol {
                            bad.push(format!("round {t}: scaled pair ({l},{p}) moved by {delta}"));
                        }
                    } else if delta < -tol || delta > eps * q + tol {
                        bad.push(format!(
                            "round {t}: unscaled pair ({l},{p}) moved by {delta}"
                        ));
                    }
                }
            }
        }
        bad
    }
}

fn ratio_extremes(probs: &[Vec<f64>], q: &[Vec<f64>]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for (prow, qrow) in probs.iter().zip(q) {
        for (&pr, &qv) in prow.iter().zip(qrow) {
            if qv > 0.0 {
                lo = lo.min(pr / qv);
                hi = hi.max(pr / qv);
            }
        }
    }
    (lo, hi)
}

/// Round cap of the local search: `10 ⌈1/ε²⌉`.
pub fn refine_round_cap(eps: f64) -> usize {
    10 * (1.0 / (eps * eps)).ceil() as usize
}

/// Local search from `x/2` that scales down every pair whose top
/// probability exceeds `(1+2ε) q`, until all ratios `Pr/q` are at most
/// `1+3ε`.
pub fn refine_menu_vector(
    inst: &AuctionInstance,
    mv: &MenuVector,
    eps: f64,
    record: bool,
) -> Result<Refinement> {
    if !(eps > 0.0 && eps <= 0.25) {
        return Err(Error::domain(format!(
            "refinement needs 0 < eps <= 1/4, got {eps}"
        )));
    }
    mv.validate(inst)?;
    let q: Vec<Vec<f64>> = mv
        .items
        .iter()
        .zip(&mv.x)
        .map(|(&c, row)| {
            row.iter()
                .enumerate()
                .map(|(p, &v)| 0.25 * v * inst.tail(c, p))
                .collect()
        })
        .collect();
    let mut y = mv.scaled(0.5);
    let cap = refine_round_cap(eps);
    let mut trace = Vec::new();
    let mut last_ratio = f64::NAN;
    for t in 0..=cap {
        let probs = top_probability_exact(inst, &y);
        let (_, hi) = ratio_extremes(&probs, &q);
        last_ratio = hi;
        let scaled: Vec<(usize, usize)> = (0..y.items.len())
            .flat_map(|l| (0..=inst.max_value).map(move |p| (l, p)))
            .filter(|&(l, p)| q[l][p] > 0.0 && probs[l][p] > (1.0 + 2.0 * eps) * q[l][p])
            .collect();
        let done = hi <= 1.0 + 3.0 * eps;
        if record {
            trace.push(RefineRound {
                x: y.x.clone(),
                probs: probs.clone(),
                scaled: if done { Vec::new() } else { scaled.clone() },
            });
        }
        if done {
            return Ok(Refinement {
                y,
                q,
                probs,
                rounds: t,
                eps,
                trace,
            });
        }
        for (l, p) in scaled {
            y.x[l][p] *= 1.0 - eps;
        }
    }
    Err(Error::Contract(format!(
        "menu refinement did not converge within {cap} rounds (eps = {eps}, max ratio {last_ratio:.6})"
    )))
}

/// Everything a trial needs besides randomness: the LP solution, the
/// prepared controllers and a cache of refined menus.
pub struct AuctionPlan<'a> {
    inst: &'a AuctionInstance,
    solution: BmumdSolution,
    eps: f64,
    refine_eps: f64,
    knapsacks: usize,
    variants: Vec<Variant>,
    menus: RwLock<HashMap<(usize, usize, u64), Arc<MenuVector>>>,
}

impl<'a> AuctionPlan<'a> {
    /// Solves the LP and prepares the controllers.
    pub fn new(inst: &'a AuctionInstance, eps: f64) -> Result<Self> {
        let solution = solve_bmumd(inst)?;
        Self::with_solution(inst, solution, eps)
    }

    pub fn with_solution(
        inst: &'a AuctionInstance,
        solution: BmumdSolution,
        eps: f64,
    ) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::domain(format!("eps must lie in (0, 1), got {eps}")));
        }
        let m = inst.num_items();
        if solution.x.len() != m {
            return Err(Error::input("LP solution does not match the instance"));
        }
        let (knapsacks, variants) = build_variants(&inst.constraints, &solution.z, inst.reduction)?;
        let lambda = variants.iter().map(|v| v.lambda).fold(0.0, f64::max);
        let refine_eps = if lambda > 0.0 {
            eps / (4.0 * lambda)
        } else {
            eps
        }
        .min(0.25);
        Ok(AuctionPlan {
            inst,
            solution,
            eps,
            refine_eps,
            knapsacks: knapsacks.len(),
            variants,
            menus: RwLock::new(HashMap::new()),
        })
    }

    pub fn solution(&self) -> &BmumdSolution {
        &self.solution
    }

    pub fn lp_value(&self) -> f64 {
        self.solution.value
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Accuracy handed to the single-client local search.
    pub fn refine_eps(&self) -> f64 {
        self.refine_eps
    }

    pub fn lambda(&self) -> f64 {
        self.variants.iter().map(|v| v.lambda).fold(0.0, f64::max)
    }

    /// Revenue guarantee: `LP* / (λ + 4 + ε)`, times `2^-(q+1)` under
    /// the big/small reduction.
    pub fn revenue_bound(&self) -> f64 {
        let scale = if self.inst.reduction {
            0.5f64.powi(self.knapsacks as i32 + 1)
        } else {
            1.0
        };
        self.solution.value * scale / (self.lambda() + 4.0 + self.eps)
    }

    /// Refined menu of `client` when exactly the items in `open` (a mask
    /// over the client's items) are available under coin pattern `pattern`.
    fn menu(&self, pattern: usize, client: usize, open: u64) -> Result<Arc<MenuVector>> {
        let key = (pattern, client, open);
        if let Some(mv) = self.menus.read().expect("menu cache poisoned").get(&key) {
            return Ok(Arc::clone(mv));
        }
        let variant = &self.variants[pattern];
        let items = &self.inst.clients[client];
        let scale = if self.inst.reduction { 0.5 } else { 1.0 };
        let mut mv = MenuVector::zeros(items.clone(), self.inst.max_value);
        for (l, &c) in items.iter().enumerate() {
            if open >> l & 1 == 1 && variant.kept.contains(c) {
                mv.x[l] = self.solution.x[c].iter().map(|v| v * scale).collect();
            }
        }
        let refined = if mv.is_zero() {
            mv
        } else {
            refine_menu_vector(self.inst, &mv, self.refine_eps, false)?.y
        };
        let refined = Arc::new(refined);
        self.menus
            .write()
            .expect("menu cache poisoned")
            .insert(key, Arc::clone(&refined));
        Ok(refined)
    }
}

/// One sale in an auction run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Sale {
    pub client: usize,
    pub item: usize,
    pub price: usize,
}

#[derive(Debug, Clone)]
pub struct AuctionRun {
    pub order: Vec<usize>,
    pub sales: Vec<Sale>,
    pub revenue: f64,
    pub served: ElementSet,
}

/// One auction: coins, controllers, client order, then one menu per client.
pub fn run_auction<R: Rng + ?Sized>(plan: &AuctionPlan<'_>, rng: &mut R) -> Result<AuctionRun> {
    let inst = plan.inst;
    let pattern = draw_pattern(inst.reduction, plan.knapsacks, rng);
    let variant = &plan.variants[pattern];
    let mut joint = variant.controllers(rng)?;
    let mut order: Vec<usize> = (0..inst.clients.len()).collect();
    order.shuffle(rng);

    let mut sales = Vec::new();
    let mut served = ElementSet::empty();
    let mut revenue = 0.0;
    for &i in &order {
        let items = &inst.clients[i];
        let mut open = 0u64;
        for (l, &c) in items.iter().enumerate() {
            if variant.x[c] > 0.0 && !joint.is_blocked(c) {
                open |= 1 << l;
            }
        }
        let mv = plan.menu(pattern, i, open)?;
        let offers = realize_menu(&mv, rng);
        let outcome = respond(inst, items, offers, rng);
        if let Some(l) = outcome.chosen {
            let c = items[l];
            served.insert(c);
            revenue += outcome.payment as f64;
            sales.push(Sale {
                client: i,
                item: c,
                price: outcome.payment,
            });
            joint.accept(c, rng)?;
        }
    }
    if !inst.is_feasible(served) {
        return Err(Error::Invariant(format!(
            "served items {served:?} are infeasible"
        )));
    }
    Ok(AuctionRun {
        order,
        sales,
        revenue,
        served,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AuctionReport {
    pub trials: u64,
    pub seed: u64,
    pub eps: f64,
    pub refine_eps: f64,
    pub lp_value: f64,
    pub bound: f64,
    pub revenue: MeanEstimate,
    pub infeasible_trials: u64,
    #[serde(skip)]
    pub revenues: Vec<f64>,
}

impl AuctionReport {
    pub fn pass(&self) -> bool {
        self.infeasible_trials == 0 && self.revenue.passes_lower_bound(self.bound)
    }

    pub const CSV_HEADER: &'static str = "trial,revenue,lp_bound,ratio";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for (t, r) in self.revenues.iter().enumerate() {
            let ratio = if self.lp_value > 0.0 {
                format!("{:.6}", r / self.lp_value)
            } else {
                String::new()
            };
            out.push_str(&format!("{t},{r:.6},{:.6},{ratio}\n", self.lp_value));
        }
        out
    }
}

/// Mean revenue over `trials` independent auctions.
pub fn estimate_revenue(plan: &AuctionPlan<'_>, trials: u64, seed: u64) -> Result<AuctionReport> {
    if trials == 0 {
        return Err(Error::input("at least one trial is required"));
    }
    let runs = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, i);
            match run_auction(plan, &mut rng) {
                Ok(run) => Ok(Some(run.revenue)),
                Err(Error::Invariant(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<Option<f64>>>>()?;
    let infeasible_trials = runs.iter().filter(|r| r.is_none()).count() as u64;
    let revenues: Vec<f64> = runs.into_iter().map(|r| r.unwrap_or(0.0)).collect();
    let revenue = MeanAccumulator::from_values(&revenues)
        .estimate()
        .expect("trials >= 1");
    Ok(AuctionReport {
        trials,
        seed,
        eps: plan.eps,
        refine_eps: plan.refine_eps,
        lp_value: plan.lp_value(),
        bound: plan.revenue_bound(),
        revenue,
        infeasible_trials,
        revenues,
    })
}
