//! The random-order contention resolution scheme and its estimators.
//!
//! A trial draws, in this order: the big/small coins (reduction mode only),
//! the active set, every controller, and a uniform permutation. Elements
//! are then scanned in permutation order and an element is accepted iff it
//! is active and not blocked by any constituent controller.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraint::{Constraint, ConstraintSpec};
use crate::controllers::{
    assignment_options, CharacteristicTrace, Controller, Fate, JointController,
    KnapsackControllerState, MatroidControllerState, StepEvents,
};
use crate::error::{Error, Result};
use crate::knapsack::KnapsackConstraint;
use crate::matroids::{Matroid, SupportDecomposition, TAU_DEC};
use crate::seed::trial_rng;
use crate::set::{ElementSet, MAX_ELEMENTS};
use crate::stats::{MeanAccumulator, MeanEstimate, Proportion, PASS_MARGIN_SE};
use crate::submodular::OracleSpec;

/// Largest ground set accepted by [`brute_force_acceptance`].
pub const BRUTE_FORCE_MAX_N: usize = 6;
/// Largest number of scan runs [`brute_force_acceptance`] will enumerate.
pub const BRUTE_FORCE_MAX_RUNS: u64 = 50_000_000;
/// Largest number of knapsacks handled by the big/small reduction.
pub const MAX_REDUCED_KNAPSACKS: usize = 10;
/// Fewest live observations for a blocking-frequency cell to be judged.
pub const MIN_CELL_OBSERVATIONS: u64 = 30;

const TALLY_CHUNK: u64 = 1024;

/// Instance file: `{"n": .., "constraints": [..], "x": [..]}` with an
/// optional `"reduction"` flag and an optional objective `"oracle"` used
/// by the submodular experiments.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrsInstanceFile {
    pub n: usize,
    pub constraints: Vec<ConstraintSpec>,
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduction: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSpec>,
}

#[derive(Debug, Clone)]
pub(crate) enum Prepared {
    Matroid(Matroid, SupportDecomposition),
    Knapsack(KnapsackConstraint),
}

/// Controllers and scaled vector for one outcome of the big/small coins.
#[derive(Debug, Clone)]
pub(crate) struct Variant {
    pub(crate) x: Vec<f64>,
    pub(crate) kept: ElementSet,
    pub(crate) parts: Vec<Prepared>,
    pub(crate) lambda: f64,
}

impl Variant {
    /// Draws every constituent controller, in constraint order.
    pub(crate) fn controllers<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<JointController<'_>> {
        let mut joint = JointController::new(Vec::with_capacity(self.parts.len()));
        for part in &self.parts {
            joint.parts.push(match part {
                Prepared::Matroid(m, dec) => {
                    Controller::Matroid(MatroidControllerState::from_decomposition(m, dec, rng))
                }
                Prepared::Knapsack(k) => {
                    Controller::Knapsack(KnapsackControllerState::init(k, &self.x, rng)?)
                }
            });
        }
        Ok(joint)
    }
}

/// Indices of the knapsack constraints and one variant per coin pattern.
pub(crate) fn build_variants(
    constraints: &[Constraint],
    x: &[f64],
    reduction: bool,
) -> Result<(Vec<usize>, Vec<Variant>)> {
    let knapsacks: Vec<usize> = constraints
        .iter()
        .enumerate()
        .filter(|(_, c)| c.as_knapsack().is_some())
        .map(|(i, _)| i)
        .collect();
    if reduction && knapsacks.len() > MAX_REDUCED_KNAPSACKS {
        return Err(Error::Capacity {
            what: "knapsacks under the big/small reduction",
            got: knapsacks.len(),
            cap: MAX_REDUCED_KNAPSACKS,
        });
    }
    let patterns = if reduction {
        1usize << knapsacks.len()
    } else {
        1
    };
    let variants = (0..patterns)
        .map(|p| build_variant(constraints, x, reduction, &knapsacks, p))
        .collect::<Result<Vec<_>>>()?;
    Ok((knapsacks, variants))
}

/// One fair coin per reduced knapsack; bit set means "keep big items".
pub(crate) fn draw_pattern<R: Rng + ?Sized>(
    reduction: bool,
    knapsacks: usize,
    rng: &mut R,
) -> usize {
    if !reduction {
        return 0;
    }
    let mut p = 0usize;
    for bit in 0..knapsacks {
        if rng.gen::<bool>() {
            p |= 1 << bit;
        }
    }
    p
}

/// Default reduction rule shared by every entry point.
pub(crate) fn needs_reduction(constraints: &[Constraint]) -> bool {
    let has_knapsack = constraints.iter().any(|c| c.as_knapsack().is_some());
    let has_matroid = constraints.iter().any(|c| c.as_matroid().is_some());
    let unbounded = constraints
        .iter()
        .filter_map(Constraint::as_knapsack)
        .any(|k| !k.is_bounded());
    has_knapsack && (has_matroid || unbounded)
}

/// Constraints plus a fractional point lying in each of their polytopes.
#[derive(Debug, Clone)]
pub struct CrsInstance {
    n: usize,
    constraints: Vec<Constraint>,
    x: Vec<f64>,
    reduction: bool,
    knapsacks: Vec<usize>,
    variants: Vec<Variant>,
}

impl CrsInstance {
    /// Builds an instance. Knapsacks are handled directly when every item
    /// has size at most 1/2 and no matroid is present; otherwise the
    /// big/small reduction is applied. Use [`CrsInstance::with_reduction`]
    /// to choose explicitly.
    pub fn new(constraints: Vec<Constraint>, x: Vec<f64>) -> Result<Self> {
        let reduction = needs_reduction(&constraints);
        Self::with_reduction(constraints, x, reduction)
    }

    pub fn with_reduction(
        constraints: Vec<Constraint>,
        x: Vec<f64>,
        reduction: bool,
    ) -> Result<Self> {
        let n = x.len();
        if n > MAX_ELEMENTS {
            return Err(Error::Capacity {
                what: "ground set size",
                got: n,
                cap: MAX_ELEMENTS,
            });
        }
        if let Some((e, v)) = x
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::input(format!("x[{e}] = {v} outside [0, 1]")));
        }
        for (i, c) in constraints.iter().enumerate() {
            if c.n() != n {
                return Err(Error::input(format!(
                    "constraint {i} has {} elements, x has {n}",
                    c.n()
                )));
            }
            if !c.in_polytope(&x, TAU_DEC)? {
                return Err(Error::domain(format!(
                    "x lies outside the polytope of constraint {i}"
                )));
            }
        }
        let (knapsacks, variants) = build_variants(&constraints, &x, reduction)?;
        Ok(CrsInstance {
            n,
            constraints,
            x,
            reduction,
            knapsacks,
            variants,
        })
    }

    pub fn from_file(file: &CrsInstanceFile) -> Result<Self> {
        if file.x.len() != file.n {
            return Err(Error::input(format!(
                "x has {} entries, n is {}",
                file.x.len(),
                file.n
            )));
        }
        let constraints = file
            .constraints
            .iter()
            .map(|c| Constraint::from_spec(c, file.n))
            .collect::<Result<Vec<_>>>()?;
        match file.reduction {
            Some(r) => Self::with_reduction(constraints, file.x.clone(), r),
            None => Self::new(constraints, file.x.clone()),
        }
    }

    pub fn to_file(&self) -> CrsInstanceFile {
        CrsInstanceFile {
            n: self.n,
            constraints: self.constraints.iter().map(Constraint::to_spec).collect(),
            x: self.x.clone(),
            reduction: Some(self.reduction),
            oracle: None,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn uses_reduction(&self) -> bool {
        self.reduction
    }

    pub fn matroid_count(&self) -> usize {
        self.constraints.len() - self.knapsacks.len()
    }

    pub fn knapsack_count(&self) -> usize {
        self.knapsacks.len()
    }

    /// Sum of the constituents' boundedness parameters (worst case over
    /// coin outcomes).
    pub fn lambda_total(&self) -> f64 {
        self.variants.iter().map(|v| v.lambda).fold(0.0, f64::max)
    }

    /// Guaranteed lower bound on `Pr[e ∈ S | e ∈ R(x)]`: `1/(1+λ)`, times
    /// `2^-(q+1)` under the reduction.
    pub fn acceptance_bound(&self) -> f64 {
        let base = 1.0 / (1.0 + self.lambda_total());
        if self.reduction {
            base * 0.5f64.powi(self.knapsacks.len() as i32 + 1)
        } else {
            base
        }
    }

    /// Independent in every original constraint.
    pub fn is_feasible(&self, s: ElementSet) -> bool {
        self.constraints.iter().all(|c| c.is_feasible(s))
    }
}

fn build_variant(
    constraints: &[Constraint],
    x: &[f64],
    reduction: bool,
    knapsacks: &[usize],
    pattern: usize,
) -> Result<Variant> {
    let n = x.len();
    let mut kept = ElementSet::full(n);
    let mut big_of = Vec::new();
    if reduction {
        for (bit, &ci) in knapsacks.iter().enumerate() {
            let (big, small) = constraints[ci]
                .as_knapsack()
                .expect("knapsack")
                .classify_items();
            let keep = if pattern >> bit & 1 == 1 { big } else { small };
            kept = kept.intersection(keep);
            big_of.push(big);
        }
    }
    let xv: Vec<f64> = (0..n)
        .map(|e| match (reduction, kept.contains(e)) {
            (false, _) => x[e],
            (true, true) => x[e] / 2.0,
            (true, false) => 0.0,
        })
        .collect();
    let mut parts = Vec::with_capacity(constraints.len());
    let mut lambda = 0.0;
    let mut bit = 0;
    for c in constraints {
        match c {
            Constraint::Matroid(m) => {
                let dec = m.decompose_support(&xv, TAU_DEC)?;
                parts.push(Prepared::Matroid(m.clone(), dec));
                lambda += 1.0;
            }
            Constraint::Knapsack(k) if reduction => {
                let big = big_of[bit];
                if pattern >> bit & 1 == 1 {
                    let m = Matroid::partition(n, vec![big.to_vec()], vec![1])?;
                    let dec = m.decompose_support(&xv, TAU_DEC)?;
                    parts.push(Prepared::Matroid(m, dec));
                    lambda += 1.0;
                } else {
                    parts.push(Prepared::Knapsack(k.without_items(big)));
                    lambda += 2.0;
                }
                bit += 1;
            }
            Constraint::Knapsack(k) => {
                if !k.is_bounded() {
                    return Err(Error::domain(
                        "knapsack with an item larger than 1/2 requires the big/small reduction",
                    ));
                }
                parts.push(Prepared::Knapsack(k.clone()));
                lambda += 2.0;
            }
        }
    }
    Ok(Variant {
        x: xv,
        kept,
        parts,
        lambda,
    })
}

/// `R(x)`: every element independently with probability `x_e`.
pub fn sample_active_set<R: Rng + ?Sized>(x: &[f64], rng: &mut R) -> ElementSet {
    let mut s = ElementSet::empty();
    for (e, &p) in x.iter().enumerate() {
        if rng.gen::<f64>() < p {
            s.insert(e);
        }
    }
    s
}

/// Joint trace plus one trace per constituent controller.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub joint: CharacteristicTrace,
    pub parts: Vec<CharacteristicTrace>,
}

impl TraceSet {
    /// Checks `Y = 1 - S - Z` and that the joint sequences are the
    /// max (Z) / min (S, Y) of the constituents. Returns the number of
    /// violating `(element, step)` cells.
    pub fn joint_relation_violations(&self) -> usize {
        let mut bad = 0;
        for e in 0..self.joint.n() {
            for t in 0..=self.joint.steps() {
                let (s, z, y) = self.joint.value(e, t);
                if s + z + y != 1 {
                    bad += 1;
                    continue;
                }
                if self.parts.is_empty() {
                    continue;
                }
                let vals: Vec<_> = self.parts.iter().map(|p| p.value(e, t)).collect();
                let smin = vals.iter().map(|v| v.0).min().unwrap();
                let zmax = vals.iter().map(|v| v.1).max().unwrap();
                let ymin = vals.iter().map(|v| v.2).min().unwrap();
                if vals.iter().any(|v| v.0 + v.1 + v.2 != 1) || s != smin || z != zmax || y != ymin
                {
                    bad += 1;
                }
            }
        }
        bad
    }
}

#[derive(Debug, Clone)]
pub struct CrsRunResult {
    pub selected: ElementSet,
    /// Active set of the scaled vector actually fed to the controllers.
    pub active: ElementSet,
    /// `R(x)` before the reduction's discards; equals `active` otherwise.
    pub active_original: ElementSet,
    pub permutation: Vec<usize>,
    pub lambda: f64,
    pub trace: Option<TraceSet>,
}

/// One trial of the scheme.
pub fn run_crs<R: Rng + ?Sized>(
    inst: &CrsInstance,
    rng: &mut R,
    record_trace: bool,
) -> Result<CrsRunResult> {
    let n = inst.n;
    let pattern = draw_pattern(inst.reduction, inst.knapsacks.len(), rng);
    let variant = &inst.variants[pattern];

    let active_original = sample_active_set(&inst.x, rng);
    let active = if inst.reduction {
        let mut a = ElementSet::empty();
        for e in active_original.iter() {
            if variant.kept.contains(e) && rng.gen::<bool>() {
                a.insert(e);
            }
        }
        a
    } else {
        active_original
    };

    let mut joint = variant.controllers(rng)?;

    let mut permutation: Vec<usize> = (0..n).collect();
    permutation.shuffle(rng);

    let mut traces = record_trace.then(|| {
        let mut ts = TraceSet {
            joint: CharacteristicTrace::new(n, n),
            parts: vec![CharacteristicTrace::new(n, n); joint.parts.len()],
        };
        for e in 0..n {
            let zero = variant.x[e] <= 0.0;
            let mut any = zero;
            for (p, c) in joint.parts.iter().enumerate() {
                if zero || c.initially_blocked().contains(e) {
                    ts.parts[p].mark_initially_blocked(e).expect("fresh trace");
                    any = true;
                }
            }
            if any {
                ts.joint.mark_initially_blocked(e).expect("fresh trace");
            }
        }
        ts
    });

    let mut selected = ElementSet::empty();
    for (t, &e) in permutation.iter().enumerate() {
        let take = active.contains(e) && !joint.is_blocked(e);
        let newly = if take {
            selected.insert(e);
            joint.accept(e, rng)?
        } else {
            Vec::new()
        };
        if let Some(ts) = traces.as_mut() {
            record(ts, t, e, take, &newly)?;
        }
    }

    if !selected.is_subset(active) || !inst.is_feasible(selected) {
        return Err(Error::Invariant(format!(
            "selected set {selected:?} is not a feasible subset of the active set"
        )));
    }
    Ok(CrsRunResult {
        selected,
        active,
        active_original,
        permutation,
        lambda: variant.lambda,
        trace: traces,
    })
}

fn record(ts: &mut TraceSet, t: usize, e: usize, take: bool, newly: &[Vec<usize>]) -> Result<()> {
    fn events(
        trace: &CharacteristicTrace,
        e: usize,
        take: bool,
        blocked: Vec<usize>,
    ) -> StepEvents {
        let live = trace.fate(e).is_none();
        StepEvents {
            taken: (take && live).then_some(e),
            passed: (!take && live).then_some(e),
            blocked: blocked
                .into_iter()
                .filter(|&f| f != e && trace.fate(f).is_none())
                .collect(),
        }
    }
    for (p, trace) in ts.parts.iter_mut().enumerate() {
        let blocked = newly.get(p).cloned().unwrap_or_default();
        let ev = events(trace, e, take, blocked);
        trace.record_step(t, &ev)?;
    }
    let mut all: Vec<usize> = newly.iter().flatten().copied().collect();
    all.sort_unstable();
    all.dedup();
    let ev = events(&ts.joint, e, take, all);
    ts.joint.record_step(t, &ev)
}

/// Estimate for one element.
#[derive(Debug, Clone, Serialize)]
pub struct ElementEstimate {
    pub element: usize,
    pub x: f64,
    pub conditioning_count: u64,
    pub accept_count: u64,
    /// `Pr[e ∈ S | e ∈ R(x)]`; `None` when `e` was never active.
    pub conditional: Option<Proportion>,
    /// `Pr[e ∈ S]` over all trials.
    pub unconditional: Option<Proportion>,
    pub bound: f64,
}

impl ElementEstimate {
    /// `None` for undefined estimates.
    pub fn passes(&self) -> Option<bool> {
        self.conditional.map(|p| p.passes_lower_bound(self.bound))
    }
}

/// Per-step blocking frequency of live active elements.
#[derive(Debug, Clone, Serialize)]
pub struct BlockingCell {
    pub element: usize,
    pub step: usize,
    pub live: u64,
    pub blocked: u64,
    pub frequency: f64,
    pub bound: f64,
    pub stderr: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleEstimate {
    pub element: usize,
    pub estimate: MeanEstimate,
    pub pass: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    /// `(element, step)` cells with at least [`MIN_CELL_OBSERVATIONS`] live
    /// observations.
    pub blocking: Vec<BlockingCell>,
    /// Mean of `(1+λ) S^τ + Y^τ` over trials where the element is active.
    pub martingale: Vec<MartingaleEstimate>,
    pub relation_violations: u64,
}

impl Diagnostics {
    pub fn all_pass(&self) -> bool {
        self.relation_violations == 0
            && self.blocking.iter().all(|c| c.pass)
            && self.martingale.iter().all(|m| m.pass)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AcceptanceReport {
    pub trials: u64,
    pub seed: u64,
    pub bound: f64,
    pub elements: Vec<ElementEstimate>,
    /// Trials whose selection was infeasible or not inside the active set.
    pub infeasible_trials: u64,
    pub diagnostics: Option<Diagnostics>,
}

impl AcceptanceReport {
    pub fn all_pass(&self) -> bool {
        self.infeasible_trials == 0
            && self.elements.iter().all(|e| e.passes() != Some(false))
            && self.diagnostics.as_ref().is_none_or(Diagnostics::all_pass)
    }

    pub const CSV_HEADER: &'static str =
        "element,conditioning_count,accept_count,mean,stderr,wilson_lo,wilson_hi,bound,pass";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.elements {
            match e.conditional {
                Some(p) => out.push_str(&format!(
                    "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
                    e.element,
                    e.conditioning_count,
                    e.accept_count,
                    p.mean,
                    p.stderr,
                    p.ci_lo,
                    p.ci_hi,
                    e.bound,
                    p.passes_lower_bound(e.bound)
                )),
                None => out.push_str(&format!("{},0,0,,,,,{:.6},undefined\n", e.element, e.bound)),
            }
        }
        out
    }
}

#[derive(Clone)]
struct Tally {
    conditioning: Vec<u64>,
    accepted: Vec<u64>,
    infeasible: u64,
    live: Vec<u64>,
    blocked: Vec<u64>,
    martingale: Vec<MeanAccumulator>,
    relation_violations: u64,
}

impl Tally {
    fn new(n: usize, diagnostics: bool) -> Self {
        let cells = if diagnostics { n * n } else { 0 };
        Tally {
            conditioning: vec![0; n],
            accepted: vec![0; n],
            infeasible: 0,
            live: vec![0; cells],
            blocked: vec![0; cells],
            martingale: vec![MeanAccumulator::default(); if diagnostics { n } else { 0 }],
            relation_violations: 0,
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        fn add(a: &mut [u64], b: &[u64]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        add(&mut self.conditioning, &other.conditioning);
        add(&mut self.accepted, &other.accepted);
        add(&mut self.live, &other.live);
        add(&mut self.blocked, &other.blocked);
        self.infeasible += other.infeasible;
        self.relation_violations += other.relation_violations;
        for (a, b) in self.martingale.iter_mut().zip(other.martingale) {
            *a = a.merge(b);
        }
        self
    }
}

/// Monte-Carlo estimate of `Pr[e ∈ S | e ∈ R(x)]` for every element.
/// Trials run in parallel; the result depends only on `seed`.
pub fn estimate_acceptance(
    inst: &CrsInstance,
    trials: u64,
    seed: u64,
    diagnostics: bool,
) -> Result<AcceptanceReport> {
    if trials == 0 {
        return Err(Error::input("at least one trial is required"));
    }
    let n = inst.n;
    // Fixed chunks folded in trial order keep the floating-point sums
    // independent of the thread count.
    let chunks = trials.div_ceil(TALLY_CHUNK);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * TALLY_CHUNK;
            let hi = (lo + TALLY_CHUNK).min(trials);
            (lo..hi).try_fold(
                Tally::new(n, diagnostics),
                |mut tally, i| -> Result<Tally> {
                    let mut rng = trial_rng(seed, i);
                    let run = match run_crs(inst, &mut rng, diagnostics) {
                        Ok(r) => r,
                        Err(Error::Invariant(_)) => {
                            tally.infeasible += 1;
                            return Ok(tally);
                        }
                        Err(e) => return Err(e),
                    };
                    for e in run.active_original.iter() {
                        tally.conditioning[e] += 1;
                    }
                    for e in run.selected.iter() {
                        tally.accepted[e] += 1;
                    }
                    if let Some(ts) = &run.trace {
                        tally.relation_violations += ts.joint_relation_violations() as u64;
                        for e in run.active.iter() {
                            let fate = ts.joint.fate(e);
                            for t in 0..n {
                                if ts.joint.value(e, t).2 == 1 {
                                    tally.live[e * n + t] += 1;
                                    if fate == Some((Fate::Blocked, t + 1)) {
                                        tally.blocked[e * n + t] += 1;
                                    }
                                }
                            }
                            let s_tau = matches!(fate, Some((Fate::Taken, _))) as u8 as f64;
                            tally.martingale[e].push((1.0 + run.lambda) * s_tau);
                        }
                    }
                    Ok(tally)
                },
            )
        })
        .collect::<Result<Vec<Tally>>>()?;
    let tally = parts
        .into_iter()
        .fold(Tally::new(n, diagnostics), Tally::merge);

    let bound = inst.acceptance_bound();
    let elements = (0..n)
        .map(|e| ElementEstimate {
            element: e,
            x: inst.x[e],
            conditioning_count: tally.conditioning[e],
            accept_count: tally.accepted[e],
            conditional: Proportion::new(tally.accepted[e], tally.conditioning[e]),
            unconditional: Proportion::new(tally.accepted[e], trials),
            bound,
        })
        .collect();

    let diagnostics = diagnostics.then(|| {
        let lambda = inst.lambda_total();
        let mut blocking = Vec::new();
        for e in 0..n {
            for t in 0..n {
                let live = tally.live[e * n + t];
                if live < MIN_CELL_OBSERVATIONS {
                    continue;
                }
                let hits = tally.blocked[e * n + t];
                let frequency = hits as f64 / live as f64;
                let bound = (lambda / (n - t) as f64).min(1.0);
                // Standard error under the bound itself, or of the estimate,
                // whichever is larger.
                let se_est = (frequency * (1.0 - frequency) / live as f64).sqrt();
                let se_null = (bound * (1.0 - bound) / live as f64).sqrt();
                let stderr = se_est.max(se_null);
                blocking.push(BlockingCell {
                    element: e,
                    step: t,
                    live,
                    blocked: hits,
                    frequency,
                    bound,
                    stderr,
                    pass: frequency <= bound + PASS_MARGIN_SE * stderr,
                });
            }
        }
        let martingale = tally
            .martingale
            .iter()
            .enumerate()
            .filter_map(|(e, acc)| {
                acc.estimate().map(|est| MartingaleEstimate {
                    element: e,
                    pass: est.passes_lower_bound(1.0),
                    estimate: est,
                })
            })
            .collect();
        Diagnostics {
            blocking,
            martingale,
            relation_violations: tally.relation_violations,
        }
    });

    Ok(AcceptanceReport {
        trials,
        seed,
        bound,
        elements,
        infeasible_trials: tally.infeasible,
        diagnostics,
    })
}

/// Exact `Pr[e ∈ S | e ∈ R(x)]` by enumerating active sets, controller
/// assignments of the active elements and orders of the active elements.
/// The controllers of inactive elements never influence the run, so they
/// are not enumerated.
pub fn brute_force_acceptance(inst: &CrsInstance) -> Result<Vec<Option<f64>>> {
    let n = inst.n;
    if inst.reduction || !inst.knapsacks.is_empty() {
        return Err(Error::Unsupported(
            "exact enumeration needs matroid constraints only".into(),
        ));
    }
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::Capacity {
            what: "ground set for exact enumeration",
            got: n,
            cap: BRUTE_FORCE_MAX_N,
        });
    }
    let variant = &inst.variants[0];
    let parts: Vec<(&Matroid, &SupportDecomposition)> = variant
        .parts
        .iter()
        .map(|p| match p {
            Prepared::Matroid(m, d) => (m, d),
            Prepared::Knapsack(_) => unreachable!(),
        })
        .collect();
    let options: Vec<Vec<Vec<(usize, f64)>>> = parts
        .iter()
        .map(|(_, d)| (0..n).map(|e| assignment_options(d, e)).collect())
        .collect();

    let support: ElementSet = (0..n).filter(|&e| inst.x[e] > 0.0).collect();
    let mut runs = 0u64;
    for a in support.subsets() {
        let mut count = (1..=a.len() as u64).product::<u64>();
        for opt in &options {
            for e in a.iter() {
                count = count.saturating_mul(opt[e].len() as u64);
            }
        }
        runs = runs.saturating_add(count);
    }
    if runs > BRUTE_FORCE_MAX_RUNS {
        return Err(Error::Capacity {
            what: "exact enumeration runs",
            got: runs.min(usize::MAX as u64) as usize,
            cap: BRUTE_FORCE_MAX_RUNS as usize,
        });
    }

    let mut selected_prob = vec![0.0; n];
    for a in support.subsets() {
        let p_active: f64 = (0..n)
            .map(|e| {
                if a.contains(e) {
                    inst.x[e]
                } else {
                    1.0 - inst.x[e]
                }
            })
            .product();
        if p_active == 0.0 {
            continue;
        }
        let members = a.to_vec();
        // Mixed-radix counter over (constituent, active element) choices.
        let slots: Vec<(usize, usize)> = (0..parts.len())
            .flat_map(|p| members.iter().map(move |&e| (p, e)))
            .collect();
        let mut digits = vec![0usize; slots.len()];
        let perm_weight = 1.0 / (1..=members.len()).map(|k| k as f64).product::<f64>();
        loop {
            let mut p_assign = 1.0;
            let mut assignments = vec![vec![None; n]; parts.len()];
            for (&(p, e), &d) in slots.iter().zip(&digits) {
                let (j, pr) = options[p][e][d];
                assignments[p][e] = Some(j);
                p_assign *= pr;
            }
            let weight = p_active * p_assign * perm_weight;
            let mut order = members.clone();
            let mut failure = None;
            for_each_permutation(&mut order, &mut |perm| {
                if failure.is_some() {
                    return;
                }
                match scan_fixed(&parts, &assignments, perm) {
                    Ok(sel) => {
                        for e in sel.iter() {
                            selected_prob[e] += weight;
                        }
                    }
                    Err(err) => failure = Some(err),
                }
            });
            if let Some(err) = failure {
                return Err(err);
            }
            // Advance the counter.
            let mut i = 0;
            loop {
                if i == slots.len() {
                    break;
                }
                let (p, e) = slots[i];
                digits[i] += 1;
                if digits[i] < options[p][e].len() {
                    break;
                }
                digits[i] = 0;
                i += 1;
            }
            if i == slots.len() {
                break;
            }
        }
    }
    Ok((0..n)
        .map(|e| (inst.x[e] > 0.0).then(|| selected_prob[e] / inst.x[e]))
        .collect())
}

fn scan_fixed(
    parts: &[(&Matroid, &SupportDecomposition)],
    assignments: &[Vec<Option<usize>>],
    order: &[usize],
) -> Result<ElementSet> {
    let mut states = parts
        .iter()
        .zip(assignments)
        .map(|(&(m, d), a)| MatroidControllerState::with_assignment(m, d, a.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut selected = ElementSet::empty();
    for &e in order {
        if states.iter().all(|s| !s.is_blocked(e)) {
            for s in states.iter_mut() {
                s.accept(e)?;
            }
            selected.insert(e);
        }
    }
    Ok(selected)
}

/// Heap's algorithm.
fn for_each_permutation(items: &mut [usize], f: &mut dyn FnMut(&[usize])) {
    fn heap(k: usize, items: &mut [usize], f: &mut dyn FnMut(&[usize])) {
        if k <= 1 {
            f(items);
            return;
        }
        for i in 0..k - 1 {
            heap(k - 1, items, f);
            if k.is_multiple_of(2) {
                items.swap(i, k - 1);
            } else {
                items.swap(0, k - 1);
            }
        }
        heap(k - 1, items, f);
    }
    let k = items.len();
    heap(k, items, f);
}
