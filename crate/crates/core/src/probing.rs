//! Stochastic probing and stochastic k-set packing driven by matroid
//! controllers.
//!
//! Probing: elements are active independently with probability `p_e`, a
//! probed active element must be kept, probed sets are limited by outer
//! matroids and kept sets by inner matroids. Packing: a taken element
//! reveals a value and a random 0/1 row vector; the copies that
//! materialize in row `i` must stay independent in the row matroid `M_i`.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraint::ConstraintSpec;
use crate::controllers::{CharacteristicTrace, MatroidControllerState, StepEvents};
use crate::crs::sample_active_set;
use crate::error::{Error, Result};
use crate::matroids::{Matroid, SupportDecomposition, TAU_DEC};
use crate::relaxations::{solve_lp, LinearProgram, LpStatus, Polytope};
use crate::seed::trial_rng;
use crate::set::{ElementSet, MAX_ELEMENTS};
use crate::stats::{MeanAccumulator, MeanEstimate, Proportion};
use crate::submodular::{
    measured_continuous_greedy, multilinear_exact, GreedyConfig, GreedyTrajectory, OracleSpec,
    SubmodularOracle, EXACT_F_MAX_N, TAU_F,
};

/// Largest packing instance solved by exhaustive adaptive search.
pub const ADAPTIVE_BRUTE_MAX_N: usize = 5;

fn matroids_from_specs(specs: &[ConstraintSpec], n: usize, what: &str) -> Result<Vec<Matroid>> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| match s.as_matroid() {
            Some(m) => Matroid::from_spec(&m, n),
            None => Err(Error::Unsupported(format!(
                "{what} constraint {i} is a knapsack; only matroids are supported here"
            ))),
        })
        .collect()
}

/// Probing instance file. `x` is optional; without it the relaxation is
/// solved by the measured greedy algorithm.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbingFile {
    pub n: usize,
    pub p: Vec<f64>,
    #[serde(default)]
    pub inner: Vec<ConstraintSpec>,
    #[serde(default)]
    pub outer: Vec<ConstraintSpec>,
    pub oracle: OracleSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ProbingInstance {
    p: Vec<f64>,
    inner: Vec<Matroid>,
    outer: Vec<Matroid>,
    f: SubmodularOracle,
}

impl ProbingInstance {
    pub fn new(
        p: Vec<f64>,
        inner: Vec<Matroid>,
        outer: Vec<Matroid>,
        f: SubmodularOracle,
    ) -> Result<Self> {
        let n = p.len();
        if n > MAX_ELEMENTS {
            return Err(Error::Capacity {
                what: "ground set size",
                got: n,
                cap: MAX_ELEMENTS,
            });
        }
        if let Some(e) = p.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::input(format!("p[{e}] = {} outside [0, 1]", p[e])));
        }
        if inner.iter().chain(&outer).any(|m| m.n() != n) || f.n() != n {
            return Err(Error::input(
                "constraint or oracle ground set differs from p",
            ));
        }
        Ok(ProbingInstance { p, inner, outer, f })
    }

    pub fn from_file(file: &ProbingFile) -> Result<Self> {
        if file.p.len() != file.n {
            return Err(Error::input(format!(
                "p has {} entries, n is {}",
                file.p.len(),
                file.n
            )));
        }
        let inner = matroids_from_specs(&file.inner, file.n, "inner")?;
        let outer = matroids_from_specs(&file.outer, file.n, "outer")?;
        let f = SubmodularOracle::from_spec(&file.oracle)?;
        Self::new(file.p.clone(), inner, outer, f)
    }

    pub fn to_file(&self, x: Option<Vec<f64>>) -> ProbingFile {
        ProbingFile {
            n: self.n(),
            p: self.p.clone(),
            inner: self.inner.iter().map(|m| m.spec().clone().into()).collect(),
            outer: self.outer.iter().map(|m| m.spec().clone().into()).collect(),
            oracle: self.f.spec().clone(),
            x,
        }
    }

    pub fn n(&self) -> usize {
        self.p.len()
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn inner(&self) -> &[Matroid] {
        &self.inner
    }

    pub fn outer(&self) -> &[Matroid] {
        &self.outer
    }

    pub fn oracle(&self) -> &SubmodularOracle {
        &self.f
    }

    /// `k_in + k_out`.
    pub fn lambda(&self) -> f64 {
        (self.inner.len() + self.outer.len()) as f64
    }

    /// The relaxation's feasible region written in `y = p·x`: inner rows
    /// on `y`, outer rows on `y/p`, and `y ≤ p`.
    pub fn transformed_polytope(&self) -> Result<Polytope> {
        let n = self.n();
        let inv: Vec<f64> = self
            .p
            .iter()
            .map(|&p| if p > 0.0 { 1.0 / p } else { 0.0 })
            .collect();
        let mut poly = Polytope::unit_box(n);
        for m in &self.outer {
            poly.add_matroid(m, Some(&inv))?;
        }
        for m in &self.inner {
            poly.add_matroid(m, None)?;
        }
        poly.cap_upper(&self.p);
        Ok(poly)
    }
}

/// A point of the probing relaxation found by the measured greedy
/// algorithm.
#[derive(Debug, Clone)]
pub struct ProbingMpSolution {
    pub x: Vec<f64>,
    /// `p·x`.
    pub y: Vec<f64>,
    pub trajectory: GreedyTrajectory,
}

/// Runs the measured greedy algorithm with `T = 1` on the relaxation in
/// the substituted variables `y = p·x`. Elements with `p_e = 0` are pinned
/// to `x_e = 0`.
pub fn solve_probing_mp<R: Rng + ?Sized>(
    inst: &ProbingInstance,
    cfg: &GreedyConfig,
    rng: &mut R,
) -> Result<ProbingMpSolution> {
    let poly = inst.transformed_polytope()?;
    let trajectory = measured_continuous_greedy(&inst.f, &poly, cfg, rng)?;
    let mut y = trajectory.final_point().to_vec();
    poly.shrink_into(&mut y);
    let x: Vec<f64> = y
        .iter()
        .zip(&inst.p)
        .map(|(&v, &p)| if p > 0.0 { (v / p).min(1.0) } else { 0.0 })
        .collect();
    let y = x.iter().zip(&inst.p).map(|(a, b)| a * b).collect();
    Ok(ProbingMpSolution { x, y, trajectory })
}

/// Controllers' decompositions for a fixed fractional point.
#[derive(Debug, Clone)]
pub struct ProbingPlan<'a> {
    inst: &'a ProbingInstance,
    x: Vec<f64>,
    outer: Vec<SupportDecomposition>,
    inner: Vec<SupportDecomposition>,
}

impl<'a> ProbingPlan<'a> {
    /// Checks `x ∈ P(outer)` and `p·x ∈ P(inner)` and decomposes both.
    pub fn new(inst: &'a ProbingInstance, x: Vec<f64>) -> Result<Self> {
        if x.len() != inst.n() {
            return Err(Error::input("x and p differ in length"));
        }
        if let Some(e) = x.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::input(format!("x[{e}] = {} outside [0, 1]", x[e])));
        }
        let px: Vec<f64> = x.iter().zip(&inst.p).map(|(a, b)| a * b).collect();
        let outer = inst
            .outer
            .iter()
            .map(|m| m.decompose_support(&x, TAU_DEC))
            .collect::<Result<Vec<_>>>()?;
        let inner = inst
            .inner
            .iter()
            .map(|m| m.decompose_support(&px, TAU_DEC))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProbingPlan {
            inst,
            x,
            outer,
            inner,
        })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn instance(&self) -> &ProbingInstance {
        self.inst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ProbeEventKind {
    OuterUpdate,
    Probe { success: bool },
    InnerUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProbeEvent {
    pub step: usize,
    pub element: usize,
    pub kind: ProbeEventKind,
}

#[derive(Debug, Clone)]
pub struct ProbingRun {
    pub probed: ElementSet,
    pub taken: ElementSet,
    pub active: ElementSet,
    pub permutation: Vec<usize>,
    pub events: Vec<ProbeEvent>,
    /// Joint trace over every controller; an element's fate is `Taken`
    /// when it is probed.
    pub trace: Option<CharacteristicTrace>,
}

/// One run of the probing mechanism. Draw order: `R(x)`, outer then inner
/// controllers, the permutation, then one probe coin per probed element.
/// With `gain_filter` an element must also raise `f` of the kept set to
/// be probed.
pub fn run_probing<R: Rng + ?Sized>(
    plan: &ProbingPlan<'_>,
    rng: &mut R,
    gain_filter: bool,
    record: bool,
) -> Result<ProbingRun> {
    let inst = plan.inst;
    let n = inst.n();
    let active = sample_active_set(&plan.x, rng);
    let mut outer: Vec<MatroidControllerState<'_>> = inst
        .outer
        .iter()
        .zip(&plan.outer)
        .map(|(m, d)| MatroidControllerState::from_decomposition(m, d, rng))
        .collect();
    let mut inner: Vec<MatroidControllerState<'_>> = inst
        .inner
        .iter()
        .zip(&plan.inner)
        .map(|(m, d)| MatroidControllerState::from_decomposition(m, d, rng))
        .collect();
    let mut permutation: Vec<usize> = (0..n).collect();
    permutation.shuffle(rng);

    let mut trace = record.then(|| {
        let mut t = CharacteristicTrace::new(n, n);
        for e in 0..n {
            if outer.iter().chain(&inner).any(|c| c.is_blocked(e)) {
                t.mark_initially_blocked(e).expect("fresh trace");
            }
        }
        t
    });

    let mut probed = ElementSet::empty();
    let mut taken = ElementSet::empty();
    let mut current = inst.f.value(taken);
    let mut events = Vec::new();
    for (t, &e) in permutation.iter().enumerate() {
        let gate = active.contains(e)
            && !outer.iter().chain(&inner).any(|c| c.is_blocked(e))
            && (!gain_filter || inst.f.value(taken.with(e)) > current + TAU_F);
        let mut blocked = Vec::new();
        if gate {
            for c in outer.iter_mut() {
                blocked.extend(c.accept(e)?);
            }
            events.push(ProbeEvent {
                step: t,
                element: e,
                kind: ProbeEventKind::OuterUpdate,
            });
            probed.insert(e);
            let success = rng.gen::<f64>() < inst.p[e];
            events.push(ProbeEvent {
                step: t,
                element: e,
                kind: ProbeEventKind::Probe { success },
            });
            if success {
                taken.insert(e);
                current = inst.f.value(taken);
                for c in inner.iter_mut() {
                    blocked.extend(c.accept(e)?);
                }
                events.push(ProbeEvent {
                    step: t,
                    element: e,
                    kind: ProbeEventKind::InnerUpdate,
                });
            }
            if !inst.outer.iter().all(|m| m.independent(probed))
                || !inst.inner.iter().all(|m| m.independent(taken))
            {
                return Err(Error::Invariant(format!(
                    "prefix infeasible at step {t}: probed {probed:?}, taken {taken:?}"
                )));
            }
        }
        if let Some(tr) = trace.as_mut() {
            blocked.sort_unstable();
            blocked.dedup();
            let live = tr.fate(e).is_none();
            let ev = StepEvents {
                taken: (gate && live).then_some(e),
                passed: (!gate && live).then_some(e),
                blocked: blocked
                    .into_iter()
                    .filter(|&f| f != e && tr.fate(f).is_none())
                    .collect(),
            };
            tr.record_step(t, &ev)?;
        }
    }
    Ok(ProbingRun {
        probed,
        taken,
        active,
        permutation,
        events,
        trace,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeEstimate {
    pub element: usize,
    pub x: f64,
    pub probed: Proportion,
    /// `x_e / (k_in + k_out + 1)`.
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbingReport {
    pub trials: u64,
    pub seed: u64,
    pub gain_filter: bool,
    pub lambda: f64,
    pub elements: Vec<ProbeEstimate>,
    pub objective: MeanEstimate,
    /// `F(p·x)`, when the ground set allows exact evaluation.
    pub multilinear: Option<f64>,
    /// `F(p·x) / (k_in + k_out + 1)`.
    pub objective_bound: Option<f64>,
    pub infeasible_trials: u64,
}

impl ProbingReport {
    /// Per-element probe bounds are judged only without the gain filter,
    /// which deliberately skips elements.
    pub fn pass(&self) -> bool {
        self.infeasible_trials == 0
            && self
                .objective_bound
                .is_none_or(|b| self.objective.passes_lower_bound(b))
            && (self.gain_filter
                || self
                    .elements
                    .iter()
                    .all(|e| e.probed.passes_lower_bound(e.bound)))
    }

    pub const CSV_HEADER: &'static str = "metric,target,estimate,stderr,ci_lo,ci_hi,bound,pass";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.elements {
            let p = e.probed;
            out.push_str(&format!(
                "probe_frequency,{},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
                e.element,
                p.mean,
                p.stderr,
                p.ci_lo,
                p.ci_hi,
                e.bound,
                if self.gain_filter {
                    "n/a".to_string()
                } else {
                    p.passes_lower_bound(e.bound).to_string()
                }
            ));
        }
        let o = self.objective;
        match self.objective_bound {
            Some(b) => out.push_str(&format!(
                "objective,all,{:.6},{:.6},,,{:.6},{}\n",
                o.mean,
                o.stderr,
                b,
                o.passes_lower_bound(b)
            )),
            None => out.push_str(&format!(
                "objective,all,{:.6},{:.6},,,,n/a\n",
                o.mean, o.stderr
            )),
        }
        out
    }
}

/// Monte-Carlo probe frequencies and `E[f(S)]`.
pub fn estimate_probing(
    plan: &ProbingPlan<'_>,
    trials: u64,
    seed: u64,
    gain_filter: bool,
) -> Result<ProbingReport> {
    if trials == 0 {
        return Err(Error::input("at least one trial is required"));
    }
    let inst = plan.inst;
    let n = inst.n();
    let runs = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, i);
            match run_probing(plan, &mut rng, gain_filter, false) {
                Ok(r) => Ok(Some((r.probed, inst.f.value(r.taken)))),
                Err(Error::Invariant(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut counts = vec![0u64; n];
    let mut values = Vec::with_capacity(runs.len());
    let mut infeasible_trials = 0;
    for r in &runs {
        match r {
            Some((probed, v)) => {
                probed.iter().for_each(|e| counts[e] += 1);
                values.push(*v);
            }
            None => {
                infeasible_trials += 1;
                values.push(0.0);
            }
        }
    }
    let lambda = inst.lambda();
    let elements = (0..n)
        .map(|e| ProbeEstimate {
            element: e,
            x: plan.x[e],
            probed: Proportion::new(counts[e], trials).expect("trials >= 1"),
            bound: plan.x[e] / (lambda + 1.0),
        })
        .collect();
    let multilinear = if n <= EXACT_F_MAX_N {
        let px: Vec<f64> = plan.x.iter().zip(&inst.p).map(|(a, b)| a * b).collect();
        Some(multilinear_exact(&inst.f, &px)?)
    } else {
        None
    };
    Ok(ProbingReport {
        trials,
        seed,
        gain_filter,
        lambda,
        elements,
        objective: MeanAccumulator::from_values(&values)
            .estimate()
            .expect("trials >= 1"),
        multilinear,
        objective_bound: multilinear.map(|f| f / (lambda + 1.0)),
        infeasible_trials,
    })
}

/// One outcome of a packing element: probability, value and the 0/1
/// materialization vector over rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeSpec {
    pub prob: f64,
    pub v: f64,
    #[serde(rename = "L")]
    pub l: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackingElementSpec {
    /// Rows the element may occupy.
    pub q: Vec<usize>,
    pub outcomes: Vec<OutcomeSpec>,
}

/// Packing instance file; `row_matroids[i]` is a matroid over the copies
/// of all elements in row `i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackingFile {
    pub rows: usize,
    pub row_matroids: Vec<ConstraintSpec>,
    pub elements: Vec<PackingElementSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub prob: f64,
    pub value: f64,
    /// Bitmask of materialized rows.
    pub rows: u64,
}

#[derive(Debug, Clone)]
pub struct PackingInstance {
    rows: usize,
    matroids: Vec<Matroid>,
    q: Vec<Vec<usize>>,
    outcomes: Vec<Vec<Outcome>>,
    /// `p[i][e]`: probability that copy `e^i` materializes.
    p: Vec<Vec<f64>>,
    mean_value: Vec<f64>,
    /// Rows with positive materialization probability, per element.
    live_rows: Vec<Vec<usize>>,
}

impl PackingInstance {
    pub fn new(
        rows: usize,
        matroids: Vec<Matroid>,
        elements: &[PackingElementSpec],
    ) -> Result<Self> {
        let n = elements.len();
        if n > MAX_ELEMENTS || rows > MAX_ELEMENTS {
            return Err(Error::Capacity {
                what: "packing elements or rows",
                got: n.max(rows),
                cap: MAX_ELEMENTS,
            });
        }
        if matroids.len() != rows {
            return Err(Error::input(format!(
                "{} row matroids for {rows} rows",
                matroids.len()
            )));
        }
        if let Some(i) = matroids.iter().position(|m| m.n() != n) {
            return Err(Error::input(format!(
                "row matroid {i} is not over the {n} elements"
            )));
        }
        let mut q = Vec::with_capacity(n);
        let mut outcomes = Vec::with_capacity(n);
        let mut p = vec![vec![0.0; n]; rows];
        let mut mean_value = Vec::with_capacity(n);
        for (e, spec) in elements.iter().enumerate() {
            let mut qe = spec.q.clone();
            qe.sort_unstable();
            qe.dedup();
            if qe.iter().any(|&i| i >= rows) {
                return Err(Error::input(format!(
                    "element {e} names a row outside 0..{rows}"
                )));
            }
            let qmask: u64 = qe.iter().map(|&i| 1u64 << i).sum();
            let mut total = 0.0;
            let mut mean = 0.0;
            let mut list = Vec::with_capacity(spec.outcomes.len());
            for (k, o) in spec.outcomes.iter().enumerate() {
                if !(o.prob >= 0.0 && o.prob.is_finite()) || !(o.v >= 0.0 && o.v.is_finite()) {
                    return Err(Error::input(format!(
                        "element {e} outcome {k}: bad probability or value"
                    )));
                }
                if o.l.len() != rows || o.l.iter().any(|&b| b > 1) {
                    return Err(Error::input(format!(
                        "element {e} outcome {k}: L must be a 0/1 vector of length {rows}"
                    )));
                }
                let mask: u64 =
                    o.l.iter()
                        .enumerate()
                        .filter(|(_, &b)| b == 1)
                        .map(|(i, _)| 1u64 << i)
                        .sum();
                if mask & !qmask != 0 {
                    return Err(Error::input(format!(
                        "element {e} outcome {k} materializes outside its rows {qe:?}"
                    )));
                }
                total += o.prob;
                mean += o.prob * o.v;
                for (i, row) in p.iter_mut().enumerate() {
                    if mask >> i & 1 == 1 {
                        row[e] += o.prob;
                    }
                }
                list.push(Outcome {
                    prob: o.prob,
                    value: o.v,
                    rows: mask,
                });
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::input(format!(
                    "outcomes of element {e} sum to {total}"
                )));
            }
            q.push(qe);
            outcomes.push(list);
            mean_value.push(mean);
        }
        let live_rows = (0..n)
            .map(|e| q[e].iter().copied().filter(|&i| p[i][e] > 0.0).collect())
            .collect();
        Ok(PackingInstance {
            rows,
            matroids,
            q,
            outcomes,
            p,
            mean_value,
            live_rows,
        })
    }

    pub fn from_file(file: &PackingFile) -> Result<Self> {
        let n = file.elements.len();
        let matroids = matroids_from_specs(&file.row_matroids, n, "row")?;
        Self::new(file.rows, matroids, &file.elements)
    }

    pub fn to_file(&self, x: Option<Vec<f64>>) -> PackingFile {
        let elements = (0..self.n())
            .map(|e| PackingElementSpec {
                q: self.q[e].clone(),
                outcomes: self.outcomes[e]
                    .iter()
                    .map(|o| OutcomeSpec {
                        prob: o.prob,
                        v: o.value,
                        l: (0..self.rows).map(|i| (o.rows >> i & 1) as u8).collect(),
                    })
                    .collect(),
            })
            .collect();
        PackingFile {
            rows: self.rows,
            row_matroids: self
                .matroids
                .iter()
                .map(|m| m.spec().clone().into())
                .collect(),
            elements,
            x,
        }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row_matroids(&self) -> &[Matroid] {
        &self.matroids
    }

    /// `p[i][e]`.
    pub fn marginals(&self) -> &[Vec<f64>] {
        &self.p
    }

    pub fn mean_values(&self) -> &[f64] {
        &self.mean_value
    }

    pub fn outcomes(&self, e: usize) -> &[Outcome] {
        &self.outcomes[e]
    }

    /// Largest number of rows an element can occupy.
    pub fn k(&self) -> usize {
        self.live_rows.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// `Σ_e E[v_e] x_e`.
    pub fn lp_objective(&self, x: &[f64]) -> f64 {
        self.mean_value.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    fn draw_outcome<R: Rng + ?Sized>(&self, e: usize, rng: &mut R) -> Outcome {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for o in &self.outcomes[e] {
            acc += o.prob;
            if u < acc {
                return *o;
            }
        }
        *self.outcomes[e]
            .iter()
            .rev()
            .find(|o| o.prob > 0.0)
            .expect("outcome probabilities sum to one")
    }
}

/// `max Σ E[v_e] x_e` subject to `p^i·x ∈ P(M_i)` for every row and
/// `x ∈ [0,1]^n`.
pub fn build_setpacking_lp(inst: &PackingInstance) -> Result<LinearProgram> {
    let n = inst.n();
    let mut poly = Polytope::unit_box(n);
    for (i, m) in inst.matroids.iter().enumerate() {
        poly.add_matroid(m, Some(&inst.p[i]))?;
    }
    let mut lp = LinearProgram::new(inst.mean_value.clone());
    for (a, b) in poly.rows() {
        lp.add_row(a.clone(), crate::relaxations::Relation::Le, *b);
    }
    Ok(lp)
}

/// Optimal LP point, shrunk if needed so that every `p^i·x` decomposes.
pub fn solve_setpacking_lp(inst: &PackingInstance) -> Result<(Vec<f64>, f64)> {
    let lp = build_setpacking_lp(inst)?;
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Numerical {
            message: format!("set-packing LP ended {:?}", sol.status),
            residual: f64::NAN,
        });
    }
    let mut x: Vec<f64> = sol.values.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let mut shrink: f64 = 1.0;
    for row in &lp.rows {
        let lhs: f64 = row.coeffs.iter().zip(&x).map(|(a, b)| a * b).sum();
        if lhs > row.rhs {
            shrink = shrink.min(row.rhs / lhs);
        }
    }
    x.iter_mut().for_each(|v| *v *= shrink);
    let value = inst.lp_objective(&x);
    Ok((x, value))
}

/// Best expected value of an adaptive strategy that never risks an
/// infeasible materialization, by exhaustive search over probe orders and
/// outcomes.
pub fn best_adaptive_value(inst: &PackingInstance) -> Result<f64> {
    let n = inst.n();
    if n > ADAPTIVE_BRUTE_MAX_N {
        return Err(Error::Capacity {
            what: "elements for exhaustive adaptive search",
            got: n,
            cap: ADAPTIVE_BRUTE_MAX_N,
        });
    }
    fn go(inst: &PackingInstance, remaining: ElementSet, placed: &mut Vec<ElementSet>) -> f64 {
        let mut best: f64 = 0.0;
        for e in remaining.iter() {
            let safe = inst.live_rows[e]
                .iter()
                .all(|&i| inst.matroids[i].independent(placed[i].with(e)));
            if !safe {
                continue;
            }
            let mut value = 0.0;
            for o in &inst.outcomes[e] {
                if o.prob == 0.0 {
                    continue;
                }
                let saved = placed.clone();
                for (i, s) in placed.iter_mut().enumerate() {
                    if o.rows >> i & 1 == 1 {
                        s.insert(e);
                    }
                }
                value += o.prob * (o.value + go(inst, remaining.without(e), placed));
                *placed = saved;
            }
            best = best.max(value);
        }
        best
    }
    let mut placed = vec![ElementSet::empty(); inst.rows];
    Ok(go(inst, ElementSet::full(n), &mut placed))
}

#[derive(Debug, Clone)]
pub struct PackingPlan<'a> {
    inst: &'a PackingInstance,
    x: Vec<f64>,
    decs: Vec<SupportDecomposition>,
}

impl<'a> PackingPlan<'a> {
    /// Decomposes `p^i·x` in every row matroid.
    pub fn new(inst: &'a PackingInstance, x: Vec<f64>) -> Result<Self> {
        if x.len() != inst.n() {
            return Err(Error::input("x has the wrong length"));
        }
        if let Some(e) = x.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::input(format!("x[{e}] = {} outside [0, 1]", x[e])));
        }
        let decs = inst
            .matroids
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let px: Vec<f64> = x.iter().zip(&inst.p[i]).map(|(a, b)| a * b).collect();
                m.decompose_support(&px, TAU_DEC)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PackingPlan { inst, x, decs })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }
}

#[derive(Debug, Clone)]
pub struct PackingRun {
    pub taken: ElementSet,
    pub value: f64,
    /// Materialized copies per row.
    pub materialized: Vec<ElementSet>,
    pub permutation: Vec<usize>,
}

/// One run: row controllers, permutation, then for each unblocked element
/// a take coin with probability `x_e`; a taken element's outcome updates
/// the rows where its copy materialized.
pub fn run_kset_packing<R: Rng + ?Sized>(
    plan: &PackingPlan<'_>,
    rng: &mut R,
) -> Result<PackingRun> {
    let inst = plan.inst;
    let n = inst.n();
    let mut ctl: Vec<MatroidControllerState<'_>> = inst
        .matroids
        .iter()
        .zip(&plan.decs)
        .map(|(m, d)| MatroidControllerState::from_decomposition(m, d, rng))
        .collect();
    let mut permutation: Vec<usize> = (0..n).collect();
    permutation.shuffle(rng);
    let mut taken = ElementSet::empty();
    let mut materialized = vec![ElementSet::empty(); inst.rows];
    let mut value = 0.0;
    for &e in &permutation {
        if inst.live_rows[e].iter().any(|&i| ctl[i].is_blocked(e)) {
            continue;
        }
        if rng.gen::<f64>() >= plan.x[e] {
            continue;
        }
        taken.insert(e);
        let o = inst.draw_outcome(e, rng);
        value += o.value;
        for &i in &inst.live_rows[e] {
            if o.rows >> i & 1 == 1 {
                materialized[i].insert(e);
                ctl[i].accept(e)?;
            }
        }
    }
    if let Some(i) = (0..inst.rows).find(|&i| !inst.matroids[i].independent(materialized[i])) {
        return Err(Error::Invariant(format!(
            "row {i} materialized a dependent set {:?}",
            materialized[i]
        )));
    }
    Ok(PackingRun {
        taken,
        value,
        materialized,
        permutation,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PackingReport {
    pub trials: u64,
    pub seed: u64,
    pub k: usize,
    pub elements: Vec<ProbeEstimate>,
    pub value: MeanEstimate,
    /// `Σ E[v_e] x_e`.
    pub lp_value: f64,
    /// `lp_value / (k + 1)`.
    pub value_bound: f64,
    pub infeasible_trials: u64,
}

impl PackingReport {
    pub fn pass(&self) -> bool {
        self.infeasible_trials == 0
            && self.value.passes_lower_bound(self.value_bound)
            && self
                .elements
                .iter()
                .all(|e| e.probed.passes_lower_bound(e.bound))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(ProbingReport::CSV_HEADER);
        out.push('\n');
        for e in &self.elements {
            let p = e.probed;
            out.push_str(&format!(
                "probe_frequency,{},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
                e.element,
                p.mean,
                p.stderr,
                p.ci_lo,
                p.ci_hi,
                e.bound,
                p.passes_lower_bound(e.bound)
            ));
        }
        out.push_str(&format!(
            "value,all,{:.6},{:.6},,,{:.6},{}\n",
            self.value.mean,
            self.value.stderr,
            self.value_bound,
            self.value.passes_lower_bound(self.value_bound)
        ));
        out
    }
}

pub fn estimate_packing(plan: &PackingPlan<'_>, trials: u64, seed: u64) -> Result<PackingReport> {
    if trials == 0 {
        return Err(Error::input("at least one trial is required"));
    }
    let inst = plan.inst;
    let n = inst.n();
    let runs = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, i);
            match run_kset_packing(plan, &mut rng) {
                Ok(r) => Ok(Some((r.taken, r.value))),
                Err(Error::Invariant(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut counts = vec![0u64; n];
    let mut values = Vec::with_capacity(runs.len());
    let mut infeasible_trials = 0;
    for r in &runs {
        match r {
            Some((taken, v)) => {
                taken.iter().for_each(|e| counts[e] += 1);
                values.push(*v);
            }
            None => {
                infeasible_trials += 1;
                values.push(0.0);
            }
        }
    }
    let k = inst.k();
    let elements = (0..n)
        .map(|e| ProbeEstimate {
            element: e,
            x: plan.x[e],
            probed: Proportion::new(counts[e], trials).expect("trials >= 1"),
            bound: plan.x[e] / (k as f64 + 1.0),
        })
        .collect();
    let lp_value = inst.lp_objective(&plan.x);
    Ok(PackingReport {
        trials,
        seed,
        k,
        elements,
        value: MeanAccumulator::from_values(&values)
            .estimate()
            .expect("trials >= 1"),
        lp_value,
        value_bound: lp_value / (k as f64 + 1.0),
        infeasible_trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn element(q: &[usize], rows: usize, outcomes: &[(f64, f64, &[usize])]) -> PackingElementSpec {
        PackingElementSpec {
            q: q.to_vec(),
            outcomes: outcomes
                .iter()
                .map(|&(prob, v, l)| OutcomeSpec {
                    prob,
                    v,
                    l: (0..rows).map(|i| l.contains(&i) as u8).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn two_item_setpacking_lp() {
        let inst = PackingInstance::new(
            1,
            vec![Matroid::uniform(2, 1).unwrap()],
            &[
                element(&[0], 1, &[(1.0, 2.0, &[0])]),
                element(&[0], 1, &[(1.0, 1.0, &[0])]),
            ],
        )
        .unwrap();
        let (x, v) = solve_setpacking_lp(&inst).unwrap();
        assert!((v - 2.0).abs() < 1e-9);
        assert!((x[0] - 1.0).abs() < 1e-9 && x[1].abs() < 1e-9);
        assert!((best_adaptive_value(&inst).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn never_materializing_items_are_free() {
        let inst = PackingInstance::new(
            1,
            vec![Matroid::uniform(3, 1).unwrap()],
            &[
                element(&[0], 1, &[(1.0, 2.0, &[])]),
                element(&[0], 1, &[(1.0, 1.0, &[])]),
                element(&[0], 1, &[(1.0, 4.0, &[])]),
            ],
        )
        .unwrap();
        let (x, v) = solve_setpacking_lp(&inst).unwrap();
        assert!(x.iter().all(|&e| (e - 1.0).abs() < 1e-9));
        assert!((v - 7.0).abs() < 1e-9);
    }

    #[test]
    fn rank_one_row_blocks_after_first_materialization() {
        let inst = PackingInstance::new(
            1,
            vec![Matroid::uniform(3, 1).unwrap()],
            &[
                element(&[0], 1, &[(1.0, 1.0, &[0])]),
                element(&[0], 1, &[(1.0, 1.0, &[0])]),
                element(&[0], 1, &[(1.0, 1.0, &[0])]),
            ],
        )
        .unwrap();
        let plan = PackingPlan::new(&inst, vec![1.0 / 3.0; 3]).unwrap();
        for t in 0..2000 {
            let r = run_kset_packing(&plan, &mut trial_rng(1, t)).unwrap();
            assert!(r.taken.len() <= 1);
        }
    }

    #[test]
    fn lp_dominates_adaptive_optimum() {
        let mut rng = rng_from_seed(4);
        for _ in 0..20 {
            let rows = 3;
            let elements: Vec<_> = (0..4)
                .map(|_| {
                    let a = rng.gen_range(0..rows);
                    let b = (a + 1 + rng.gen_range(0..rows - 1)) % rows;
                    let p: f64 = rng.gen_range(0.2..0.9);
                    let v1: f64 = rng.gen_range(0.5..3.0);
                    let v2: f64 = rng.gen_range(0.0..2.0);
                    element(
                        &[a, b],
                        rows,
                        &[(p, v1, &[a, b][..]), (1.0 - p, v2, &[a][..])],
                    )
                })
                .collect();
            let inst = PackingInstance::new(
                rows,
                (0..rows).map(|_| Matroid::uniform(4, 1).unwrap()).collect(),
                &elements,
            )
            .unwrap();
            let (_, lp) = solve_setpacking_lp(&inst).unwrap();
            let opt = best_adaptive_value(&inst).unwrap();
            assert!(lp >= opt - 1e-7, "{lp} < {opt}");
        }
    }

    #[test]
    fn sure_activation_without_inner_matches_the_scheme() {
        use crate::constraint::Constraint;
        use crate::crs::{run_crs, CrsInstance};
        let m = Matroid::uniform(4, 2).unwrap();
        let x = vec![0.5, 0.5, 0.5, 0.5];
        let f = SubmodularOracle::modular(vec![1.0; 4]).unwrap();
        let inst = ProbingInstance::new(vec![1.0; 4], vec![], vec![m.clone()], f).unwrap();
        let plan = ProbingPlan::new(&inst, x.clone()).unwrap();
        let crs = CrsInstance::new(vec![Constraint::Matroid(m)], x).unwrap();
        for t in 0..300 {
            let a = run_probing(&plan, &mut trial_rng(8, t), false, false).unwrap();
            let b = run_crs(&crs, &mut trial_rng(8, t), false).unwrap();
            assert_eq!(a.probed, b.selected);
            assert_eq!(a.taken, a.probed);
        }
    }

    #[test]
    fn outer_update_precedes_every_probe() {
        let f = SubmodularOracle::modular(vec![1.0; 5]).unwrap();
        let inst = ProbingInstance::new(
            vec![0.5; 5],
            vec![Matroid::uniform(5, 1).unwrap()],
            vec![Matroid::uniform(5, 2).unwrap()],
            f,
        )
        .unwrap();
        let plan = ProbingPlan::new(&inst, vec![0.4; 5]).unwrap();
        let mut failed_probe_with_update = false;
        for t in 0..500 {
            let r = run_probing(&plan, &mut trial_rng(2, t), false, true).unwrap();
            for (i, ev) in r.events.iter().enumerate() {
                if let ProbeEventKind::Probe { success } = ev.kind {
                    assert_eq!(r.events[i - 1].kind, ProbeEventKind::OuterUpdate);
                    assert_eq!(r.events[i - 1].element, ev.element);
                    failed_probe_with_update |= !success;
                }
            }
            assert!(r.taken.is_subset(r.probed));
        }
        assert!(failed_probe_with_update);
    }

    #[test]
    fn zero_oracle_gives_zero() {
        let inst = ProbingInstance::new(
            vec![0.5; 3],
            vec![],
            vec![],
            SubmodularOracle::zero(3).unwrap(),
        )
        .unwrap();
        let plan = ProbingPlan::new(&inst, vec![1.0; 3]).unwrap();
        let r = estimate_probing(&plan, 100, 1, true).unwrap();
        assert_eq!(r.objective.mean, 0.0);
    }

    #[test]
    fn lone_free_element_greedy_approaches_one() {
        let f = SubmodularOracle::modular(vec![1.0]).unwrap();
        let inst = ProbingInstance::new(vec![1.0], vec![], vec![], f).unwrap();
        let sol = solve_probing_mp(&inst, &GreedyConfig::default(), &mut rng_from_seed(0)).unwrap();
        let expect = 1.0 - 0.99f64.powi(100);
        assert!((sol.x[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn unknown_rows_rejected() {
        let bad = element(&[0], 2, &[(1.0, 1.0, &[1])]);
        assert!(PackingInstance::new(
            2,
            vec![
                Matroid::uniform(1, 1).unwrap(),
                Matroid::uniform(1, 1).unwrap()
            ],
            &[bad]
        )
        .is_err());
    }
}
