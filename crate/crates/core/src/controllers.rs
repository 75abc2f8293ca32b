//! Controller mechanisms: the per-constraint state that decides whether an
//! element is still acceptable, and how accepting one blocks others.

use rand::Rng;

use crate::error::{Error, Result};
use crate::knapsack::{IntervalSet, KnapsackConstraint, FEASIBILITY_TOL};
use crate::matroids::{ExchangeMapping, Matroid, SupportDecomposition, TAU_DEC};
use crate::set::ElementSet;

/// Matroid controller: a family of independent sets `B_j`, one per support
/// entry, and a controller index `j(e)` for every element with `x_e > 0`.
#[derive(Debug, Clone)]
pub struct MatroidControllerState<'a> {
    matroid: &'a Matroid,
    betas: Vec<f64>,
    family: Vec<ElementSet>,
    assignment: Vec<Option<usize>>,
    blocked: ElementSet,
    accepted: ElementSet,
}

/// `(j, Pr[j(e) = j])` over the support sets containing `e`.
pub fn assignment_options(dec: &SupportDecomposition, e: usize) -> Vec<(usize, f64)> {
    let total: f64 = dec
        .entries
        .iter()
        .filter(|(_, s)| s.contains(e))
        .map(|(b, _)| b)
        .sum();
    dec.entries
        .iter()
        .enumerate()
        .filter(|(_, (_, s))| s.contains(e))
        .map(|(j, &(b, _))| (j, b / total))
        .collect()
}

impl<'a> MatroidControllerState<'a> {
    /// Decomposes `x` and draws every controller.
    pub fn init<R: Rng + ?Sized>(matroid: &'a Matroid, x: &[f64], rng: &mut R) -> Result<Self> {
        let dec = matroid.decompose_support(x, TAU_DEC)?;
        Ok(Self::from_decomposition(matroid, &dec, rng))
    }

    /// Draws controllers for a precomputed decomposition.
    pub fn from_decomposition<R: Rng + ?Sized>(
        matroid: &'a Matroid,
        dec: &SupportDecomposition,
        rng: &mut R,
    ) -> Self {
        let n = matroid.n();
        let mut assignment = vec![None; n];
        for (e, slot) in assignment.iter_mut().enumerate() {
            let opts = assignment_options(dec, e);
            *slot = match opts.len() {
                0 => None,
                1 => Some(opts[0].0),
                _ => {
                    let mut u: f64 = rng.gen();
                    let mut pick = opts[opts.len() - 1].0;
                    for &(j, p) in &opts {
                        if u < p {
                            pick = j;
                            break;
                        }
                        u -= p;
                    }
                    Some(pick)
                }
            };
        }
        Self::build(matroid, dec, assignment)
    }

    /// Fixed controller assignment, used by exhaustive enumeration.
    pub fn with_assignment(
        matroid: &'a Matroid,
        dec: &SupportDecomposition,
        assignment: Vec<Option<usize>>,
    ) -> Result<Self> {
        if assignment.len() != matroid.n() {
            return Err(Error::input(
                "assignment length differs from the ground set",
            ));
        }
        for (e, a) in assignment.iter().enumerate() {
            if let Some(j) = *a {
                if j >= dec.len() || !dec.entries[j].1.contains(e) {
                    return Err(Error::input(format!(
                        "element {e} assigned to support set {j} that does not contain it"
                    )));
                }
            }
        }
        Ok(Self::build(matroid, dec, assignment))
    }

    fn build(
        matroid: &'a Matroid,
        dec: &SupportDecomposition,
        assignment: Vec<Option<usize>>,
    ) -> Self {
        let blocked = assignment
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_none())
            .map(|(e, _)| e)
            .collect();
        MatroidControllerState {
            matroid,
            betas: dec.entries.iter().map(|(b, _)| *b).collect(),
            family: dec.entries.iter().map(|(_, s)| *s).collect(),
            assignment,
            blocked,
            accepted: ElementSet::empty(),
        }
    }

    pub fn family(&self) -> &[ElementSet] {
        &self.family
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn assignment(&self) -> &[Option<usize>] {
        &self.assignment
    }

    pub fn accepted(&self) -> ElementSet {
        self.accepted
    }

    pub fn blocked(&self) -> ElementSet {
        self.blocked
    }

    #[inline]
    pub fn is_blocked(&self, e: usize) -> bool {
        self.blocked.contains(e)
    }

    /// Controller set `C_e = B_{j(e)}` in its current state.
    pub fn controller_set(&self, e: usize) -> Option<ElementSet> {
        self.assignment[e].map(|j| self.family[j])
    }

    /// Exchange mappings between every ordered pair of current sets.
    pub fn mappings(&self) -> Result<Vec<Vec<ExchangeMapping>>> {
        self.family
            .iter()
            .map(|&a| {
                self.family
                    .iter()
                    .map(|&b| self.matroid.build_exchange_mapping(a, b))
                    .collect()
            })
            .collect()
    }

    /// Accepts `e`, inserting it into every set by the exchange mapping from
    /// its controller set. Returns the elements that became blocked.
    pub fn accept(&mut self, e: usize) -> Result<Vec<usize>> {
        if e >= self.assignment.len() || self.is_blocked(e) || self.accepted.contains(e) {
            return Err(Error::logic(format!("element {e} is not acceptable")));
        }
        let j = self.assignment[e].expect("unblocked elements have a controller");
        let ce = self.family[j];
        if !ce.contains(e) {
            return Err(Error::logic(format!(
                "element {e} missing from its controller set"
            )));
        }
        let mut newly = Vec::new();
        for i in 0..self.family.len() {
            let bi = self.family[i];
            if bi.contains(e) {
                continue;
            }
            match self.matroid.exchange_image(ce, bi, e)? {
                None => self.family[i] = bi.with(e),
                Some(f) => {
                    if self.accepted.contains(f) {
                        return Err(Error::Invariant(format!(
                            "exchange would evict accepted element {f}"
                        )));
                    }
                    self.family[i] = bi.without(f).with(e);
                    if self.assignment[f] == Some(i) && !self.blocked.contains(f) {
                        self.blocked.insert(f);
                        newly.push(f);
                    }
                }
            }
        }
        self.accepted.insert(e);
        #[cfg(debug_assertions)]
        self.check_invariants()?;
        Ok(newly)
    }

    /// Every set independent and containing the accepted elements.
    pub fn check_invariants(&self) -> Result<()> {
        for (j, &b) in self.family.iter().enumerate() {
            if !self.matroid.independent(b) {
                return Err(Error::Invariant(format!(
                    "controller set {j} became dependent"
                )));
            }
            if !self.accepted.is_subset(b) {
                return Err(Error::Invariant(format!(
                    "controller set {j} lost an accepted element"
                )));
            }
        }
        Ok(())
    }
}

/// Bounded-knapsack controller: one uniform point per element on `[0, 1]`;
/// an element is blocked once its point leaves the available set.
#[derive(Debug, Clone)]
pub struct KnapsackControllerState<'a> {
    knapsack: &'a KnapsackConstraint,
    available: IntervalSet,
    points: Vec<f64>,
    blocked: ElementSet,
    accepted: ElementSet,
}

impl<'a> KnapsackControllerState<'a> {
    pub fn init<R: Rng + ?Sized>(
        knapsack: &'a KnapsackConstraint,
        x: &[f64],
        rng: &mut R,
    ) -> Result<Self> {
        if !knapsack.is_bounded() {
            return Err(Error::domain(
                "knapsack has an item larger than 1/2; apply the big/small reduction first",
            ));
        }
        if x.len() != knapsack.n() {
            return Err(Error::input("vector length differs from the knapsack size"));
        }
        if !knapsack.in_knapsack_polytope(x, FEASIBILITY_TOL) {
            return Err(Error::domain("vector violates the knapsack constraint"));
        }
        let points = (0..knapsack.n()).map(|_| rng.gen::<f64>()).collect();
        Ok(KnapsackControllerState {
            knapsack,
            available: IntervalSet::unit(),
            points,
            blocked: ElementSet::empty(),
            accepted: ElementSet::empty(),
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn available(&self) -> &IntervalSet {
        &self.available
    }

    pub fn accepted(&self) -> ElementSet {
        self.accepted
    }

    #[inline]
    pub fn is_blocked(&self, e: usize) -> bool {
        self.blocked.contains(e)
    }

    /// Blocks `2 s_e` mass of the available points at a random offset.
    pub fn accept<R: Rng + ?Sized>(&mut self, e: usize, rng: &mut R) -> Result<Vec<usize>> {
        if e >= self.points.len() || self.is_blocked(e) || self.accepted.contains(e) {
            return Err(Error::logic(format!("element {e} is not acceptable")));
        }
        let (kept, _) = self
            .available
            .block_random_mass(2.0 * self.knapsack.size(e), rng);
        self.available = kept;
        self.accepted.insert(e);
        let mut newly = Vec::new();
        for f in 0..self.points.len() {
            if f != e
                && !self.blocked.contains(f)
                && !self.accepted.contains(f)
                && !self.available.contains(self.points[f])
            {
                self.blocked.insert(f);
                newly.push(f);
            }
        }
        debug_assert!(self.knapsack.load(self.accepted) <= 1.0 + FEASIBILITY_TOL);
        Ok(newly)
    }
}

#[derive(Debug, Clone)]
pub enum Controller<'a> {
    Matroid(MatroidControllerState<'a>),
    Knapsack(KnapsackControllerState<'a>),
}

impl Controller<'_> {
    /// Matroids are 1-bounded, bounded knapsacks 2-bounded.
    pub fn lambda(&self) -> f64 {
        match self {
            Controller::Matroid(_) => 1.0,
            Controller::Knapsack(_) => 2.0,
        }
    }

    #[inline]
    pub fn is_blocked(&self, e: usize) -> bool {
        match self {
            Controller::Matroid(c) => c.is_blocked(e),
            Controller::Knapsack(c) => c.is_blocked(e),
        }
    }

    pub fn accept<R: Rng + ?Sized>(&mut self, e: usize, rng: &mut R) -> Result<Vec<usize>> {
        match self {
            Controller::Matroid(c) => c.accept(e),
            Controller::Knapsack(c) => c.accept(e, rng),
        }
    }

    /// Elements without a controller, blocked before the first step.
    pub fn initially_blocked(&self) -> ElementSet {
        match self {
            Controller::Matroid(c) => c.blocked(),
            Controller::Knapsack(_) => ElementSet::empty(),
        }
    }
}

/// Intersection of constraints: blocked iff blocked in some constituent.
#[derive(Debug, Clone, Default)]
pub struct JointController<'a> {
    pub parts: Vec<Controller<'a>>,
}

impl<'a> JointController<'a> {
    pub fn new(parts: Vec<Controller<'a>>) -> Self {
        JointController { parts }
    }

    pub fn lambda(&self) -> f64 {
        self.parts.iter().map(Controller::lambda).sum()
    }

    #[inline]
    pub fn is_blocked(&self, e: usize) -> bool {
        self.parts.iter().any(|c| c.is_blocked(e))
    }

    /// Accepts `e` everywhere; returns the newly blocked elements per part.
    pub fn accept<R: Rng + ?Sized>(&mut self, e: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
        if self.is_blocked(e) {
            return Err(Error::logic(format!("element {e} is blocked")));
        }
        self.parts.iter_mut().map(|c| c.accept(e, rng)).collect()
    }
}

/// How an element's trace stops being live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    /// Accepted: `S = 1`.
    Taken,
    /// Blocked by a controller: `Z = 1`.
    Blocked,
    /// Disclosed while inactive: `Z = 1`.
    Passed,
}

/// Events of one scan step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepEvents {
    pub taken: Option<usize>,
    pub passed: Option<usize>,
    pub blocked: Vec<usize>,
}

/// Characteristic sequences `(S, Z, Y)` of every element over steps
/// `0..=steps`, stored as the fate and the first step at which it holds.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicTrace {
    steps: usize,
    fates: Vec<Option<(Fate, usize)>>,
}

impl CharacteristicTrace {
    pub fn new(n: usize, steps: usize) -> Self {
        CharacteristicTrace {
            steps,
            fates: vec![None; n],
        }
    }

    pub fn n(&self) -> usize {
        self.fates.len()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `Z_e^0 = 1`.
    pub fn mark_initially_blocked(&mut self, e: usize) -> Result<()> {
        self.set(e, Fate::Blocked, 0)
    }

    fn set(&mut self, e: usize, fate: Fate, at: usize) -> Result<()> {
        match self.fates.get_mut(e) {
            None => Err(Error::logic(format!("element {e} outside the trace"))),
            Some(Some(_)) => Err(Error::logic(format!("element {e} already has a fate"))),
            Some(slot) => {
                *slot = Some((fate, at));
                Ok(())
            }
        }
    }

    /// Applies the events of step `t`; they take effect at `t + 1`.
    pub fn record_step(&mut self, t: usize, events: &StepEvents) -> Result<()> {
        if t >= self.steps {
            return Err(Error::logic(format!("step {t} beyond the trace length")));
        }
        if let Some(e) = events.taken {
            self.set(e, Fate::Taken, t + 1)?;
        }
        if let Some(e) = events.passed {
            self.set(e, Fate::Passed, t + 1)?;
        }
        for &e in &events.blocked {
            self.set(e, Fate::Blocked, t + 1)?;
        }
        Ok(())
    }

    pub fn fate(&self, e: usize) -> Option<(Fate, usize)> {
        self.fates[e]
    }

    /// `(S, Z, Y)` of `e` at step `t`.
    pub fn value(&self, e: usize, t: usize) -> (u8, u8, u8) {
        match self.fates[e] {
            Some((Fate::Taken, at)) if t >= at => (1, 0, 0),
            Some((_, at)) if t >= at => (0, 1, 0),
            _ => (0, 0, 1),
        }
    }

    /// First step with `Y = 0`, if any.
    pub fn tau(&self, e: usize) -> Option<usize> {
        self.fates[e].map(|(_, at)| at)
    }

    /// Appends `trial,element,step,S,Z,Y` rows.
    pub fn write_csv_rows(&self, trial: u64, out: &mut String) {
        use std::fmt::Write;
        for e in 0..self.n() {
            for t in 0..=self.steps {
                let (s, z, y) = self.value(e, t);
                let _ = writeln!(out, "{trial},{e},{t},{s},{z},{y}");
            }
        }
    }
}

pub const TRACE_CSV_HEADER: &str = "trial,element,step,S,Z,Y";
