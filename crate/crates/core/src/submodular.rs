//! Set-function oracles, the multilinear extension, the measured continuous
//! greedy algorithm and the marginal-gain filter on top of the CR scheme.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crs::{run_crs, CrsInstance, CrsRunResult};
use crate::error::{Error, Result};
use crate::relaxations::Polytope;
use crate::seed::trial_rng;
use crate::set::{ElementSet, MAX_ELEMENTS};
use crate::stats::{MeanAccumulator, MeanEstimate};

/// Strict-improvement threshold of the marginal-gain filter.
pub const TAU_F: f64 = 1e-12;
/// Largest ground set on which the multilinear extension is summed exactly.
pub const EXACT_F_MAX_N: usize = 20;
/// Largest ground set for the exhaustive submodularity check.
pub const SUBMODULARITY_CHECK_MAX_N: usize = 10;
pub const DEFAULT_MC_SAMPLES: usize = 4000;

/// JSON form of an oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OracleSpec {
    /// `f(S) = sum_{e in S} w_e`.
    Modular { weights: Vec<f64> },
    /// `f(S)` = weight of the universe points covered by the sets of `S`.
    Coverage {
        universe_weights: Vec<f64>,
        covers: Vec<Vec<usize>>,
    },
    /// Weight of the edges leaving the vertex set `S`; nonmonotone.
    Cut {
        vertices: usize,
        edges: Vec<(usize, usize, f64)>,
    },
    /// `values[A]` for every bitmask `A`.
    Explicit { values: Vec<f64> },
}

#[derive(Debug, Clone)]
enum Repr {
    Modular(Vec<f64>),
    Coverage {
        weights: Vec<f64>,
        covers: Vec<Vec<u64>>,
    },
    Cut(Vec<(usize, usize, f64)>),
    Explicit(Vec<f64>),
}

/// Validated nonnegative set function.
#[derive(Debug, Clone)]
pub struct SubmodularOracle {
    n: usize,
    repr: Repr,
    spec: OracleSpec,
}

fn nonneg(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        Some(i) => Err(Error::Oracle(format!(
            "{what} {i} is {} (must be finite and >= 0)",
            values[i]
        ))),
        None => Ok(()),
    }
}

impl SubmodularOracle {
    pub fn from_spec(spec: &OracleSpec) -> Result<Self> {
        let (n, repr) = match spec {
            OracleSpec::Modular { weights } => {
                nonneg(weights, "weight")?;
                (weights.len(), Repr::Modular(weights.clone()))
            }
            OracleSpec::Coverage {
                universe_weights,
                covers,
            } => {
                nonneg(universe_weights, "universe weight")?;
                let words = universe_weights.len().div_ceil(64);
                let mut masks = Vec::with_capacity(covers.len());
                for (e, cover) in covers.iter().enumerate() {
                    let mut m = vec![0u64; words];
                    for &u in cover {
                        if u >= universe_weights.len() {
                            return Err(Error::input(format!(
                                "cover of element {e} names universe point {u} out of range"
                            )));
                        }
                        m[u / 64] |= 1 << (u % 64);
                    }
                    masks.push(m);
                }
                (
                    covers.len(),
                    Repr::Coverage {
                        weights: universe_weights.clone(),
                        covers: masks,
                    },
                )
            }
            OracleSpec::Cut { vertices, edges } => {
                for &(u, v, w) in edges {
                    if u >= *vertices || v >= *vertices {
                        return Err(Error::input(format!("cut edge ({u}, {v}) out of range")));
                    }
                    nonneg(&[w], "edge weight")?;
                }
                (*vertices, Repr::Cut(edges.clone()))
            }
            OracleSpec::Explicit { values } => {
                if !values.len().is_power_of_two() {
                    return Err(Error::input(
                        "explicit value table size must be a power of two",
                    ));
                }
                nonneg(values, "value of set")?;
                (
                    values.len().trailing_zeros() as usize,
                    Repr::Explicit(values.clone()),
                )
            }
        };
        if n > MAX_ELEMENTS {
            return Err(Error::Capacity {
                what: "oracle ground set",
                got: n,
                cap: MAX_ELEMENTS,
            });
        }
        Ok(SubmodularOracle {
            n,
            repr,
            spec: spec.clone(),
        })
    }

    pub fn modular(weights: Vec<f64>) -> Result<Self> {
        Self::from_spec(&OracleSpec::Modular { weights })
    }

    pub fn coverage(universe_weights: Vec<f64>, covers: Vec<Vec<usize>>) -> Result<Self> {
        Self::from_spec(&OracleSpec::Coverage {
            universe_weights,
            covers,
        })
    }

    pub fn cut(vertices: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        Self::from_spec(&OracleSpec::Cut { vertices, edges })
    }

    pub fn explicit(values: Vec<f64>) -> Result<Self> {
        Self::from_spec(&OracleSpec::Explicit { values })
    }

    /// `f ≡ 0` on `n` elements.
    pub fn zero(n: usize) -> Result<Self> {
        Self::modular(vec![0.0; n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spec(&self) -> &OracleSpec {
        &self.spec
    }

    pub fn value(&self, s: ElementSet) -> f64 {
        match &self.repr {
            Repr::Modular(w) => s.iter().map(|e| w[e]).sum(),
            Repr::Coverage { weights, covers } => {
                let mut union = vec![0u64; weights.len().div_ceil(64)];
                for e in s.iter() {
                    for (u, c) in union.iter_mut().zip(&covers[e]) {
                        *u |= c;
                    }
                }
                let mut total = 0.0;
                for (wi, word) in union.iter().enumerate() {
                    let mut bits = *word;
                    while bits != 0 {
                        let b = bits.trailing_zeros() as usize;
                        total += weights[wi * 64 + b];
                        bits &= bits - 1;
                    }
                }
                total
            }
            Repr::Cut(edges) => edges
                .iter()
                .filter(|&&(u, v, _)| s.contains(u) != s.contains(v))
                .map(|e| e.2)
                .sum(),
            Repr::Explicit(values) => values[s.bits() as usize],
        }
    }

    /// `f(A)` for every bitmask `A`.
    pub fn value_table(&self) -> Result<Vec<f64>> {
        if self.n > EXACT_F_MAX_N {
            return Err(Error::Capacity {
                what: "ground set for a full value table",
                got: self.n,
                cap: EXACT_F_MAX_N,
            });
        }
        Ok((0..1u64 << self.n)
            .map(|a| self.value(ElementSet::from_bits(a)))
            .collect())
    }

    /// Checks `f(S ∪ T) + f(S ∩ T) <= f(S) + f(T)` over all pairs.
    pub fn check_submodular(&self, tol: f64) -> Result<()> {
        if self.n > SUBMODULARITY_CHECK_MAX_N {
            return Err(Error::Capacity {
                what: "ground set for the submodularity check",
                got: self.n,
                cap: SUBMODULARITY_CHECK_MAX_N,
            });
        }
        let t = self.value_table()?;
        let size = t.len();
        for s in 0..size {
            for u in s + 1..size {
                if t[s | u] + t[s & u] > t[s] + t[u] + tol {
                    return Err(Error::Oracle(format!(
                        "submodularity fails for {:?} and {:?}",
                        ElementSet::from_bits(s as u64),
                        ElementSet::from_bits(u as u64)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Exact multilinear extension backed by a full value table.
#[derive(Debug, Clone)]
pub struct Multilinear {
    n: usize,
    table: Vec<f64>,
}

impl Multilinear {
    pub fn new(f: &SubmodularOracle) -> Result<Self> {
        Ok(Multilinear {
            n: f.n(),
            table: f.value_table()?,
        })
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// `Pr[R(y) = A]` for every bitmask `A`.
    fn distribution(&self, y: &[f64]) -> Vec<f64> {
        let mut p = Vec::with_capacity(1 << self.n);
        p.push(1.0);
        for &yj in y {
            let len = p.len();
            p.extend_from_within(..);
            for a in 0..len {
                p[a + len] = p[a] * yj;
                p[a] *= 1.0 - yj;
            }
        }
        p
    }

    pub fn value(&self, y: &[f64]) -> Result<f64> {
        self.check(y)?;
        let p = self.distribution(y);
        Ok(p.iter().zip(&self.table).map(|(a, b)| a * b).sum())
    }

    /// `F(y ∨ 1_e) - F(y)` for every element, with `F(y)`.
    pub fn gains(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(y)?;
        let p = self.distribution(y);
        let base: f64 = p.iter().zip(&self.table).map(|(a, b)| a * b).sum();
        let gains = (0..self.n)
            .map(|e| {
                let bit = 1usize << e;
                let with: f64 = p
                    .iter()
                    .enumerate()
                    .map(|(a, pa)| pa * self.table[a | bit])
                    .sum();
                with - base
            })
            .collect();
        Ok((gains, base))
    }

    fn check(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.n {
            return Err(Error::input(format!(
                "vector has {} entries, oracle has {}",
                y.len(),
                self.n
            )));
        }
        if let Some(i) = y.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::input(format!("y[{i}] = {} outside [0, 1]", y[i])));
        }
        Ok(())
    }
}

/// `F(y)` summed over all subsets.
pub fn multilinear_exact(f: &SubmodularOracle, y: &[f64]) -> Result<f64> {
    Multilinear::new(f)?.value(y)
}

/// Monte-Carlo `F(y)` from `samples` draws of `R(y)`.
pub fn multilinear_mc<R: Rng + ?Sized>(
    f: &SubmodularOracle,
    y: &[f64],
    samples: usize,
    rng: &mut R,
) -> Result<MeanEstimate> {
    if samples == 0 {
        return Err(Error::input("at least one sample is required"));
    }
    if y.len() != f.n() {
        return Err(Error::input("vector length differs from the oracle"));
    }
    let mut acc = MeanAccumulator::default();
    for _ in 0..samples {
        acc.push(f.value(crate::crs::sample_active_set(y, rng)));
    }
    Ok(acc.estimate().expect("nonempty"))
}

/// Monte-Carlo gains `F(y ∨ 1_e) - F(y)` sharing one set of samples.
pub fn gains_mc<R: Rng + ?Sized>(
    f: &SubmodularOracle,
    y: &[f64],
    samples: usize,
    rng: &mut R,
) -> Result<(Vec<MeanEstimate>, MeanEstimate)> {
    if samples == 0 {
        return Err(Error::input("at least one sample is required"));
    }
    let n = f.n();
    let mut accs = vec![MeanAccumulator::default(); n];
    let mut base = MeanAccumulator::default();
    for _ in 0..samples {
        let r = crate::crs::sample_active_set(y, rng);
        let fr = f.value(r);
        base.push(fr);
        for (e, acc) in accs.iter_mut().enumerate() {
            acc.push(f.value(r.with(e)) - fr);
        }
    }
    Ok((
        accs.iter()
            .map(|a| a.estimate().expect("nonempty"))
            .collect(),
        base.estimate().expect("nonempty"),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyConfig {
    /// Stopping time `T = b`.
    pub t_end: f64,
    pub steps: usize,
    /// Samples per step when the ground set is too large for exact sums.
    pub mc_samples: usize,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        GreedyConfig {
            t_end: 1.0,
            steps: 100,
            mc_samples: DEFAULT_MC_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GreedyTrajectory {
    pub delta: f64,
    /// Whether gains were exact (ground set within [`EXACT_F_MAX_N`]).
    pub exact: bool,
    pub times: Vec<f64>,
    /// `y(t)` at every grid point, `steps + 1` entries.
    pub y: Vec<Vec<f64>>,
    /// `I(t)` chosen at every step.
    pub directions: Vec<Vec<f64>>,
    /// `F(y(t))` (estimated under Monte-Carlo).
    pub values: Vec<f64>,
}

impl GreedyTrajectory {
    pub fn final_point(&self) -> &[f64] {
        self.y.last().expect("trajectory has a start point")
    }

    pub fn final_value(&self) -> f64 {
        *self.values.last().expect("trajectory has a start point")
    }

    /// Box, update identity and the envelope `y_e(kδ) <= 1 - (1-δ)^k`.
    pub fn check(&self) -> Result<()> {
        for (k, y) in self.y.iter().enumerate() {
            let envelope = 1.0 - (1.0 - self.delta).powi(k as i32);
            for (e, &v) in y.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Invariant(format!(
                        "y_{e}({k}δ) = {v} outside [0, 1]"
                    )));
                }
                if v > envelope + 1e-12 {
                    return Err(Error::Invariant(format!(
                        "y_{e}({k}δ) = {v} exceeds the envelope {envelope}"
                    )));
                }
            }
            if k > 0 {
                let prev = &self.y[k - 1];
                let dir = &self.directions[k - 1];
                for e in 0..y.len() {
                    let expected = prev[e] + self.delta * dir[e] * (1.0 - prev[e]);
                    if expected.to_bits() != y[e].to_bits() {
                        return Err(Error::Invariant(format!(
                            "update identity fails at step {k}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Measured continuous greedy over a downward-closed polytope: at every
/// step choose `I(t)` maximizing `sum_e I_e (F(y ∨ 1_e) - F(y))` and move
/// `y_e += δ I_e (1 - y_e)`. Returns a point of `T·P`.
pub fn measured_continuous_greedy<R: Rng + ?Sized>(
    f: &SubmodularOracle,
    polytope: &Polytope,
    cfg: &GreedyConfig,
    rng: &mut R,
) -> Result<GreedyTrajectory> {
    if !(cfg.t_end > 0.0 && cfg.t_end <= 1.0) {
        return Err(Error::input(format!("T = {} outside (0, 1]", cfg.t_end)));
    }
    if cfg.steps == 0 {
        return Err(Error::input("at least one greedy step is required"));
    }
    let n = f.n();
    if polytope.n() != n {
        return Err(Error::input("polytope and oracle ground sets differ"));
    }
    let exact = if n <= EXACT_F_MAX_N {
        Some(Multilinear::new(f)?)
    } else {
        None
    };
    let delta = cfg.t_end / cfg.steps as f64;
    let mut y = vec![0.0; n];
    let mut traj = GreedyTrajectory {
        delta,
        exact: exact.is_some(),
        times: Vec::with_capacity(cfg.steps + 1),
        y: Vec::with_capacity(cfg.steps + 1),
        directions: Vec::with_capacity(cfg.steps),
        values: Vec::with_capacity(cfg.steps + 1),
    };
    for k in 0..=cfg.steps {
        let (gains, value) = match &exact {
            Some(ml) => ml.gains(&y)?,
            None => {
                let (g, b) = gains_mc(f, &y, cfg.mc_samples, rng)?;
                (g.iter().map(|e| e.mean).collect(), b.mean)
            }
        };
        traj.times.push(k as f64 * delta);
        traj.y.push(y.clone());
        traj.values.push(value);
        if k == cfg.steps {
            break;
        }
        let dir: Vec<f64> = polytope
            .maximize_linear(&gains)?
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        for e in 0..n {
            y[e] += delta * dir[e] * (1.0 - y[e]);
        }
        traj.directions.push(dir);
    }
    Ok(traj)
}

/// `max f(S)` over sets independent in every constraint, by enumeration.
pub fn brute_force_max(
    f: &SubmodularOracle,
    feasible: impl Fn(ElementSet) -> bool,
) -> Result<(ElementSet, f64)> {
    crate::check_desk_cap("ground set for exhaustive maximization", f.n())?;
    let mut best = (ElementSet::empty(), f.value(ElementSet::empty()));
    for s in ElementSet::full(f.n()).subsets() {
        if feasible(s) {
            let v = f.value(s);
            if v > best.1 {
                best = (s, v);
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone)]
pub struct SubmodularRun {
    /// Filtered solution.
    pub chosen: ElementSet,
    /// The underlying scheme run; its `selected` set drove the controllers.
    pub run: CrsRunResult,
}

/// CR scheme with the marginal-gain filter: a scheme-accepted element joins
/// `X` only if it raises `f(X)` by more than [`TAU_F`]. The controllers are
/// updated on every scheme acceptance, so the filter does not change the
/// scheme's run and is applied to its accepted elements in scan order.
pub fn run_crs_submodular<R: Rng + ?Sized>(
    inst: &CrsInstance,
    f: &SubmodularOracle,
    rng: &mut R,
    record_trace: bool,
) -> Result<SubmodularRun> {
    if f.n() != inst.n() {
        return Err(Error::input("oracle and instance ground sets differ"));
    }
    let run = run_crs(inst, rng, record_trace)?;
    let mut chosen = ElementSet::empty();
    let mut current = f.value(chosen);
    for &e in &run.permutation {
        if run.selected.contains(e) {
            let v = f.value(chosen.with(e));
            if v > current + TAU_F {
                chosen.insert(e);
                current = v;
            }
        }
    }
    Ok(SubmodularRun { chosen, run })
}

/// Monte-Carlo `E[f(X)]` of the filtered scheme.
pub fn estimate_submodular_crs(
    inst: &CrsInstance,
    f: &SubmodularOracle,
    trials: u64,
    seed: u64,
) -> Result<MeanEstimate> {
    if trials == 0 {
        return Err(Error::input("at least one trial is required"));
    }
    let values = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, i);
            run_crs_submodular(inst, f, &mut rng, false).map(|r| f.value(r.chosen))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MeanAccumulator::from_values(&values)
        .estimate()
        .expect("trials >= 1"))
}
