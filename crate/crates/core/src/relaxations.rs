//! Desk-scale linear programming: a dense two-phase simplex with Bland's
//! rule, polytopes described by enumerated rank rows, and the relaxations
//! used by the applications.

use std::fmt::Write as _;

use serde::Serialize;

use crate::constraint::Constraint;
use crate::error::{Error, Result};
use crate::knapsack::KnapsackConstraint;
use crate::matroids::Matroid;
use crate::mechanisms::AuctionInstance;
use crate::set::ElementSet;

/// Residual tolerance on optimal solutions.
pub const TAU_LP: f64 = 1e-7;
pub const MAX_LP_ROWS: usize = 5000;
pub const MAX_LP_COLS: usize = 5000;
pub const MAX_LP_CELLS: usize = 5_000_000;
/// Largest ground set for the brute-force concave closure.
pub const F_PLUS_MAX_N: usize = 12;
/// Largest ground set for the exact Probing-MP optimum.
pub const PROBING_MP_MAX_N: usize = 8;

const PIVOT_EPS: f64 = 1e-9;
const MAX_PIVOTS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `max c·x` subject to the rows, `0 <= x_j <= upper_j` (no upper bound
/// when `None`). Upper bounds default to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<LpRow>,
    pub upper: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub values: Vec<f64>,
    pub objective: f64,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        LinearProgram {
            objective,
            rows: Vec::new(),
            upper: vec![Some(1.0); n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        debug_assert_eq!(coeffs.len(), self.num_vars());
        self.rows.push(LpRow {
            coeffs,
            relation,
            rhs,
        });
    }

    pub fn set_upper(&mut self, j: usize, upper: Option<f64>) {
        self.upper[j] = upper;
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.upper.len() != n {
            return Err(Error::input("upper-bound vector has the wrong length"));
        }
        let finite = |v: f64| v.is_finite();
        if !self.objective.iter().copied().all(finite) {
            return Err(Error::input("objective has a non-finite coefficient"));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.coeffs.len() != n {
                return Err(Error::input(format!(
                    "row {i} has {} coefficients",
                    row.coeffs.len()
                )));
            }
            if !row.coeffs.iter().copied().all(finite) || !row.rhs.is_finite() {
                return Err(Error::input(format!("row {i} has a non-finite entry")));
            }
        }
        if let Some(j) = self
            .upper
            .iter()
            .position(|u| matches!(u, Some(v) if !v.is_finite() || *v < 0.0))
        {
            return Err(Error::input(format!(
                "variable {j} has an invalid upper bound"
            )));
        }
        Ok(())
    }

    /// Largest violation of any row or bound by `x`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for row in &self.rows {
            let lhs: f64 = row.coeffs.iter().zip(x).map(|(a, b)| a * b).sum();
            let v = match row.relation {
                Relation::Le => lhs - row.rhs,
                Relation::Ge => row.rhs - lhs,
                Relation::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(-v);
            if let Some(u) = self.upper[j] {
                worst = worst.max(v - u);
            }
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Plain-text dump for failure triage.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "max {:?}", self.objective);
        for row in &self.rows {
            let rel = match row.relation {
                Relation::Le => "<=",
                Relation::Eq => "=",
                Relation::Ge => ">=",
            };
            let _ = writeln!(out, "  {:?} {rel} {}", row.coeffs, row.rhs);
        }
        let _ = writeln!(out, "  upper {:?}", self.upper);
        out
    }
}

/// Dense two-phase simplex with Bland's anti-cycling rule. Deterministic.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let n = lp.num_vars();

    // All constraints, upper bounds included, normalized to rhs >= 0.
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::with_capacity(lp.rows.len() + n);
    for r in &lp.rows {
        rows.push((r.coeffs.clone(), r.relation, r.rhs));
    }
    for (j, u) in lp.upper.iter().enumerate() {
        if let Some(u) = *u {
            let mut c = vec![0.0; n];
            c[j] = 1.0;
            rows.push((c, Relation::Le, u));
        }
    }
    for row in rows.iter_mut() {
        if row.2 < 0.0 {
            row.0.iter_mut().for_each(|v| *v = -*v);
            row.2 = -row.2;
            row.1 = match row.1 {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }
    let m = rows.len();
    let slacks = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let artificials = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let cols = n + slacks + artificials;
    if m > MAX_LP_ROWS {
        return Err(Error::Capacity {
            what: "LP rows",
            got: m,
            cap: MAX_LP_ROWS,
        });
    }
    if n > MAX_LP_COLS {
        return Err(Error::Capacity {
            what: "LP columns",
            got: n,
            cap: MAX_LP_COLS,
        });
    }
    if (m + 1) * (cols + 1) > MAX_LP_CELLS {
        return Err(Error::Capacity {
            what: "LP tableau cells",
            got: (m + 1) * (cols + 1),
            cap: MAX_LP_CELLS,
        });
    }

    let width = cols + 1;
    let mut t = Tableau {
        a: vec![0.0; m * width],
        width,
        basis: vec![0; m],
    };
    let art_start = n + slacks;
    let (mut s, mut a) = (n, art_start);
    for (i, (coeffs, rel, rhs)) in rows.iter().enumerate() {
        t.a[i * width..i * width + n].copy_from_slice(coeffs);
        t.a[i * width + cols] = *rhs;
        match rel {
            Relation::Le => {
                t.a[i * width + s] = 1.0;
                t.basis[i] = s;
                s += 1;
            }
            Relation::Ge => {
                t.a[i * width + s] = -1.0;
                t.a[i * width + a] = 1.0;
                t.basis[i] = a;
                s += 1;
                a += 1;
            }
            Relation::Eq => {
                t.a[i * width + a] = 1.0;
                t.basis[i] = a;
                a += 1;
            }
        }
    }

    // Phase one: maximize minus the sum of artificials.
    if artificials > 0 {
        let mut cost = vec![0.0; cols];
        cost[art_start..].iter_mut().for_each(|c| *c = -1.0);
        if t.optimize(&cost, cols)? == Outcome::Unbounded {
            return Err(Error::Numerical {
                message: "phase one reported unbounded".into(),
                residual: f64::INFINITY,
            });
        }
        let infeas: f64 = (0..m)
            .filter(|&i| t.basis[i] >= art_start)
            .map(|i| t.rhs(i))
            .sum();
        if infeas > TAU_LP {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                values: vec![0.0; n],
                objective: 0.0,
            });
        }
        // Drive remaining artificials out of the basis where possible.
        for i in 0..m {
            if t.basis[i] >= art_start {
                if let Some(j) = (0..art_start).find(|&j| t.at(i, j).abs() > PIVOT_EPS) {
                    t.pivot(i, j);
                }
            }
        }
    }

    let mut cost = vec![0.0; cols];
    cost[..n].copy_from_slice(&lp.objective);
    if t.optimize(&cost, art_start)? == Outcome::Unbounded {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            values: vec![0.0; n],
            objective: f64::INFINITY,
        });
    }
    let mut values = vec![0.0; n];
    for i in 0..m {
        if t.basis[i] < n {
            values[t.basis[i]] = t.rhs(i);
        }
    }
    for (j, v) in values.iter_mut().enumerate() {
        if *v < 0.0 {
            *v = 0.0;
        }
        if let Some(u) = lp.upper[j] {
            *v = v.min(u);
        }
    }
    let residual = lp.residual(&values);
    if residual > TAU_LP {
        return Err(Error::Numerical {
            message: "simplex solution violates a constraint".into(),
            residual,
        });
    }
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective: lp.objective_value(&values),
        values,
    })
}

#[derive(Debug, PartialEq, Eq)]
enum Outcome {
    Optimal,
    Unbounded,
}

struct Tableau {
    a: Vec<f64>,
    width: usize,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.width + j]
    }

    #[inline]
    fn rhs(&self, i: usize) -> f64 {
        self.a[i * self.width + self.width - 1]
    }

    fn rows(&self) -> usize {
        self.basis.len()
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.at(r, c);
        for v in &mut self.a[r * w..(r + 1) * w] {
            *v /= p;
        }
        let pivot_row: Vec<f64> = self.a[r * w..(r + 1) * w].to_vec();
        for i in 0..self.rows() {
            if i == r {
                continue;
            }
            let f = self.at(i, c);
            if f != 0.0 {
                let row = &mut self.a[i * w..(i + 1) * w];
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Maximizes `cost` using only columns below `allowed` as entering
    /// candidates.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> Result<Outcome> {
        let m = self.rows();
        for _ in 0..MAX_PIVOTS {
            // Reduced costs c_j - c_B B^-1 A_j, lowest improving index first.
            let mut entering = None;
            for j in 0..allowed {
                if self.basis.contains(&j) {
                    continue;
                }
                let mut rc = cost[j];
                for i in 0..m {
                    let a = self.at(i, j);
                    if a != 0.0 {
                        rc -= cost[self.basis[i]] * a;
                    }
                }
                if rc > PIVOT_EPS {
                    entering = Some(j);
                    break;
                }
            }
            let Some(c) = entering else {
                return Ok(Outcome::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = self.at(i, c);
                if a > PIVOT_EPS {
                    let ratio = self.rhs(i).max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-12
                                || (ratio <= br + 1e-12 && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return Ok(Outcome::Unbounded),
                Some((r, _)) => self.pivot(r, c),
            }
        }
        Err(Error::Numerical {
            message: format!("simplex exceeded {MAX_PIVOTS} pivots"),
            residual: f64::NAN,
        })
    }
}

/// `{x : rows, 0 <= x <= upper}` with rows `a·x <= b`.
#[derive(Debug, Clone)]
pub struct Polytope {
    n: usize,
    rows: Vec<(Vec<f64>, f64)>,
    upper: Vec<f64>,
    single_matroid: Option<Matroid>,
    pure: bool,
}

impl Polytope {
    pub fn unit_box(n: usize) -> Self {
        Polytope {
            n,
            rows: Vec::new(),
            upper: vec![1.0; n],
            single_matroid: None,
            pure: true,
        }
    }

    /// Intersection of the constraints' polytopes with the unit box.
    pub fn from_constraints(n: usize, constraints: &[Constraint]) -> Result<Self> {
        let mut p = Self::unit_box(n);
        for c in constraints {
            match c {
                Constraint::Matroid(m) => p.add_matroid(m, None)?,
                Constraint::Knapsack(k) => p.add_knapsack(k, None)?,
            }
        }
        if let [Constraint::Matroid(m)] = constraints {
            p.single_matroid = Some(m.clone());
        }
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> &[(Vec<f64>, f64)] {
        &self.rows
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Adds `sum_{e in A} scale_e x_e <= r(A)` for every flat `A` with
    /// `r(A) < |A|`. Rows of non-flats are implied by their closure, and
    /// rows of independent sets by `scale_e x_e <= 1`, which callers
    /// guarantee through the box.
    pub fn add_matroid(&mut self, m: &Matroid, scale: Option<&[f64]>) -> Result<()> {
        if m.n() != self.n {
            return Err(Error::input("matroid ground set differs from the polytope"));
        }
        crate::check_desk_cap("matroid rank rows", self.n)?;
        if scale.is_some() {
            self.pure = false;
        }
        let ground = ElementSet::full(self.n);
        for a in ground.subsets() {
            let r = m.rank_of(a);
            if a.len() <= r {
                continue;
            }
            let closed = ground
                .difference(a)
                .iter()
                .all(|e| m.rank_of(a.with(e)) > r);
            if !closed {
                continue;
            }
            let mut coeffs = vec![0.0; self.n];
            for e in a.iter() {
                coeffs[e] = scale.map_or(1.0, |s| s[e]);
            }
            self.push_row(coeffs, r as f64)?;
        }
        self.single_matroid = None;
        Ok(())
    }

    pub fn add_knapsack(&mut self, k: &KnapsackConstraint, scale: Option<&[f64]>) -> Result<()> {
        if k.n() != self.n {
            return Err(Error::input(
                "knapsack ground set differs from the polytope",
            ));
        }
        if scale.is_some() {
            self.pure = false;
        }
        let coeffs = (0..self.n)
            .map(|e| k.size(e) * scale.map_or(1.0, |s| s[e]))
            .collect();
        self.single_matroid = None;
        self.push_row(coeffs, 1.0)
    }

    /// Tightens the box to `x_e <= upper_e`.
    pub fn cap_upper(&mut self, upper: &[f64]) {
        for (u, &v) in self.upper.iter_mut().zip(upper) {
            *u = u.min(v);
        }
        self.pure = false;
    }

    fn push_row(&mut self, coeffs: Vec<f64>, rhs: f64) -> Result<()> {
        if self.rows.len() >= MAX_LP_ROWS {
            return Err(Error::Capacity {
                what: "polytope rows",
                got: self.rows.len() + 1,
                cap: MAX_LP_ROWS,
            });
        }
        self.rows.push((coeffs, rhs));
        Ok(())
    }

    /// Scales `x` toward the origin just enough to satisfy every row and
    /// bound exactly; negative entries are clamped to zero.
    pub fn shrink_into(&self, x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut factor: f64 = 1.0;
        for (a, b) in &self.rows {
            let lhs: f64 = a.iter().zip(x.iter()).map(|(p, q)| p * q).sum();
            if lhs > *b {
                factor = factor.min(b / lhs);
            }
        }
        for (&v, &u) in x.iter().zip(&self.upper) {
            if v > u {
                factor = factor.min(u / v);
            }
        }
        if factor < 1.0 {
            x.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.n
            && x.iter()
                .zip(&self.upper)
                .all(|(&v, &u)| v >= -tol && v <= u + tol)
            && self
                .rows
                .iter()
                .all(|(a, b)| a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() <= b + tol)
    }

    /// A maximizer of `w·x` over the polytope. A single unscaled matroid
    /// is solved exactly by the greedy algorithm; everything else by LP.
    pub fn maximize_linear(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.n {
            return Err(Error::input("weight vector has the wrong length"));
        }
        if let Some(j) = w.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("weight {j} is not finite")));
        }
        if w.iter().all(|&v| v <= 0.0) {
            return Ok(vec![0.0; self.n]);
        }
        if let (Some(m), true) = (&self.single_matroid, self.pure) {
            let mut order: Vec<usize> = (0..self.n).filter(|&e| w[e] > 0.0).collect();
            order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
            let basis = m.greedy_in_order(order, ElementSet::empty());
            return Ok((0..self.n)
                .map(|e| basis.contains(e) as u8 as f64)
                .collect());
        }
        let mut lp = LinearProgram::new(w.iter().map(|&v| v.max(0.0)).collect());
        for (j, &u) in self.upper.iter().enumerate() {
            lp.set_upper(j, Some(u));
        }
        for (a, b) in &self.rows {
            lp.add_row(a.clone(), Relation::Le, *b);
        }
        let sol = solve_lp(&lp)?;
        match sol.status {
            LpStatus::Optimal => Ok(sol.values),
            status => Err(Error::Numerical {
                message: format!(
                    "linear maximization over a polytope containing 0 ended {status:?}"
                ),
                residual: f64::NAN,
            }),
        }
    }
}

/// Concave closure `f⁺(y)`: the best expected value of a distribution over
/// sets with marginals at most `y`, by an LP over all `2^n` sets.
/// `values[A]` is `f(A)` indexed by bitmask.
pub fn f_plus(values: &[f64], y: &[f64]) -> Result<f64> {
    let n = y.len();
    if n > F_PLUS_MAX_N {
        return Err(Error::Capacity {
            what: "ground set for the concave closure",
            got: n,
            cap: F_PLUS_MAX_N,
        });
    }
    if values.len() != 1 << n {
        return Err(Error::input("value table size must be 2^n"));
    }
    let cols = 1usize << n;
    let mut lp = LinearProgram::new(values.to_vec());
    lp.upper = vec![None; cols];
    lp.add_row(vec![1.0; cols], Relation::Le, 1.0);
    for (j, &yj) in y.iter().enumerate() {
        let coeffs = (0..cols).map(|a| (a >> j & 1) as f64).collect();
        lp.add_row(coeffs, Relation::Le, yj);
    }
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.objective),
        s => Err(Error::Numerical {
            message: format!("concave-closure LP ended {s:?}"),
            residual: f64::NAN,
        }),
    }
}

/// Exact optimum of `max f⁺(p·x)` over `x ∈ P(outer)`, `p·x ∈ P(inner)`,
/// `x ∈ [0,1]^n`, as one LP in the set weights and `x`.
pub fn probing_mp_optimum(
    values: &[f64],
    p: &[f64],
    inner: &[Matroid],
    outer: &[Matroid],
) -> Result<f64> {
    let n = p.len();
    if n > PROBING_MP_MAX_N {
        return Err(Error::Capacity {
            what: "ground set for the exact probing relaxation",
            got: n,
            cap: PROBING_MP_MAX_N,
        });
    }
    if values.len() != 1 << n {
        return Err(Error::input("value table size must be 2^n"));
    }
    let sets = 1usize << n;
    let cols = sets + n;
    let mut objective = values.to_vec();
    objective.extend(std::iter::repeat_n(0.0, n));
    let mut lp = LinearProgram::new(objective);
    for j in 0..sets {
        lp.set_upper(j, None);
    }
    let mut total = vec![0.0; cols];
    total[..sets].iter_mut().for_each(|v| *v = 1.0);
    lp.add_row(total, Relation::Le, 1.0);
    for j in 0..n {
        let mut coeffs: Vec<f64> = (0..cols)
            .map(|a| if a < sets { (a >> j & 1) as f64 } else { 0.0 })
            .collect();
        coeffs[sets + j] = -p[j];
        lp.add_row(coeffs, Relation::Le, 0.0);
    }
    let mut region = Polytope::unit_box(n);
    for m in outer {
        region.add_matroid(m, None)?;
    }
    for m in inner {
        region.add_matroid(m, Some(p))?;
    }
    for (a, b) in region.rows() {
        let mut coeffs = vec![0.0; sets];
        coeffs.extend_from_slice(a);
        lp.add_row(coeffs, Relation::Le, *b);
    }
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.objective),
        s => Err(Error::Numerical {
            message: format!("probing relaxation LP ended {s:?}"),
            residual: f64::NAN,
        }),
    }
}

/// The posted-price relaxation with its column map.
#[derive(Debug, Clone)]
pub struct BmumdLp {
    pub lp: LinearProgram,
    /// `(item, price)` of every column.
    pub columns: Vec<(usize, usize)>,
}

/// Optimal LP values laid out per item and price.
#[derive(Debug, Clone, Serialize)]
pub struct BmumdSolution {
    pub value: f64,
    /// `x[c][p]` for `p ∈ {0, ..., B}`.
    pub x: Vec<Vec<f64>>,
    /// `z_c = Σ_p x_{c,p} Pr[v_c ≥ p]`.
    pub z: Vec<f64>,
}

/// Columns `x_{c,p}` for prices `p ≥ 1` with `Pr[v_c ≥ p] > 0`; objective
/// `Σ p Pr[v_c ≥ p] x_{c,p}`; rows `Σ_p x_{c,p} ≤ 1` per item, expected
/// demand at most one per client, and every constraint polytope applied
/// to `z`.
pub fn build_bmumd_lp(inst: &AuctionInstance) -> Result<BmumdLp> {
    let m = inst.num_items();
    let b = inst.max_value();
    let mut columns = Vec::new();
    for c in 0..m {
        for p in 1..=b {
            if inst.tail(c, p) > 0.0 {
                columns.push((c, p));
            }
        }
    }
    if columns.len() > MAX_LP_COLS {
        return Err(Error::Capacity {
            what: "posted-price LP columns",
            got: columns.len(),
            cap: MAX_LP_COLS,
        });
    }
    let tails: Vec<f64> = columns.iter().map(|&(c, p)| inst.tail(c, p)).collect();
    let objective = columns
        .iter()
        .zip(&tails)
        .map(|(&(_, p), t)| p as f64 * t)
        .collect();
    let mut lp = LinearProgram::new(objective);
    let cols = columns.len();
    for c in 0..m {
        let coeffs = columns
            .iter()
            .map(|&(d, _)| (d == c) as u8 as f64)
            .collect();
        lp.add_row(coeffs, Relation::Le, 1.0);
    }
    for group in inst.clients() {
        let coeffs = columns
            .iter()
            .zip(&tails)
            .map(|(&(d, _), &t)| if group.contains(&d) { t } else { 0.0 })
            .collect();
        lp.add_row(coeffs, Relation::Le, 1.0);
    }
    let region = Polytope::from_constraints(m, inst.constraints())?;
    for (a, rhs) in region.rows() {
        let coeffs: Vec<f64> = (0..cols).map(|j| a[columns[j].0] * tails[j]).collect();
        lp.add_row(coeffs, Relation::Le, *rhs);
    }
    Ok(BmumdLp { lp, columns })
}

/// Solves [`build_bmumd_lp`] and shrinks the optimum, if needed, so that
/// `z` lies in every constraint polytope without tolerance.
pub fn solve_bmumd(inst: &AuctionInstance) -> Result<BmumdSolution> {
    let m = inst.num_items();
    let b = inst.max_value();
    let built = build_bmumd_lp(inst)?;
    let sol = solve_lp(&built.lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Numerical {
            message: format!("posted-price LP ended {:?}", sol.status),
            residual: f64::NAN,
        });
    }
    let mut x = vec![vec![0.0; b + 1]; m];
    for (j, &(c, p)) in built.columns.iter().enumerate() {
        x[c][p] = sol.values[j].max(0.0);
    }
    let mut shrink: f64 = 1.0;
    for row in &built.lp.rows {
        let lhs: f64 = row
            .coeffs
            .iter()
            .zip(&built.columns)
            .map(|(a, &(c, p))| a * x[c][p])
            .sum();
        if lhs > row.rhs {
            shrink = shrink.min(row.rhs / lhs);
        }
    }
    if shrink < 1.0 {
        x.iter_mut().flatten().for_each(|v| *v *= shrink);
    }
    let z: Vec<f64> = (0..m)
        .map(|c| {
            x[c].iter()
                .enumerate()
                .map(|(p, v)| v * inst.tail(c, p))
                .sum()
        })
        .collect();
    let value = x
        .iter()
        .enumerate()
        .flat_map(|(c, row)| row.iter().enumerate().map(move |(p, v)| (c, p, *v)))
        .map(|(c, p, v)| v * p as f64 * inst.tail(c, p))
        .sum();
    Ok(BmumdSolution { value, x, z })
}
