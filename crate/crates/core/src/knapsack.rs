//! Knapsack constraints and the interval machinery behind the bounded
//! knapsack controller.

use rand::Rng;

use crate::error::{Error, Result};
use crate::set::{ElementSet, MAX_ELEMENTS};

/// Sizes above this are big items.
pub const BIG_THRESHOLD: f64 = 0.5;

/// Tolerance used when checking that an accepted set fits.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackConstraint {
    sizes: Vec<f64>,
}

impl KnapsackConstraint {
    pub fn new(sizes: Vec<f64>) -> Result<Self> {
        if sizes.len() > MAX_ELEMENTS {
            return Err(Error::Capacity {
                what: "knapsack ground set",
                got: sizes.len(),
                cap: MAX_ELEMENTS,
            });
        }
        if let Some((e, s)) = sizes
            .iter()
            .enumerate()
            .find(|(_, s)| !(0.0..=1.0).contains(*s))
        {
            return Err(Error::input(format!(
                "size {s} of element {e} outside [0, 1]"
            )));
        }
        Ok(KnapsackConstraint { sizes })
    }

    pub fn n(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn size(&self, e: usize) -> f64 {
        self.sizes[e]
    }

    /// All sizes at most 1/2.
    pub fn is_bounded(&self) -> bool {
        self.sizes.iter().all(|&s| s <= BIG_THRESHOLD)
    }

    pub fn in_knapsack_polytope(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.sizes.len()
            && x.iter().all(|&v| v >= -tol)
            && self.sizes.iter().zip(x).map(|(s, v)| s * v).sum::<f64>() <= 1.0 + tol
    }

    /// `(big, small)` with big = `{e : s_e > 1/2}`.
    pub fn classify_items(&self) -> (ElementSet, ElementSet) {
        let big: ElementSet = (0..self.n())
            .filter(|&e| self.sizes[e] > BIG_THRESHOLD)
            .collect();
        (big, ElementSet::full(self.n()).difference(big))
    }

    pub fn load(&self, s: ElementSet) -> f64 {
        s.iter().map(|e| self.sizes[e]).sum()
    }

    pub fn fits(&self, s: ElementSet) -> bool {
        self.load(s) <= 1.0 + FEASIBILITY_TOL
    }

    /// Same constraint with the sizes of `dropped` zeroed.
    pub fn without_items(&self, dropped: ElementSet) -> Self {
        let sizes = self
            .sizes
            .iter()
            .enumerate()
            .map(|(e, &s)| if dropped.contains(e) { 0.0 } else { s })
            .collect();
        KnapsackConstraint { sizes }
    }
}

/// Disjoint, sorted, half-open subintervals of `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalSet {
    intervals: Vec<(f64, f64)>,
}

impl IntervalSet {
    pub fn empty() -> Self {
        IntervalSet::default()
    }

    pub fn unit() -> Self {
        IntervalSet {
            intervals: vec![(0.0, 1.0)],
        }
    }

    pub fn from_intervals(mut intervals: Vec<(f64, f64)>) -> Result<Self> {
        intervals.retain(|(a, b)| b > a);
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in intervals.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::input("intervals overlap"));
            }
        }
        if intervals.iter().any(|&(a, b)| a < 0.0 || b > 1.0) {
            return Err(Error::input("interval leaves [0, 1]"));
        }
        Ok(IntervalSet { intervals })
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn total_mass(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, p: f64) -> bool {
        let idx = self.intervals.partition_point(|&(a, _)| a <= p);
        idx > 0 && p < self.intervals[idx - 1].1
    }

    /// Maps the circle segment `[from, to)` (in glued coordinates) back to
    /// the underlying intervals.
    fn preimage(&self, from: f64, to: f64, out: &mut Vec<(f64, f64)>) {
        let mut offset = 0.0;
        for &(a, b) in &self.intervals {
            let len = b - a;
            let lo = from.max(offset);
            let hi = to.min(offset + len);
            if hi > lo {
                out.push((a + (lo - offset), (a + (hi - offset)).min(b)));
            }
            offset += len;
            if offset >= to {
                break;
            }
        }
    }

    /// Removes the arc of length `mass` starting at glued coordinate `start`
    /// (clockwise, wrapping around). Returns `(remaining, blocked)`.
    pub fn block_arc(&self, mass: f64, start: f64) -> (IntervalSet, IntervalSet) {
        let total = self.total_mass();
        if mass >= total {
            return (IntervalSet::empty(), self.clone());
        }
        if mass <= 0.0 {
            return (self.clone(), IntervalSet::empty());
        }
        let start = start.rem_euclid(total);
        let end = start + mass;
        let mut blocked = Vec::new();
        let mut kept = Vec::new();
        if end <= total {
            self.preimage(start, end, &mut blocked);
            self.preimage(0.0, start, &mut kept);
            self.preimage(end, total, &mut kept);
        } else {
            self.preimage(0.0, end - total, &mut blocked);
            self.preimage(start, total, &mut blocked);
            self.preimage(end - total, start, &mut kept);
        }
        (normalize(kept), normalize(blocked))
    }

    /// Blocks a uniformly random arc of length `mass` on the circle obtained
    /// by gluing the available intervals left to right. Each available point
    /// is blocked with probability `min(mass / total_mass, 1)`.
    pub fn block_random_mass<R: Rng + ?Sized>(
        &self,
        mass: f64,
        rng: &mut R,
    ) -> (IntervalSet, IntervalSet) {
        let total = self.total_mass();
        if mass >= total || mass <= 0.0 {
            return self.block_arc(mass, 0.0);
        }
        let start = rng.gen::<f64>() * total;
        self.block_arc(mass, start)
    }
}

fn normalize(mut v: Vec<(f64, f64)>) -> IntervalSet {
    v.retain(|(a, b)| b > a);
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (a, b) in v {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    IntervalSet { intervals: out }
}
