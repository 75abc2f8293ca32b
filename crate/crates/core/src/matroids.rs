//! Matroids over small ground sets: independence and rank oracles, polytope
//! membership, convex support decompositions and exchange mappings.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::set::{ElementSet, MAX_ELEMENTS};

/// Absolute tolerance for decomposition identities.
pub const TAU_DEC: f64 = 1e-9;

/// Slack below which a rank constraint counts as tight while peeling.
const TIGHT_TOL: f64 = 1e-10;

/// Residual coordinates at or below this are treated as zero while peeling.
const ZERO_TOL: f64 = 1e-13;

/// JSON form of a matroid. The ground-set size comes from the enclosing
/// instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MatroidSpec {
    Uniform {
        r: usize,
    },
    Partition {
        blocks: Vec<Vec<usize>>,
        caps: Vec<usize>,
    },
    Graphic {
        vertices: usize,
        edges: Vec<[usize; 2]>,
    },
    Explicit {
        independent: Vec<Vec<usize>>,
    },
}

#[derive(Debug, Clone)]
enum Kind {
    Uniform {
        r: usize,
    },
    Partition {
        masks: Vec<u64>,
        caps: Vec<usize>,
    },
    Graphic {
        vertices: usize,
        edges: Vec<(u8, u8)>,
    },
    Explicit {
        family: HashSet<u64>,
    },
}

/// A matroid on `{0, .., n-1}` with `n <= 64`.
#[derive(Debug, Clone)]
pub struct Matroid {
    n: usize,
    kind: Kind,
    spec: MatroidSpec,
}

fn check_ground(n: usize) -> Result<()> {
    if n > MAX_ELEMENTS {
        return Err(Error::Capacity {
            what: "ground set size",
            got: n,
            cap: MAX_ELEMENTS,
        });
    }
    Ok(())
}

impl Matroid {
    pub fn uniform(n: usize, r: usize) -> Result<Self> {
        Self::from_spec(&MatroidSpec::Uniform { r }, n)
    }

    pub fn partition(n: usize, blocks: Vec<Vec<usize>>, caps: Vec<usize>) -> Result<Self> {
        Self::from_spec(&MatroidSpec::Partition { blocks, caps }, n)
    }

    /// Graphic matroid of a multigraph; element `i` is `edges[i]`.
    pub fn graphic(vertices: usize, edges: Vec<[usize; 2]>) -> Result<Self> {
        let n = edges.len();
        Self::from_spec(&MatroidSpec::Graphic { vertices, edges }, n)
    }

    pub fn explicit(n: usize, independent: Vec<Vec<usize>>) -> Result<Self> {
        Self::from_spec(&MatroidSpec::Explicit { independent }, n)
    }

    pub fn from_spec(spec: &MatroidSpec, n: usize) -> Result<Self> {
        check_ground(n)?;
        let kind = match spec {
            MatroidSpec::Uniform { r } => Kind::Uniform { r: *r },
            MatroidSpec::Partition { blocks, caps } => {
                if blocks.len() != caps.len() {
                    return Err(Error::input(format!(
                        "partition matroid has {} blocks but {} caps",
                        blocks.len(),
                        caps.len()
                    )));
                }
                let mut seen = ElementSet::empty();
                let mut masks = Vec::with_capacity(blocks.len());
                for block in blocks {
                    let mut mask = ElementSet::empty();
                    for &e in block {
                        if e >= n {
                            return Err(Error::input(format!(
                                "partition block element {e} out of range (n = {n})"
                            )));
                        }
                        if seen.contains(e) {
                            return Err(Error::input(format!(
                                "element {e} appears in two partition blocks"
                            )));
                        }
                        seen.insert(e);
                        mask.insert(e);
                    }
                    masks.push(mask.bits());
                }
                Kind::Partition {
                    masks,
                    caps: caps.clone(),
                }
            }
            MatroidSpec::Graphic { vertices, edges } => {
                if edges.len() != n {
                    return Err(Error::input(format!(
                        "graphic matroid has {} edges but the ground set has {n} elements",
                        edges.len()
                    )));
                }
                // Compact the endpoints so union-find fits in a fixed buffer.
                let mut ids = BTreeMap::new();
                let mut compact = Vec::with_capacity(edges.len());
                for &[u, v] in edges {
                    if u >= *vertices || v >= *vertices {
                        return Err(Error::input(format!(
                            "edge ({u},{v}) has an endpoint outside 0..{vertices}"
                        )));
                    }
                    let next = ids.len();
                    let cu = *ids.entry(u).or_insert(next);
                    let next = ids.len();
                    let cv = *ids.entry(v).or_insert(next);
                    compact.push((cu as u8, cv as u8));
                }
                Kind::Graphic {
                    vertices: ids.len(),
                    edges: compact,
                }
            }
            MatroidSpec::Explicit { independent } => {
                let mut family = HashSet::new();
                for set in independent {
                    if let Some(&e) = set.iter().find(|&&e| e >= n) {
                        return Err(Error::input(format!(
                            "explicit independent set mentions element {e} (n = {n})"
                        )));
                    }
                    family.insert(set.iter().collect::<ElementSet>().bits());
                }
                if !family.contains(&0) {
                    return Err(Error::input("explicit family must contain the empty set"));
                }
                for &bits in &family {
                    for e in ElementSet::from_bits(bits).iter() {
                        if !family.contains(&ElementSet::from_bits(bits).without(e).bits()) {
                            return Err(Error::input(format!(
                                "explicit family is not downward closed at {:?}",
                                ElementSet::from_bits(bits)
                            )));
                        }
                    }
                }
                Kind::Explicit { family }
            }
        };
        Ok(Matroid {
            n,
            kind,
            spec: spec.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ground(&self) -> ElementSet {
        ElementSet::full(self.n)
    }

    pub fn spec(&self) -> &MatroidSpec {
        &self.spec
    }

    fn check_subset(&self, s: ElementSet) -> Result<()> {
        if !s.is_subset(self.ground()) {
            let bad = s.difference(self.ground()).iter().next().unwrap_or(0);
            return Err(Error::input(format!(
                "element {bad} out of range for a matroid on {} elements",
                self.n
            )));
        }
        Ok(())
    }

    /// Independence test with a range check on `s`.
    pub fn is_independent(&self, s: ElementSet) -> Result<bool> {
        self.check_subset(s)?;
        Ok(self.independent(s))
    }

    /// Independence oracle; `s` must lie inside the ground set.
    #[inline]
    pub fn independent(&self, s: ElementSet) -> bool {
        match &self.kind {
            Kind::Uniform { r } => s.len() <= *r,
            Kind::Partition { masks, caps } => masks
                .iter()
                .zip(caps)
                .all(|(&m, &c)| (s.bits() & m).count_ones() as usize <= c),
            Kind::Graphic { vertices, edges } => {
                let mut parent = [0u8; 2 * MAX_ELEMENTS];
                for (i, p) in parent.iter_mut().enumerate().take(*vertices) {
                    *p = i as u8;
                }
                fn find(parent: &mut [u8], mut v: u8) -> u8 {
                    while parent[v as usize] != v {
                        let g = parent[parent[v as usize] as usize];
                        parent[v as usize] = g;
                        v = g;
                    }
                    v
                }
                for e in s.iter() {
                    let (u, v) = edges[e];
                    let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
                    if ru == rv {
                        return false;
                    }
                    parent[ru as usize] = rv;
                }
                true
            }
            Kind::Explicit { family } => family.contains(&s.bits()),
        }
    }

    /// Size of a maximum independent subset of `s`.
    pub fn rank(&self, s: ElementSet) -> Result<usize> {
        self.check_subset(s)?;
        Ok(self.rank_of(s))
    }

    pub(crate) fn rank_of(&self, s: ElementSet) -> usize {
        match &self.kind {
            Kind::Uniform { r } => s.len().min(*r),
            Kind::Partition { masks, caps } => {
                let covered: u64 = masks.iter().fold(0, |acc, m| acc | m);
                let free = (s.bits() & !covered).count_ones() as usize;
                free + masks
                    .iter()
                    .zip(caps)
                    .map(|(&m, &c)| ((s.bits() & m).count_ones() as usize).min(c))
                    .sum::<usize>()
            }
            _ => self.greedy_basis(s).len(),
        }
    }

    /// Greedy maximal independent subset of `s`, scanning in ascending id.
    pub fn greedy_basis(&self, s: ElementSet) -> ElementSet {
        self.greedy_in_order(s.iter(), ElementSet::empty())
    }

    /// Extends `start` greedily with the elements of `order`.
    pub(crate) fn greedy_in_order(
        &self,
        order: impl IntoIterator<Item = usize>,
        start: ElementSet,
    ) -> ElementSet {
        let mut b = start;
        for e in order {
            if !b.contains(e) && self.independent(b.with(e)) {
                b.insert(e);
            }
        }
        b
    }

    /// Checks `sum_{e in A} x_e <= rank(A) + tol` for every subset `A`.
    ///
    /// Enumerates all subsets of the support, so the ground set must not
    /// exceed the desk-scale cap.
    pub fn in_polytope(&self, x: &[f64], tol: f64) -> Result<bool> {
        self.check_vector(x)?;
        crate::check_desk_cap("matroid polytope check", self.n)?;
        if x.iter().any(|&v| v < -tol) {
            return Ok(false);
        }
        let supp: Vec<usize> = (0..self.n).filter(|&e| x[e] > 0.0).collect();
        let table = SubsetTable::new(self, &supp, x);
        Ok((0..table.len()).all(|i| table.sum[i] <= table.rank[i] as f64 + tol))
    }

    fn check_vector(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::input(format!(
                "vector has {} coordinates, matroid has {} elements",
                x.len(),
                self.n
            )));
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite coordinate {v}")));
        }
        Ok(())
    }

    /// Writes `x` as a convex combination of independent-set indicators.
    ///
    /// Peels one independent set at a time while keeping the residual inside
    /// the correspondingly shrunk polytope: the peeled set spans every tight
    /// rank constraint (taken along a maximal chain of tight sets) and the
    /// step is the largest one keeping the residual feasible. Ties are broken
    /// by decreasing residual, then ascending id. The result is padded with
    /// the empty set so the weights sum to one.
    pub fn decompose_support(&self, x: &[f64], tol: f64) -> Result<SupportDecomposition> {
        if !self.in_polytope(x, tol)? {
            return Err(Error::domain("vector lies outside the matroid polytope"));
        }
        let mut residual: Vec<f64> = x
            .iter()
            .map(|&v| if v <= ZERO_TOL { 0.0 } else { v })
            .collect();
        let mut mass = 1.0f64;
        let mut entries: Vec<(f64, ElementSet)> = Vec::new();
        let max_iters = (self.n * self.n).max(1);

        for _ in 0..max_iters {
            let supp: Vec<usize> = (0..self.n).filter(|&e| residual[e] > 0.0).collect();
            if supp.is_empty() {
                break;
            }
            let table = SubsetTable::new(self, &supp, &residual);
            let slack = |i: usize| mass * table.rank[i] as f64 - table.sum[i];

            // Maximal chain of tight sets, built by repeatedly taking the
            // smallest tight proper superset.
            let tight: Vec<usize> = (1..table.len())
                .filter(|&i| slack(i) <= TIGHT_TOL)
                .collect();
            let mut chain: Vec<usize> = Vec::new();
            let mut current = 0usize;
            loop {
                let next = tight
                    .iter()
                    .copied()
                    .filter(|&t| t & current == current && t != current)
                    .min_by_key(|&t| (t.count_ones(), t));
                match next {
                    Some(t) => {
                        chain.push(t);
                        current = t;
                    }
                    None => break,
                }
            }

            let by_residual = |mut layer: Vec<usize>| {
                layer.sort_by(|&a, &b| residual[b].total_cmp(&residual[a]).then(a.cmp(&b)));
                layer
            };
            let mut order = Vec::with_capacity(supp.len());
            let mut prev = 0usize;
            for &t in chain.iter().chain(std::iter::once(&(table.len() - 1))) {
                let layer = table.expand(t & !prev);
                order.extend(by_residual(layer));
                prev |= t;
            }
            let basis = self.greedy_in_order(order, ElementSet::empty());
            if basis.is_empty() {
                return Err(Error::Numerical {
                    message: "support contains only loops".into(),
                    residual: residual.iter().cloned().fold(0.0, f64::max),
                });
            }
            let basis_local = table.compress(basis);

            let mut beta = mass;
            for e in basis.iter() {
                beta = beta.min(residual[e]);
            }
            for i in 1..table.len() {
                let gap = table.rank[i] as i64 - (i & basis_local).count_ones() as i64;
                if gap > 0 {
                    beta = beta.min(slack(i).max(0.0) / gap as f64);
                }
            }
            if beta <= 1e-15 {
                return Err(Error::Numerical {
                    message: "support decomposition made no progress".into(),
                    residual: residual.iter().cloned().fold(0.0, f64::max),
                });
            }
            for e in basis.iter() {
                residual[e] -= beta;
                if residual[e] <= ZERO_TOL {
                    residual[e] = 0.0;
                }
            }
            mass -= beta;
            match entries.iter_mut().find(|(_, s)| *s == basis) {
                Some(entry) => entry.0 += beta,
                None => entries.push((beta, basis)),
            }
        }

        let left = residual.iter().cloned().fold(0.0, f64::max);
        if left > 0.0 {
            return Err(Error::Numerical {
                message: format!("support decomposition did not finish within {max_iters} steps"),
                residual: left,
            });
        }
        if mass > 1e-15 {
            entries.push((mass, ElementSet::empty()));
        }
        let dec = SupportDecomposition { entries };
        dec.verify(self, x, TAU_DEC.max(tol))?;
        Ok(dec)
    }

    /// Exchange mapping from independent `a` into independent `b`.
    ///
    /// Elements of `a ∩ b` map to themselves. Each `e ∈ a \ b` whose
    /// insertion into `b` creates a circuit is matched (maximum bipartite
    /// matching, ascending ids) to a distinct `f ∈ b \ a` on that circuit;
    /// the remaining elements map to `None` (free insertion).
    pub fn build_exchange_mapping(&self, a: ElementSet, b: ElementSet) -> Result<ExchangeMapping> {
        self.check_subset(a)?;
        self.check_subset(b)?;
        if !self.independent(a) || !self.independent(b) {
            return Err(Error::domain("exchange mapping needs two independent sets"));
        }
        let matched = self.exchange_matching(a, b)?;
        let map = a
            .iter()
            .map(|e| {
                let img = if b.contains(e) {
                    Some(e)
                } else {
                    matched[e].map(usize::from)
                };
                (e, img)
            })
            .collect();
        Ok(ExchangeMapping {
            source: a,
            target: b,
            map,
        })
    }

    /// Image of `e ∈ a` under the mapping [`Matroid::build_exchange_mapping`]
    /// would produce, without materializing the whole mapping when `e` can be
    /// inserted freely.
    pub(crate) fn exchange_image(
        &self,
        a: ElementSet,
        b: ElementSet,
        e: usize,
    ) -> Result<Option<usize>> {
        debug_assert!(a.contains(e));
        if b.contains(e) {
            return Ok(Some(e));
        }
        if self.independent(b.with(e)) {
            return Ok(None);
        }
        Ok(self.exchange_matching(a, b)?[e].map(usize::from))
    }

    fn exchange_matching(
        &self,
        a: ElementSet,
        b: ElementSet,
    ) -> Result<[Option<u8>; MAX_ELEMENTS]> {
        let candidates = b.difference(a);
        let mut adj = [0u64; MAX_ELEMENTS];
        let mut blocked_side: Vec<usize> = Vec::new();
        for e in a.difference(b).iter() {
            if self.independent(b.with(e)) {
                continue;
            }
            let mut mask = ElementSet::empty();
            for f in candidates.iter() {
                if self.independent(b.without(f).with(e)) {
                    mask.insert(f);
                }
            }
            adj[e] = mask.bits();
            blocked_side.push(e);
        }

        let mut owner = [u8::MAX; MAX_ELEMENTS];
        fn augment(
            e: usize,
            adj: &[u64; MAX_ELEMENTS],
            owner: &mut [u8; MAX_ELEMENTS],
            seen: &mut u64,
        ) -> bool {
            for f in ElementSet::from_bits(adj[e]).iter() {
                if *seen >> f & 1 == 1 {
                    continue;
                }
                *seen |= 1 << f;
                if owner[f] == u8::MAX || augment(owner[f] as usize, adj, owner, seen) {
                    owner[f] = e as u8;
                    return true;
                }
            }
            false
        }
        for &e in &blocked_side {
            let mut seen = 0u64;
            if !augment(e, &adj, &mut owner, &mut seen) {
                return Err(Error::Invariant(format!(
                    "no exchange partner for element {e} from {a:?} into {b:?}; \
                     the independence oracle is not a matroid"
                )));
            }
        }
        let mut image = [None; MAX_ELEMENTS];
        for (f, &e) in owner.iter().enumerate() {
            if e != u8::MAX {
                image[e as usize] = Some(f as u8);
            }
        }
        Ok(image)
    }
}

/// Ranks and coordinate sums of every subset of a support, indexed by the
/// compressed mask over `supp`.
struct SubsetTable {
    supp: Vec<usize>,
    rank: Vec<u32>,
    sum: Vec<f64>,
}

impl SubsetTable {
    fn new(m: &Matroid, supp: &[usize], x: &[f64]) -> Self {
        let k = supp.len();
        let size = 1usize << k;
        let mut basis = vec![ElementSet::empty(); size];
        let mut rank = vec![0u32; size];
        let mut sum = vec![0.0f64; size];
        for i in 1..size {
            let top = usize::BITS as usize - 1 - i.leading_zeros() as usize;
            let rest = i & !(1 << top);
            let e = supp[top];
            let cand = basis[rest].with(e);
            if m.independent(cand) {
                basis[i] = cand;
                rank[i] = rank[rest] + 1;
            } else {
                basis[i] = basis[rest];
                rank[i] = rank[rest];
            }
            sum[i] = sum[rest] + x[e];
        }
        SubsetTable {
            supp: supp.to_vec(),
            rank,
            sum,
        }
    }

    fn len(&self) -> usize {
        self.rank.len()
    }

    fn expand(&self, local: usize) -> Vec<usize> {
        ElementSet::from_bits(local as u64)
            .iter()
            .map(|i| self.supp[i])
            .collect()
    }

    fn compress(&self, set: ElementSet) -> usize {
        self.supp
            .iter()
            .enumerate()
            .filter(|(_, &e)| set.contains(e))
            .fold(0, |acc, (i, _)| acc | 1 << i)
    }
}

/// `x = sum_j beta_j * 1_{B_j}` with `sum_j beta_j = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportDecomposition {
    pub entries: Vec<(f64, ElementSet)>,
}

impl SupportDecomposition {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|(b, _)| b).sum()
    }

    /// `sum_{j : e in B_j} beta_j` for every element.
    pub fn marginals(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for &(beta, set) in &self.entries {
            for e in set.iter() {
                out[e] += beta;
            }
        }
        out
    }

    /// Checks every structural invariant against `m` and `x`.
    pub fn verify(&self, m: &Matroid, x: &[f64], tol: f64) -> Result<()> {
        let n = m.n();
        if self.entries.len() > n * n + 1 {
            return Err(Error::Invariant(format!(
                "decomposition has {} entries, more than n^2 + 1",
                self.entries.len()
            )));
        }
        for &(beta, set) in &self.entries {
            if !(beta > 0.0 && beta <= 1.0 + tol) {
                return Err(Error::Invariant(format!("weight {beta} outside (0, 1]")));
            }
            if !m.independent(set) {
                return Err(Error::Invariant(format!("dependent support set {set:?}")));
            }
        }
        let total = self.total_weight();
        if (total - 1.0).abs() > tol {
            return Err(Error::Numerical {
                message: "support weights do not sum to one".into(),
                residual: (total - 1.0).abs(),
            });
        }
        let marg = self.marginals(n);
        let worst = marg
            .iter()
            .zip(x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if worst > tol {
            return Err(Error::Numerical {
                message: "support marginals differ from the vector".into(),
                residual: worst,
            });
        }
        Ok(())
    }
}

/// `phi[A, B]`: maps each element of `source` to an element of `target`
/// or to `None` (the free-insertion sentinel).
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeMapping {
    pub source: ElementSet,
    pub target: ElementSet,
    pub map: Vec<(usize, Option<usize>)>,
}

impl ExchangeMapping {
    /// `None` if `e` is not in the source; `Some(None)` for the sentinel.
    pub fn image(&self, e: usize) -> Option<Option<usize>> {
        self.map.iter().find(|(a, _)| *a == e).map(|&(_, img)| img)
    }

    /// Checks the three exchange properties against `m`.
    pub fn verify(&self, m: &Matroid) -> Result<()> {
        let mut used = ElementSet::empty();
        for &(e, img) in &self.map {
            if self.target.contains(e) {
                if img != Some(e) {
                    return Err(Error::Invariant(format!("common element {e} not fixed")));
                }
            } else {
                match img {
                    None => {
                        if !m.independent(self.target.with(e)) {
                            return Err(Error::Invariant(format!(
                                "{e} maps to the sentinel but B + {e} is dependent"
                            )));
                        }
                    }
                    Some(f) => {
                        if !self.target.contains(f) {
                            return Err(Error::Invariant(format!("{e} maps outside the target")));
                        }
                        if !m.independent(self.target.without(f).with(e)) {
                            return Err(Error::Invariant(format!("B - {f} + {e} is dependent")));
                        }
                    }
                }
            }
            if let Some(f) = img {
                if used.contains(f) {
                    return Err(Error::Invariant(format!(
                        "{f} is the image of two elements"
                    )));
                }
                used.insert(f);
            }
        }
        Ok(())
    }
}
