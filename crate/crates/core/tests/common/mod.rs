//! Reference implementations used as oracles by the integration tests.
//! They work from the JSON specs only and share no code with the library's
//! evaluation paths.
#![allow(dead_code)]

use std::path::PathBuf;

use rocrs::submodular::OracleSpec;
use rocrs::ConstraintSpec;

pub fn instances_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("instances")
}

pub fn members(bits: u64) -> Vec<usize> {
    (0..64).filter(|&e| bits >> e & 1 == 1).collect()
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

/// Independence straight from the definition of each family.
pub fn independent(spec: &ConstraintSpec, set: &[usize]) -> bool {
    match spec {
        ConstraintSpec::Uniform { r } => set.len() <= *r,
        ConstraintSpec::Partition { blocks, caps } => blocks
            .iter()
            .zip(caps)
            .all(|(b, &c)| set.iter().filter(|e| b.contains(e)).count() <= c),
        ConstraintSpec::Graphic { vertices, edges } => {
            let mut parent: Vec<usize> = (0..*vertices).collect();
            for &e in set {
                let [a, b] = edges[e];
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra == rb {
                    return false;
                }
                parent[ra] = rb;
            }
            true
        }
        ConstraintSpec::Explicit { independent } => independent
            .iter()
            .any(|ind| set.iter().all(|e| ind.contains(e))),
        ConstraintSpec::Knapsack { sizes } => {
            set.iter().map(|&e| sizes[e]).sum::<f64>() <= 1.0 + 1e-9
        }
    }
}

pub fn independent_in_all(specs: &[ConstraintSpec], set: &[usize]) -> bool {
    specs.iter().all(|c| independent(c, set))
}

pub fn set_value(spec: &OracleSpec, set: &[usize]) -> f64 {
    match spec {
        OracleSpec::Modular { weights } => set.iter().map(|&e| weights[e]).sum(),
        OracleSpec::Coverage {
            universe_weights,
            covers,
        } => {
            let mut hit = vec![false; universe_weights.len()];
            for &e in set {
                for &u in &covers[e] {
                    hit[u] = true;
                }
            }
            hit.iter()
                .zip(universe_weights)
                .filter(|(h, _)| **h)
                .map(|(_, w)| w)
                .sum()
        }
        OracleSpec::Cut { edges, .. } => edges
            .iter()
            .filter(|(a, b, _)| set.contains(a) != set.contains(b))
            .map(|e| e.2)
            .sum(),
        OracleSpec::Explicit { values } => values[set.iter().map(|e| 1usize << e).sum::<usize>()],
    }
}

pub fn ground_size(spec: &OracleSpec) -> usize {
    match spec {
        OracleSpec::Modular { weights } => weights.len(),
        OracleSpec::Coverage { covers, .. } => covers.len(),
        OracleSpec::Cut { vertices, .. } => *vertices,
        OracleSpec::Explicit { values } => values.len().trailing_zeros() as usize,
    }
}

/// `F(y) = Σ_A f(A) Π_{e∈A} y_e Π_{e∉A} (1-y_e)`.
pub fn multilinear(spec: &OracleSpec, y: &[f64]) -> f64 {
    let n = y.len();
    let mut total = 0.0;
    for bits in 0u64..1 << n {
        let mut w = 1.0;
        for (e, &ye) in y.iter().enumerate() {
            w *= if bits >> e & 1 == 1 { ye } else { 1.0 - ye };
        }
        if w > 0.0 {
            total += w * set_value(spec, &members(bits));
        }
    }
    total
}

/// `max f(S)` over sets independent in every constraint.
pub fn brute_force_optimum(spec: &OracleSpec, constraints: &[ConstraintSpec], n: usize) -> f64 {
    (0u64..1 << n)
        .map(members)
        .filter(|s| independent_in_all(constraints, s))
        .map(|s| set_value(spec, &s))
        .fold(0.0, f64::max)
}

/// Exhaustive diminishing-returns check.
pub fn is_submodular(spec: &OracleSpec, n: usize, tol: f64) -> bool {
    for bits in 0u64..1 << n {
        let a = members(bits);
        let fa = set_value(spec, &a);
        for e in 0..n {
            if bits >> e & 1 == 1 {
                continue;
            }
            let mut ae = a.clone();
            ae.push(e);
            let gain_a = set_value(spec, &ae) - fa;
            for f in 0..n {
                if f == e || bits >> f & 1 == 1 {
                    continue;
                }
                let mut af = a.clone();
                af.push(f);
                let mut afe = af.clone();
                afe.push(e);
                let gain_b = set_value(spec, &afe) - set_value(spec, &af);
                if gain_b > gain_a + tol {
                    return false;
                }
            }
        }
    }
    true
}
