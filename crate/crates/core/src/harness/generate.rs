//! Seeded instance generators. Every generated fractional point is an
//! average of LP vertices of the instance's polytope, optionally scaled
//! toward the origin, so it passes all membership checks by construction.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constraint::{Constraint, ConstraintSpec};
use crate::crs::CrsInstanceFile;
use crate::error::{Error, Result};
use crate::matroids::TAU_DEC;
use crate::mechanisms::{AuctionFile, AuctionInstance};
use crate::probing::{
    OutcomeSpec, PackingElementSpec, PackingFile, PackingInstance, ProbingFile, ProbingInstance,
};
use crate::relaxations::Polytope;
use crate::seed::rng_from_seed;
use crate::submodular::OracleSpec;

use super::GreedyFile;

fn default_scale() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

fn default_one() -> usize {
    1
}

/// What to generate. Every variant is deterministic in the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    /// Graphic matroid of a random multigraph.
    Graphic {
        vertices: usize,
        edges: usize,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// Partition matroid: `n` elements split into `caps.len()` contiguous
    /// blocks of near-equal size.
    Partition {
        n: usize,
        caps: Vec<usize>,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// Random knapsack sizes; `bounded` keeps every size at most 1/2.
    Knapsack {
        n: usize,
        #[serde(default = "default_one")]
        count: usize,
        #[serde(default = "default_true")]
        bounded: bool,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// `matroids` random partition/graphic matroids plus `knapsacks`
    /// random (unbounded) knapsacks.
    Intersection {
        n: usize,
        matroids: usize,
        #[serde(default)]
        knapsacks: usize,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// Random coverage objective over random matroids.
    Coverage {
        n: usize,
        universe: usize,
        matroids: usize,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// Greedy instance: a cut (nonmonotone) or coverage objective.
    Greedy {
        n: usize,
        matroids: usize,
        #[serde(default = "default_true")]
        nonmonotone: bool,
    },
    Auction {
        clients: usize,
        items_per_client: usize,
        max_value: usize,
        #[serde(default = "default_one")]
        matroids: usize,
    },
    Packing {
        n: usize,
        rows: usize,
        k: usize,
    },
    Probing {
        n: usize,
        k_in: usize,
        k_out: usize,
        universe: usize,
    },
}

/// Generated file, ready to serialize.
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum GeneratedInstance {
    Crs(CrsInstanceFile),
    Greedy(GreedyFile),
    Auction(AuctionFile),
    Packing(PackingFile),
    Probing(ProbingFile),
}

impl GeneratedInstance {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("instances serialize");
        s.push('\n');
        s
    }
}

pub fn generate_instance(spec: &GeneratorSpec, seed: u64) -> Result<GeneratedInstance> {
    let mut rng = rng_from_seed(seed);
    let rng = &mut rng;
    Ok(match *spec {
        GeneratorSpec::Graphic {
            vertices,
            edges,
            scale,
        } => {
            if vertices < 2 {
                return Err(Error::input(
                    "a graphic matroid needs at least two vertices",
                ));
            }
            let c = random_graph(vertices, edges, rng);
            GeneratedInstance::Crs(crs_file(edges, vec![c], scale, None, rng)?)
        }
        GeneratorSpec::Partition { n, ref caps, scale } => {
            if caps.is_empty() || caps.len() > n {
                return Err(Error::input("partition needs between 1 and n blocks"));
            }
            let b = caps.len();
            let blocks: Vec<Vec<usize>> = (0..b)
                .map(|i| (i * n / b..(i + 1) * n / b).collect())
                .collect();
            let c = ConstraintSpec::Partition {
                blocks,
                caps: caps.clone(),
            };
            GeneratedInstance::Crs(crs_file(n, vec![c], scale, None, rng)?)
        }
        GeneratorSpec::Knapsack {
            n,
            count,
            bounded,
            scale,
        } => {
            let cs = (0..count)
                .map(|_| random_knapsack(n, bounded, rng))
                .collect();
            GeneratedInstance::Crs(crs_file(n, cs, scale, None, rng)?)
        }
        GeneratorSpec::Intersection {
            n,
            matroids,
            knapsacks,
            scale,
        } => {
            let mut cs: Vec<ConstraintSpec> =
                (0..matroids).map(|i| random_matroid(n, i, rng)).collect();
            cs.extend((0..knapsacks).map(|_| random_knapsack(n, false, rng)));
            GeneratedInstance::Crs(crs_file(n, cs, scale, None, rng)?)
        }
        GeneratorSpec::Coverage {
            n,
            universe,
            matroids,
            scale,
        } => {
            let oracle = random_coverage(n, universe, rng);
            let cs = (0..matroids).map(|i| random_matroid(n, i, rng)).collect();
            GeneratedInstance::Crs(crs_file(n, cs, scale, Some(oracle), rng)?)
        }
        GeneratorSpec::Greedy {
            n,
            matroids,
            nonmonotone,
        } => {
            let oracle = if nonmonotone {
                random_cut(n, rng)
            } else {
                random_coverage(n, 2 * n, rng)
            };
            let constraints = (0..matroids).map(|i| random_matroid(n, i, rng)).collect();
            GeneratedInstance::Greedy(GreedyFile {
                n,
                constraints,
                oracle,
                steps: None,
            })
        }
        GeneratorSpec::Auction {
            clients,
            items_per_client,
            max_value,
            matroids,
        } => {
            let m = clients * items_per_client;
            let groups = (0..clients)
                .map(|i| (i * items_per_client..(i + 1) * items_per_client).collect())
                .collect();
            let pmf = (0..m).map(|_| random_pmf(max_value, rng)).collect();
            let constraints = (0..matroids).map(|i| random_matroid(m, i, rng)).collect();
            let file = AuctionFile {
                max_value,
                clients: groups,
                pmf,
                constraints,
                reduction: None,
            };
            AuctionInstance::from_file(&file)?;
            GeneratedInstance::Auction(file)
        }
        GeneratorSpec::Packing { n, rows, k } => {
            if k == 0 || k > rows {
                return Err(Error::input("packing needs 1 <= k <= rows"));
            }
            let elements: Vec<PackingElementSpec> = (0..n)
                .map(|_| {
                    let mut all: Vec<usize> = (0..rows).collect();
                    all.shuffle(rng);
                    let mut q = all[..k].to_vec();
                    q.sort_unstable();
                    let outcomes = random_outcomes(&q, rows, rng);
                    PackingElementSpec { q, outcomes }
                })
                .collect();
            let row_matroids = (0..rows)
                .map(|_| ConstraintSpec::Uniform {
                    r: rng.gen_range(1..=2),
                })
                .collect();
            let mut file = PackingFile {
                rows,
                row_matroids,
                elements,
                x: None,
            };
            let inst = PackingInstance::from_file(&file)?;
            let (x, _) = crate::probing::solve_setpacking_lp(&inst)?;
            file.x = Some(x);
            GeneratedInstance::Packing(file)
        }
        GeneratorSpec::Probing {
            n,
            k_in,
            k_out,
            universe,
        } => {
            let p: Vec<f64> = (0..n).map(|_| round4(rng.gen_range(0.2..1.0))).collect();
            let inner: Vec<ConstraintSpec> = (0..k_in).map(|i| random_matroid(n, i, rng)).collect();
            let outer: Vec<ConstraintSpec> =
                (0..k_out).map(|i| random_matroid(n, i + 1, rng)).collect();
            let oracle = random_coverage(n, universe, rng);
            let mut file = ProbingFile {
                n,
                p,
                inner,
                outer,
                oracle,
                x: None,
            };
            let inst = ProbingInstance::from_file(&file)?;
            let poly = inst.transformed_polytope()?;
            let y = random_point(&poly, 1.0, rng)?;
            let x = y
                .iter()
                .zip(inst.p())
                .map(|(&v, &p)| if p > 0.0 { (v / p).min(1.0) } else { 0.0 })
                .collect();
            file.x = Some(x);
            GeneratedInstance::Probing(file)
        }
    })
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn crs_file<R: Rng + ?Sized>(
    n: usize,
    constraints: Vec<ConstraintSpec>,
    scale: f64,
    oracle: Option<OracleSpec>,
    rng: &mut R,
) -> Result<CrsInstanceFile> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::input(format!("scale {scale} outside (0, 1]")));
    }
    let cs = constraints
        .iter()
        .map(|c| Constraint::from_spec(c, n))
        .collect::<Result<Vec<_>>>()?;
    let poly = Polytope::from_constraints(n, &cs)?;
    let x = random_point(&poly, scale, rng)?;
    for (i, c) in cs.iter().enumerate() {
        if !c.in_polytope(&x, TAU_DEC)? {
            return Err(Error::Logic(format!(
                "generated point left the polytope of constraint {i}"
            )));
        }
    }
    Ok(CrsInstanceFile {
        n,
        constraints,
        x,
        reduction: None,
        oracle,
    })
}

/// Average of four LP vertices for uniform random directions, scaled and
/// snapped strictly inside the polytope.
fn random_point<R: Rng + ?Sized>(poly: &Polytope, scale: f64, rng: &mut R) -> Result<Vec<f64>> {
    const VERTICES: usize = 4;
    let n = poly.n();
    let mut x = vec![0.0; n];
    for _ in 0..VERTICES {
        let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let v = poly.maximize_linear(&w)?;
        for (a, b) in x.iter_mut().zip(v) {
            *a += b.max(0.0) / VERTICES as f64;
        }
    }
    // Round down to six decimals so files are short and still feasible.
    let mut x: Vec<f64> = x
        .into_iter()
        .map(|v| ((v * scale).clamp(0.0, 1.0) * 1e6).floor() / 1e6)
        .collect();
    poly.shrink_into(&mut x);
    Ok(x)
}

fn random_graph<R: Rng + ?Sized>(vertices: usize, edges: usize, rng: &mut R) -> ConstraintSpec {
    let edges = (0..edges)
        .map(|_| {
            let a = rng.gen_range(0..vertices);
            let mut b = rng.gen_range(0..vertices - 1);
            if b >= a {
                b += 1;
            }
            [a.min(b), a.max(b)]
        })
        .collect();
    ConstraintSpec::Graphic { vertices, edges }
}

fn random_partition<R: Rng + ?Sized>(n: usize, rng: &mut R) -> ConstraintSpec {
    let b = rng.gen_range(2..=(n / 2).max(2));
    let mut blocks = vec![Vec::new(); b];
    for e in 0..n {
        blocks[rng.gen_range(0..b)].push(e);
    }
    blocks.retain(|blk| !blk.is_empty());
    let caps = blocks.iter().map(|_| rng.gen_range(1..=2)).collect();
    ConstraintSpec::Partition { blocks, caps }
}

/// Alternates partition (even `i`) and graphic (odd `i`) matroids.
fn random_matroid<R: Rng + ?Sized>(n: usize, i: usize, rng: &mut R) -> ConstraintSpec {
    if i.is_multiple_of(2) || n < 2 {
        random_partition(n.max(1), rng)
    } else {
        random_graph((n / 2 + 1).max(2), n, rng)
    }
}

fn random_knapsack<R: Rng + ?Sized>(n: usize, bounded: bool, rng: &mut R) -> ConstraintSpec {
    let hi = if bounded { 0.5 } else { 1.0 };
    let sizes = (0..n).map(|_| round4(rng.gen_range(0.05..hi))).collect();
    ConstraintSpec::Knapsack { sizes }
}

fn random_coverage<R: Rng + ?Sized>(n: usize, universe: usize, rng: &mut R) -> OracleSpec {
    let universe = universe.max(1);
    let universe_weights = (0..universe)
        .map(|_| round4(rng.gen_range(0.5..2.0)))
        .collect();
    let covers = (0..n)
        .map(|_| {
            let size = rng.gen_range(1..=3.min(universe));
            let mut pts: Vec<usize> = (0..universe).collect();
            pts.shuffle(rng);
            let mut c = pts[..size].to_vec();
            c.sort_unstable();
            c
        })
        .collect();
    OracleSpec::Coverage {
        universe_weights,
        covers,
    }
}

fn random_cut<R: Rng + ?Sized>(n: usize, rng: &mut R) -> OracleSpec {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(0.4) {
                edges.push((a, b, round4(rng.gen_range(0.5..2.0))));
            }
        }
    }
    OracleSpec::Cut { vertices: n, edges }
}

fn random_pmf<R: Rng + ?Sized>(max_value: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..=max_value).map(|_| rng.gen::<f64>()).collect();
    let total: f64 = w.iter().sum();
    let mut pmf: Vec<f64> = w.iter().map(|v| round4(v / total)).collect();
    let rest = 1.0 - pmf[..max_value].iter().sum::<f64>();
    pmf[max_value] = rest.max(0.0);
    let sum: f64 = pmf.iter().sum();
    pmf.iter_mut().for_each(|v| *v /= sum);
    pmf
}

fn random_outcomes<R: Rng + ?Sized>(q: &[usize], rows: usize, rng: &mut R) -> Vec<OutcomeSpec> {
    let count = rng.gen_range(1..=3);
    let w: Vec<f64> = (0..count).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter()
        .map(|&wi| {
            let l = (0..rows)
                .map(|i| (q.contains(&i) && rng.gen_bool(0.6)) as u8)
                .collect();
            OutcomeSpec {
                prob: wi / total,
                v: round4(rng.gen_range(0.5..3.0)),
                l,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_seed_is_byte_identical() {
        let spec = GeneratorSpec::Intersection {
            n: 8,
            matroids: 2,
            knapsacks: 1,
            scale: 1.0,
        };
        let a = generate_instance(&spec, 17).unwrap().to_json();
        let b = generate_instance(&spec, 17).unwrap().to_json();
        assert_eq!(a, b);
        assert_ne!(a, generate_instance(&spec, 18).unwrap().to_json());
    }

    #[test]
    fn partition_caps_split_blocks() {
        let spec = GeneratorSpec::Partition {
            n: 4,
            caps: vec![1, 1],
            scale: 1.0,
        };
        let GeneratedInstance::Crs(f) = generate_instance(&spec, 1).unwrap() else {
            panic!("expected a crs instance")
        };
        assert_eq!(
            f.constraints[0],
            ConstraintSpec::Partition {
                blocks: vec![vec![0, 1], vec![2, 3]],
                caps: vec![1, 1]
            }
        );
    }

    #[test]
    fn generated_points_are_feasible() {
        let specs = [
            GeneratorSpec::Graphic {
                vertices: 5,
                edges: 8,
                scale: 1.0,
            },
            GeneratorSpec::Knapsack {
                n: 6,
                count: 2,
                bounded: true,
                scale: 1.0,
            },
            GeneratorSpec::Intersection {
                n: 7,
                matroids: 3,
                knapsacks: 0,
                scale: 1.0,
            },
        ];
        for spec in &specs {
            for seed in 0..5 {
                let GeneratedInstance::Crs(f) = generate_instance(spec, seed).unwrap() else {
                    panic!("expected a crs instance")
                };
                // Loading re-checks every polytope.
                crate::crs::CrsInstance::from_file(&f).unwrap();
            }
        }
    }
}
