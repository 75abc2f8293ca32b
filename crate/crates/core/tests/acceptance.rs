//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Lower bounds are judged with a fixed
//! margin of three standard errors; exact checks use the tolerances below.

mod common;

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use rocrs::crs::{
    brute_force_acceptance, estimate_acceptance, run_crs, AcceptanceReport, CrsInstance,
    CrsInstanceFile,
};
use rocrs::harness::{generate_instance, read_json, GeneratedInstance, GeneratorSpec, GreedyFile};
use rocrs::knapsack::IntervalSet;
use rocrs::mechanisms::{
    estimate_revenue, refine_menu_vector, run_auction, AuctionFile, AuctionInstance, AuctionPlan,
    MenuVector,
};
use rocrs::probing::{
    estimate_packing, estimate_probing, run_kset_packing, run_probing, solve_probing_mp,
    solve_setpacking_lp, PackingFile, PackingInstance, PackingPlan, ProbingFile, ProbingInstance,
    ProbingPlan,
};
use rocrs::relaxations::{probing_mp_optimum, Polytope};
use rocrs::seed::{rng_from_seed, trial_rng};
use rocrs::stats::MeanEstimate;
use rocrs::submodular::{
    estimate_submodular_crs, measured_continuous_greedy, GreedyConfig, OracleSpec, SubmodularOracle,
};
use rocrs::{Constraint, ConstraintSpec, ElementSet, Matroid};

use common::*;

const MARGIN_SE: f64 = 3.0;
const Z_99: f64 = 2.576;
/// Floating-point slack for quantities that are exact in real arithmetic.
const EXACT_TOL: f64 = 1e-9;
const TRIALS: u64 = 100_000;
/// Trials re-run per instance with an independent feasibility check.
const FEASIBILITY_TRIALS: u64 = 2_000;

fn lower_ok(estimate: f64, stderr: f64, bound: f64) -> bool {
    estimate >= bound - MARGIN_SE * stderr
}

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

/// Collected across criteria: feasibility counts, traced statistics and
/// every instance that ran, for the cross-cutting criteria.
#[derive(Default)]
struct Shared {
    infeasible: u64,
    reports: u64,
    martingale: Vec<(String, usize, MeanEstimate)>,
    blocking_cells: usize,
    blocking_failures: Vec<String>,
    relation_violations: u64,
    crs: Vec<(String, CrsInstanceFile)>,
    auctions: Vec<(String, AuctionFile)>,
    packings: Vec<(String, PackingFile)>,
    probings: Vec<(String, ProbingFile)>,
}

impl Shared {
    fn absorb(&mut self, name: &str, r: &AcceptanceReport) {
        self.infeasible += r.infeasible_trials;
        self.reports += 1;
        if let Some(d) = &r.diagnostics {
            for m in &d.martingale {
                self.martingale
                    .push((name.to_string(), m.element, m.estimate));
            }
            self.blocking_cells += d.blocking.len();
            for c in d.blocking.iter().filter(|c| !c.pass) {
                self.blocking_failures.push(format!(
                    "{name} e{}@{}: {:.4} > {:.4}",
                    c.element, c.step, c.frequency, c.bound
                ));
            }
            self.relation_violations += d.relation_violations;
        }
    }
}

fn crs_file(spec: &GeneratorSpec, seed: u64) -> CrsInstanceFile {
    match generate_instance(spec, seed).expect("generator accepts the spec") {
        GeneratedInstance::Crs(f) => f,
        other => panic!("unexpected generated instance {other:?}"),
    }
}

/// Runs the scheme with traces and returns the worst element slack in
/// standard errors, plus a description of failures.
fn check_conditional(
    shared: &mut Shared,
    name: &str,
    file: &CrsInstanceFile,
    bound: f64,
    failures: &mut Vec<String>,
) -> f64 {
    let inst = CrsInstance::from_file(file).expect("instance loads");
    let report = estimate_acceptance(&inst, TRIALS, 1, true).expect("estimation runs");
    shared.absorb(name, &report);
    shared.crs.push((name.to_string(), file.clone()));
    let mut worst = f64::INFINITY;
    for e in &report.elements {
        let Some(p) = e.conditional else { continue };
        if !lower_ok(p.mean, p.stderr, bound) {
            failures.push(format!(
                "{name} e{}: {:.4} ± {:.4} < {bound:.4}",
                e.element, p.mean, p.stderr
            ));
        }
        worst = worst.min(p.mean - bound);
    }
    worst
}

fn timed_limit(pass: bool, start: Instant, limit: Duration, detail: String) -> Verdict {
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    Verdict::new(
        pass && in_time,
        format!(
            "{detail}; {:.1} s of {} s allowed",
            elapsed.as_secs_f64(),
            limit.as_secs()
        ),
    )
}

fn single_matroid(shared: &mut Shared) -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst = f64::INFINITY;
    let mut rng = rng_from_seed(101);
    for i in 0..20u64 {
        let spec = if i % 2 == 0 {
            let vertices = rng.gen_range(4..=6);
            GeneratorSpec::Graphic {
                vertices,
                edges: rng.gen_range(vertices..=10),
                scale: 1.0,
            }
        } else {
            let n = rng.gen_range(6..=10);
            let blocks = rng.gen_range(2..=3);
            GeneratorSpec::Partition {
                n,
                caps: (0..blocks).map(|_| rng.gen_range(1..=2)).collect(),
                scale: 1.0,
            }
        };
        let file = crs_file(&spec, 1000 + i);
        worst = worst.min(check_conditional(
            shared,
            &format!("single-{i}"),
            &file,
            0.5,
            &mut failures,
        ));
    }
    timed_limit(
        failures.is_empty(),
        start,
        Duration::from_secs(120),
        format!(
            "20 instances, min acceptance - 1/2 = {worst:.4}, {} failures {failures:?}",
            failures.len()
        ),
    )
}

fn bundled_crs() -> Vec<(String, CrsInstanceFile)> {
    let mut paths: Vec<_> = std::fs::read_dir(instances_dir())
        .expect("instances directory exists")
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    paths
        .into_iter()
        .filter_map(|p| {
            let name = p.file_stem()?.to_str()?.to_string();
            let file: CrsInstanceFile = read_json(&p).ok()?;
            Some((name, file))
        })
        .collect()
}

fn exact_oracle(shared: &mut Shared) -> Verdict {
    let mut checked = 0;
    let mut failures = Vec::new();
    for (name, file) in bundled_crs() {
        let single = file.constraints.len() == 1 && file.constraints[0].as_matroid().is_some();
        if !(single && file.n <= 5) {
            continue;
        }
        checked += 1;
        let inst = CrsInstance::from_file(&file).unwrap();
        let exact = brute_force_acceptance(&inst).unwrap();
        let report = estimate_acceptance(&inst, TRIALS, 2, false).unwrap();
        shared.absorb(&name, &report);
        shared.crs.push((name.clone(), file.clone()));
        for (e, p) in exact.iter().enumerate() {
            let Some(p) = *p else { continue };
            if p < 0.5 - EXACT_TOL {
                failures.push(format!("{name} e{e}: exact {p:.6} < 1/2"));
            }
            let est = &report.elements[e];
            let m = est.conditioning_count as f64;
            let half_width = Z_99 * (p * (1.0 - p) / m).sqrt();
            let mean = est.conditional.map_or(f64::NAN, |c| c.mean);
            if (mean - p).abs() > half_width + EXACT_TOL {
                failures.push(format!(
                    "{name} e{e}: estimate {mean:.5} outside {p:.5} ± {half_width:.5}"
                ));
            }
        }
    }
    Verdict::new(
        failures.is_empty() && checked > 0,
        format!("{checked} bundled instances, failures {failures:?}"),
    )
}

fn intersections(shared: &mut Shared) -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for k in [2usize, 3] {
        let bound = 1.0 / (k as f64 + 1.0);
        let mut worst = f64::INFINITY;
        for i in 0..5u64 {
            let spec = GeneratorSpec::Intersection {
                n: 8 + i as usize % 3,
                matroids: k,
                knapsacks: 0,
                scale: 1.0,
            };
            let file = crs_file(&spec, 2000 + 10 * k as u64 + i);
            let name = format!("k{k}-{i}");
            worst = worst.min(check_conditional(
                shared,
                &name,
                &file,
                bound,
                &mut failures,
            ));
        }
        summary.push(format!("k={k}: min slack {worst:.4}"));
    }
    timed_limit(
        failures.is_empty(),
        start,
        Duration::from_secs(300),
        format!("{}, failures {failures:?}", summary.join(", ")),
    )
}

fn bounded_knapsack(shared: &mut Shared) -> Verdict {
    let mut failures = Vec::new();
    let mut worst = f64::INFINITY;
    for i in 0..10u64 {
        let spec = GeneratorSpec::Knapsack {
            n: 6 + i as usize % 4,
            count: 1,
            bounded: true,
            scale: 1.0,
        };
        let file = crs_file(&spec, 3000 + i);
        worst = worst.min(check_conditional(
            shared,
            &format!("knap-{i}"),
            &file,
            1.0 / 3.0,
            &mut failures,
        ));
    }
    Verdict::new(
        failures.is_empty(),
        format!("10 instances, min acceptance - 1/3 = {worst:.4}, failures {failures:?}"),
    )
}

fn combined(shared: &mut Shared) -> Verdict {
    let mut failures = Vec::new();
    let mut reduced = 0;
    let mut worst = f64::INFINITY;
    for i in 0..5u64 {
        let spec = GeneratorSpec::Intersection {
            n: 8,
            matroids: 1,
            knapsacks: 1,
            scale: 1.0,
        };
        let file = crs_file(&spec, 4000 + i);
        let name = format!("mk-{i}");
        let inst = CrsInstance::from_file(&file).unwrap();
        reduced += inst.uses_reduction() as usize;
        let report = estimate_acceptance(&inst, TRIALS, 5, true).unwrap();
        shared.absorb(&name, &report);
        shared.crs.push((name.clone(), file.clone()));
        for e in &report.elements {
            let p = e.unconditional.expect("trials > 0");
            let bound = file.x[e.element] / 16.0;
            if !lower_ok(p.mean, p.stderr, bound) {
                failures.push(format!(
                    "{name} e{}: {:.4} < x/16 = {bound:.4}",
                    e.element, p.mean
                ));
            }
            worst = worst.min(p.mean - bound);
        }
    }
    Verdict::new(
        failures.is_empty() && reduced == 5,
        format!("5 instances ({reduced} reduced), min Pr[e ∈ S] - x_e/16 = {worst:.4}, failures {failures:?}"),
    )
}

/// Reruns trials of every instance seen so far and checks each output
/// against the reference independence oracles.
fn feasibility(shared: &mut Shared) -> Verdict {
    let mut bad = Vec::new();
    let mut runs = 0u64;
    for (name, file) in &shared.crs {
        let inst = CrsInstance::from_file(file).unwrap();
        for i in 0..FEASIBILITY_TRIALS {
            let run = run_crs(&inst, &mut trial_rng(77, i), false).unwrap();
            runs += 1;
            let s = run.selected.to_vec();
            if !independent_in_all(&file.constraints, &s)
                || !run.selected.is_subset(run.active_original)
            {
                bad.push(format!("{name} trial {i}: {s:?}"));
            }
        }
    }
    for (name, file) in &shared.auctions {
        let inst = AuctionInstance::from_file(file).unwrap();
        let plan = AuctionPlan::new(&inst, 0.1).unwrap();
        for i in 0..FEASIBILITY_TRIALS {
            let run = run_auction(&plan, &mut trial_rng(78, i)).unwrap();
            runs += 1;
            let sold: Vec<usize> = run.sales.iter().map(|s| s.item).collect();
            let per_client_ok = run
                .sales
                .iter()
                .all(|s| file.clients[s.client].contains(&s.item))
                && run
                    .sales
                    .iter()
                    .map(|s| s.client)
                    .collect::<std::collections::BTreeSet<_>>()
                    .len()
                    == run.sales.len();
            if !independent_in_all(&file.constraints, &sold) || !per_client_ok {
                bad.push(format!("{name} trial {i}: sold {sold:?}"));
            }
        }
    }
    for (name, file) in &shared.packings {
        let inst = PackingInstance::from_file(file).unwrap();
        let x = file
            .x
            .clone()
            .unwrap_or_else(|| solve_setpacking_lp(&inst).unwrap().0);
        let plan = PackingPlan::new(&inst, x).unwrap();
        for i in 0..FEASIBILITY_TRIALS {
            let run = run_kset_packing(&plan, &mut trial_rng(79, i)).unwrap();
            runs += 1;
            for (row, m) in run.materialized.iter().zip(&file.row_matroids) {
                if !independent(m, &row.to_vec()) {
                    bad.push(format!("{name} trial {i}: row copies {row:?}"));
                }
            }
        }
    }
    for (name, file) in &shared.probings {
        let inst = ProbingInstance::from_file(file).unwrap();
        let plan = ProbingPlan::new(&inst, file.x.clone().unwrap()).unwrap();
        for filter in [false, true] {
            for i in 0..FEASIBILITY_TRIALS {
                let run = run_probing(&plan, &mut trial_rng(80, i), filter, false).unwrap();
                runs += 1;
                if !independent_in_all(&file.outer, &run.probed.to_vec())
                    || !independent_in_all(&file.inner, &run.taken.to_vec())
                    || !run.taken.is_subset(run.probed)
                {
                    bad.push(format!(
                        "{name} trial {i}: probed {:?} taken {:?}",
                        run.probed, run.taken
                    ));
                }
            }
        }
    }
    Verdict::new(
        shared.infeasible == 0 && bad.is_empty(),
        format!(
            "{} estimator infeasible trials over {} reports; {} of {runs} rechecked outputs dependent {:?}",
            shared.infeasible,
            shared.reports,
            bad.len(),
            bad.iter().take(5).collect::<Vec<_>>()
        ),
    )
}

/// Every traced experiment's martingale estimate, plus an independent
/// recomputation from raw traces for a few instances.
fn martingale(shared: &mut Shared) -> Verdict {
    let mut failures: Vec<String> = shared
        .martingale
        .iter()
        .filter(|(_, _, m)| !lower_ok(m.mean, m.stderr, 1.0))
        .map(|(name, e, m)| format!("{name} e{e}: {:.4} ± {:.4}", m.mean, m.stderr))
        .collect();
    let recomputed: Vec<(String, CrsInstanceFile)> = shared
        .crs
        .iter()
        .filter(|(n, _)| ["single-0", "k2-0", "knap-0", "mk-0"].contains(&n.as_str()))
        .cloned()
        .collect();
    for (name, file) in &recomputed {
        let inst = CrsInstance::from_file(file).unwrap();
        let n = file.n;
        let mut sum = vec![0.0; n];
        let mut sum_sq = vec![0.0; n];
        let mut count = vec![0u64; n];
        for i in 0..20_000 {
            let run = run_crs(&inst, &mut trial_rng(81, i), true).unwrap();
            let trace = run.trace.expect("traced run");
            for e in run.active.iter() {
                // Value of (1+λ)S + Y at the stopping time; Y is zero there
                // unless e stays live to the end.
                let tau = trace.joint.tau(e).unwrap_or(trace.joint.steps());
                let (s, _, y) = trace.joint.value(e, tau);
                let v = (1.0 + run.lambda) * s as f64 + y as f64;
                sum[e] += v;
                sum_sq[e] += v * v;
                count[e] += 1;
            }
        }
        for e in 0..n {
            if count[e] < 2 {
                continue;
            }
            let c = count[e] as f64;
            let mean = sum[e] / c;
            let var = (sum_sq[e] / c - mean * mean).max(0.0) * c / (c - 1.0);
            let se = (var / c).sqrt();
            if !lower_ok(mean, se, 1.0) {
                failures.push(format!("{name} e{e} recomputed: {mean:.4} ± {se:.4}"));
            }
        }
    }
    Verdict::new(
        failures.is_empty() && !shared.martingale.is_empty(),
        format!(
            "{} traced estimates, {} recomputed instances, failures {failures:?}",
            shared.martingale.len(),
            recomputed.len()
        ),
    )
}

fn submodular_crs(shared: &mut Shared) -> Verdict {
    let mut failures = Vec::new();
    let mut ratios = Vec::new();
    for (i, (n, k)) in [(8usize, 1usize), (10, 1), (12, 1), (8, 2), (10, 2), (12, 2)]
        .into_iter()
        .enumerate()
    {
        let spec = GeneratorSpec::Coverage {
            n,
            universe: n + 4,
            matroids: k,
            scale: 1.0,
        };
        let file = crs_file(&spec, 5000 + i as u64);
        let name = format!("cov-n{n}-k{k}");
        let oracle = file
            .oracle
            .clone()
            .expect("coverage instances carry an oracle");
        let inst = CrsInstance::from_file(&file).unwrap();
        let f = SubmodularOracle::from_spec(&oracle).unwrap();
        let value = estimate_submodular_crs(&inst, &f, TRIALS, 6).unwrap();
        shared.crs.push((name.clone(), file.clone()));
        let fx = multilinear(&oracle, &file.x);
        let bound = fx / (k as f64 + 1.0);
        ratios.push(format!("{name}: {:.3}/{:.3}", value.mean, bound));
        if !lower_ok(value.mean, value.stderr, bound) {
            failures.push(format!(
                "{name}: E[f] = {:.4} ± {:.4} < F(x)/(k+1) = {bound:.4}",
                value.mean, value.stderr
            ));
        }
    }
    Verdict::new(
        failures.is_empty(),
        format!("{}; failures {failures:?}", ratios.join(", ")),
    )
}

fn measured_greedy() -> Verdict {
    let eps = 0.05;
    let floor = 1.0 / std::f64::consts::E - eps;
    let mut failures = Vec::new();
    let mut worst = f64::INFINITY;
    let cases = [(8usize, 1usize), (9, 2), (10, 1), (11, 2), (12, 1), (12, 2)];
    for (i, (n, k)) in cases.into_iter().enumerate() {
        let spec = GeneratorSpec::Greedy {
            n,
            matroids: k,
            nonmonotone: true,
        };
        let GeneratedInstance::Greedy(file) = generate_instance(&spec, 6000 + i as u64).unwrap()
        else {
            panic!("greedy generator returned another kind")
        };
        let file: GreedyFile = file;
        let f = SubmodularOracle::from_spec(&file.oracle).unwrap();
        let constraints: Vec<Constraint> = file
            .constraints
            .iter()
            .map(|c| Constraint::from_spec(c, n).unwrap())
            .collect();
        let poly = Polytope::from_constraints(n, &constraints).unwrap();
        let cfg = GreedyConfig {
            t_end: 1.0,
            steps: 100,
            ..GreedyConfig::default()
        };
        let traj = measured_continuous_greedy(&f, &poly, &cfg, &mut rng_from_seed(7)).unwrap();
        let opt = brute_force_optimum(&file.oracle, &file.constraints, n);
        let value = multilinear(&file.oracle, traj.final_point());
        let name = format!("cut-n{n}-k{k}");
        if opt > 0.0 {
            worst = worst.min(value / opt);
        }
        if value < floor * opt - EXACT_TOL {
            failures.push(format!(
                "{name}: F(y(1)) = {value:.4} < {floor:.4}·{opt:.4}"
            ));
        }
        let delta = 1.0 / cfg.steps as f64;
        for (step, y) in traj.y.iter().enumerate() {
            let envelope = 1.0 - (1.0 - delta).powi(step as i32);
            if let Some(e) = y.iter().position(|&v| v > envelope + EXACT_TOL) {
                failures.push(format!("{name}: y_{e} above the envelope at step {step}"));
                break;
            }
        }
        if !poly.contains(traj.final_point(), EXACT_TOL) {
            failures.push(format!("{name}: y(1) outside the polytope"));
        }
    }
    Verdict::new(
        failures.is_empty(),
        format!(
            "{} instances, min F(y(1))/OPT = {worst:.4} vs {floor:.4}, failures {failures:?}",
            cases.len()
        ),
    )
}

fn tail(pmf: &[f64], p: usize) -> f64 {
    pmf.iter().skip(p).sum()
}

/// `Pr[item l offered at price p and chosen]` by enumerating every offer
/// pattern and, within a pattern, the chosen item's value.
fn menu_top_probabilities(pmf: &[Vec<f64>], x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = x.len();
    let b = pmf[0].len() - 1;
    // Options per item: None or an offered price with positive weight.
    let options: Vec<Vec<(Option<usize>, f64)>> = x
        .iter()
        .map(|row| {
            let mut o = vec![(None, 1.0 - row.iter().sum::<f64>())];
            o.extend(
                row.iter()
                    .enumerate()
                    .filter(|(_, &w)| w > 0.0)
                    .map(|(p, &w)| (Some(p), w)),
            );
            o
        })
        .collect();
    let mut out = vec![vec![0.0; b + 1]; k];
    let mut idx = vec![0usize; k];
    loop {
        let offers: Vec<(Option<usize>, f64)> = (0..k).map(|d| options[d][idx[d]]).collect();
        let weight: f64 = offers.iter().map(|o| o.1).product();
        if weight > 0.0 {
            for l in 0..k {
                let Some(p) = offers[l].0 else { continue };
                let mut chosen = 0.0;
                for v in p..=b {
                    let u = v - p;
                    let mut others = 1.0;
                    for d in 0..k {
                        if d == l {
                            continue;
                        }
                        let Some(pd) = offers[d].0 else { continue };
                        // d wins with utility above u, or equal utility and a lower id.
                        let threshold = if d < l { pd + u } else { pd + u + 1 };
                        others *= 1.0 - tail(&pmf[d], threshold);
                    }
                    chosen += pmf[l][v] * others;
                }
                out[l][p] += weight * chosen;
            }
        }
        let mut d = 0;
        while d < k {
            idx[d] += 1;
            if idx[d] < options[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == k {
            break;
        }
    }
    out
}

fn single_client_refinement() -> Verdict {
    let eps = 0.1;
    let cap = 10 * (1.0f64 / (eps * eps)).ceil() as usize;
    let mut rng = rng_from_seed(1010);
    let mut failures = Vec::new();
    let mut max_rounds = 0;
    let menus = 30;
    for m in 0..menus {
        let k = rng.gen_range(1..=5);
        let b = rng.gen_range(1..=10);
        let pmf: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let w: Vec<f64> = (0..=b).map(|_| rng.gen::<f64>()).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|v| v / s).collect()
            })
            .collect();
        let mut x: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let mut row = vec![0.0; b + 1];
                let mut prices: Vec<usize> = (0..=b).collect();
                prices.shuffle(&mut rng);
                for &p in prices.iter().take(rng.gen_range(1..=3)) {
                    row[p] = rng.gen::<f64>();
                }
                row
            })
            .collect();
        let max_row = x.iter().map(|r| r.iter().sum::<f64>()).fold(0.0, f64::max);
        let demand: f64 = x
            .iter()
            .zip(&pmf)
            .map(|(row, pm)| {
                row.iter()
                    .enumerate()
                    .map(|(p, v)| v * tail(pm, p))
                    .sum::<f64>()
            })
            .sum();
        let scale = rng.gen_range(0.5..1.0) / max_row.max(demand);
        x.iter_mut().flatten().for_each(|v| *v *= scale);

        let inst = AuctionInstance::single_client(b, pmf.clone()).unwrap();
        let mv = MenuVector {
            items: (0..k).collect(),
            x: x.clone(),
        };
        let r = match refine_menu_vector(&inst, &mv, eps, true) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("menu {m}: {e}"));
                continue;
            }
        };
        max_rounds = max_rounds.max(r.rounds);
        if r.rounds > cap {
            failures.push(format!("menu {m}: {} rounds", r.rounds));
        }
        let probs = menu_top_probabilities(&pmf, &r.y.x);
        for l in 0..k {
            for p in 0..=b {
                let q = x[l][p] * tail(&pmf[l], p) / 4.0;
                let pr = probs[l][p];
                let ok = if q > 0.0 {
                    pr >= q * (1.0 - EXACT_TOL) && pr <= (1.0 + 3.0 * eps) * q * (1.0 + EXACT_TOL)
                } else {
                    pr <= EXACT_TOL
                };
                if !ok {
                    failures.push(format!("menu {m} ({l},{p}): Pr = {pr:.6}, q = {q:.6}"));
                }
            }
        }
        let violations = r.round_property_violations(EXACT_TOL);
        if !violations.is_empty() {
            failures.push(format!("menu {m}: {}", violations[0]));
        }
    }
    Verdict::new(
        failures.is_empty(),
        format!("{menus} menus, at most {max_rounds} rounds of {cap}, failures {failures:?}"),
    )
}

/// Rank by enumeration from the reference oracle.
fn rank(spec: &ConstraintSpec, set: &[usize]) -> usize {
    let n = set.len();
    (0u64..1 << n)
        .map(|bits| {
            members(bits)
                .into_iter()
                .map(|i| set[i])
                .collect::<Vec<_>>()
        })
        .filter(|s| independent(spec, s))
        .map(|s| s.len())
        .max()
        .unwrap_or(0)
}

fn auction_end_to_end(shared: &mut Shared) -> Verdict {
    let start = Instant::now();
    let eps = 0.1;
    let mut files: Vec<(String, AuctionFile)> = vec![(
        "auction_k1".into(),
        read_json(&instances_dir().join("auction_k1.json")).unwrap(),
    )];
    for (i, (clients, per, b)) in [(3usize, 2usize, 5usize), (4, 2, 8)]
        .into_iter()
        .enumerate()
    {
        let spec = GeneratorSpec::Auction {
            clients,
            items_per_client: per,
            max_value: b,
            matroids: 1,
        };
        let GeneratedInstance::Auction(f) = generate_instance(&spec, 7000 + i as u64).unwrap()
        else {
            panic!("auction generator returned another kind")
        };
        files.push((format!("auction-gen-{i}"), f));
    }
    let mut failures = Vec::new();
    let mut ratios = Vec::new();
    for (name, file) in &files {
        let inst = AuctionInstance::from_file(file).unwrap();
        let plan = AuctionPlan::new(&inst, eps).unwrap();
        let sol = plan.solution();
        // LP value and feasibility of z = Σ_p x·tail in the matroid polytope.
        let m = file.pmf.len();
        let b = file.max_value;
        let lp: f64 = (0..m)
            .map(|c| {
                (1..=b)
                    .map(|p| p as f64 * sol.x[c][p] * tail(&file.pmf[c], p))
                    .sum::<f64>()
            })
            .sum();
        if (lp - plan.lp_value()).abs() > 1e-6 * lp.max(1.0) {
            failures.push(format!(
                "{name}: LP value {lp} vs reported {}",
                plan.lp_value()
            ));
        }
        let z: Vec<f64> = (0..m)
            .map(|c| (0..=b).map(|p| sol.x[c][p] * tail(&file.pmf[c], p)).sum())
            .collect();
        for spec in &file.constraints {
            for bits in 1u64..1 << m {
                let s = members(bits);
                let load: f64 = s.iter().map(|&c| z[c]).sum();
                if load > rank(spec, &s) as f64 + 1e-6 {
                    failures.push(format!("{name}: z({s:?}) = {load:.4} above rank"));
                }
            }
        }
        let bound = lp / (1.0 + 4.0 + eps);
        let report = estimate_revenue(&plan, TRIALS, 8).unwrap();
        shared.infeasible += report.infeasible_trials;
        shared.reports += 1;
        shared.auctions.push((name.clone(), file.clone()));
        ratios.push(format!("{name}: {:.3}/{:.3}", report.revenue.mean, bound));
        if !lower_ok(report.revenue.mean, report.revenue.stderr, bound) {
            failures.push(format!(
                "{name}: revenue {:.4} ± {:.4} < {bound:.4}",
                report.revenue.mean, report.revenue.stderr
            ));
        }
    }
    timed_limit(
        failures.is_empty(),
        start,
        Duration::from_secs(600),
        format!("{}; failures {failures:?}", ratios.join(", ")),
    )
}

fn set_packing(shared: &mut Shared) -> Verdict {
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for k in [1usize, 2] {
        for i in 0..3u64 {
            let spec = GeneratorSpec::Packing {
                n: 6 + i as usize,
                rows: k + 1,
                k,
            };
            let GeneratedInstance::Packing(file) =
                generate_instance(&spec, 8000 + 10 * k as u64 + i).unwrap()
            else {
                panic!("packing generator returned another kind")
            };
            let name = format!("pack-k{k}-{i}");
            let inst = PackingInstance::from_file(&file).unwrap();
            let x = file.x.clone().unwrap();
            // Row loads Σ_e p^i_e x_e stay within each uniform row rank.
            for (row, m) in file.row_matroids.iter().enumerate() {
                let ConstraintSpec::Uniform { r } = m else {
                    continue;
                };
                let load: f64 = file
                    .elements
                    .iter()
                    .zip(&x)
                    .map(|(el, xe)| {
                        xe * el
                            .outcomes
                            .iter()
                            .map(|o| o.prob * o.l[row] as f64)
                            .sum::<f64>()
                    })
                    .sum();
                if load > *r as f64 + 1e-6 {
                    failures.push(format!("{name}: row {row} load {load:.4} above rank {r}"));
                }
            }
            let lp: f64 = file
                .elements
                .iter()
                .zip(&x)
                .map(|(el, xe)| xe * el.outcomes.iter().map(|o| o.prob * o.v).sum::<f64>())
                .sum();
            let plan = PackingPlan::new(&inst, x.clone()).unwrap();
            let report = estimate_packing(&plan, TRIALS, 9).unwrap();
            shared.infeasible += report.infeasible_trials;
            shared.reports += 1;
            shared.packings.push((name.clone(), file.clone()));
            let denom = k as f64 + 1.0;
            for e in &report.elements {
                let bound = x[e.element] / denom;
                if !lower_ok(e.probed.mean, e.probed.stderr, bound) {
                    failures.push(format!(
                        "{name} e{}: {:.4} < {bound:.4}",
                        e.element, e.probed.mean
                    ));
                }
            }
            let bound = lp / denom;
            if !lower_ok(report.value.mean, report.value.stderr, bound) {
                failures.push(format!(
                    "{name}: value {:.4} < {bound:.4}",
                    report.value.mean
                ));
            }
            summary.push(format!("{name}: {:.3}/{:.3}", report.value.mean, bound));
        }
    }
    Verdict::new(
        failures.is_empty(),
        format!("{}; failures {failures:?}", summary.join(", ")),
    )
}

fn probing(shared: &mut Shared) -> Verdict {
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for (i, n) in [6usize, 8, 10].into_iter().enumerate() {
        let spec = GeneratorSpec::Probing {
            n,
            k_in: 1,
            k_out: 1,
            universe: n + 2,
        };
        let GeneratedInstance::Probing(file) = generate_instance(&spec, 9000 + i as u64).unwrap()
        else {
            panic!("probing generator returned another kind")
        };
        let name = format!("probe-n{n}");
        let inst = ProbingInstance::from_file(&file).unwrap();
        let x = file.x.clone().unwrap();
        let px: Vec<f64> = x.iter().zip(&file.p).map(|(a, b)| a * b).collect();
        let bound = multilinear(&file.oracle, &px) / 3.0;
        let plan = ProbingPlan::new(&inst, x.clone()).unwrap();
        for filter in [true, false] {
            let report = estimate_probing(&plan, TRIALS, 10, filter).unwrap();
            shared.infeasible += report.infeasible_trials;
            shared.reports += 1;
            let o = report.objective;
            if !lower_ok(o.mean, o.stderr, bound) {
                failures.push(format!(
                    "{name} filter={filter}: {:.4} < F(px)/3 = {bound:.4}",
                    o.mean
                ));
            }
            if !filter {
                for e in &report.elements {
                    let b = x[e.element] / 3.0;
                    if !lower_ok(e.probed.mean, e.probed.stderr, b) {
                        failures.push(format!(
                            "{name} e{}: probed {:.4} < {b:.4}",
                            e.element, e.probed.mean
                        ));
                    }
                }
            }
            summary.push(format!(
                "{name}/{}: {:.3}/{bound:.3}",
                if filter { "f" } else { "nf" },
                o.mean
            ));
        }
        shared.probings.push((name, file));
    }

    // End to end: relaxation by measured greedy, rounding by the probing
    // scheme, compared with the exact relaxation optimum.
    let greedy_eps = 0.05;
    for (i, n) in [6usize, 8].into_iter().enumerate() {
        let spec = GeneratorSpec::Probing {
            n,
            k_in: 1,
            k_out: 1,
            universe: n + 2,
        };
        let GeneratedInstance::Probing(mut file) =
            generate_instance(&spec, 9100 + i as u64).unwrap()
        else {
            panic!("probing generator returned another kind")
        };
        file.x = None;
        let name = format!("probe-e2e-n{n}");
        let inst = ProbingInstance::from_file(&file).unwrap();
        let cfg = GreedyConfig {
            t_end: 1.0,
            steps: 100,
            ..GreedyConfig::default()
        };
        let sol = solve_probing_mp(&inst, &cfg, &mut rng_from_seed(11)).unwrap();
        let table: Vec<f64> = (0u64..1 << n)
            .map(|bits| set_value(&file.oracle, &members(bits)))
            .collect();
        let inner: Vec<Matroid> = inst.inner().to_vec();
        let outer: Vec<Matroid> = inst.outer().to_vec();
        let opt = probing_mp_optimum(&table, &file.p, &inner, &outer).unwrap();
        let plan = ProbingPlan::new(&inst, sol.x.clone()).unwrap();
        let report = estimate_probing(&plan, TRIALS, 12, true).unwrap();
        shared.infeasible += report.infeasible_trials;
        shared.reports += 1;
        let bound = (1.0 / std::f64::consts::E - greedy_eps) * opt / 3.0;
        let o = report.objective;
        if !lower_ok(o.mean, o.stderr, bound) {
            failures.push(format!(
                "{name}: {:.4} < (1/e-ε)·f⁺*/3 = {bound:.4}",
                o.mean
            ));
        }
        summary.push(format!("{name}: {:.3}/{bound:.3} (f⁺* = {opt:.3})", o.mean));
        file.x = Some(sol.x);
        shared.probings.push((name, file));
    }
    Verdict::new(
        failures.is_empty(),
        format!("{}; failures {failures:?}", summary.join(", ")),
    )
}

fn property_suites(shared: &mut Shared) -> Verdict {
    let mut failures = Vec::new();
    let mut decompositions = 0;
    let mut mappings = 0;

    // Decomposition identity and exchange mappings on every matroid seen.
    for (name, file) in &shared.crs {
        for spec in &file.constraints {
            let Some(ms) = spec.as_matroid() else {
                continue;
            };
            let m = Matroid::from_spec(&ms, file.n).unwrap();
            let dec = m.decompose_support(&file.x, EXACT_TOL).unwrap();
            decompositions += 1;
            let total: f64 = dec.entries.iter().map(|e| e.0).sum();
            let mut marg = vec![0.0; file.n];
            for &(beta, set) in &dec.entries {
                if !(beta > 0.0) || !independent(spec, &set.to_vec()) {
                    failures.push(format!("{name}: bad support entry ({beta}, {set:?})"));
                }
                set.iter().for_each(|e| marg[e] += beta);
            }
            let err = marg
                .iter()
                .zip(&file.x)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if (total - 1.0).abs() > EXACT_TOL || err > EXACT_TOL {
                failures.push(format!(
                    "{name}: weights sum {total}, marginal error {err:e}"
                ));
            }
            let sets: Vec<ElementSet> = dec.entries.iter().map(|e| e.1).collect();
            for &a in sets.iter().take(4) {
                for &b in sets.iter().take(4) {
                    let map = m.build_exchange_mapping(a, b).unwrap();
                    mappings += 1;
                    let bv = b.to_vec();
                    let mut images = Vec::new();
                    for e in a.iter() {
                        let img = map.image(e).expect("every source element is mapped");
                        let ok = if b.contains(e) {
                            img == Some(e)
                        } else {
                            match img {
                                None => independent(spec, &[bv.clone(), vec![e]].concat()),
                                Some(f) => {
                                    let mut s: Vec<usize> =
                                        bv.iter().copied().filter(|&g| g != f).collect();
                                    s.push(e);
                                    b.contains(f) && independent(spec, &s)
                                }
                            }
                        };
                        if !ok {
                            failures.push(format!("{name}: exchange image of {e} is {img:?}"));
                        }
                        if let Some(f) = img {
                            images.push(f);
                        }
                    }
                    let mut dedup = images.clone();
                    dedup.sort_unstable();
                    dedup.dedup();
                    if dedup.len() != images.len() {
                        failures.push(format!("{name}: exchange mapping is not injective"));
                    }
                }
            }
        }
    }

    // Interval mass conservation under arc blocking.
    let mut rng = rng_from_seed(1414);
    for _ in 0..2000 {
        let mut cuts: Vec<f64> = (0..2 * rng.gen_range(1..=4))
            .map(|_| rng.gen::<f64>())
            .collect();
        cuts.sort_by(f64::total_cmp);
        let ivs: Vec<(f64, f64)> = cuts.chunks(2).map(|c| (c[0], c[1])).collect();
        let set = IntervalSet::from_intervals(ivs).unwrap();
        let total = set.total_mass();
        let mass = rng.gen_range(0.0..1.0);
        let (kept, blocked) = set.block_random_mass(mass, &mut rng);
        let moved = kept.total_mass() + blocked.total_mass();
        if (moved - total).abs() > 1e-12 || (blocked.total_mass() - mass.min(total)).abs() > 1e-12 {
            failures.push(format!(
                "interval mass: {total} -> {} + {}",
                kept.total_mass(),
                blocked.total_mass()
            ));
        }
        for &(a, b) in kept.intervals() {
            if blocked
                .intervals()
                .iter()
                .any(|&(c, d)| a.max(c) < b.min(d))
            {
                failures.push("kept and blocked intervals overlap".into());
            }
        }
    }

    // Submodularity of every bundled oracle with at most six elements.
    let mut oracles = 0;
    let mut paths: Vec<_> = std::fs::read_dir(instances_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    for p in paths {
        let v: serde_json::Value = read_json(&p).unwrap();
        let Some(o) = v.get("oracle") else { continue };
        let spec: OracleSpec = serde_json::from_value(o.clone()).unwrap();
        let n = ground_size(&spec);
        if n > 6 {
            continue;
        }
        oracles += 1;
        let lib_ok = SubmodularOracle::from_spec(&spec)
            .unwrap()
            .check_submodular(EXACT_TOL)
            .is_ok();
        if !is_submodular(&spec, n, EXACT_TOL) || !lib_ok {
            failures.push(format!("{}: oracle is not submodular", p.display()));
        }
    }

    // Per-step blocking frequencies of every traced experiment.
    failures.extend(shared.blocking_failures.iter().cloned());
    if shared.relation_violations > 0 {
        failures.push(format!(
            "{} trace relation violations",
            shared.relation_violations
        ));
    }

    Verdict::new(
        failures.is_empty() && oracles > 0 && shared.blocking_cells > 0,
        format!(
            "{decompositions} decompositions, {mappings} exchange mappings, 2000 interval blockings, \
             {oracles} bundled oracles, {} blocking cells; failures {:?}",
            shared.blocking_cells,
            failures.iter().take(5).collect::<Vec<_>>()
        ),
    )
}

fn main() {
    let mut shared = Shared::default();
    type Criterion = (u32, &'static str, fn(&mut Shared) -> Verdict);
    // Feasibility runs last: it rechecks every instance the others used.
    let criteria: [Criterion; 14] = [
        (
            1,
            "single-matroid scheme, acceptance >= 1/2",
            single_matroid,
        ),
        (
            2,
            "exact enumeration on small single-matroid instances",
            exact_oracle,
        ),
        (
            3,
            "intersections of k matroids, acceptance >= 1/(k+1)",
            intersections,
        ),
        (4, "bounded knapsack, acceptance >= 1/3", bounded_knapsack),
        (
            5,
            "one matroid and one knapsack, Pr[e in S] >= x_e/16",
            combined,
        ),
        (7, "submartingale of the characteristic traces", martingale),
        (
            8,
            "submodular objective, E[f(X)] >= F(x)/(k+1)",
            submodular_crs,
        ),
        (9, "measured greedy against the exhaustive optimum", |_| {
            measured_greedy()
        }),
        (10, "single-client menu refinement", |_| {
            single_client_refinement()
        }),
        (11, "posted-price revenue >= LP/(5+eps)", auction_end_to_end),
        (12, "stochastic k-set packing", set_packing),
        (13, "submodular stochastic probing", probing),
        (14, "property suites", property_suites),
        (6, "feasibility of every output", feasibility),
    ];
    let mut results = Vec::new();
    for (id, name, check) in criteria {
        let start = Instant::now();
        let v = check(&mut shared);
        eprintln!(
            "  criterion {id:02} finished in {:.1} s",
            start.elapsed().as_secs_f64()
        );
        results.push((id, name, v));
    }
    results.sort_by_key(|r| r.0);
    println!();
    for (id, name, v) in &results {
        println!(
            "criterion {id:02} {} {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!(
        "\nacceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
