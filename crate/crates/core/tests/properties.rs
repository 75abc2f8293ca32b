//! Randomized structural properties of the matroid, knapsack, scheme,
//! relaxation, mechanism and probing layers.

mod common;

use proptest::prelude::*;
use rand::Rng;

use rocrs::crs::{run_crs, CrsInstance, CrsInstanceFile};
use rocrs::harness::{generate_instance, GeneratedInstance, GeneratorSpec};
use rocrs::knapsack::IntervalSet;
use rocrs::matroids::TAU_DEC;
use rocrs::mechanisms::{
    realize_menu, run_menu, top_probability_exact, AuctionInstance, MenuVector,
};
use rocrs::probing::{run_probing, ProbeEventKind, ProbingInstance, ProbingPlan};
use rocrs::relaxations::{f_plus, solve_lp, LinearProgram, Relation};
use rocrs::seed::rng_from_seed;
use rocrs::submodular::{multilinear_exact, SubmodularOracle};
use rocrs::{ElementSet, Matroid, MatroidSpec};

use common::*;

fn matroid_spec() -> impl Strategy<Value = (MatroidSpec, usize)> {
    prop_oneof![
        (1usize..=8, 0usize..=4).prop_map(|(n, r)| (MatroidSpec::Uniform { r }, n)),
        (
            2usize..=8,
            proptest::collection::vec(0usize..3, 8),
            proptest::collection::vec(1usize..=2, 3)
        )
            .prop_map(|(n, assign, caps)| {
                let mut blocks = vec![Vec::new(); 3];
                for e in 0..n {
                    blocks[assign[e]].push(e);
                }
                (MatroidSpec::Partition { blocks, caps }, n)
            }),
        (
            2usize..=5,
            proptest::collection::vec((0usize..5, 0usize..5), 1..=8)
        )
            .prop_map(|(v, raw)| {
                let edges: Vec<[usize; 2]> = raw.iter().map(|&(a, b)| [a % v, b % v]).collect();
                let n = edges.len();
                (MatroidSpec::Graphic { vertices: v, edges }, n)
            }),
    ]
}

fn crs_from(spec: &GeneratorSpec, seed: u64) -> CrsInstanceFile {
    match generate_instance(spec, seed).unwrap() {
        GeneratedInstance::Crs(f) => f,
        _ => unreachable!(),
    }
}

fn family(kind: u8, n: usize) -> GeneratorSpec {
    match kind % 4 {
        0 => GeneratorSpec::Graphic {
            vertices: n / 2 + 2,
            edges: n,
            scale: 1.0,
        },
        1 => GeneratorSpec::Partition {
            n,
            caps: vec![1, 2],
            scale: 0.9,
        },
        2 => GeneratorSpec::Intersection {
            n,
            matroids: 2,
            knapsacks: 1,
            scale: 1.0,
        },
        _ => GeneratorSpec::Knapsack {
            n,
            count: 2,
            bounded: true,
            scale: 1.0,
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn independence_is_downward_closed((spec, n) in matroid_spec(), bits in any::<u64>()) {
        let m = Matroid::from_spec(&spec, n).unwrap();
        let s = ElementSet::from_bits(bits).intersection(ElementSet::full(n));
        if m.independent(s) {
            for e in s.iter() {
                prop_assert!(m.independent(s.without(e)));
            }
        }
        prop_assert_eq!(m.independent(s), independent(&spec.clone().into(), &s.to_vec()));
    }

    #[test]
    fn rank_is_submodular((spec, n) in matroid_spec()) {
        prop_assume!(n <= 6);
        let m = Matroid::from_spec(&spec, n).unwrap();
        let full = ElementSet::full(m.n());
        for s in full.subsets() {
            for t in full.subsets() {
                let lhs = m.rank(s).unwrap() + m.rank(t).unwrap();
                let rhs = m.rank(s.union(t)).unwrap() + m.rank(s.intersection(t)).unwrap();
                prop_assert!(lhs >= rhs);
            }
        }
    }

    #[test]
    fn exchange_mappings_satisfy_their_properties((spec, n) in matroid_spec(), a in any::<u64>(), b in any::<u64>()) {
        let m = Matroid::from_spec(&spec, n).unwrap();
        let full = ElementSet::full(n);
        let a = m.greedy_basis(ElementSet::from_bits(a).intersection(full));
        let b = m.greedy_basis(ElementSet::from_bits(b).intersection(full));
        if a.len() <= b.len() {
            let map = m.build_exchange_mapping(a, b).unwrap();
            prop_assert!(map.verify(&m).is_ok());
            let cs = spec.clone().into();
            let mut images = Vec::new();
            for e in a.iter() {
                let img = map.image(e).unwrap();
                if b.contains(e) {
                    prop_assert_eq!(img, Some(e));
                } else if let Some(f) = img {
                    let mut s: Vec<usize> = b.iter().filter(|&g| g != f).collect();
                    s.push(e);
                    prop_assert!(b.contains(f) && independent(&cs, &s));
                } else {
                    prop_assert!(independent(&cs, &b.with(e).to_vec()));
                }
                images.extend(img);
            }
            let mut dedup = images.clone();
            dedup.sort_unstable();
            dedup.dedup();
            prop_assert_eq!(dedup.len(), images.len());
        }
    }

    #[test]
    fn interval_mass_is_conserved(cuts in proptest::collection::vec(0.0f64..1.0, 2..10), mass in 0.0f64..1.2, seed in any::<u64>()) {
        let mut cuts = cuts;
        cuts.sort_by(f64::total_cmp);
        let ivs: Vec<(f64, f64)> = cuts.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        let set = IntervalSet::from_intervals(ivs).unwrap();
        let (kept, blocked) = set.block_random_mass(mass, &mut rng_from_seed(seed));
        let old = set.total_mass();
        prop_assert!((kept.total_mass() - (old - mass.min(old))).abs() <= 1e-12);
        prop_assert!((blocked.total_mass() - mass.min(old)).abs() <= 1e-12);
    }

    #[test]
    fn simplex_is_deterministic(w in proptest::collection::vec(-1.0f64..2.0, 4), rows in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 4), 1..4)) {
        let mut lp = LinearProgram::new(w);
        for r in rows {
            lp.add_row(r, Relation::Le, 1.0);
        }
        let a = solve_lp(&lp).unwrap();
        let b = solve_lp(&lp).unwrap();
        prop_assert_eq!(a.status, b.status);
        prop_assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        prop_assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn concave_closure_dominates_multilinear(seed in any::<u64>(), y in proptest::collection::vec(0.0f64..1.0, 4)) {
        let mut rng = rng_from_seed(seed);
        let covers: Vec<Vec<usize>> = (0..4).map(|_| (0..5).filter(|_| rng.gen_bool(0.4)).collect()).collect();
        let f = SubmodularOracle::coverage(vec![1.0, 0.5, 2.0, 1.5, 0.7], covers).unwrap();
        let fp = f_plus(&f.value_table().unwrap(), &y).unwrap();
        prop_assert!(fp >= multilinear_exact(&f, &y).unwrap() - 1e-9);
    }

    #[test]
    fn one_item_tops_any_menu(seed in any::<u64>(), k in 1usize..=5, b in 1usize..=8) {
        let mut rng = rng_from_seed(seed);
        let pmf: Vec<Vec<f64>> = (0..k).map(|_| {
            let w: Vec<f64> = (0..=b).map(|_| rng.gen::<f64>()).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect()
        }).collect();
        let inst = AuctionInstance::single_client(b, pmf).unwrap();
        let x: Vec<Vec<f64>> = (0..k).map(|_| (0..=b).map(|_| rng.gen::<f64>() / (b + 1) as f64).collect()).collect();
        let mv = MenuVector { items: (0..k).collect(), x };
        let total: f64 = top_probability_exact(&inst, &mv).iter().flatten().sum();
        prop_assert!(total <= 1.0 + 1e-12);
        // Offers are fixed by the vector and the stream before any value is drawn.
        let offers = realize_menu(&mv, &mut rng_from_seed(seed ^ 1));
        let outcome = run_menu(&inst, &mv, &mut rng_from_seed(seed ^ 1));
        prop_assert_eq!(offers, outcome.offers);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn decompositions_reproduce_the_vector(kind in 0u8..2, n in 3usize..=10, seed in any::<u64>()) {
        let file = crs_from(&family(kind, n), seed);
        let spec = file.constraints[0].as_matroid().unwrap();
        let m = Matroid::from_spec(&spec, file.n).unwrap();
        let dec = m.decompose_support(&file.x, TAU_DEC).unwrap();
        let total: f64 = dec.entries.iter().map(|e| e.0).sum();
        prop_assert!((total - 1.0).abs() <= TAU_DEC);
        let marg = dec.marginals(file.n);
        let err = marg.iter().zip(&file.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err <= TAU_DEC, "error {err:e}");
        for (_, set) in &dec.entries {
            prop_assert!(independent(&file.constraints[0], &set.to_vec()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scheme_outputs_are_feasible_and_traces_consistent(kind in 0u8..4, n in 3usize..=9, seed in any::<u64>()) {
        let file = crs_from(&family(kind, n), seed);
        let inst = CrsInstance::from_file(&file).unwrap();
        for i in 0..50 {
            let run = run_crs(&inst, &mut rng_from_seed(seed.wrapping_add(i)), true).unwrap();
            prop_assert!(independent_in_all(&file.constraints, &run.selected.to_vec()));
            let traces = run.trace.unwrap();
            prop_assert_eq!(traces.joint_relation_violations(), 0);
            let joint = &traces.joint;
            for e in 0..file.n {
                let mut prev = (0u8, 0u8);
                for t in 0..=joint.steps() {
                    let (s, z, y) = joint.value(e, t);
                    prop_assert_eq!(s + z + y, 1);
                    prop_assert!(s >= prev.0 && z >= prev.1, "S and Z never decrease");
                    prev = (s, z);
                }
            }
        }
    }

    #[test]
    fn probing_takes_every_success_after_its_outer_update(seed in any::<u64>(), n in 4usize..=8, filter in any::<bool>()) {
        let spec = GeneratorSpec::Probing { n, k_in: 1, k_out: 1, universe: n + 2 };
        let GeneratedInstance::Probing(file) = generate_instance(&spec, seed).unwrap() else { unreachable!() };
        let inst = ProbingInstance::from_file(&file).unwrap();
        let plan = ProbingPlan::new(&inst, file.x.clone().unwrap()).unwrap();
        for i in 0..30 {
            let run = run_probing(&plan, &mut rng_from_seed(seed.wrapping_add(i)), filter, true).unwrap();
            let mut outer_done = ElementSet::empty();
            for ev in &run.events {
                match ev.kind {
                    ProbeEventKind::OuterUpdate => outer_done.insert(ev.element),
                    ProbeEventKind::Probe { success } => {
                        prop_assert!(outer_done.contains(ev.element), "probe before the outer update");
                        prop_assert_eq!(success, run.taken.contains(ev.element));
                    }
                    ProbeEventKind::InnerUpdate => prop_assert!(run.taken.contains(ev.element)),
                }
            }
            prop_assert_eq!(outer_done, run.probed);
            prop_assert!(independent_in_all(&file.outer, &run.probed.to_vec()));
            prop_assert!(independent_in_all(&file.inner, &run.taken.to_vec()));
        }
    }
}
