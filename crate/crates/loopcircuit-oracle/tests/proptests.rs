use loopcircuit::lattice::{Geometry, LatticeSpec};
use loopcircuit::loopstate::{close_boundary, compose, CircuitBlock, End, Op, OpKind};
use loopcircuit::ClosurePolicy;
use loopcircuit_oracle::{enumerate_small, lifshitz_j_series, qseries, replay, Series};
use proptest::prelude::*;

const POLICIES: [ClosurePolicy; 4] = [
    ClosurePolicy::PureBottom,
    ClosurePolicy::PureBoth,
    ClosurePolicy::MixedBottom,
    ClosurePolicy::PeriodicTime,
];

/// Gate chunks: each chunk is a list of (bond index, kind) plus an optional
/// probe site inserted after it.
fn chunks() -> impl Strategy<Value = Vec<(Vec<(usize, u8)>, Option<u32>)>> {
    prop::collection::vec(
        (prop::collection::vec((0usize..1000, 0u8..3), 0..20), prop::option::of(0u32..1000)),
        1..6,
    )
}

fn build(spec: &LatticeSpec, plan: &[(Vec<(usize, u8)>, Option<u32>)]) -> CircuitBlock {
    let n = spec.n_sites();
    let bonds = spec.bonds();
    let mut block = CircuitBlock::identity(n);
    for (gates, probe) in plan {
        let ops: Vec<Op> = gates
            .iter()
            .map(|&(i, k)| {
                let b = &bonds[i % bonds.len()];
                let kind = [OpKind::Measure, OpKind::Cross, OpKind::Pass][k as usize];
                Op { kind, a: b.a, b: b.b }
            })
            .collect();
        block = compose(spec, &block, &CircuitBlock::from_ops(n, &ops), 0, 0).unwrap();
        if let Some(s) = probe {
            block = compose(spec, &block, &CircuitBlock::probe(n, s % n as u32), 0, 0).unwrap();
        }
    }
    block
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn composed_blocks_match_replay(plan in chunks(), p in 0usize..4, g in 0usize..2) {
        let geometry = [Geometry::Honeycomb, Geometry::CardyL3D][g];
        let spec = LatticeSpec::build(geometry, 4, 4).unwrap();
        let policy = POLICIES[p];
        let block = build(&spec, &plan);
        let pipeline = close_boundary(&spec, &block, policy);
        let oracle = replay(&spec, block.ops().unwrap(), policy).unwrap();
        prop_assert!(oracle.conserved());
        prop_assert_eq!(pipeline, oracle);
    }

    #[test]
    fn replay_conserves_length(plan in chunks(), p in 0usize..4) {
        let spec = LatticeSpec::build(Geometry::HoneycombNNN, 4, 4).unwrap();
        let block = build(&spec, &plan);
        let c = replay(&spec, block.ops().unwrap(), POLICIES[p]).unwrap();
        prop_assert!(c.conserved());
        if POLICIES[p] == ClosurePolicy::PureBoth {
            let probe_only = c.arcs.iter().all(|a| matches!(a.a, End::Probe { .. }));
            prop_assert!(probe_only);
        }
    }

    #[test]
    fn series_terms_stable(t in 0.5f64..5.0) {
        for s in [Series::Theta3, Series::DedekindEta] {
            let a = qseries(s, t, 40).unwrap();
            let b = qseries(s, t, 50).unwrap();
            prop_assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn lifshitz_j_matches_library(u in 0.02f64..0.98, lambda in 0.5f64..10.0) {
        let direct = lifshitz_j_series(u, lambda, 4000).unwrap();
        let fast = loopcircuit::theory::lifshitz_j(u, lambda).unwrap();
        prop_assert!((direct - fast).abs() < 1e-12, "{} vs {}", direct, fast);
    }
}

#[test]
fn enumeration_matches_monte_carlo() {
    use loopcircuit::lattice::Color;
    use loopcircuit::loopstate::make_layer_recorded;
    use rand::SeedableRng;
    let spec = LatticeSpec::custom(4, &[(0, 1, Color::X), (1, 2, Color::Y), (2, 3, Color::Z), (3, 0, Color::X)], &[(0, 1), (2, 3)])
        .unwrap()
        .set_weights(&[(Color::X, 0.5), (Color::Y, 0.3), (Color::Z, 0.2)])
        .unwrap();
    let exact = enumerate_small(&spec, 2, ClosurePolicy::MixedBottom).unwrap();
    assert!((exact.total_probability() - 1.0).abs() < 1e-12);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let trials = 40_000;
    let mut sum = 0.0;
    for _ in 0..trials {
        let a = make_layer_recorded(&spec, &mut rng);
        let b = make_layer_recorded(&spec, &mut rng);
        let block = compose(&spec, &a, &b, 0, 0).unwrap();
        sum += close_boundary(&spec, &block, ClosurePolicy::MixedBottom).spanning as f64;
    }
    let mc = sum / trials as f64;
    // spanning count ≤ 4, so the standard error is below 0.01
    assert!((mc - exact.expected_spanning()).abs() < 0.05, "{mc} vs {}", exact.expected_spanning());
}
