//! Campaign-level behaviour: determinism and agreement of the two sampling modes.

use loopcircuit::harness::{run_campaign, CampaignConfig, Observable, SampleMode};
use loopcircuit::lattice::Geometry;
use loopcircuit::ClosurePolicy;

fn small(mode: SampleMode, seed: u64) -> CampaignConfig {
    let mut cfg = CampaignConfig::new(Geometry::Honeycomb, 16, 8);
    cfg.depth = 8;
    // errors come from the spread of pool means, so use enough pools
    cfg.pools = 20;
    cfg.samples = 100;
    cfg.seed = seed;
    cfg.mode = mode;
    cfg.closure = ClosurePolicy::MixedBottom;
    cfg.observables = vec![Observable::Spanning, Observable::Loops];
    cfg
}

#[test]
fn same_seed_same_rows() {
    let cfg = small(SampleMode::Pool, 7);
    let a = run_campaign(&cfg).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap()
        .install(|| run_campaign(&cfg).unwrap());
    assert_eq!(a.config_hash, b.config_hash);
    assert_eq!(a.rows.len(), b.rows.len());
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!(x.observable, y.observable);
        assert_eq!(x.value.to_bits(), y.value.to_bits(), "{}", x.observable);
        assert_eq!(x.stderr.to_bits(), y.stderr.to_bits(), "{}", x.observable);
    }
    let c = run_campaign(&small(SampleMode::Pool, 8)).unwrap();
    assert_ne!(a.aggregate("spanning").unwrap().value, c.aggregate("spanning").unwrap().value);
}

#[test]
fn pool_protocol_matches_independent_layers() {
    let pool = run_campaign(&small(SampleMode::Pool, 1)).unwrap();
    let fresh = run_campaign(&small(SampleMode::Independent, 2)).unwrap();
    for name in ["spanning", "loops", "loop_length"] {
        let (a, b) = (pool.aggregate(name).unwrap(), fresh.aggregate(name).unwrap());
        let sigma = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        assert!(
            (a.value - b.value).abs() <= 3.0 * sigma.max(1e-12),
            "{name}: pool {} ± {} vs independent {} ± {}",
            a.value,
            a.stderr,
            b.value,
            b.stderr
        );
    }
}
