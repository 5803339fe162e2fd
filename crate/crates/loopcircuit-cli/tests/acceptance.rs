//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Exact criteria (1, 2, 6, 10, 11, 12) make the run fail. Statistical
//! criteria are reported as measured; a FAIL there is a finding, not a
//! harness error. `ACCEPTANCE_ONLY=3,7` restricts the run to some criteria.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use loopcircuit::fss::{
    cft_arc_fit, collapse_fit, default_window, lifshitz_fit, log_law_fit, powerlaw_fit,
    powerlaw_fit_points, CollapseConfig, Profile, SamplePoint,
};
use loopcircuit::harness::{fss_line_weights, run_campaign, sample_closure, CampaignConfig, CampaignResult, Observable};
use loopcircuit::lattice::{Color, Geometry};
use loopcircuit::observables::tripartite_information;
use loopcircuit::theory::{self, Cut, SymmetryClass};
use loopcircuit::ClosurePolicy;
use loopcircuit_oracle::{equivalence_suite, lifshitz_j_series, SUITE_DEPTHS, SUITE_SIZES};
use rand::{Rng, SeedableRng};

const KC_BDI: f64 = 0.6523817;
const KC_D: f64 = 0.7324564;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

type Check = fn() -> Outcome;

fn main() {
    let only: Option<BTreeSet<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [(u32, &str, bool, Check); 12] = [
        (1, "oracle equivalence", true, c1_oracle),
        (2, "conservation and audit", true, c2_conservation),
        (3, "Brownian bulk loops", false, c3_brownian),
        (4, "Poisson-Dirichlet ratios", false, c4_pd),
        (5, "liquid surface scaling", false, c5_surface),
        (6, "diffusion formulas", true, c6_diffusion),
        (7, "critical point recovery", false, c7_fss),
        (8, "Fisher exponent at criticality", false, c8_fisher),
        (9, "Lifshitz collapse", false, c9_lifshitz),
        (10, "hyperscaling and special functions", true, c10_exact),
        (11, "tripartite information", true, c11_tmi),
        (12, "determinism across threads", true, c12_determinism),
    ];
    let mut fatal = Vec::new();
    let mut findings = Vec::new();
    for (id, name, exact, check) in criteria {
        if only.as_ref().is_some_and(|s| !s.contains(&id)) {
            println!("criterion {id:>2} [{name}]: SKIP");
            continue;
        }
        let t = Instant::now();
        let out = check();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} [{name}]: {verdict} — {} ({:.1} s)", out.detail, t.elapsed().as_secs_f64());
        if !out.pass {
            if exact {
                fatal.push(id);
            } else {
                findings.push(id);
            }
        }
    }
    if !findings.is_empty() {
        println!("statistical criteria not met (reported, not fatal): {findings:?}");
    }
    if !fatal.is_empty() {
        println!("exact criteria failed: {fatal:?}");
        std::process::exit(1);
    }
}

fn campaign(
    geometry: Geometry,
    lx: u32,
    ly: u32,
    depth: u64,
    weights: Vec<(Color, f64)>,
    closure: ClosurePolicy,
    observables: Vec<Observable>,
    pools: usize,
    samples: usize,
    seed: u64,
) -> CampaignResult {
    let mut cfg = CampaignConfig::new(geometry, lx, ly);
    cfg.depth = depth;
    cfg.weights = weights;
    cfg.closure = closure;
    cfg.observables = observables;
    cfg.pools = pools;
    cfg.samples = samples;
    cfg.seed = seed;
    cfg.validate().expect("valid acceptance config");
    run_campaign(&cfg).expect("campaign runs")
}

fn isotropic_honeycomb() -> Vec<(Color, f64)> {
    vec![(Color::X, 1.0 / 3.0), (Color::Y, 1.0 / 3.0), (Color::Z, 1.0 / 3.0)]
}

fn isotropic_nnn() -> Vec<(Color, f64)> {
    vec![(Color::X, 0.25), (Color::Y, 0.25), (Color::Z, 0.25), (Color::J, 0.25)]
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

// ------------------------------------------------------------------ 1

fn c1_oracle() -> Outcome {
    let t = Instant::now();
    match equivalence_suite(200, &SUITE_SIZES, &SUITE_DEPTHS) {
        Ok(r) => {
            let secs = t.elapsed().as_secs_f64();
            let first = r.mismatches.first().map(|m| format!("; first: {} {}", m.case, m.detail)).unwrap_or_default();
            Outcome::new(
                r.passed() && secs < 60.0,
                format!("{} trajectories, {} mismatches, {secs:.1} s{first}", r.compared, r.mismatches.len()),
            )
        }
        Err(e) => Outcome::new(false, format!("suite error: {e}")),
    }
}

// ------------------------------------------------------------------ 2

fn c2_conservation() -> Outcome {
    let cases = [
        (Geometry::Honeycomb, 8),
        (Geometry::KekuleHoneycomb, 6),
        (Geometry::HoneycombNNN, 8),
        (Geometry::YaoKivelson, 4),
        (Geometry::CardyL3D, 4),
    ];
    let closures = [
        ClosurePolicy::PureBottom,
        ClosurePolicy::PureBoth,
        ClosurePolicy::MixedBottom,
        ClosurePolicy::PeriodicTime,
    ];
    let mut checked = 0;
    for (geometry, l) in cases {
        for closure in closures {
            for (depth, obs) in [(1, Observable::Loops), (16, Observable::Loops), (16, Observable::Watermelon)] {
                let mut cfg = CampaignConfig::new(geometry, l, l);
                cfg.depth = depth;
                cfg.pool_size = if depth == 1 { 1 } else { 8 };
                cfg.closure = closure;
                cfg.observables = vec![obs];
                for sample in 0..10 {
                    cfg.seed = sample as u64;
                    let (block, closure_out) = match sample_closure(&cfg, 0, sample) {
                        Ok(x) => x,
                        Err(e) => return Outcome::new(false, format!("{geometry}: {e}")),
                    };
                    if let Err(e) = block.audit() {
                        return Outcome::new(false, format!("{geometry} audit: {e}"));
                    }
                    if !closure_out.conserved() {
                        return Outcome::new(false, format!("{geometry}/{} violates the length identity", closure.name()));
                    }
                    checked += 1;
                }
            }
        }
    }
    Outcome::new(true, format!("{checked} trajectories audited, length identity exact"))
}

// ------------------------------------------------------------------ 3

fn c3_brownian() -> Outcome {
    let l = 64;
    let r = campaign(
        Geometry::Honeycomb,
        l,
        l,
        4 * l as u64,
        isotropic_honeycomb(),
        ClosurePolicy::PureBoth,
        vec![Observable::Loops],
        10,
        1000,
        3,
    );
    // Liquid loops are Brownian only well below the L² saturation length;
    // the critical-point window [10^2.5, L³/100] holds too few bins here.
    let window = (10f64.powf(1.5), (l * l) as f64 / 2.0);
    match powerlaw_fit(&r.histogram, window) {
        Ok(f) => Outcome::new(
            within(f.exponent, 2.5, 0.1),
            format!("τ = {:.4} ± {:.4} (target 2.5 ± 0.1), χ²_r = {:.2}, {} bins", f.exponent, f.error, f.chi2_reduced, f.points),
        ),
        Err(e) => Outcome::new(false, format!("fit failed: {e}")),
    }
}

// ------------------------------------------------------------------ 4

fn c4_pd() -> Outcome {
    let l = 32;
    let mut pass = true;
    let mut parts = Vec::new();
    for (class, geometry, weights, seed) in [
        (SymmetryClass::BDI, Geometry::Honeycomb, isotropic_honeycomb(), 41),
        (SymmetryClass::D, Geometry::HoneycombNNN, isotropic_nnn(), 42),
    ] {
        let r = campaign(geometry, l, l, 4 * l as u64, weights, ClosurePolicy::PeriodicTime, vec![Observable::Pd], 10, 10_000, seed);
        let (t1, t2) = theory::pd_ratios(class.pd_theta()).unwrap();
        match r.pd.ratios() {
            Ok(m) => {
                let ok = within(m.r22_4, t1, 0.05) && within(m.r23_32, t2, 0.05);
                pass &= ok;
                parts.push(format!(
                    "{class:?}: P₂²/P₄ = {:.4} (theory {t1:.4}), P₂³/P₃² = {:.4} (theory {t2:.4})",
                    m.r22_4, m.r23_32
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{class:?}: {e}"));
            }
        }
    }
    Outcome::new(pass, parts.join("; "))
}

// ------------------------------------------------------------------ 5

fn series(r: &CampaignResult, prefix: &str, count: u32) -> Vec<(f64, f64, f64)> {
    (0..count)
        .filter_map(|i| r.aggregate(&format!("{prefix}:{i}")).map(|row| (i as f64, row.value, row.stderr)))
        .collect()
}

fn c5_surface() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut profiles = Vec::new();
    for (l, seed) in [(64u32, 51), (128, 52), (256, 53)] {
        let r = campaign(
            Geometry::Honeycomb,
            l,
            l,
            4 * l as u64,
            isotropic_honeycomb(),
            ClosurePolicy::PureBottom,
            vec![Observable::Surface, Observable::Entanglement],
            8,
            250,
            seed,
        );
        // On the torus the images of an ℓ⁻² law sum to a power of the chord
        // length R(d) = (L/π)·sin(πd/L), which removes the finite-size bend.
        let lf = l as f64;
        let pts: Vec<_> = series(&r, "surface_x", l / 2 + 1)
            .into_iter()
            .filter(|&(d, _, _)| d >= 8.0 && d <= lf / 4.0)
            .map(|(d, y, s)| (lf / std::f64::consts::PI * (std::f64::consts::PI * d / lf).sin(), y, s))
            .collect();
        match powerlaw_fit_points(&pts) {
            Ok(f) => {
                pass &= within(f.exponent, 2.0, 0.1);
                parts.push(format!("L={l}: γ = {:.3} ± {:.3}", f.exponent, f.error));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("L={l}: {e}"));
            }
        }
        let points = series(&r, "entropy_x", l + 1)
            .into_iter()
            .filter(|&(ell, _, _)| ell >= (l / 8) as f64 && ell <= (7 * l / 8) as f64)
            .collect();
        profiles.push(Profile { l, points });
    }
    match log_law_fit(&profiles) {
        Ok(f) => {
            pass &= f.chi2_reduced < 2.0;
            parts.push(format!("S = c·L·ln R + d·L: c = {:.4} ± {:.4}, χ²_r = {:.2}", f.a, f.a_error, f.chi2_reduced));
        }
        Err(e) => {
            pass = false;
            parts.push(format!("log law: {e}"));
        }
    }
    Outcome::new(pass, parts.join("; "))
}

// ------------------------------------------------------------------ 6

fn c6_diffusion() -> Outcome {
    let mut bad = Vec::new();
    let d = |x, y, z| theory::d_mic_honeycomb(x, y, z).unwrap().d;
    if !within(d(0.5, 0.5, 0.0), 3.0 / 16.0, 1e-12) {
        bad.push(format!("D(1/2,1/2,0) = {}", d(0.5, 0.5, 0.0)));
    }
    if !within(d(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0), 0.25, 1e-12) {
        bad.push(format!("D(iso) = {}", d(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (a, b): (f64, f64) = (rng.gen(), rng.gen());
        let (x, y) = if a + b > 1.0 { (1.0 - a, 1.0 - b) } else { (a, b) };
        let z = 1.0 - x - y;
        let base = d(x, y, z);
        for p in [d(y, z, x), d(z, x, y), d(y, x, z), d(x, z, y), d(z, y, x)] {
            worst = worst.max((p - base).abs());
        }
    }
    if worst > 1e-12 {
        bad.push(format!("rotation spread {worst:e}"));
    }
    let kc = theory::critical_contour(Cut::HoneycombAxial(Color::Z)).ok().flatten();
    let dev = kc.map(|k| (k - KC_BDI).abs() / KC_BDI);
    if !dev.is_some_and(|d| d < 0.03) {
        bad.push(format!("contour K_c {kc:?}"));
    }
    let detail = format!(
        "D(1/2,1/2,0) = 3/16, D(iso) = 1/4, rotation spread {worst:.1e}, contour K_c = {:.6} ({:.2}% from FSS)",
        kc.unwrap_or(f64::NAN),
        100.0 * dev.unwrap_or(f64::NAN)
    );
    if bad.is_empty() {
        Outcome::new(true, detail)
    } else {
        Outcome::new(false, bad.join("; "))
    }
}

// ------------------------------------------------------------------ 7

fn fss_data(geometry: Geometry, ks: &[f64], seed: u64) -> Vec<SamplePoint> {
    let mut points = Vec::new();
    for (i, &ly) in [16u32, 32, 64, 128].iter().enumerate() {
        for (j, &k) in ks.iter().enumerate() {
            let r = campaign(
                geometry,
                2 * ly,
                ly,
                ly as u64,
                fss_line_weights(geometry, k).unwrap(),
                ClosurePolicy::MixedBottom,
                vec![Observable::Spanning],
                10,
                1000,
                seed + 100 * i as u64 + j as u64,
            );
            let row = r.aggregate("spanning").unwrap();
            // all-zero cells carry no information and no error bar
            if row.stderr > 0.0 {
                points.push(SamplePoint::new(ly, k, row.value, row.stderr));
            }
        }
    }
    points
}

fn c7_fss() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (class, geometry, kc_paper, nu_target, seed) in [
        (SymmetryClass::BDI, Geometry::Honeycomb, KC_BDI, 1.00, 7000),
        (SymmetryClass::D, Geometry::HoneycombNNN, KC_D, 0.94, 8000),
    ] {
        let ks: Vec<f64> = (-5..=5).map(|i| (kc_paper * 100.0).round() / 100.0 + 0.01 * i as f64).collect();
        let data = fss_data(geometry, &ks, seed);
        let mut cfg = CollapseConfig::new((ks[0], ks[ks.len() - 1]), (0.6, 1.6));
        cfg.landscape = false;
        match collapse_fit(&data, &cfg) {
            Ok(f) => {
                let ok = within(f.kc, kc_paper, 0.010) && within(f.nu, nu_target, 0.10);
                pass &= ok;
                parts.push(format!(
                    "{class:?}: K_c = {:.5} ± {:.5}, ν = {:.3} ± {:.3}, χ²_r = {:.2} ({} points)",
                    f.kc,
                    f.error("kc"),
                    f.nu,
                    f.error("nu"),
                    f.chi2_reduced,
                    f.n_points
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{class:?}: fit failed: {e}"));
            }
        }
    }
    Outcome::new(pass, parts.join("; "))
}

// ------------------------------------------------------------------ 8

fn c8_fisher() -> Outcome {
    let l = 128;
    let mut pass = true;
    let mut parts = Vec::new();
    for (class, geometry, kc, target, seed) in [
        (SymmetryClass::BDI, Geometry::Honeycomb, KC_BDI, 2.18, 81),
        (SymmetryClass::D, Geometry::HoneycombNNN, KC_D, 2.19, 82),
    ] {
        let r = campaign(
            geometry,
            l,
            l,
            4 * l as u64,
            fss_line_weights(geometry, kc).unwrap(),
            ClosurePolicy::PureBoth,
            vec![Observable::Loops],
            8,
            500,
            seed,
        );
        match powerlaw_fit(&r.histogram, default_window(l)) {
            Ok(f) => {
                pass &= within(f.exponent, target, 0.08);
                parts.push(format!("{class:?}: τ = {:.4} ± {:.4} (target {target} ± 0.08)", f.exponent, f.error));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{class:?}: {e}"));
            }
        }
    }
    Outcome::new(pass, parts.join("; "))
}

// ------------------------------------------------------------------ 9

fn c9_lifshitz() -> Outcome {
    let mut profiles = Vec::new();
    for (l, seed) in [(32u32, 91), (64, 92), (128, 93)] {
        let r = campaign(
            Geometry::Honeycomb,
            l,
            l,
            l as u64,
            fss_line_weights(Geometry::Honeycomb, KC_BDI).unwrap(),
            ClosurePolicy::PureBottom,
            vec![Observable::Entanglement],
            8,
            250,
            seed,
        );
        profiles.push(Profile { l, points: series(&r, "entropy_x", l + 1) });
    }
    let lif = lifshitz_fit(&profiles);
    let cft = cft_arc_fit(&profiles);
    match (lif, cft) {
        (Ok(a), Ok(b)) => Outcome::new(
            (3.0..=3.8).contains(&a.lambda) && a.chi2_reduced < b.chi2_reduced,
            format!(
                "λ = {:.3} ± {:.3}, χ²_r Lifshitz = {:.2} vs CFT arc = {:.2}",
                a.lambda, a.lambda_error, a.chi2_reduced, b.chi2_reduced
            ),
        ),
        (a, b) => Outcome::new(false, format!("fit failed: {:?} / {:?}", a.err(), b.err())),
    }
}

// ------------------------------------------------------------------ 10

fn c10_exact() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut note = |x: f64, y: f64| worst = worst.max((x - y).abs());
    for (tau, nu) in [(2.1819, 0.9987), (2.1875, 0.9403), (2.5, 1.0), (2.05, 0.7)] {
        let eta = theory::eta_from_tau(tau).unwrap();
        note(eta, 5.0 - 6.0 / (tau - 1.0));
        note(theory::tau_from_eta(eta).unwrap(), tau);
        let df = theory::fractal_dimension(tau).unwrap();
        note(df, 3.0 / (tau - 1.0));
        note(df, (5.0 - eta) / 2.0);
        note(theory::beta_from_tau(nu, tau).unwrap(), theory::beta_from_eta(nu, eta));
        note(theory::beta_from_eta(nu, eta), nu * (eta + 1.0) / 2.0);
    }
    let hyperscaling = worst;
    let mut j_worst: f64 = 0.0;
    for lambda in [1.0, 3.4, 10.0] {
        for i in 1..=9 {
            let u = i as f64 / 10.0;
            let a = theory::lifshitz_j(u, lambda).unwrap();
            let b = lifshitz_j_series(u, lambda, 2000).unwrap();
            j_worst = j_worst.max((a - b).abs());
        }
    }
    Outcome::new(
        hyperscaling < 1e-12 && j_worst < 1e-12,
        format!("hyperscaling max deviation {hyperscaling:.1e}; J vs q-series max deviation {j_worst:.1e}"),
    )
}

// ------------------------------------------------------------------ 11

fn c11_tmi() -> Outcome {
    let mut checked = 0u64;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for (geometry, weights) in [
        (Geometry::Honeycomb, isotropic_honeycomb()),
        (Geometry::Honeycomb, fss_line_weights(Geometry::Honeycomb, KC_BDI).unwrap()),
        (Geometry::HoneycombNNN, isotropic_nnn()),
        (Geometry::YaoKivelson, vec![]),
    ] {
        for closure in [ClosurePolicy::PureBottom, ClosurePolicy::MixedBottom] {
            let mut cfg = CampaignConfig::new(geometry, 8, 8);
            cfg.depth = 16;
            cfg.pool_size = 8;
            cfg.weights = weights.clone();
            cfg.closure = closure;
            cfg.observables = vec![Observable::Tmi];
            let r = run_campaign(&cfg).unwrap();
            let nz = r.aggregate("tmi_nonzero").map_or(f64::NAN, |row| row.value);
            if nz != 0.0 {
                return Outcome::new(false, format!("{geometry}: harness reports nonzero TMI fraction {nz}"));
            }
            for s in 0..20 {
                let (_, c) = sample_closure(&cfg, 0, s).unwrap();
                let n = c.surface.n_sites;
                for _ in 0..50 {
                    let mut label = vec![3u8; n as usize];
                    for v in label.iter_mut() {
                        *v = rng.gen_range(0..4);
                    }
                    let part = |k: u8| (0..n).filter(|&i| label[i as usize] == k).collect::<Vec<u32>>();
                    let i3 = tripartite_information(&c.surface, &part(0), &part(1), &part(2)).unwrap();
                    if i3 != 0 {
                        return Outcome::new(false, format!("{geometry}: I₃ = {i3}"));
                    }
                    checked += 1;
                }
            }
        }
    }
    Outcome::new(true, format!("I₃ = 0 on {checked} random region triples and in every harness sample"))
}

// ------------------------------------------------------------------ 12

fn c12_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_loopcircuit");
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in [1, 4, 8] {
        let out = dir.path().join(format!("t{threads}"));
        let status = Command::new(bin)
            .args(["--threads", &threads.to_string(), "simulate", "--geometry", "honeycomb-nnn", "--Lx", "16"])
            .args(["--depth", "32", "--pools", "3", "--samples", "200", "--seed", "12"])
            .args(["--closure", "pure-bottom", "--observables", "entanglement,surface,loops,occupied,tmi"])
            .arg("--out")
            .arg(&out)
            .output()
            .expect("run cli");
        if !status.status.success() {
            return Outcome::new(false, format!("cli failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        outputs.push(read_csvs(&out));
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    let bytes: usize = outputs[0].iter().map(|b| b.len()).sum();
    Outcome::new(same && bytes > 0, format!("CSV output for 1/4/8 threads identical: {same} ({bytes} bytes)"))
}

fn read_csvs(dir: &Path) -> Vec<Vec<u8>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    files.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

