use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use loopcircuit::fss::{self, CollapseConfig, Knots, Model, SamplePoint, SpanningExponents};
use loopcircuit::harness::{
    self, fmt_float, fss_line_weights, parse_observables, CampaignConfig, GridPoint, ResultRow, SampleMode,
};
use loopcircuit::lattice::Color;
use loopcircuit::theory::{self, Cut, Exponents, SymmetryClass};
use loopcircuit::Geometry;

/// Bad user input; mapped to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct ConfigError(String);

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "loopcircuit", version, about = "Loop-model simulation of measurement-only Majorana circuits")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one campaign and write its CSV and metadata sidecar.
    Simulate(SimulateArgs),
    /// Run a grid of campaigns (resumable).
    Sweep(SweepArgs),
    /// Finite-size-scaling collapse of harness CSV output.
    Fss(FssArgs),
    /// Tables of closed-form predictions.
    Theory(TheoryArgs),
    /// Replay pipeline trajectories through the sequential oracle.
    OracleCheck(OracleArgs),
}

#[derive(Args, Clone)]
struct CampaignArgs {
    #[arg(long, default_value = "honeycomb")]
    geometry: String,
    #[arg(long = "Lx", default_value_t = 16)]
    lx: u32,
    /// Defaults to Lx.
    #[arg(long = "Ly")]
    ly: Option<u32>,
    #[arg(long, default_value_t = 16)]
    depth: u64,
    /// Defaults to a size-dependent value between 20 and 120.
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pools: usize,
    /// Samples per pool.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "mixed-bottom")]
    closure: String,
    /// Comma list: spanning, loops, occupied, entanglement, surface, pd, g2, tmi.
    #[arg(long, default_value = "spanning")]
    observables: String,
    /// Build every trajectory from fresh layers instead of the pool.
    #[arg(long)]
    independent: bool,
    #[command(flatten)]
    weights: WeightArgs,
}

#[derive(Args, Clone, Default)]
struct WeightArgs {
    #[arg(long = "Kx")]
    kx: Option<f64>,
    #[arg(long = "Ky")]
    ky: Option<f64>,
    #[arg(long = "Kz")]
    kz: Option<f64>,
    #[arg(long = "J")]
    j: Option<f64>,
    #[arg(long = "Kr")]
    kr: Option<f64>,
    #[arg(long = "Kg")]
    kg: Option<f64>,
    #[arg(long = "Kb")]
    kb: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
}

impl WeightArgs {
    fn pairs(&self) -> Vec<(Color, f64)> {
        [
            (Color::X, self.kx),
            (Color::Y, self.ky),
            (Color::Z, self.kz),
            (Color::J, self.j),
            (Color::R, self.kr),
            (Color::G, self.kg),
            (Color::B, self.kb),
            (Color::P, self.p),
            (Color::Q, self.q),
        ]
        .into_iter()
        .filter_map(|(c, w)| w.map(|w| (c, w)))
        .collect()
    }
}

impl CampaignArgs {
    fn config(&self) -> anyhow::Result<CampaignConfig> {
        let geometry: Geometry = self.geometry.parse()?;
        let ly = self.ly.unwrap_or(self.lx);
        let mut cfg = CampaignConfig::new(geometry, self.lx, ly);
        cfg.depth = self.depth;
        if let Some(n) = self.pool_size {
            cfg.pool_size = n;
        }
        cfg.pools = self.pools;
        cfg.samples = self.samples;
        cfg.seed = self.seed;
        cfg.closure = self.closure.parse()?;
        cfg.observables = parse_observables(&self.observables)?;
        cfg.weights = self.weights.pairs();
        if self.independent {
            cfg.mode = SampleMode::Independent;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    campaign: CampaignArgs,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    campaign: CampaignArgs,
    /// Values of K along the scaling line (honeycomb, honeycomb-nnn).
    #[arg(long, value_delimiter = ',')]
    k: Vec<f64>,
    /// Grid step for a full (Kx, Ky, Kz) simplex scan; overrides --k.
    #[arg(long)]
    simplex_step: Option<f64>,
    /// System sizes L_y; defaults to --Ly.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<u32>,
    /// L_x = aspect · L_y.
    #[arg(long, default_value_t = 1)]
    aspect: u32,
    /// Depth = depth_factor · L_y; falls back to --depth.
    #[arg(long)]
    depth_factor: Option<u64>,
    #[arg(long, default_value = "sweep")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ordinate {
    /// Observable as is.
    Plain,
    /// Mean spanning length M, rescaled by L^{−(5−η)/2} with η fitted.
    SpanningLength,
    /// Two-point function G₂, rescaled by L^{2β/ν} at fixed K_c, ν.
    Watermelon,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Linear,
    Nonlinear,
    Irrelevant,
}

#[derive(Args)]
struct FssArgs {
    /// Harness CSV files (simulate or sweep output).
    #[arg(required = true)]
    input: Vec<PathBuf>,
    #[arg(long, default_value = "spanning")]
    observable: String,
    #[arg(long, value_enum, default_value = "plain")]
    ordinate: Ordinate,
    /// Bond color whose weight is the tuning parameter K.
    #[arg(long, default_value = "z")]
    k_color: String,
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.55, 0.8])]
    kc_range: Vec<f64>,
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.6, 1.6])]
    nu_range: Vec<f64>,
    #[arg(long, value_enum, default_value = "nonlinear")]
    model: ModelArg,
    /// Uniform knot count; default is the fixed paper-style knot set.
    #[arg(long)]
    uniform_knots: Option<usize>,
    #[arg(long, value_delimiter = ',', num_args = 2)]
    x_window: Option<Vec<f64>>,
    /// Fixed K_c and ν for the watermelon ordinate.
    #[arg(long)]
    kc: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, default_value_t = 21)]
    grid: usize,
    #[arg(long, default_value = "fss")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Table {
    /// J(u) on a u grid.
    Lifshitz,
    /// Diffusion constant along a cut of the weight simplex.
    Diffusion,
    /// Critical points of the mean-field contour on the standard cuts.
    Contour,
    /// Poisson–Dirichlet moment ratios per symmetry class.
    Pd,
    /// Exponents from τ through hyperscaling.
    Exponents,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(value_enum)]
    table: Table,
    #[arg(long, default_value_t = 3.4)]
    lambda: f64,
    #[arg(long, default_value_t = 99)]
    points: usize,
    /// Color carrying K on axial cuts (x, y, z or r, g, b).
    #[arg(long, default_value = "z")]
    color: String,
    #[arg(long, default_value_t = 2.1819)]
    tau: f64,
    #[arg(long, default_value_t = 0.9987)]
    nu: f64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 200)]
    seeds: u64,
    #[arg(long, value_delimiter = ',', default_values_t = loopcircuit_oracle::SUITE_SIZES)]
    sizes: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_values_t = loopcircuit_oracle::SUITE_DEPTHS)]
    depths: Vec<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let config = e.chain().any(|c| {
        c.is::<ConfigError>() || c.downcast_ref::<loopcircuit::Error>().is_some_and(|e| e.is_config())
    });
    if config {
        2
    } else {
        3
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config_err("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Fss(a) => fss_cmd(a),
        Command::Theory(a) => theory_cmd(a),
        Command::OracleCheck(a) => oracle_check(a),
    }
}

fn simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let cfg = a.campaign.config()?;
    let result = harness::run_campaign(&cfg)?;
    let path = result.write(&a.out, &result.config_hash)?;
    for row in result.rows.iter().filter(|r| r.pool.is_none() && !r.observable.starts_with("loop_hist:")) {
        println!("{:<24} {:>14} ± {}", row.observable, fmt_float(row.value), fmt_float(row.stderr));
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn simplex(step: f64) -> anyhow::Result<Vec<[f64; 3]>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(config_err("--simplex-step must lie in (0, 1]"));
    }
    let n = (1.0 / step).round() as u32;
    let mut out = Vec::new();
    for i in 0..=n {
        for j in 0..=n - i {
            let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
            out.push([x, y, (1.0 - x - y).max(0.0)]);
        }
    }
    Ok(out)
}

fn sweep(a: SweepArgs) -> anyhow::Result<()> {
    let template = a.campaign.config()?;
    let sizes = if a.sizes.is_empty() { vec![template.ly] } else { a.sizes.clone() };
    let weights: Vec<Vec<(Color, f64)>> = if let Some(step) = a.simplex_step {
        simplex(step)?
            .into_iter()
            .map(|[x, y, z]| vec![(Color::X, x), (Color::Y, y), (Color::Z, z)])
            .collect()
    } else if !a.k.is_empty() {
        a.k.iter().map(|&k| fss_line_weights(template.geometry, k)).collect::<Result<_, _>>()?
    } else {
        vec![template.weights.clone()]
    };
    let mut grid = Vec::new();
    for &ly in &sizes {
        let depth = a.depth_factor.map_or(template.depth, |f| f * ly as u64);
        for w in &weights {
            let point = GridPoint { lx: a.aspect * ly, ly, depth, weights: w.clone() };
            point.config(&template).validate()?;
            grid.push(point);
        }
    }
    fs::create_dir_all(&a.out)?;
    let rows = harness::sweep(&template, &grid, Some(&a.out))?;
    let path = a.out.join("sweep.csv");
    harness::write_rows(fs::File::create(&path)?, &rows)?;
    println!("{} cells, {} rows -> {}", grid.len(), rows.len(), path.display());
    Ok(())
}

fn range(v: &[f64], name: &str) -> anyhow::Result<(f64, f64)> {
    match v {
        [a, b] if a < b => Ok((*a, *b)),
        _ => Err(config_err(format!("--{name} needs two increasing values"))),
    }
}

fn fss_points(rows: &[ResultRow], observable: &str, color: Color) -> anyhow::Result<Vec<SamplePoint>> {
    let mut points = Vec::new();
    for r in rows.iter().filter(|r| r.pool.is_none() && r.observable == observable) {
        let k = r
            .weight(color)
            .ok_or_else(|| config_err(format!("row without weight for color {color}: {}", r.weights)))?;
        if !(r.stderr > 0.0) {
            return Err(config_err(format!(
                "{observable} at L={} K={k} has no positive error bar; use --pools ≥ 2",
                r.ly
            )));
        }
        points.push(SamplePoint::new(r.ly, k, r.value, r.stderr));
    }
    if points.is_empty() {
        return Err(config_err(format!("no aggregate rows for observable '{observable}'")));
    }
    Ok(points)
}

fn fss_cmd(a: FssArgs) -> anyhow::Result<()> {
    let mut rows = Vec::new();
    for p in &a.input {
        rows.extend(harness::read_rows(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let color: Color = a.k_color.parse()?;
    let points = fss_points(&rows, &a.observable, color)?;
    let mut cfg = CollapseConfig::new(range(&a.kc_range, "kc-range")?, range(&a.nu_range, "nu-range")?);
    cfg.grid = a.grid;
    cfg.model = match a.model {
        ModelArg::Linear => Model::Linear,
        ModelArg::Nonlinear => Model::Nonlinear,
        ModelArg::Irrelevant => Model::WithIrrelevant,
    };
    if let Some(n) = a.uniform_knots {
        cfg.knots = Knots::Uniform(n);
    }
    if let Some(w) = &a.x_window {
        cfg.x_window = Some(range(w, "x-window")?);
    }
    let fit = match a.ordinate {
        Ordinate::Plain => fss::collapse_fit(&points, &cfg)?,
        Ordinate::SpanningLength => spanning_length_collapse(&points, &cfg, a.nu)?,
        Ordinate::Watermelon => {
            let (kc, nu) = a
                .kc
                .zip(a.nu)
                .ok_or_else(|| config_err("the watermelon ordinate needs --kc and --nu"))?;
            fss::beta_collapse(&points, kc, nu, &cfg)?
        }
    };
    fs::create_dir_all(&a.out)?;
    let report = a.out.join("fit.json");
    fs::write(&report, serde_json::to_string_pretty(&fit)?)?;
    if let Some(land) = &fit.landscape {
        let mut f = fs::File::create(a.out.join("landscape.csv"))?;
        writeln!(f, "kc,nu,cost")?;
        for (i, kc) in land.kc.iter().enumerate() {
            for (j, nu) in land.nu.iter().enumerate() {
                writeln!(f, "{},{},{}", fmt_float(*kc), fmt_float(*nu), fmt_float(land.cost[i * land.nu.len() + j]))?;
            }
        }
    }
    println!(
        "K_c = {:.5} ± {:.5}, ν = {:.4} ± {:.4}, χ²_r = {:.3} ({} points)",
        fit.kc,
        fit.error("kc"),
        fit.nu,
        fit.error("nu"),
        fit.chi2_reduced,
        fit.n_points
    );
    for w in &fit.warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote {}", report.display());
    Ok(())
}

fn spanning_length_collapse(points: &[SamplePoint], cfg: &CollapseConfig, nu: Option<f64>) -> anyhow::Result<fss::ScalingFit> {
    Ok(fss::spanning_length_collapse(points, cfg, SpanningExponents { nu, eta: None })?)
}

fn theory_cmd(a: TheoryArgs) -> anyhow::Result<()> {
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let grid = |n: usize| (1..=n).map(move |i| i as f64 / (n + 1) as f64);
    match a.table {
        Table::Lifshitz => {
            writeln!(out, "u,J")?;
            for u in grid(a.points) {
                writeln!(out, "{},{}", fmt_float(u), fmt_float(theory::lifshitz_j(u, a.lambda)?))?;
            }
        }
        Table::Diffusion => {
            let cut = axial_cut(&a.color)?;
            writeln!(out, "K,D")?;
            for k in grid(a.points) {
                writeln!(out, "{},{}", fmt_float(k), fmt_float(cut.diffusion(k)?))?;
            }
        }
        Table::Contour => {
            writeln!(out, "cut,parameter")?;
            let mut cuts: Vec<(String, Cut)> = vec![
                ("honeycomb-z".into(), Cut::HoneycombAxial(Color::Z)),
                ("kekule-b".into(), Cut::KekuleAxial(Color::B)),
            ];
            for i in 0..a.points.min(360) {
                let phi = 2.0 * std::f64::consts::PI * i as f64 / a.points.min(360) as f64;
                cuts.push((format!("ray-{}", fmt_float(phi)), Cut::HoneycombRay(phi)));
            }
            for (name, cut) in cuts {
                let v = theory::critical_contour(cut)?.map_or("none".to_string(), fmt_float);
                writeln!(out, "{name},{v}")?;
            }
        }
        Table::Pd => {
            writeln!(out, "class,theta,r22_4,r23_32")?;
            for class in [SymmetryClass::BDI, SymmetryClass::D] {
                let theta = class.pd_theta();
                let (r1, r2) = theory::pd_ratios(theta)?;
                writeln!(out, "{class:?},{},{},{}", fmt_float(theta), fmt_float(r1), fmt_float(r2))?;
            }
        }
        Table::Exponents => {
            writeln!(out, "class,tau,nu,eta,d_f,beta,theta")?;
            for class in [SymmetryClass::BDI, SymmetryClass::D] {
                let e = Exponents::from_tau(a.tau, a.nu, class)?;
                writeln!(
                    out,
                    "{class:?},{},{},{},{},{},{}",
                    fmt_float(e.tau),
                    fmt_float(e.nu),
                    fmt_float(e.eta),
                    fmt_float(e.d_f),
                    fmt_float(e.beta),
                    fmt_float(e.theta)
                )?;
            }
        }
    }
    Ok(())
}

fn axial_cut(color: &str) -> anyhow::Result<Cut> {
    let c: Color = color.parse()?;
    match c {
        Color::X | Color::Y | Color::Z => Ok(Cut::HoneycombAxial(c)),
        Color::R | Color::G | Color::B => Ok(Cut::KekuleAxial(c)),
        _ => Err(config_err(format!("no axial cut for color {c}"))),
    }
}

fn oracle_check(a: OracleArgs) -> anyhow::Result<()> {
    let report = loopcircuit_oracle::equivalence_suite(a.seeds, &a.sizes, &a.depths)?;
    for m in &report.mismatches {
        eprintln!("MISMATCH {}: {}", m.case, m.detail);
    }
    println!("{} trajectories compared, {} mismatches", report.compared, report.mismatches.len());
    if report.passed() {
        Ok(())
    } else {
        anyhow::bail!("pipeline and oracle disagree")
    }
}
