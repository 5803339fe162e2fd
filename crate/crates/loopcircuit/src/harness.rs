//! Campaign orchestration: pools of shallow circuits, doubling composition,
//! parallel sampling with counter-keyed randomness, and CSV persistence.
//!
//! A campaign of depth T draws every trajectory from a pool. Each pool
//! starts as N_p depth-1 layers; every doubling round composes random pairs
//! of randomly translated members into a new pool of twice the depth. A
//! sample composes `pieces` pool members (two, or four with PD probes) so
//! that the sample depth is exactly T; depth T = 1 uses a pool member as is.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::histogram::LoopHistogram;
use crate::lattice::{Color, Geometry, LatticeSpec};
use crate::loopstate::{close_boundary, compose, make_layer, make_layer_recorded, CircuitBlock, Closure, ClosurePolicy};
use crate::observables::{
    entanglement_profile, occupied_fraction, probe_clusters, spanning_stats, surface_counts, tripartite_information,
    watermelon_sample, Axis, PdAccumulator,
};
use crate::rng::{hash_words, stream, Stream};

pub const VERSION: &str = concat!("loopcircuit ", env!("CARGO_PKG_VERSION"));

/// Stream round reserved for sample draws.
const SAMPLE_ROUND: u64 = 1 << 40;
/// Stream rounds for fully independent trajectories start here.
const INDEPENDENT_ROUND: u64 = 1 << 41;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Observable {
    /// Spanning number, its entropy and total length (mixed bottom).
    Spanning,
    /// Closed-loop statistics and the log-binned length histogram.
    Loops,
    /// Fraction of loop length in loops shorter than N.
    Occupied,
    /// Cylinder entanglement profiles along both axes.
    Entanglement,
    /// Minimal-image surface-length counts along both axes.
    Surface,
    /// Four-probe Poisson-Dirichlet estimators (periodic time).
    Pd,
    /// Two-probe watermelon G₂ at temporal separation T/2.
    Watermelon,
    /// Tripartite information of random region triples (count of nonzero).
    Tmi,
}

impl Observable {
    pub const ALL: [Observable; 8] = [
        Observable::Spanning,
        Observable::Loops,
        Observable::Occupied,
        Observable::Entanglement,
        Observable::Surface,
        Observable::Pd,
        Observable::Watermelon,
        Observable::Tmi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Observable::Spanning => "spanning",
            Observable::Loops => "loops",
            Observable::Occupied => "occupied",
            Observable::Entanglement => "entanglement",
            Observable::Surface => "surface",
            Observable::Pd => "pd",
            Observable::Watermelon => "g2",
            Observable::Tmi => "tmi",
        }
    }
}

impl std::str::FromStr for Observable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Observable::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown observable '{s}'")))
    }
}

pub fn parse_observables(list: &str) -> Result<Vec<Observable>> {
    let set: BTreeSet<Observable> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    Ok(set.into_iter().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    /// Pool protocol with doubling composition.
    Pool,
    /// Every trajectory built from fresh layers (reference for the pool protocol).
    Independent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CampaignConfig {
    pub geometry: Geometry,
    pub lx: u32,
    pub ly: u32,
    /// Unnormalized color weights; empty means the lattice default.
    pub weights: Vec<(Color, f64)>,
    pub depth: u64,
    pub pool_size: usize,
    /// Samples per pool.
    pub samples: usize,
    pub pools: usize,
    pub closure: ClosurePolicy,
    pub observables: Vec<Observable>,
    pub seed: u64,
    pub mode: SampleMode,
    /// Keep operation logs on all blocks (for replay against the oracle).
    pub record_ops: bool,
}

/// Pool size scaled inversely with L between 20 and 120.
pub fn default_pool_size(l: u32) -> usize {
    (120.0 * 128.0 / l.max(1) as f64).round().clamp(20.0, 120.0) as usize
}

/// Weights along the finite-size-scaling line: K on z, the remaining weight
/// split evenly over the other colors present (x, y, and j for the
/// next-nearest-neighbour circuit).
pub fn fss_line_weights(geometry: Geometry, k: f64) -> Result<Vec<(Color, f64)>> {
    match geometry {
        Geometry::Honeycomb => Ok(vec![(Color::X, (1.0 - k) / 2.0), (Color::Y, (1.0 - k) / 2.0), (Color::Z, k)]),
        Geometry::HoneycombNNN => Ok(vec![
            (Color::X, (1.0 - k) / 3.0),
            (Color::Y, (1.0 - k) / 3.0),
            (Color::Z, k),
            (Color::J, (1.0 - k) / 3.0),
        ]),
        g => Err(Error::Config(format!("no scaling line defined for {}", g.name()))),
    }
}

impl CampaignConfig {
    pub fn new(geometry: Geometry, lx: u32, ly: u32) -> Self {
        CampaignConfig {
            geometry,
            lx,
            ly,
            weights: Vec::new(),
            depth: 1,
            pool_size: default_pool_size(ly),
            samples: 1,
            pools: 1,
            closure: ClosurePolicy::MixedBottom,
            observables: vec![Observable::Spanning],
            seed: 0,
            mode: SampleMode::Pool,
            record_ops: false,
        }
    }

    pub fn lattice(&self) -> Result<LatticeSpec> {
        let spec = LatticeSpec::build(self.geometry, self.lx, self.ly).map_err(as_config)?;
        if self.weights.is_empty() {
            Ok(spec)
        } else {
            spec.set_weights(&self.weights).map_err(as_config)
        }
    }

    fn has(&self, o: Observable) -> bool {
        self.observables.contains(&o)
    }

    /// Pool members per sample.
    pub fn pieces(&self) -> u64 {
        if self.has(Observable::Pd) {
            4
        } else if self.depth == 1 {
            1
        } else {
            2
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.depth == 0 || !self.depth.is_power_of_two() {
            return bad(format!("depth must be a power of two, got {}", self.depth));
        }
        if self.pool_size < 2 && !(self.depth == 1 && self.pool_size == 1) {
            return bad(format!("pool size must be at least 2, got {}", self.pool_size));
        }
        if self.samples == 0 || self.pools == 0 {
            return bad("need at least one sample and one pool".into());
        }
        if self.observables.is_empty() {
            return bad("no observables requested".into());
        }
        if self.has(Observable::Pd) && self.has(Observable::Watermelon) {
            return bad("pd and g2 use different probe layouts; run them separately".into());
        }
        if self.has(Observable::Pd) && (self.depth < 4 || self.closure != ClosurePolicy::PeriodicTime) {
            return bad("pd needs depth ≥ 4 and periodic-time closure".into());
        }
        if self.has(Observable::Watermelon) && self.depth < 2 {
            return bad("g2 needs depth ≥ 2".into());
        }
        if self.has(Observable::Spanning) && self.closure != ClosurePolicy::MixedBottom {
            return bad("spanning needs mixed-bottom closure".into());
        }
        let surface = [Observable::Entanglement, Observable::Surface, Observable::Tmi];
        if surface.iter().any(|&o| self.has(o))
            && !matches!(self.closure, ClosurePolicy::PureBottom | ClosurePolicy::MixedBottom)
        {
            return bad("surface observables need an open top (pure-bottom or mixed-bottom)".into());
        }
        self.lattice().map(|_| ())
    }

    /// Weights as given (the lattice defaults, normalized, when none are).
    fn weights_label(&self, spec: &LatticeSpec) -> String {
        let w = if self.weights.is_empty() { spec.weights() } else { self.weights.clone() };
        w.iter()
            .map(|(c, w)| format!("{}={}", c.name(), fmt_float(*w)))
            .collect::<Vec<_>>()
            .join(";")
    }

    /// Canonical description; everything that determines the output.
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "geometry": self.geometry.name(),
            "lx": self.lx,
            "ly": self.ly,
            "weights": self.weights.iter().map(|(c, w)| json!([c.name(), fmt_float(*w)])).collect::<Vec<_>>(),
            "depth": self.depth,
            "pool_size": self.pool_size,
            "samples": self.samples,
            "pools": self.pools,
            "closure": self.closure.name(),
            "observables": self.observables.iter().map(|o| o.name()).collect::<Vec<_>>(),
            "seed": self.seed,
            "mode": match self.mode { SampleMode::Pool => "pool", SampleMode::Independent => "independent" },
        })
    }

    /// Short hex digest of the canonical description.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Argument(m) | Error::Domain(m) => Error::Config(m),
        e => e,
    }
}

/// Floats are written with 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// One output line, keyed by (config hash, observable, pool).
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub config_hash: String,
    pub geometry: String,
    pub lx: u32,
    pub ly: u32,
    pub depth: u64,
    pub pool_size: usize,
    pub pools: usize,
    pub samples: usize,
    pub closure: String,
    pub weights: String,
    pub seed: u64,
    pub version: String,
    pub observable: String,
    /// Pool index, or `None` for the aggregate over pools.
    pub pool: Option<usize>,
    pub value: f64,
    pub stderr: f64,
    pub count: u64,
}

pub const CSV_HEADER: [&str; 17] = [
    "config_hash",
    "geometry",
    "lx",
    "ly",
    "depth",
    "pool_size",
    "pools",
    "samples",
    "closure",
    "weights",
    "seed",
    "version",
    "observable",
    "pool",
    "value",
    "stderr",
    "count",
];

impl ResultRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.config_hash.clone(),
            self.geometry.clone(),
            self.lx.to_string(),
            self.ly.to_string(),
            self.depth.to_string(),
            self.pool_size.to_string(),
            self.pools.to_string(),
            self.samples.to_string(),
            self.closure.clone(),
            self.weights.clone(),
            self.seed.to_string(),
            self.version.clone(),
            self.observable.clone(),
            self.pool.map_or("all".to_string(), |p| p.to_string()),
            fmt_float(self.value),
            fmt_float(self.stderr),
            self.count.to_string(),
        ]
    }

    fn parse(rec: &csv::StringRecord) -> Result<Self> {
        let field = |i: usize| rec.get(i).ok_or_else(|| Error::Config(format!("short CSV row: {rec:?}")));
        let num = |i: usize| -> Result<f64> {
            field(i)?.parse().map_err(|_| Error::Config(format!("bad number in column {}", CSV_HEADER[i])))
        };
        let int = |i: usize| -> Result<u64> {
            field(i)?.parse().map_err(|_| Error::Config(format!("bad integer in column {}", CSV_HEADER[i])))
        };
        Ok(ResultRow {
            config_hash: field(0)?.to_string(),
            geometry: field(1)?.to_string(),
            lx: int(2)? as u32,
            ly: int(3)? as u32,
            depth: int(4)?,
            pool_size: int(5)? as usize,
            pools: int(6)? as usize,
            samples: int(7)? as usize,
            closure: field(8)?.to_string(),
            weights: field(9)?.to_string(),
            seed: int(10)?,
            version: field(11)?.to_string(),
            observable: field(12)?.to_string(),
            pool: match field(13)? {
                "all" => None,
                p => Some(p.parse().map_err(|_| Error::Config(format!("bad pool id '{p}'")))?),
            },
            value: num(14)?,
            stderr: num(15)?,
            count: int(16)?,
        })
    }

    /// Weight of `color` parsed back from the weights column.
    pub fn weight(&self, color: Color) -> Option<f64> {
        self.weights.split(';').find_map(|kv| {
            let (c, w) = kv.split_once('=')?;
            (c == color.name()).then(|| w.parse().ok()).flatten()
        })
    }
}

pub fn write_rows<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::new(std::io::ErrorKind::Other, e));
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in rows {
        w.write_record(r.record()).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        k => Error::Config(format!("{k:?}")),
    })?;
    let headers = r.headers().map_err(|e| Error::Config(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Config(format!("{} does not carry the result-row header", path.display())));
    }
    r.records()
        .map(|rec| ResultRow::parse(&rec.map_err(|e| Error::Config(e.to_string()))?))
        .collect()
}

// ---------------------------------------------------------------- sampling

/// Running sums for one scalar observable.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Moments {
    n: u64,
    sum: f64,
    sum2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum2 += x * x;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n.max(1) as f64
    }

    fn stderr(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        let n = self.n as f64;
        let var = ((self.sum2 - self.sum * self.sum / n) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

/// Per-pool accumulation.
#[derive(Clone, Debug, Default)]
pub struct PoolResult {
    scalars: Vec<Moments>,
    pub histogram: LoopHistogram,
    pub pd: PdAccumulator,
}

pub struct CampaignResult {
    pub config: CampaignConfig,
    pub config_hash: String,
    pub rows: Vec<ResultRow>,
    pub histogram: LoopHistogram,
    pub pd: PdAccumulator,
}

impl CampaignResult {
    /// Aggregate row for an observable name.
    pub fn aggregate(&self, observable: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.pool.is_none() && r.observable == observable)
    }

    /// Writes `<stem>.csv` and the `<stem>.json` sidecar into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{stem}.csv"));
        write_rows(fs::File::create(&csv_path)?, &self.rows)?;
        let meta = json!({
            "config": self.config.to_json(),
            "config_hash": self.config_hash,
            "seed": self.config.seed,
            "version": VERSION,
            "timestamp": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            "csv": format!("{stem}.csv"),
        });
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&meta).unwrap() + "\n")?;
        Ok(csv_path)
    }
}

struct Sampler<'a> {
    cfg: &'a CampaignConfig,
    spec: LatticeSpec,
    names: Vec<String>,
}

fn pick_distinct(rng: &mut Stream, n: usize, k: usize) -> Vec<usize> {
    if n >= k {
        rand::seq::index::sample(rng, n, k).into_vec()
    } else {
        (0..k).map(|_| rng.gen_range(0..n)).collect()
    }
}

impl<'a> Sampler<'a> {
    fn new(cfg: &'a CampaignConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.lattice()?;
        let mut names: Vec<String> = Vec::new();
        for &o in &cfg.observables {
            match o {
                Observable::Spanning => {
                    names.extend(["spanning", "spanning_entropy", "spanning_length"].map(String::from))
                }
                Observable::Loops => names.extend(["loops", "loop_length"].map(String::from)),
                Observable::Occupied => names.push("occupied_fraction".into()),
                Observable::Entanglement => {
                    names.extend((0..=cfg.lx).map(|l| format!("entropy_x:{l}")));
                    names.extend((0..=cfg.ly).map(|l| format!("entropy_y:{l}")));
                }
                Observable::Surface => {
                    names.push("surface_arcs".into());
                    names.extend((0..=cfg.lx / 2).map(|d| format!("surface_x:{d}")));
                    names.extend((0..=cfg.ly / 2).map(|d| format!("surface_y:{d}")));
                }
                Observable::Watermelon => names.push("g2".into()),
                Observable::Tmi => names.push("tmi_nonzero".into()),
                Observable::Pd => {}
            }
        }
        Ok(Sampler { cfg, spec, names })
    }

    fn layer(&self, rng: &mut Stream, tag: u64) -> CircuitBlock {
        let b = if self.cfg.record_ops { make_layer_recorded(&self.spec, rng) } else { make_layer(&self.spec, rng) };
        b.with_seed_record(tag)
    }

    fn random_translation(&self, rng: &mut Stream) -> (u32, u32) {
        *self.spec.translations().choose(rng).expect("lattice has the identity translation")
    }

    /// The pool after doubling up to `depth / pieces`.
    fn build_pool(&self, pool: usize) -> Result<Vec<CircuitBlock>> {
        let seed = self.cfg.seed;
        let p = pool as u64;
        let n_p = self.cfg.pool_size;
        let mut members: Vec<CircuitBlock> = (0..n_p)
            .into_par_iter()
            .map(|i| {
                let key = crate::rng::StreamKey::new(seed, p, 0, i as u64);
                self.layer(&mut key.stream(), key.tag())
            })
            .collect();
        let target = self.cfg.depth / self.cfg.pieces();
        let mut round = 1u64;
        while members[0].depth() < target {
            let prev = &members;
            members = (0..n_p)
                .into_par_iter()
                .map(|j| {
                    let mut rng = stream(seed, p, round, j as u64);
                    let ix = pick_distinct(&mut rng, n_p, 2);
                    let (dx, dy) = self.random_translation(&mut rng);
                    compose(&self.spec, &prev[ix[0]], &prev[ix[1]], dx, dy)
                })
                .collect::<Result<_>>()?;
            round += 1;
        }
        Ok(members)
    }

    /// Depth `depth / pieces` slab built from fresh layers.
    fn fresh_piece(&self, pool: usize, sample: usize, piece: u64) -> Result<CircuitBlock> {
        let len = self.cfg.depth / self.cfg.pieces();
        let round = INDEPENDENT_ROUND + sample as u64;
        let mut acc: Option<CircuitBlock> = None;
        for i in 0..len {
            let key = crate::rng::StreamKey::new(self.cfg.seed, pool as u64, round, piece * len + i);
            let layer = self.layer(&mut key.stream(), key.tag());
            acc = Some(match acc {
                None => layer,
                Some(a) => compose(&self.spec, &a, &layer, 0, 0)?,
            });
        }
        Ok(acc.expect("depth ≥ 1"))
    }

    /// One trajectory block, with probes when requested.
    fn trajectory_block(&self, pool: usize, members: Option<&[CircuitBlock]>, sample: usize) -> Result<CircuitBlock> {
        let mut rng = stream(self.cfg.seed, pool as u64, SAMPLE_ROUND, sample as u64);
        let pieces = self.cfg.pieces() as usize;
        let n = self.spec.n_sites();
        let picks = members.map(|m| pick_distinct(&mut rng, m.len(), pieces));
        let g2_site = rng.gen_range(0..n as u32);
        let mut acc: Option<CircuitBlock> = None;
        for k in 0..pieces {
            let fresh;
            let (piece, (dx, dy)) = match (members, &picks) {
                (Some(m), Some(ix)) => (&m[ix[k]], self.random_translation(&mut rng)),
                _ => {
                    fresh = self.fresh_piece(pool, sample, k as u64)?;
                    (&fresh, (0, 0))
                }
            };
            acc = Some(match acc {
                None => piece.translated(&self.spec, dx, dy)?,
                Some(a) => compose(&self.spec, &a, piece, dx, dy)?,
            });
            let probe_site = if self.cfg.has(Observable::Pd) {
                Some(rng.gen_range(0..n as u32))
            } else if self.cfg.has(Observable::Watermelon) {
                Some(g2_site)
            } else {
                None
            };
            if let Some(site) = probe_site {
                let a = acc.take().unwrap();
                acc = Some(compose(&self.spec, &a, &CircuitBlock::probe(n, site), 0, 0)?);
            }
        }
        Ok(acc.expect("at least one piece"))
    }

    fn trajectory(&self, pool: usize, members: Option<&[CircuitBlock]>, sample: usize) -> Result<Closure> {
        let block = self.trajectory_block(pool, members, sample)?;
        Ok(close_boundary(&self.spec, &block, self.cfg.closure))
    }

    fn evaluate(&self, closure: &Closure, rng_key: u64, out: &mut PoolResult) -> Result<()> {
        let mut values = Vec::with_capacity(self.names.len());
        for &o in &self.cfg.observables {
            match o {
                Observable::Spanning => {
                    let s = spanning_stats(closure, self.cfg.closure)?;
                    values.extend([s.count as f64, s.entropy, s.length as f64]);
                }
                Observable::Loops => {
                    values.extend([closure.histogram.total_loops() as f64, closure.histogram.total_length() as f64]);
                    out.histogram.merge(&closure.histogram);
                }
                Observable::Occupied => {
                    values.push(occupied_fraction(&closure.histogram, self.spec.n_sites() as u64));
                }
                Observable::Entanglement => {
                    values.extend(entanglement_profile(&closure.surface, Axis::X));
                    values.extend(entanglement_profile(&closure.surface, Axis::Y));
                }
                Observable::Surface => {
                    values.push(closure.surface.arcs.len() as f64);
                    values.extend(surface_counts(&closure.surface, Axis::X).iter().map(|&c| c as f64));
                    values.extend(surface_counts(&closure.surface, Axis::Y).iter().map(|&c| c as f64));
                }
                Observable::Watermelon => values.push(watermelon_sample(closure)),
                Observable::Tmi => {
                    let mut rng = stream(self.cfg.seed, rng_key, SAMPLE_ROUND + 1, 0);
                    let n = self.spec.n_sites() as u32;
                    let mut nonzero = 0u32;
                    for _ in 0..4 {
                        let mut label: Vec<u8> = (0..n).map(|_| rng.gen_range(0..4)).collect();
                        label.shuffle(&mut rng);
                        let region = |c: u8| (0..n).filter(|&s| label[s as usize] == c).collect::<Vec<u32>>();
                        let (a, b, c) = (region(0), region(1), region(2));
                        nonzero += (tripartite_information(&closure.surface, &a, &b, &c)? != 0) as u32;
                    }
                    values.push(nonzero as f64);
                }
                Observable::Pd => {
                    out.pd.add(&probe_clusters(closure, 4)?)?;
                }
            }
        }
        debug_assert_eq!(values.len(), self.names.len());
        if out.scalars.is_empty() {
            out.scalars = vec![Moments::default(); self.names.len()];
        }
        for (m, v) in out.scalars.iter_mut().zip(values) {
            m.push(v);
        }
        Ok(())
    }

    fn run_pool(&self, pool: usize) -> Result<PoolResult> {
        let members = match self.cfg.mode {
            SampleMode::Pool => Some(self.build_pool(pool)?),
            SampleMode::Independent => None,
        };
        // chunked so per-sample results merge in index order
        let chunk = 64;
        let n_chunks = self.cfg.samples.div_ceil(chunk);
        let parts: Vec<PoolResult> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut part = PoolResult::default();
                for s in c * chunk..((c + 1) * chunk).min(self.cfg.samples) {
                    let closure = self.trajectory(pool, members.as_deref(), s)?;
                    debug_assert!(closure.conserved());
                    self.evaluate(&closure, hash_words(&[pool as u64, s as u64]), &mut part)?;
                }
                Ok(part)
            })
            .collect::<Result<_>>()?;
        let mut total = PoolResult { scalars: vec![Moments::default(); self.names.len()], ..Default::default() };
        for part in parts {
            for (a, b) in total.scalars.iter_mut().zip(&part.scalars) {
                a.n += b.n;
                a.sum += b.sum;
                a.sum2 += b.sum2;
            }
            total.histogram.merge(&part.histogram);
            total.pd.merge(&part.pd);
        }
        Ok(total)
    }
}

/// Trajectory block and closure of a single sample, for tests and oracle
/// comparisons.
pub fn sample_closure(cfg: &CampaignConfig, pool: usize, sample: usize) -> Result<(CircuitBlock, Closure)> {
    let sampler = Sampler::new(cfg)?;
    let members = match cfg.mode {
        SampleMode::Pool => Some(sampler.build_pool(pool)?),
        SampleMode::Independent => None,
    };
    let block = sampler.trajectory_block(pool, members.as_deref(), sample)?;
    let closure = close_boundary(&sampler.spec, &block, cfg.closure);
    Ok((block, closure))
}

/// Runs one campaign in memory. Output is independent of the thread count.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignResult> {
    let sampler = Sampler::new(cfg)?;
    let pools: Vec<PoolResult> = (0..cfg.pools).into_par_iter().map(|p| sampler.run_pool(p)).collect::<Result<_>>()?;
    let hash = cfg.hash();
    let base = ResultRow {
        config_hash: hash.clone(),
        geometry: cfg.geometry.name().to_string(),
        lx: cfg.lx,
        ly: cfg.ly,
        depth: cfg.depth,
        pool_size: cfg.pool_size,
        pools: cfg.pools,
        samples: cfg.samples,
        closure: cfg.closure.name().to_string(),
        weights: cfg.weights_label(&sampler.spec),
        seed: cfg.seed,
        version: VERSION.to_string(),
        observable: String::new(),
        pool: None,
        value: 0.0,
        stderr: 0.0,
        count: 0,
    };
    let row = |name: &str, pool: Option<usize>, value: f64, stderr: f64, count: u64| ResultRow {
        observable: name.to_string(),
        pool,
        value,
        stderr,
        count,
        ..base.clone()
    };
    let mut rows = Vec::new();
    for (p, res) in pools.iter().enumerate() {
        for (name, m) in sampler.names.iter().zip(&res.scalars) {
            rows.push(row(name, Some(p), m.mean(), m.stderr(), m.n));
        }
        if cfg.has(Observable::Pd) {
            if let Ok(r) = res.pd.ratios() {
                for (name, v) in pd_values(&r) {
                    rows.push(row(name, Some(p), v, f64::NAN, res.pd.samples));
                }
            }
        }
    }
    // aggregates: pooled mean; error from the spread of pool means
    for (i, name) in sampler.names.iter().enumerate() {
        let mut all = Moments::default();
        let mut means = Moments::default();
        for res in &pools {
            let m = res.scalars[i];
            all.n += m.n;
            all.sum += m.sum;
            all.sum2 += m.sum2;
            means.push(m.mean());
        }
        let err = if pools.len() >= 2 { means.stderr() } else { all.stderr() };
        rows.push(row(name, None, all.mean(), err, all.n));
    }
    let mut histogram = LoopHistogram::new();
    let mut pd = PdAccumulator::default();
    for res in &pools {
        histogram.merge(&res.histogram);
        pd.merge(&res.pd);
    }
    if cfg.has(Observable::Pd) {
        let total = pd.ratios()?;
        for (k, (name, v)) in pd_values(&total).into_iter().enumerate() {
            let mut spread = Moments::default();
            for res in &pools {
                if let Ok(r) = res.pd.ratios() {
                    spread.push(pd_values(&r)[k].1);
                }
            }
            let err = if pools.len() >= 2 { spread.stderr() } else { f64::NAN };
            rows.push(row(name, None, v, err, pd.samples));
        }
    }
    if cfg.has(Observable::Loops) {
        let n = (cfg.pools * cfg.samples) as u64;
        rows.push(row("trivial_loops", None, histogram.trivial() as f64, 0.0, n));
        rows.push(row("odd_loops", None, histogram.odd() as f64, 0.0, n));
        for (k, &c) in histogram.counts().iter().enumerate() {
            rows.push(row(&format!("loop_hist:{k}"), None, c as f64, 0.0, n));
        }
    }
    Ok(CampaignResult { config: cfg.clone(), config_hash: hash, rows, histogram, pd })
}

fn pd_values(r: &crate::observables::PdRatios) -> [(&'static str, f64); 5] {
    [("pd_p2", r.p2), ("pd_p3", r.p3), ("pd_p4", r.p4), ("pd_r22_4", r.r22_4), ("pd_r23_32", r.r23_32)]
}

/// Rebuilds the loop histogram from `loop_hist:k` aggregate rows.
pub fn histogram_from_rows(rows: &[ResultRow]) -> LoopHistogram {
    let mut h = LoopHistogram::new();
    for r in rows.iter().filter(|r| r.pool.is_none()) {
        if let Some(k) = r.observable.strip_prefix("loop_hist:").and_then(|k| k.parse::<usize>().ok()) {
            // per-bin lengths are not persisted; bin membership is what the
            // densities need
            h.record_many(crate::histogram::bin_range(k).0, r.value as u64);
        }
    }
    let odd = rows.iter().find(|r| r.pool.is_none() && r.observable == "odd_loops");
    h.set_odd(odd.map_or(0, |r| r.value as u64));
    h
}

// ------------------------------------------------------------------ sweeps

/// One coordinate of a sweep grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub lx: u32,
    pub ly: u32,
    pub depth: u64,
    pub weights: Vec<(Color, f64)>,
}

impl GridPoint {
    fn label(&self) -> String {
        let w: Vec<String> = self.weights.iter().map(|(c, w)| format!("{}={}", c.name(), fmt_float(*w))).collect();
        format!("{}x{}:{}:{}", self.lx, self.ly, self.depth, w.join(";"))
    }

    /// The campaign for this cell, with a sub-seed derived from the master
    /// seed and the cell coordinates.
    pub fn config(&self, template: &CampaignConfig) -> CampaignConfig {
        let mut h = Sha256::new();
        h.update(self.label().as_bytes());
        let digest = h.finalize();
        let coord = u64::from_le_bytes(digest[..8].try_into().unwrap());
        CampaignConfig {
            lx: self.lx,
            ly: self.ly,
            depth: self.depth,
            weights: self.weights.clone(),
            seed: hash_words(&[template.seed, coord]),
            ..template.clone()
        }
    }
}

const MANIFEST: &str = "manifest.txt";

/// Runs every grid cell. With an output directory each finished cell is
/// written to `cells/<hash>.csv` and recorded in the manifest; cells already
/// listed there are loaded instead of recomputed.
pub fn sweep(template: &CampaignConfig, grid: &[GridPoint], out: Option<&Path>) -> Result<Vec<ResultRow>> {
    let done: BTreeSet<String> = match out {
        Some(dir) if dir.join(MANIFEST).exists() => {
            fs::read_to_string(dir.join(MANIFEST))?.lines().map(str::to_string).collect()
        }
        _ => BTreeSet::new(),
    };
    let mut rows = Vec::new();
    for point in grid {
        let cfg = point.config(template);
        let key = cfg.hash();
        if let Some(dir) = out {
            let path = dir.join("cells").join(format!("{key}.csv"));
            if done.contains(&key) && path.exists() {
                rows.extend(read_rows(&path)?);
                continue;
            }
            let result = run_campaign(&cfg)?;
            result.write(&dir.join("cells"), &key)?;
            let mut manifest = fs::OpenOptions::new().create(true).append(true).open(dir.join(MANIFEST))?;
            writeln!(manifest, "{key}")?;
            rows.extend(result.rows);
        } else {
            rows.extend(run_campaign(&cfg)?.rows);
        }
    }
    Ok(rows)
}
