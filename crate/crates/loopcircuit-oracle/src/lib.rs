//! Independent reference implementations for testing the loopcircuit
//! pipeline: sequential loop evolution over the N world lines of one time
//! slice, exhaustive enumeration of tiny circuits, and brute-force q-series.
//!
//! Nothing here goes through block composition; the only shared piece is
//! the surgery rule itself, re-derived on a different state layout.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use loopcircuit::harness::{sample_closure, CampaignConfig, Observable, SampleMode};
use loopcircuit::lattice::{Geometry, LatticeSpec, LayerRule};
use loopcircuit::loopstate::{BoundaryArc, End, Op, OpKind};
use loopcircuit::observables::{SurfaceArc, SurfaceRecord};
use loopcircuit::{Closure, ClosurePolicy, LoopHistogram};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("argument error: {0}")]
    Argument(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Pipeline(#[from] loopcircuit::Error),
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// What the current world-line end at a site is connected to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Tail {
    Site(u32),
    /// A permanent end: bottom node or an ancilla node.
    Fixed(End),
}

/// Pairing of the N world-line ends on the current time slice, plus every
/// arc already finished between two permanent ends.
#[derive(Clone, Debug, PartialEq)]
pub struct SequentialState {
    tail: Vec<Tail>,
    length: Vec<u64>,
    finished: Vec<(End, End, u64)>,
    closed: LoopHistogram,
    links: u64,
    log: Vec<Op>,
}

impl SequentialState {
    /// Initial slice for the given temporal boundary at the bottom.
    pub fn new(spec: &LatticeSpec, policy: ClosurePolicy) -> Self {
        let n = spec.n_sites() as u32;
        let mut s = SequentialState {
            tail: (0..n).map(|i| Tail::Fixed(End::Bottom(i))).collect(),
            length: vec![0; n as usize],
            finished: Vec::new(),
            closed: LoopHistogram::new(),
            links: 0,
            log: Vec::new(),
        };
        if matches!(policy, ClosurePolicy::PureBottom | ClosurePolicy::PureBoth) {
            for &(a, b) in spec.dimers() {
                s.pair(a, b, 1);
                s.links += 1;
            }
        }
        s
    }

    fn pair(&mut self, a: u32, b: u32, len: u64) {
        self.tail[a as usize] = Tail::Site(b);
        self.tail[b as usize] = Tail::Site(a);
        self.length[a as usize] = len;
        self.length[b as usize] = len;
    }

    /// Attach `t` to the far side `x` of a severed arc, with total length `len`.
    fn attach(&mut self, x: Tail, t: Tail, len: u64) {
        match (x, t) {
            (Tail::Site(a), Tail::Site(b)) => self.pair(a, b, len),
            (Tail::Site(a), f @ Tail::Fixed(_)) | (f @ Tail::Fixed(_), Tail::Site(a)) => {
                self.tail[a as usize] = f;
                self.length[a as usize] = len;
            }
            (Tail::Fixed(e), Tail::Fixed(f)) => self.finished.push((e, f, len)),
        }
    }

    /// Joins the arcs ending at sites l and m into one, with `extra` links;
    /// closes a loop if they are the two ends of the same arc.
    fn join(&mut self, l: u32, m: u32, extra: u64) {
        let (tl, tm) = (self.tail[l as usize], self.tail[m as usize]);
        let len = self.length[l as usize] + self.length[m as usize] + extra;
        if tl == Tail::Site(m) {
            self.closed.record(self.length[l as usize] + extra);
        } else {
            self.attach(tl, tm, len);
        }
    }

    pub fn apply(&mut self, op: Op) {
        self.log.push(op);
        let (l, m) = (op.a, op.b);
        match op.kind {
            OpKind::Measure => {
                self.join(l, m, 1);
                self.pair(l, m, 1);
                self.links += 2;
            }
            OpKind::Cross => {
                let (tl, tm) = (self.tail[l as usize], self.tail[m as usize]);
                let (ll, lm) = (self.length[l as usize], self.length[m as usize]);
                if tl == Tail::Site(m) {
                    self.pair(l, m, ll + 2);
                } else {
                    // the world lines swap sites
                    self.attach(Tail::Site(m), tl, ll + 1);
                    self.attach(Tail::Site(l), tm, lm + 1);
                }
                self.links += 2;
            }
            OpKind::Pass => {
                if self.tail[l as usize] == Tail::Site(m) {
                    let len = self.length[l as usize] + 2;
                    self.pair(l, m, len);
                } else {
                    for a in [l, m] {
                        self.length[a as usize] += 1;
                        if let Tail::Site(p) = self.tail[a as usize] {
                            self.length[p as usize] = self.length[a as usize];
                        }
                    }
                }
                self.links += 2;
            }
            OpKind::Probe => {
                let (site, probe) = (l, m);
                let t = self.tail[site as usize];
                let len = self.length[site as usize] + 1;
                self.attach(t, Tail::Fixed(End::Probe { probe, upper: false }), len);
                self.tail[site as usize] = Tail::Fixed(End::Probe { probe, upper: true });
                self.length[site as usize] = 1;
                self.links += 2;
            }
        }
    }

    pub fn log(&self) -> &[Op] {
        &self.log
    }

    /// Imposes the top boundary and reads off every observable field.
    pub fn finish(self, spec: &LatticeSpec, policy: ClosurePolicy) -> Closure {
        let n = self.tail.len() as u32;
        let mut links = self.links;
        let mut graph = EndGraph::default();
        for &(e, f, len) in &self.finished {
            graph.arc(e, f, len);
        }
        for i in 0..n {
            match self.tail[i as usize] {
                Tail::Site(j) if j > i => graph.arc(End::Top(i), End::Top(j), self.length[i as usize]),
                Tail::Site(_) => {}
                Tail::Fixed(e) => graph.arc(e, End::Top(i), self.length[i as usize]),
            }
        }
        match policy {
            ClosurePolicy::PureBoth => {
                for &(a, b) in spec.dimers() {
                    graph.cap(End::Top(a), End::Top(b), 1);
                    links += 1;
                }
            }
            ClosurePolicy::PeriodicTime => {
                for i in 0..n {
                    graph.cap(End::Top(i), End::Bottom(i), 0);
                }
            }
            ClosurePolicy::PureBottom | ClosurePolicy::MixedBottom => {}
        }
        let (mut arcs, loops) = graph.trace();
        let mut histogram = self.closed;
        for len in loops {
            histogram.record(len);
        }
        arcs.sort_unstable();
        let mut spanning = 0;
        let mut spanning_length = 0;
        let mut surface = Vec::new();
        for arc in &arcs {
            match (arc.a, arc.b) {
                (End::Bottom(_), End::Top(_)) => {
                    spanning += 1;
                    spanning_length += arc.length;
                }
                (End::Top(s), End::Top(t)) => surface.push(SurfaceArc::new(spec, s, t, arc.length)),
                _ => {}
            }
        }
        Closure {
            arcs,
            histogram,
            spanning,
            spanning_length,
            surface: SurfaceRecord::new(spec, surface),
            links,
        }
    }
}

/// Permanent ends joined by circuit arcs and by boundary caps; every end has
/// at most one of each.
#[derive(Default)]
struct EndGraph {
    arc: BTreeMap<End, (End, u64)>,
    cap: BTreeMap<End, (End, u64)>,
}

impl EndGraph {
    fn arc(&mut self, a: End, b: End, len: u64) {
        assert!(self.arc.insert(a, (b, len)).is_none() && self.arc.insert(b, (a, len)).is_none());
    }

    fn cap(&mut self, a: End, b: End, len: u64) {
        self.cap.insert(a, (b, len));
        self.cap.insert(b, (a, len));
    }

    /// Open paths (from uncapped ends) and closed cycles.
    fn trace(&self) -> (Vec<BoundaryArc>, Vec<u64>) {
        let mut seen = std::collections::BTreeSet::new();
        let mut arcs = Vec::new();
        for &start in self.arc.keys() {
            if seen.contains(&start) || self.cap.contains_key(&start) {
                continue;
            }
            let (mut cur, mut len) = (start, 0);
            loop {
                seen.insert(cur);
                let (v, l) = self.arc[&cur];
                seen.insert(v);
                len += l;
                match self.cap.get(&v) {
                    None => {
                        arcs.push(BoundaryArc::new(start, v, len));
                        break;
                    }
                    Some(&(w, c)) => {
                        len += c;
                        cur = w;
                    }
                }
            }
        }
        let mut loops = Vec::new();
        for &start in self.arc.keys() {
            if seen.contains(&start) {
                continue;
            }
            let (mut cur, mut len) = (start, 0);
            loop {
                seen.insert(cur);
                let (v, l) = self.arc[&cur];
                seen.insert(v);
                let (w, c) = self.cap[&v];
                len += l + c;
                cur = w;
                if cur == start {
                    break;
                }
            }
            loops.push(len);
        }
        (arcs, loops)
    }
}

/// Applies an operation log one gate at a time and closes the result.
pub fn replay(spec: &LatticeSpec, ops: &[Op], policy: ClosurePolicy) -> Result<Closure> {
    let n = spec.n_sites() as u32;
    let mut state = SequentialState::new(spec, policy);
    let mut probes = 0;
    for (i, op) in ops.iter().enumerate() {
        let ok = match op.kind {
            OpKind::Probe => op.a < n,
            _ => op.a < n && op.b < n && op.a != op.b,
        };
        if !ok {
            return Err(OracleError::Argument(format!("operation {i} ({op:?}) is out of range for {n} sites")));
        }
        if op.kind == OpKind::Probe {
            if op.b != probes {
                return Err(OracleError::Argument(format!("probe ids must be consecutive; got {} at op {i}", op.b)));
            }
            probes += 1;
        }
        state.apply(*op);
    }
    Ok(state.finish(spec, policy))
}

/// Exact outcome distribution of a tiny circuit.
#[derive(Clone, Debug)]
pub struct Enumeration {
    pub outcomes: Vec<(f64, Closure)>,
}

impl Enumeration {
    pub fn total_probability(&self) -> f64 {
        self.outcomes.iter().map(|(p, _)| p).sum()
    }

    pub fn expect(&self, f: impl Fn(&Closure) -> f64) -> f64 {
        self.outcomes.iter().map(|(p, c)| p * f(c)).sum()
    }

    pub fn expected_spanning(&self) -> f64 {
        self.expect(|c| c.spanning as f64)
    }

    /// Mean entropy of the whole system in bits: one per spanning pair.
    pub fn expected_entropy(&self) -> f64 {
        self.expect(|c| c.spanning as f64 / 2.0)
    }

    pub fn expected_loops(&self) -> f64 {
        self.expect(|c| c.histogram.total_loops() as f64)
    }
}

/// Largest number of gate sequences [`enumerate_small`] will visit.
pub const ENUMERATION_CAP: u64 = 1 << 20;

/// Enumerates every gate sequence of `depth` layers with its probability:
/// N independent draws per sampled layer, three resolutions per node for the
/// network model. Restricted to at most six bonds and depth 3.
pub fn enumerate_small(spec: &LatticeSpec, depth: u32, policy: ClosurePolicy) -> Result<Enumeration> {
    let bonds = spec.bonds();
    if bonds.len() > 6 || depth > 3 {
        return Err(OracleError::Argument(format!(
            "enumeration limited to 6 bonds and depth 3, got {} bonds and depth {depth}",
            bonds.len()
        )));
    }
    // per-step alternatives: (probability, op kind, bond index)
    let steps: Vec<Vec<(f64, OpKind, usize)>> = match spec.layer_rule() {
        LayerRule::Sampled => {
            let choices: Vec<_> = (0..bonds.len())
                .filter(|&i| spec.bond_probability(i) > 0.0)
                .map(|i| (spec.bond_probability(i), OpKind::Measure, i))
                .collect();
            vec![choices; spec.n_sites() * depth as usize]
        }
        LayerRule::Nodes => {
            use loopcircuit::lattice::Color;
            let (p, q) = (spec.weight(Color::P), spec.weight(Color::Q));
            let res: Vec<(f64, OpKind)> = [(p, OpKind::Cross), (q, OpKind::Pass), (1.0 - p - q, OpKind::Measure)]
                .into_iter()
                .filter(|&(w, _)| w > 0.0)
                .collect();
            (0..depth)
                .flat_map(|_| (0..bonds.len()).map(|i| res.iter().map(|&(w, k)| (w, k, i)).collect()))
                .collect()
        }
    };
    let count = steps.iter().try_fold(1u64, |acc, s| acc.checked_mul(s.len() as u64));
    match count {
        Some(c) if c <= ENUMERATION_CAP => {}
        _ => {
            return Err(OracleError::Argument(format!(
                "{} steps give more than {ENUMERATION_CAP} sequences",
                steps.len()
            )))
        }
    }
    let mut outcomes = Vec::new();
    let mut stack = vec![(0usize, 1.0f64, SequentialState::new(spec, policy))];
    while let Some((k, p, state)) = stack.pop() {
        if k == steps.len() {
            outcomes.push((p, state.finish(spec, policy)));
            continue;
        }
        for &(w, kind, i) in &steps[k] {
            let mut next = state.clone();
            next.apply(Op { kind, a: bonds[i].a, b: bonds[i].b });
            stack.push((k + 1, p * w, next));
        }
    }
    Ok(Enumeration { outcomes })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Series {
    /// θ₃(i t) = Σ_{n∈ℤ} e^{−π t n²}
    Theta3,
    /// η(i t) = e^{−π t/12} Π_{n≥1} (1 − e^{−2π n t})
    DedekindEta,
}

/// Relative size of the last term below which a truncated series counts as
/// converged.
pub const SERIES_CUTOFF: f64 = 1e-16;

/// Logarithm of a q-series at purely imaginary argument, summed term by
/// term with no modular transformation. Fails if `terms` is not enough.
pub fn qseries(series: Series, t: f64, terms: usize) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(OracleError::Domain(format!("series needs t > 0, got {t}")));
    }
    let mut last = f64::INFINITY;
    match series {
        Series::Theta3 => {
            let mut sum = 1.0f64;
            for n in 1..=terms {
                let term = 2.0 * (-PI * t * (n * n) as f64).exp();
                if term > last {
                    return Err(OracleError::Domain("theta3 terms must decrease".into()));
                }
                last = term;
                sum += term;
            }
            if last > SERIES_CUTOFF * sum {
                return Err(OracleError::Argument(format!("theta3 at t={t} not converged in {terms} terms")));
            }
            Ok(sum.ln())
        }
        Series::DedekindEta => {
            let mut acc = -PI * t / 12.0;
            for n in 1..=terms {
                let qn = (-2.0 * PI * t * n as f64).exp();
                if qn > last {
                    return Err(OracleError::Domain("eta factors must approach one".into()));
                }
                last = qn;
                acc += (1.0 - qn).ln();
            }
            if last > SERIES_CUTOFF {
                return Err(OracleError::Argument(format!("eta at t={t} not converged in {terms} terms")));
            }
            Ok(acc)
        }
    }
}

/// J(u) = log[θ₃(iλu) θ₃(iλ(1−u)) / (η(2iu) η(2i(1−u)))] from direct series.
pub fn lifshitz_j_series(u: f64, lambda: f64, terms: usize) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(OracleError::Domain(format!("u must lie in (0, 1), got {u}")));
    }
    let v = 1.0 - u;
    Ok(qseries(Series::Theta3, lambda * u, terms)? + qseries(Series::Theta3, lambda * v, terms)?
        - qseries(Series::DedekindEta, 2.0 * u, terms)?
        - qseries(Series::DedekindEta, 2.0 * v, terms)?)
}

/// One pipeline-vs-oracle comparison.
#[derive(Clone, Debug)]
pub struct Mismatch {
    pub case: String,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct EquivalenceReport {
    pub compared: usize,
    pub mismatches: Vec<Mismatch>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.compared > 0 && self.mismatches.is_empty()
    }
}

pub const SUITE_GEOMETRIES: [Geometry; 4] =
    [Geometry::Honeycomb, Geometry::HoneycombNNN, Geometry::YaoKivelson, Geometry::CardyL3D];
pub const SUITE_SIZES: [u32; 2] = [4, 8];
pub const SUITE_DEPTHS: [u64; 3] = [4, 16, 64];

fn first_difference(a: &Closure, b: &Closure) -> Option<String> {
    if a.arcs != b.arcs {
        let i = a.arcs.iter().zip(&b.arcs).position(|(x, y)| x != y).unwrap_or(a.arcs.len().min(b.arcs.len()));
        return Some(format!(
            "arcs differ at {i}: pipeline {:?} vs oracle {:?} ({} vs {} arcs)",
            a.arcs.get(i),
            b.arcs.get(i),
            a.arcs.len(),
            b.arcs.len()
        ));
    }
    if a.histogram != b.histogram {
        return Some(format!("loop histograms differ: {:?} vs {:?}", a.histogram, b.histogram));
    }
    if (a.spanning, a.spanning_length) != (b.spanning, b.spanning_length) {
        return Some(format!(
            "spanning ({}, {}) vs ({}, {})",
            a.spanning, a.spanning_length, b.spanning, b.spanning_length
        ));
    }
    if a.surface != b.surface {
        return Some("surface records differ".into());
    }
    if a.links != b.links {
        return Some(format!("links {} vs {}", a.links, b.links));
    }
    None
}

/// Runs `seeds` pipeline trajectories for every geometry, size and depth of
/// the suite and replays each recorded gate log through the oracle. Closure
/// policies and probe observables rotate with the seed.
pub fn equivalence_suite(seeds: u64, sizes: &[u32], depths: &[u64]) -> Result<EquivalenceReport> {
    let mut report = EquivalenceReport::default();
    for geometry in SUITE_GEOMETRIES {
        for &l in sizes {
            for &depth in depths {
                for seed in 0..seeds {
                    let case = format!("{}/L={l}/T={depth}/seed={seed}", geometry.name());
                    let mut cfg = CampaignConfig::new(geometry, l, l);
                    cfg.depth = depth;
                    cfg.pool_size = 4;
                    cfg.seed = seed;
                    cfg.record_ops = true;
                    cfg.mode = if seed % 5 == 4 { SampleMode::Independent } else { SampleMode::Pool };
                    let (closure, observables) = match seed % 6 {
                        0 => (ClosurePolicy::MixedBottom, vec![Observable::Spanning]),
                        1 => (ClosurePolicy::PureBottom, vec![Observable::Entanglement]),
                        2 => (ClosurePolicy::PureBoth, vec![Observable::Loops]),
                        3 => (ClosurePolicy::PeriodicTime, vec![Observable::Pd]),
                        4 => (ClosurePolicy::PeriodicTime, vec![Observable::Loops]),
                        _ => (ClosurePolicy::MixedBottom, vec![Observable::Watermelon]),
                    };
                    cfg.closure = closure;
                    cfg.observables = observables;
                    let spec = cfg.lattice()?;
                    let (block, pipeline) = sample_closure(&cfg, 0, seed as usize)?;
                    let ops = block
                        .ops()
                        .ok_or_else(|| OracleError::Argument(format!("{case}: no operation log recorded")))?;
                    let oracle = replay(&spec, ops, closure)?;
                    report.compared += 1;
                    if let Some(detail) = first_difference(&pipeline, &oracle) {
                        report.mismatches.push(Mismatch { case, detail });
                    }
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use loopcircuit::lattice::Color;

    fn two_sites() -> LatticeSpec {
        LatticeSpec::custom(2, &[(0, 1, Color::Z)], &[(0, 1)]).unwrap()
    }

    #[test]
    fn empty_sequence_spans_everything() {
        let spec = LatticeSpec::build(Geometry::Honeycomb, 4, 4).unwrap();
        let c = replay(&spec, &[], ClosurePolicy::MixedBottom).unwrap();
        assert_eq!(c.spanning, spec.n_sites() as u64);
        assert_eq!(c.spanning_length, 0);
    }

    #[test]
    fn repeated_bond_closes_short_loops() {
        let spec = LatticeSpec::custom(4, &[(1, 2, Color::Z)], &[]).unwrap();
        for k in 1..6 {
            let ops = vec![Op::measure(1, 2); k];
            let mut st = SequentialState::new(&spec, ClosurePolicy::MixedBottom);
            for &op in &ops {
                st.apply(op);
            }
            assert_eq!(st.tail[1], Tail::Site(2));
            assert_eq!(st.length[1], 1);
            let c = st.finish(&spec, ClosurePolicy::MixedBottom);
            assert_eq!(c.histogram.total_loops(), k as u64 - 1);
            assert_eq!(c.histogram.total_length(), 2 * (k as u64 - 1));
            assert!(c.conserved());
        }
    }

    #[test]
    fn two_site_single_bond() {
        let spec = two_sites();
        let c = replay(&spec, &[Op::measure(0, 1)], ClosurePolicy::MixedBottom).unwrap();
        // bottom 0–bottom 1 and top 0–top 1, one link each
        assert_eq!(c.spanning, 0);
        assert_eq!(c.arcs.len(), 2);
        assert!(c.arcs.iter().all(|a| a.length == 1));
        let c = replay(&spec, &[Op::measure(0, 1)], ClosurePolicy::PureBoth).unwrap();
        assert!(c.arcs.is_empty());
        assert_eq!(c.histogram.total_loops(), 2);
        assert_eq!(c.links, 4);
    }

    #[test]
    fn probe_splits_world_line() {
        let spec = two_sites();
        let ops = [Op { kind: OpKind::Probe, a: 0, b: 0 }];
        let c = replay(&spec, &ops, ClosurePolicy::MixedBottom).unwrap();
        assert!(c.arcs.contains(&BoundaryArc::new(End::Bottom(0), End::Probe { probe: 0, upper: false }, 1)));
        assert!(c.arcs.contains(&BoundaryArc::new(End::Probe { probe: 0, upper: true }, End::Top(0), 1)));
        let c = replay(&spec, &ops, ClosurePolicy::PeriodicTime).unwrap();
        assert_eq!(c.arcs, vec![BoundaryArc::new(
            End::Probe { probe: 0, upper: false },
            End::Probe { probe: 0, upper: true },
            2
        )]);
        assert_eq!(c.histogram.trivial(), 1);
    }

    #[test]
    fn replay_rejects_bad_ops() {
        let spec = two_sites();
        assert!(replay(&spec, &[Op::measure(0, 5)], ClosurePolicy::MixedBottom).is_err());
        assert!(replay(&spec, &[Op { kind: OpKind::Probe, a: 0, b: 3 }], ClosurePolicy::MixedBottom).is_err());
    }

    #[test]
    fn enumeration_is_normalized() {
        let spec = LatticeSpec::custom(4, &[(0, 1, Color::X), (1, 2, Color::Y), (2, 3, Color::Z)], &[(0, 1), (2, 3)])
            .unwrap();
        let e = enumerate_small(&spec, 2, ClosurePolicy::MixedBottom).unwrap();
        assert!((e.total_probability() - 1.0).abs() < 1e-12);
        assert!(e.expected_spanning() <= 4.0);
        assert!(enumerate_small(&spec, 4, ClosurePolicy::MixedBottom).is_err());
    }

    #[test]
    fn series_domain() {
        assert!(matches!(qseries(Series::Theta3, 0.0, 50), Err(OracleError::Domain(_))));
        assert!(matches!(qseries(Series::DedekindEta, -1.0, 50), Err(OracleError::Domain(_))));
        assert!(matches!(qseries(Series::DedekindEta, 0.01, 10), Err(OracleError::Argument(_))));
    }
}
