//! Loop-surgery engine: pairing states, depth-composable transfer-matrix
//! blocks and temporal boundary closure.
//!
//! A block over N sites owns `2N + 2P` nodes: bottom world-line ends
//! `0..N`, top ends `N..2N`, and two nodes per ancilla probe (`lower`
//! attached to the past, `upper` to the future). `partner` is a perfect
//! matching over all nodes; `length` holds the arc length at both ends.
//!
//! Length convention: a parity check adds one link to the re-joined arc and
//! creates a fresh arc of length one, i.e. two links per check. A node of
//! the 3D lattice adds one link per strand it carries (two in total). Idle
//! propagation adds nothing.

use rand::Rng;

use crate::error::{Error, Result};
use crate::histogram::LoopHistogram;
use crate::lattice::{LatticeSpec, LayerRule, Resolution};
use crate::observables::{SurfaceArc, SurfaceRecord};

/// Marker for an unpaired (maximally mixed) Majorana.
pub const OPEN: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    /// Parity check between two world lines.
    Measure,
    /// Crossing node: the two world lines swap positions.
    Cross,
    /// Pass-through node: both world lines continue.
    Pass,
    /// Ancilla insertion: `a` is the site, `b` the probe id.
    Probe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Op {
    pub kind: OpKind,
    pub a: u32,
    pub b: u32,
}

impl Op {
    pub fn measure(a: u32, b: u32) -> Self {
        Op { kind: OpKind::Measure, a, b }
    }

    /// Links this operation adds to the total arc + loop length.
    pub fn links(&self) -> u64 {
        2
    }
}

/// Pairing over an arbitrary node set with per-arc lengths.
#[derive(Clone, Debug)]
pub struct PairingState {
    partner: Vec<u32>,
    length: Vec<u64>,
    closed: LoopHistogram,
    /// Total length of arcs whose two ends both ran into OPEN boundaries.
    boundary_length: u64,
}

impl PairingState {
    /// All nodes OPEN.
    pub fn open(n: usize) -> Self {
        PairingState {
            partner: vec![OPEN; n],
            length: vec![0; n],
            closed: LoopHistogram::new(),
            boundary_length: 0,
        }
    }

    pub fn from_pairs(n: usize, pairs: &[(u32, u32, u64)]) -> Self {
        let mut s = Self::open(n);
        for &(a, b, len) in pairs {
            s.link(a, b, len);
        }
        s
    }

    #[inline]
    fn link(&mut self, a: u32, b: u32, len: u64) {
        self.partner[a as usize] = b;
        self.partner[b as usize] = a;
        self.length[a as usize] = len;
        self.length[b as usize] = len;
    }

    #[inline]
    fn set_open(&mut self, a: u32, len: u64) {
        self.partner[a as usize] = OPEN;
        self.length[a as usize] = len;
    }

    pub fn n_nodes(&self) -> usize {
        self.partner.len()
    }

    pub fn partner(&self, a: u32) -> Option<u32> {
        let p = self.partner[a as usize];
        (p != OPEN).then_some(p)
    }

    /// Length of the arc at `a` (for OPEN nodes, of the half-arc hanging from it).
    pub fn arc_length(&self, a: u32) -> u64 {
        self.length[a as usize]
    }

    pub fn closed(&self) -> &LoopHistogram {
        &self.closed
    }

    pub fn boundary_length(&self) -> u64 {
        self.boundary_length
    }

    pub fn open_count(&self) -> usize {
        self.partner.iter().filter(|&&p| p == OPEN).count()
    }

    /// Loop surgery for a parity check on `(l, m)`.
    #[inline]
    pub fn measure(&mut self, l: u32, m: u32) {
        debug_assert_ne!(l, m);
        let k = self.partner[l as usize];
        let n = self.partner[m as usize];
        let ll = self.length[l as usize];
        let lm = self.length[m as usize];
        if k == m {
            self.closed.record(ll + 1);
        } else {
            match (k == OPEN, n == OPEN) {
                (false, false) => self.link(k, n, ll + lm + 1),
                (true, false) => self.set_open(n, ll + lm + 1),
                (false, true) => self.set_open(k, ll + lm + 1),
                (true, true) => self.boundary_length += ll + lm + 1,
            }
        }
        self.link(l, m, 1);
    }

    /// Crossing: the world lines at `l` and `m` exchange positions.
    #[inline]
    pub fn cross(&mut self, l: u32, m: u32) {
        let k = self.partner[l as usize];
        let n = self.partner[m as usize];
        if k == m {
            let len = self.length[l as usize] + 2;
            self.link(l, m, len);
            return;
        }
        let ll = self.length[l as usize] + 1;
        let lm = self.length[m as usize] + 1;
        if k == OPEN {
            self.set_open(m, ll);
        } else {
            self.link(m, k, ll);
        }
        if n == OPEN {
            self.set_open(l, lm);
        } else {
            self.link(l, n, lm);
        }
    }

    /// Pass-through: both world lines advance by one link.
    #[inline]
    pub fn pass(&mut self, l: u32, m: u32) {
        for a in [l, m] {
            let p = self.partner[a as usize];
            let len = self.length[a as usize] + 1;
            if p == OPEN {
                self.length[a as usize] = len;
            } else {
                self.link(a, p, len);
            }
        }
    }

    /// Involution audit: partners are mutual, fixed-point free and lengths agree.
    pub fn audit(&self) -> Result<()> {
        audit_matching(&self.partner, &self.length, true)
    }
}

fn audit_matching(partner: &[u32], length: &[u64], allow_open: bool) -> Result<()> {
    for (a, &p) in partner.iter().enumerate() {
        if p == OPEN {
            if allow_open {
                continue;
            }
            return Err(Error::Composition(format!("node {a} is unpaired")));
        }
        let p = p as usize;
        if p == a || p >= partner.len() || partner[p] as usize != a {
            return Err(Error::Composition(format!("pairing not an involution at node {a}")));
        }
        if length[p] != length[a] {
            return Err(Error::Composition(format!("arc length mismatch at node {a}")));
        }
    }
    Ok(())
}

/// Transfer matrix of a circuit slab.
#[derive(Clone, Debug)]
pub struct CircuitBlock {
    n: u32,
    depth: u64,
    probes: u32,
    partner: Vec<u32>,
    length: Vec<u64>,
    closed: LoopHistogram,
    links: u64,
    seed_record: u64,
    ops: Option<Vec<Op>>,
}

impl PartialEq for CircuitBlock {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.depth == other.depth
            && self.probes == other.probes
            && self.partner == other.partner
            && self.length == other.length
            && self.closed == other.closed
            && self.links == other.links
    }
}

impl CircuitBlock {
    /// Depth-0 identity: every world line runs straight from bottom to top.
    pub fn identity(n: usize) -> Self {
        let n32 = n as u32;
        let mut partner = vec![0u32; 2 * n];
        for i in 0..n32 {
            partner[i as usize] = n32 + i;
            partner[(n32 + i) as usize] = i;
        }
        CircuitBlock {
            n: n32,
            depth: 0,
            probes: 0,
            partner,
            length: vec![0; 2 * n],
            closed: LoopHistogram::new(),
            links: 0,
            seed_record: 0,
            ops: Some(Vec::new()),
        }
    }

    /// Depth-0 slab that cuts the world line at `site` with one ancilla probe:
    /// the probe's lower node terminates the past segment, its upper node
    /// starts the future one (one parity check against the ancilla).
    pub fn probe(n: usize, site: u32) -> Self {
        let mut b = Self::identity(n);
        b.partner.extend([0, 0]);
        b.length.extend([0, 0]);
        b.probes = 1;
        let (lower, upper) = (2 * n as u32, 2 * n as u32 + 1);
        let top = n as u32 + site;
        b.set(site, lower, 1);
        b.set(top, upper, 1);
        b.links = 2;
        b.ops = Some(vec![Op { kind: OpKind::Probe, a: site, b: 0 }]);
        b
    }

    #[inline]
    fn set(&mut self, a: u32, b: u32, len: u64) {
        self.partner[a as usize] = b;
        self.partner[b as usize] = a;
        self.length[a as usize] = len;
        self.length[b as usize] = len;
    }

    /// Applies an explicit operation list on top of the identity (depth 1).
    pub fn from_ops(n: usize, ops: &[Op]) -> Self {
        let mut state = layer_state(n);
        for &op in ops {
            apply(&mut state, n as u32, op);
        }
        let mut b = Self::from_layer_state(n, state, ops.len() as u64 * 2);
        b.ops = Some(ops.to_vec());
        b
    }

    fn from_layer_state(n: usize, state: PairingState, links: u64) -> Self {
        CircuitBlock {
            n: n as u32,
            depth: 1,
            probes: 0,
            partner: state.partner,
            length: state.length,
            closed: state.closed,
            links,
            seed_record: 0,
            ops: None,
        }
    }

    pub fn n_sites(&self) -> usize {
        self.n as usize
    }

    pub fn depth(&self) -> u64 {
        self.depth
    }

    pub fn probes(&self) -> u32 {
        self.probes
    }

    pub fn n_nodes(&self) -> usize {
        self.partner.len()
    }

    pub fn partner(&self, node: u32) -> u32 {
        self.partner[node as usize]
    }

    pub fn arc_length(&self, node: u32) -> u64 {
        self.length[node as usize]
    }

    pub fn closed(&self) -> &LoopHistogram {
        &self.closed
    }

    /// Total links (two per parity check or node) inside the block.
    pub fn links(&self) -> u64 {
        self.links
    }

    pub fn seed_record(&self) -> u64 {
        self.seed_record
    }

    pub fn with_seed_record(mut self, tag: u64) -> Self {
        self.seed_record = tag;
        self
    }

    /// Recorded operation log (site-level), if recording was enabled.
    pub fn ops(&self) -> Option<&[Op]> {
        self.ops.as_deref()
    }

    /// The block shifted by `(dx, dy)` unit cells; same as composing the
    /// identity with it under that translation.
    pub fn translated(&self, spec: &LatticeSpec, dx: u32, dy: u32) -> Result<Self> {
        if !spec.is_translation(dx, dy) || self.n as usize != spec.n_sites() {
            return Err(Error::Composition(format!("cannot translate block by ({dx}, {dy})")));
        }
        let n = self.n;
        let fwd = spec.translation_table(dx, dy);
        let map = |u: u32| -> u32 {
            if u < n {
                fwd[u as usize]
            } else if u < 2 * n {
                n + fwd[(u - n) as usize]
            } else {
                u
            }
        };
        let mut out = self.clone();
        for u in 0..self.partner.len() as u32 {
            out.partner[map(u) as usize] = map(self.partner[u as usize]);
            out.length[map(u) as usize] = self.length[u as usize];
        }
        out.seed_record = crate::rng::hash_words(&[self.seed_record, dx as u64, dy as u64]);
        out.ops = self.ops.as_ref().map(|ops| {
            ops.iter()
                .map(|op| match op.kind {
                    OpKind::Probe => Op { a: fwd[op.a as usize], ..*op },
                    _ => Op { a: fwd[op.a as usize], b: fwd[op.b as usize], ..*op },
                })
                .collect()
        });
        Ok(out)
    }

    pub fn without_ops(mut self) -> Self {
        self.ops = None;
        self
    }

    /// Involution audit plus the length bookkeeping identity.
    pub fn audit(&self) -> Result<()> {
        audit_matching(&self.partner, &self.length, false)?;
        if self.partner.len() != 2 * self.n as usize + 2 * self.probes as usize {
            return Err(Error::Composition("node count mismatch".into()));
        }
        let arcs: u64 = self
            .partner
            .iter()
            .enumerate()
            .filter(|&(a, &p)| (a as u32) < p)
            .map(|(a, _)| self.length[a])
            .sum();
        if arcs + self.closed.total_length() != self.links {
            return Err(Error::Composition(format!(
                "length bookkeeping: arcs {arcs} + loops {} != links {}",
                self.closed.total_length(),
                self.links
            )));
        }
        Ok(())
    }
}

fn layer_state(n: usize) -> PairingState {
    let n32 = n as u32;
    let mut s = PairingState::open(2 * n);
    for i in 0..n32 {
        s.link(i, n32 + i, 0);
    }
    s
}

#[inline]
fn apply(state: &mut PairingState, n: u32, op: Op) {
    match op.kind {
        OpKind::Measure => state.measure(n + op.a, n + op.b),
        OpKind::Cross => state.cross(n + op.a, n + op.b),
        OpKind::Pass => state.pass(n + op.a, n + op.b),
        OpKind::Probe => panic!("probe operations are inserted as probe blocks"),
    }
}

/// One depth-1 layer: N sampled parity checks (or one sweep over the nodes
/// of the 3D lattice) applied to the identity.
pub fn make_layer<R: Rng + ?Sized>(spec: &LatticeSpec, rng: &mut R) -> CircuitBlock {
    build_layer(spec, rng, false)
}

/// As [`make_layer`], keeping the operation log for replay.
pub fn make_layer_recorded<R: Rng + ?Sized>(spec: &LatticeSpec, rng: &mut R) -> CircuitBlock {
    build_layer(spec, rng, true)
}

fn build_layer<R: Rng + ?Sized>(spec: &LatticeSpec, rng: &mut R, record: bool) -> CircuitBlock {
    let n = spec.n_sites();
    let n32 = n as u32;
    let mut state = layer_state(n);
    let mut ops = Vec::new();
    let mut count = 0u64;
    match spec.layer_rule() {
        LayerRule::Sampled => {
            for _ in 0..n {
                let (a, b) = spec.sample_bond(rng);
                state.measure(n32 + a, n32 + b);
                if record {
                    ops.push(Op::measure(a, b));
                }
            }
            count = n as u64;
        }
        LayerRule::Nodes => {
            for bond in spec.bonds() {
                let kind = match spec.sample_resolution(rng) {
                    Resolution::TurnBack => OpKind::Measure,
                    Resolution::Cross => OpKind::Cross,
                    Resolution::Pass => OpKind::Pass,
                };
                let op = Op { kind, a: bond.a, b: bond.b };
                apply(&mut state, n32, op);
                if record {
                    ops.push(op);
                }
                count += 1;
            }
        }
    }
    let mut block = CircuitBlock::from_layer_state(n, state, 2 * count);
    if record {
        block.ops = Some(ops);
    }
    #[cfg(debug_assertions)]
    block.audit().expect("layer audit");
    block
}

/// Stacks `b` (translated by `(dx, dy)` unit cells) on top of `a`.
///
/// Arcs meeting at the interface are concatenated, cycles confined to the
/// interface are recorded as closed loops. O(N).
pub fn compose(
    spec: &LatticeSpec,
    a: &CircuitBlock,
    b: &CircuitBlock,
    dx: u32,
    dy: u32,
) -> Result<CircuitBlock> {
    if a.n != b.n || a.n as usize != spec.n_sites() {
        return Err(Error::Composition(format!(
            "block sizes {} and {} do not match lattice with {} sites",
            a.n,
            b.n,
            spec.n_sites()
        )));
    }
    if !spec.is_translation(dx, dy) {
        return Err(Error::Composition(format!(
            "({dx}, {dy}) is not a symmetry translation of {}",
            spec.geometry()
        )));
    }
    let n = a.n;
    let (ix, iy) = spec.inverse_translation(dx, dy);
    let fwd = spec.translation_table(dx, dy);
    let inv = spec.translation_table(ix, iy);
    let a_extra = 2 * a.probes;
    let b_extra = 2 * b.probes;
    let total = (2 * n + a_extra + b_extra) as usize;
    let mut partner = vec![OPEN; total];
    let mut length = vec![0u64; total];
    let mut seen = vec![false; n as usize];
    let mut closed = a.closed.clone();
    closed.merge(&b.closed);

    // result node of an external b-node; external a-nodes keep their index
    let from_b = |u: u32| -> u32 {
        if u < 2 * n {
            n + fwd[(u - n) as usize]
        } else {
            u + a_extra
        }
    };

    // Walk starting on side a at node `u` (whose partner is looked up in a).
    // Returns the far end as a result node, plus the accumulated length.
    let walk = |start_in_a: bool, u: u32, seen: &mut [bool]| -> (u32, u64) {
        let mut in_a = start_in_a;
        let mut node = u;
        let mut len = 0u64;
        loop {
            if in_a {
                let v = a.partner[node as usize];
                len += a.length[node as usize];
                if v < n || v >= 2 * n {
                    return (v, len);
                }
                let site = v - n;
                seen[site as usize] = true;
                node = inv[site as usize];
                in_a = false;
            } else {
                let v = b.partner[node as usize];
                len += b.length[node as usize];
                if v >= n {
                    return (from_b(v), len);
                }
                let site = fwd[v as usize];
                seen[site as usize] = true;
                node = n + site;
                in_a = true;
            }
        }
    };

    // external nodes of a: bottom and a's probes
    let a_external = (0..n).chain(2 * n..2 * n + a_extra);
    for u in a_external {
        if partner[u as usize] != OPEN {
            continue;
        }
        let (v, len) = walk(true, u, &mut seen);
        partner[u as usize] = v;
        partner[v as usize] = u;
        length[u as usize] = len;
        length[v as usize] = len;
    }
    // external nodes of b: top and b's probes
    let b_external = (n..2 * n).chain(2 * n..2 * n + b_extra);
    for u in b_external {
        let r = from_b(u);
        if partner[r as usize] != OPEN {
            continue;
        }
        let (v, len) = walk(false, u, &mut seen);
        partner[r as usize] = v;
        partner[v as usize] = r;
        length[r as usize] = len;
        length[v as usize] = len;
    }
    // leftover interface sites lie on closed loops
    for s in 0..n {
        if seen[s as usize] {
            continue;
        }
        let mut len = 0u64;
        let mut site = s;
        loop {
            seen[site as usize] = true;
            let bnode = inv[site as usize];
            let v = b.partner[bnode as usize];
            len += b.length[bnode as usize];
            debug_assert!(v < n, "interface cycle escaped through b");
            let back = fwd[v as usize];
            seen[back as usize] = true;
            let w = a.partner[(n + back) as usize];
            len += a.length[(n + back) as usize];
            debug_assert!(w >= n && w < 2 * n, "interface cycle escaped through a");
            site = w - n;
            if site == s {
                break;
            }
        }
        closed.record(len);
    }

    let ops = match (&a.ops, &b.ops) {
        (Some(oa), Some(ob)) => {
            let mut ops = oa.clone();
            ops.extend(ob.iter().map(|op| match op.kind {
                OpKind::Probe => Op {
                    kind: OpKind::Probe,
                    a: spec.translate(op.a, dx, dy),
                    b: op.b + a.probes,
                },
                _ => Op {
                    kind: op.kind,
                    a: spec.translate(op.a, dx, dy),
                    b: spec.translate(op.b, dx, dy),
                },
            }));
            Some(ops)
        }
        _ => None,
    };

    let block = CircuitBlock {
        n,
        depth: a.depth + b.depth,
        probes: a.probes + b.probes,
        partner,
        length,
        closed,
        links: a.links + b.links,
        seed_record: crate::rng::hash_words(&[a.seed_record, b.seed_record, dx as u64, dy as u64]),
        ops,
    };
    #[cfg(debug_assertions)]
    block.audit()?;
    Ok(block)
}

/// Temporal boundary conditions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClosurePolicy {
    /// Pure product initial state; the top surface is the output state.
    PureBottom,
    /// Pure states projected at both ends: every world line closes.
    PureBoth,
    /// Maximally mixed initial state: top–bottom arcs are spanning.
    MixedBottom,
    /// Top identified with bottom site by site.
    PeriodicTime,
}

impl ClosurePolicy {
    pub fn name(self) -> &'static str {
        match self {
            ClosurePolicy::PureBottom => "pure-bottom",
            ClosurePolicy::PureBoth => "pure-both",
            ClosurePolicy::MixedBottom => "mixed-bottom",
            ClosurePolicy::PeriodicTime => "periodic-time",
        }
    }
}

impl std::str::FromStr for ClosurePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pure-bottom" => Ok(ClosurePolicy::PureBottom),
            "pure-both" => Ok(ClosurePolicy::PureBoth),
            "mixed-bottom" => Ok(ClosurePolicy::MixedBottom),
            "periodic-time" => Ok(ClosurePolicy::PeriodicTime),
            _ => Err(Error::Config(format!("unknown closure policy '{s}'"))),
        }
    }
}

/// Where an arc surviving the closure ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum End {
    Bottom(u32),
    Top(u32),
    /// Ancilla node: `upper` ends continue into the future of the insertion.
    Probe { probe: u32, upper: bool },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BoundaryArc {
    pub a: End,
    pub b: End,
    pub length: u64,
}

impl BoundaryArc {
    pub fn new(a: End, b: End, length: u64) -> Self {
        if a <= b {
            BoundaryArc { a, b, length }
        } else {
            BoundaryArc { a: b, b: a, length }
        }
    }

    pub fn is_spanning(&self) -> bool {
        matches!((self.a, self.b), (End::Bottom(_), End::Top(_)))
    }
}

/// Everything left after imposing temporal boundary conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct Closure {
    /// Open arcs in canonical order.
    pub arcs: Vec<BoundaryArc>,
    pub histogram: LoopHistogram,
    pub spanning: u64,
    pub spanning_length: u64,
    /// Top–top arcs of the output state (empty when the top is projected).
    pub surface: SurfaceRecord,
    /// Links including the closure dimers (length 1 each).
    pub links: u64,
}

impl Closure {
    /// Arcs joining two ancilla nodes.
    pub fn probe_arcs(&self) -> impl Iterator<Item = &BoundaryArc> {
        self.arcs
            .iter()
            .filter(|a| matches!((a.a, a.b), (End::Probe { .. }, End::Probe { .. })))
    }

    /// Sum of arc lengths plus closed-loop length equals `links`.
    pub fn conserved(&self) -> bool {
        self.arcs.iter().map(|a| a.length).sum::<u64>() + self.histogram.total_length() == self.links
    }
}

pub fn close_boundary(spec: &LatticeSpec, block: &CircuitBlock, policy: ClosurePolicy) -> Closure {
    let n = block.n;
    let total = block.partner.len();
    let mut cap = vec![OPEN; total];
    let mut cap_len = vec![0u64; total];
    let mut links = block.links;
    let mut dimer = |cap: &mut Vec<u32>, cap_len: &mut Vec<u64>, offset: u32| {
        for &(a, b) in spec.dimers() {
            cap[(offset + a) as usize] = offset + b;
            cap[(offset + b) as usize] = offset + a;
            cap_len[(offset + a) as usize] = 1;
            cap_len[(offset + b) as usize] = 1;
            links += 1;
        }
    };
    match policy {
        ClosurePolicy::PureBottom => dimer(&mut cap, &mut cap_len, 0),
        ClosurePolicy::PureBoth => {
            dimer(&mut cap, &mut cap_len, 0);
            dimer(&mut cap, &mut cap_len, n);
        }
        ClosurePolicy::MixedBottom => {}
        ClosurePolicy::PeriodicTime => {
            for i in 0..n {
                cap[i as usize] = n + i;
                cap[(n + i) as usize] = i;
            }
        }
    }
    let end_of = |u: u32| -> End {
        if u < n {
            End::Bottom(u)
        } else if u < 2 * n {
            End::Top(u - n)
        } else {
            let k = u - 2 * n;
            End::Probe { probe: k / 2, upper: k % 2 == 1 }
        }
    };

    let mut visited = vec![false; total];
    let mut arcs = Vec::new();
    for e in 0..total as u32 {
        if visited[e as usize] || cap[e as usize] != OPEN {
            continue;
        }
        let mut cur = e;
        let mut len = 0u64;
        loop {
            visited[cur as usize] = true;
            let v = block.partner[cur as usize];
            len += block.length[cur as usize];
            visited[v as usize] = true;
            if cap[v as usize] == OPEN {
                arcs.push(BoundaryArc::new(end_of(e), end_of(v), len));
                break;
            }
            len += cap_len[v as usize];
            cur = cap[v as usize];
        }
    }
    let mut histogram = block.closed.clone();
    for u in 0..total as u32 {
        if visited[u as usize] {
            continue;
        }
        let mut cur = u;
        let mut len = 0u64;
        loop {
            visited[cur as usize] = true;
            let v = block.partner[cur as usize];
            visited[v as usize] = true;
            len += block.length[cur as usize] + cap_len[v as usize];
            cur = cap[v as usize];
            if cur == u {
                break;
            }
        }
        histogram.record(len);
    }
    arcs.sort_unstable();

    let mut spanning = 0;
    let mut spanning_length = 0;
    let mut surface_arcs = Vec::new();
    for arc in &arcs {
        match (arc.a, arc.b) {
            (End::Bottom(_), End::Top(_)) => {
                spanning += 1;
                spanning_length += arc.length;
            }
            (End::Top(s), End::Top(t)) => surface_arcs.push(SurfaceArc::new(spec, s, t, arc.length)),
            _ => {}
        }
    }
    Closure {
        arcs,
        histogram,
        spanning,
        spanning_length,
        surface: SurfaceRecord::new(spec, surface_arcs),
        links,
    }
}
