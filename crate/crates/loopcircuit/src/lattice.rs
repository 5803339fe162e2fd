//! Circuit geometries: site tables, colored bond tables, sampling weights and
//! the structural properties derived from them.
//!
//! Sites are indexed row-major over unit cells with a fixed intra-cell order,
//! `site = (y * lx + x) * per_cell + sub`, so a lattice translation is pure
//! index arithmetic. All spatial boundaries are periodic.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Color {
    X,
    Y,
    Z,
    J,
    R,
    G,
    B,
    P,
    Q,
}

impl Color {
    pub const ALL: [Color; 9] = [
        Color::X,
        Color::Y,
        Color::Z,
        Color::J,
        Color::R,
        Color::G,
        Color::B,
        Color::P,
        Color::Q,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Color::X => "x",
            Color::Y => "y",
            Color::Z => "z",
            Color::J => "j",
            Color::R => "r",
            Color::G => "g",
            Color::B => "b",
            Color::P => "p",
            Color::Q => "q",
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Color {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Color::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown bond color '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Geometry {
    Honeycomb,
    KekuleHoneycomb,
    HoneycombNNN,
    YaoKivelson,
    CardyL3D,
    /// Hand-built test lattices; only the trivial translation is allowed.
    Custom,
}

impl Geometry {
    pub fn name(self) -> &'static str {
        match self {
            Geometry::Honeycomb => "honeycomb",
            Geometry::KekuleHoneycomb => "kekule",
            Geometry::HoneycombNNN => "honeycomb-nnn",
            Geometry::YaoKivelson => "yao-kivelson",
            Geometry::CardyL3D => "cardy-l3d",
            Geometry::Custom => "custom",
        }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Geometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "honeycomb" => Ok(Geometry::Honeycomb),
            "kekule" | "kekule-honeycomb" => Ok(Geometry::KekuleHoneycomb),
            "honeycomb-nnn" | "nnn" => Ok(Geometry::HoneycombNNN),
            "yao-kivelson" | "yk" => Ok(Geometry::YaoKivelson),
            "cardy-l3d" | "cardy" => Ok(Geometry::CardyL3D),
            _ => Err(Error::Config(format!("unknown geometry '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Site {
    pub x: u32,
    pub y: u32,
    pub sub: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bond {
    pub a: u32,
    pub b: u32,
    pub color: Color,
}

/// How a depth-1 layer is generated from the bond table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerRule {
    /// N parity checks drawn i.i.d. by color weight, then uniformly within the color.
    Sampled,
    /// Every bond is a 4-leg node visited once per layer in table order and
    /// resolved at random (crossing / pass-through / turn-back).
    Nodes,
}

/// Resolution of a 4-leg node of the 3D loop lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resolution {
    TurnBack,
    Cross,
    Pass,
}

#[derive(Clone, Debug)]
pub struct LatticeSpec {
    geometry: Geometry,
    lx: u32,
    ly: u32,
    per_cell: u32,
    sites: Vec<Site>,
    bonds: Vec<Bond>,
    weights: [f64; 9],
    dimers: Vec<(u32, u32)>,
    translations: Vec<(u32, u32)>,
    by_color: Vec<Vec<u32>>,
    color_cdf: Vec<(f64, usize)>,
}

pub fn build_lattice(geometry: Geometry, lx: u32, ly: u32) -> Result<LatticeSpec> {
    LatticeSpec::build(geometry, lx, ly)
}

impl LatticeSpec {
    pub fn build(geometry: Geometry, lx: u32, ly: u32) -> Result<Self> {
        if lx < 2 || ly < 2 {
            return Err(Error::Config(format!(
                "{geometry} needs L_x, L_y >= 2, got {lx}x{ly}"
            )));
        }
        match geometry {
            Geometry::Honeycomb => Ok(honeycomb(lx, ly, false, false)),
            Geometry::HoneycombNNN => Ok(honeycomb(lx, ly, false, true)),
            Geometry::KekuleHoneycomb => {
                if lx % 3 != 0 || ly % 3 != 0 {
                    return Err(Error::Config(format!(
                        "kekule pattern needs L_x, L_y divisible by 3, got {lx}x{ly}"
                    )));
                }
                Ok(honeycomb(lx, ly, true, false))
            }
            Geometry::YaoKivelson => Ok(yao_kivelson(lx, ly)),
            Geometry::CardyL3D => {
                if lx != ly {
                    return Err(Error::Config(format!(
                        "cardy-l3d uses unit aspect ratio, got {lx}x{ly}"
                    )));
                }
                Ok(cardy(lx))
            }
            Geometry::Custom => Err(Error::Config(
                "custom lattices are built with LatticeSpec::custom".into(),
            )),
        }
    }

    /// A lattice with an explicit bond list and a trivial translation group.
    pub fn custom(n_sites: u32, bonds: &[(u32, u32, Color)], dimers: &[(u32, u32)]) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::Config("custom lattice needs at least one site".into()));
        }
        let sites = (0..n_sites)
            .map(|i| Site { x: 0, y: 0, sub: i.min(255) as u8 })
            .collect();
        let bonds: Vec<Bond> = bonds
            .iter()
            .map(|&(a, b, color)| Bond { a, b, color })
            .collect();
        for b in &bonds {
            if b.a == b.b || b.a >= n_sites || b.b >= n_sites {
                return Err(Error::Config(format!("invalid bond {}-{}", b.a, b.b)));
            }
        }
        let mut seen = vec![false; n_sites as usize];
        for &(a, b) in dimers {
            if a == b || a >= n_sites || b >= n_sites || seen[a as usize] || seen[b as usize] {
                return Err(Error::Config("dimer covering is not a matching".into()));
            }
            seen[a as usize] = true;
            seen[b as usize] = true;
        }
        let mut spec = LatticeSpec {
            geometry: Geometry::Custom,
            lx: 1,
            ly: 1,
            per_cell: n_sites,
            sites,
            bonds,
            weights: [0.0; 9],
            dimers: dimers.to_vec(),
            translations: vec![(0, 0)],
            by_color: Vec::new(),
            color_cdf: Vec::new(),
        };
        spec.index_colors();
        spec.default_weights();
        Ok(spec)
    }

    fn index_colors(&mut self) {
        let mut by_color = vec![Vec::new(); 9];
        for (i, b) in self.bonds.iter().enumerate() {
            by_color[b.color.index()].push(i as u32);
        }
        self.by_color = by_color;
    }

    fn default_weights(&mut self) {
        if self.geometry == Geometry::CardyL3D {
            self.weights = [0.0; 9];
            self.weights[Color::P.index()] = 1.0 / 3.0;
            self.weights[Color::Q.index()] = 1.0 / 3.0;
            return;
        }
        let raw: Vec<(Color, f64)> = Color::ALL
            .iter()
            .filter(|c| !self.by_color[c.index()].is_empty())
            .map(|&c| (c, 1.0))
            .collect();
        if !raw.is_empty() {
            self.apply_weights(&raw).expect("uniform weights are valid");
        }
    }

    /// Returns a copy with normalized sampling weights.
    ///
    /// For `CardyL3D` the raw `p` (crossing) and `q` (pass-through) weights are
    /// node probabilities and are kept as given; the turn-back resolution takes
    /// the remaining `1 - p - q`. On `HoneycombNNN` the `j` weight applies to
    /// each of the two sublattice NNN networks, so the class carries 2·j.
    pub fn set_weights(&self, raw: &[(Color, f64)]) -> Result<Self> {
        let mut spec = self.clone();
        spec.apply_weights(raw)?;
        Ok(spec)
    }

    fn apply_weights(&mut self, raw: &[(Color, f64)]) -> Result<()> {
        let mut w = [0.0f64; 9];
        for &(c, v) in raw {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("weight for {c} must be finite and >= 0, got {v}")));
            }
            w[c.index()] += v;
        }
        if self.geometry == Geometry::HoneycombNNN {
            // the NNN bonds form two disjoint triangular lattices (one per
            // sublattice); J is the weight of each
            w[Color::J.index()] *= 2.0;
        }
        if self.geometry == Geometry::CardyL3D {
            for c in Color::ALL {
                if w[c.index()] > 0.0 && c != Color::P && c != Color::Q {
                    return Err(Error::Config(format!("cardy-l3d only takes p and q weights, got {c}")));
                }
            }
            let (p, q) = (w[Color::P.index()], w[Color::Q.index()]);
            if p + q > 1.0 + 1e-12 {
                return Err(Error::Config(format!("need p + q <= 1, got {}", p + q)));
            }
            self.weights = w;
            self.color_cdf.clear();
            return Ok(());
        }
        for c in Color::ALL {
            if w[c.index()] > 0.0 && self.by_color[c.index()].is_empty() {
                return Err(Error::Config(format!("{} has no bonds of color {c}", self.geometry)));
            }
        }
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return Err(Error::Config("all sampling weights are zero".into()));
        }
        for v in &mut w {
            *v /= total;
        }
        let mut cdf = Vec::new();
        let mut acc = 0.0;
        for c in Color::ALL {
            if w[c.index()] > 0.0 {
                acc += w[c.index()];
                cdf.push((acc, c.index()));
            }
        }
        // guard against rounding in the last bucket
        if let Some(last) = cdf.last_mut() {
            last.0 = f64::INFINITY;
        }
        self.weights = w;
        self.color_cdf = cdf;
        Ok(())
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn lx(&self) -> u32 {
        self.lx
    }

    pub fn ly(&self) -> u32 {
        self.ly
    }

    pub fn per_cell(&self) -> u32 {
        self.per_cell
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site(&self, i: u32) -> Site {
        self.sites[i as usize]
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn bonds_of(&self, color: Color) -> impl Iterator<Item = &Bond> + '_ {
        self.by_color[color.index()]
            .iter()
            .map(move |&i| &self.bonds[i as usize])
    }

    pub fn weight(&self, color: Color) -> f64 {
        self.weights[color.index()]
    }

    pub fn weights(&self) -> Vec<(Color, f64)> {
        Color::ALL.iter().map(|&c| (c, self.weights[c.index()])).collect()
    }

    pub fn layer_rule(&self) -> LayerRule {
        match self.geometry {
            Geometry::CardyL3D => LayerRule::Nodes,
            _ => LayerRule::Sampled,
        }
    }

    /// Local perfect matching used to purify a temporal boundary.
    pub fn dimers(&self) -> &[(u32, u32)] {
        &self.dimers
    }

    /// Probability that one sampled parity check lands on a given bond.
    pub fn bond_probability(&self, bond: usize) -> f64 {
        let c = self.bonds[bond].color.index();
        let n = self.by_color[c].len();
        if n == 0 || self.layer_rule() == LayerRule::Nodes {
            0.0
        } else {
            self.weights[c] / n as f64
        }
    }

    /// Bond is part of the dynamics for the current weights.
    pub fn is_active(&self, bond: usize) -> bool {
        match self.layer_rule() {
            LayerRule::Nodes => true,
            LayerRule::Sampled => self.weights[self.bonds[bond].color.index()] > 0.0,
        }
    }

    /// Draws one parity check for a `Sampled` layer.
    #[inline]
    pub fn sample_bond<R: Rng + ?Sized>(&self, rng: &mut R) -> (u32, u32) {
        let u: f64 = rng.gen();
        let mut color = self.color_cdf[0].1;
        for &(edge, c) in &self.color_cdf {
            if u < edge {
                color = c;
                break;
            }
        }
        let list = &self.by_color[color];
        let b = &self.bonds[list[rng.gen_range(0..list.len())] as usize];
        (b.a, b.b)
    }

    /// Draws the resolution of one node of a `Nodes` layer.
    #[inline]
    pub fn sample_resolution<R: Rng + ?Sized>(&self, rng: &mut R) -> Resolution {
        let u: f64 = rng.gen();
        let p = self.weights[Color::P.index()];
        let q = self.weights[Color::Q.index()];
        if u < p {
            Resolution::Cross
        } else if u < p + q {
            Resolution::Pass
        } else {
            Resolution::TurnBack
        }
    }

    /// Translations (in unit cells) that map the colored lattice onto itself.
    pub fn translations(&self) -> &[(u32, u32)] {
        &self.translations
    }

    #[inline]
    pub fn translate(&self, site: u32, dx: u32, dy: u32) -> u32 {
        if self.lx == 1 && self.ly == 1 {
            return site;
        }
        let cell = site / self.per_cell;
        let sub = site % self.per_cell;
        let x = (cell % self.lx + dx) % self.lx;
        let y = (cell / self.lx + dy) % self.ly;
        (y * self.lx + x) * self.per_cell + sub
    }

    /// `translate(s, dx, dy)` for every site, without per-site division.
    pub fn translation_table(&self, dx: u32, dy: u32) -> Vec<u32> {
        let n = self.sites.len();
        if self.lx == 1 && self.ly == 1 {
            return (0..n as u32).collect();
        }
        let (dx, dy) = (dx % self.lx, dy % self.ly);
        let mut table = Vec::with_capacity(n);
        for y in 0..self.ly {
            let ty = (y + dy) % self.ly;
            for x in 0..self.lx {
                let base = (ty * self.lx + (x + dx) % self.lx) * self.per_cell;
                table.extend(base..base + self.per_cell);
            }
        }
        table
    }

    /// Translation undoing `(dx, dy)`.
    pub fn inverse_translation(&self, dx: u32, dy: u32) -> (u32, u32) {
        ((self.lx - dx % self.lx) % self.lx, (self.ly - dy % self.ly) % self.ly)
    }

    pub fn is_translation(&self, dx: u32, dy: u32) -> bool {
        self.translations.contains(&(dx % self.lx, dy % self.ly))
    }

    /// Uniform coordination number of the active bond graph, if uniform.
    pub fn coordination(&self) -> Option<usize> {
        let deg = self.active_degrees();
        let z = deg[0];
        deg.iter().all(|&d| d == z).then_some(z)
    }

    fn active_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.sites.len()];
        for (i, b) in self.bonds.iter().enumerate() {
            if self.is_active(i) {
                deg[b.a as usize] += 1;
                deg[b.b as usize] += 1;
            }
        }
        deg
    }

    /// Bonds become nodes; two nodes are joined once per shared Majorana site.
    pub fn frustration_graph(&self) -> FrustrationGraph {
        let mut incident: Vec<Vec<u32>> = vec![Vec::new(); self.sites.len()];
        let nodes: Vec<u32> = (0..self.bonds.len() as u32)
            .filter(|&i| self.is_active(i as usize))
            .collect();
        for &i in &nodes {
            let b = self.bonds[i as usize];
            incident[b.a as usize].push(i);
            incident[b.b as usize].push(i);
        }
        let mut adjacency = vec![Vec::new(); self.bonds.len()];
        for &i in &nodes {
            let b = self.bonds[i as usize];
            for s in [b.a, b.b] {
                for &j in &incident[s as usize] {
                    if j != i {
                        adjacency[i as usize].push(j);
                    }
                }
            }
        }
        FrustrationGraph { nodes, adjacency }
    }

    /// Bipartiteness of the active bond graph; crossings in the 3D lattice
    /// break orientability on their own.
    pub fn is_orientable(&self) -> bool {
        if self.geometry == Geometry::CardyL3D && self.weights[Color::P.index()] > 0.0 {
            return false;
        }
        self.two_coloring().is_some()
    }

    /// A proper 2-coloring of the active bond graph, if one exists.
    pub fn two_coloring(&self) -> Option<Vec<u8>> {
        let n = self.sites.len();
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (i, b) in self.bonds.iter().enumerate() {
            if self.is_active(i) {
                adj[b.a as usize].push(b.b);
                adj[b.b as usize].push(b.a);
            }
        }
        let mut color = vec![u8::MAX; n];
        let mut queue = VecDeque::new();
        for start in 0..n {
            if color[start] != u8::MAX {
                continue;
            }
            color[start] = 0;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    let v = v as usize;
                    if color[v] == u8::MAX {
                        color[v] = 1 - color[u];
                        queue.push_back(v);
                    } else if color[v] == color[u] {
                        return None;
                    }
                }
            }
        }
        Some(color)
    }
}

#[derive(Clone, Debug)]
pub struct FrustrationGraph {
    /// Bond indices present in the graph (active bonds only).
    pub nodes: Vec<u32>,
    /// Neighbors per bond index, with multiplicity per shared site.
    pub adjacency: Vec<Vec<u32>>,
}

impl FrustrationGraph {
    pub fn degree(&self, bond: u32) -> usize {
        self.adjacency[bond as usize].len()
    }
}

fn cell_index(lx: u32, x: u32, y: u32) -> u32 {
    y * lx + x
}

fn grid_sites(lx: u32, ly: u32, per_cell: u32) -> Vec<Site> {
    let mut sites = Vec::with_capacity((lx * ly * per_cell) as usize);
    for y in 0..ly {
        for x in 0..lx {
            for sub in 0..per_cell {
                sites.push(Site { x, y, sub: sub as u8 });
            }
        }
    }
    sites
}

fn all_translations(lx: u32, ly: u32) -> Vec<(u32, u32)> {
    (0..ly).flat_map(|dy| (0..lx).map(move |dx| (dx, dy))).collect()
}

fn finish(
    geometry: Geometry,
    lx: u32,
    ly: u32,
    per_cell: u32,
    bonds: Vec<Bond>,
    dimers: Vec<(u32, u32)>,
    translations: Vec<(u32, u32)>,
) -> LatticeSpec {
    let mut spec = LatticeSpec {
        geometry,
        lx,
        ly,
        per_cell,
        sites: grid_sites(lx, ly, per_cell),
        bonds,
        weights: [0.0; 9],
        dimers,
        translations,
        by_color: Vec::new(),
        color_cdf: Vec::new(),
    };
    spec.index_colors();
    spec.default_weights();
    spec
}

// Brick-wall honeycomb: A = 2*cell, B = 2*cell + 1.
// z: A(x,y)-B(x,y), x: B(x,y)-A(x+1,y), y: B(x,y)-A(x,y+1).
fn honeycomb(lx: u32, ly: u32, kekule: bool, nnn: bool) -> LatticeSpec {
    let a = |x: u32, y: u32| 2 * cell_index(lx, x % lx, y % ly);
    let b = |x: u32, y: u32| 2 * cell_index(lx, x % lx, y % ly) + 1;
    // Kekulé: class of the A endpoint's cell plus a per-direction offset.
    let kek = |ax: u32, ay: u32, offset: u32| {
        let class = (ax + 3 * ly - ay % ly) % 3;
        [Color::R, Color::G, Color::B][((class + offset) % 3) as usize]
    };
    let mut bonds = Vec::new();
    let mut dimers = Vec::new();
    for y in 0..ly {
        for x in 0..lx {
            let (cz, cx, cy) = if kekule {
                (kek(x, y, 0), kek(x + 1, y, 1), kek(x, y + 1, 2))
            } else {
                (Color::Z, Color::X, Color::Y)
            };
            bonds.push(Bond { a: a(x, y), b: b(x, y), color: cz });
            bonds.push(Bond { a: b(x, y), b: a(x + 1, y), color: cx });
            bonds.push(Bond { a: b(x, y), b: a(x, y + 1), color: cy });
            dimers.push((a(x, y), b(x, y)));
        }
    }
    if nnn {
        for y in 0..ly {
            for x in 0..lx {
                for sub in 0..2 {
                    let here = 2 * cell_index(lx, x, y) + sub;
                    for (dx, dy) in [(1, 0), (0, 1), (1, ly - 1)] {
                        let there = 2 * cell_index(lx, (x + dx) % lx, (y + dy) % ly) + sub;
                        bonds.push(Bond { a: here, b: there, color: Color::J });
                    }
                }
            }
        }
    }
    let geometry = match (kekule, nnn) {
        (true, _) => Geometry::KekuleHoneycomb,
        (false, true) => Geometry::HoneycombNNN,
        _ => Geometry::Honeycomb,
    };
    let translations = if kekule {
        all_translations(lx, ly)
            .into_iter()
            .filter(|&(dx, dy)| (dx + 3 * ly - dy) % 3 == 0)
            .collect()
    } else {
        all_translations(lx, ly)
    };
    finish(geometry, lx, ly, 2, bonds, dimers, translations)
}

// Decorated honeycomb: triangle A = subs 0,1,2 and triangle B = subs 3,4,5.
// Sub 0/3 leave along z, 1/4 along x, 2/5 along y. Triangle edges are
// colored by the direction they do not touch: r (no z), g (no x), b (no y).
fn yao_kivelson(lx: u32, ly: u32) -> LatticeSpec {
    let s = |x: u32, y: u32, sub: u32| 6 * cell_index(lx, x % lx, y % ly) + sub;
    let mut bonds = Vec::new();
    let mut dimers = Vec::new();
    for y in 0..ly {
        for x in 0..lx {
            for base in [0, 3] {
                bonds.push(Bond { a: s(x, y, base + 1), b: s(x, y, base + 2), color: Color::R });
                bonds.push(Bond { a: s(x, y, base), b: s(x, y, base + 2), color: Color::G });
                bonds.push(Bond { a: s(x, y, base), b: s(x, y, base + 1), color: Color::B });
            }
            let inter = [
                (s(x, y, 0), s(x, y, 3), Color::Z),
                (s(x, y, 4), s(x + 1, y, 1), Color::X),
                (s(x, y, 5), s(x, y + 1, 2), Color::Y),
            ];
            for (a, b, color) in inter {
                bonds.push(Bond { a, b, color });
                dimers.push((a, b));
            }
        }
    }
    finish(Geometry::YaoKivelson, lx, ly, 6, bonds, dimers, all_translations(lx, ly))
}

// 2x2 strands per cell, sub = 2*j + i at strand coordinate (2x+i, 2y+j).
// Node sub-layers in table order: intra-cell horizontal, intra-cell vertical,
// inter-cell horizontal, inter-cell vertical.
fn cardy(l: u32) -> LatticeSpec {
    let s = |x: u32, y: u32, sub: u32| 4 * cell_index(l, x % l, y % l) + sub;
    let mut bonds = Vec::new();
    let mut dimers = Vec::new();
    let cells: Vec<(u32, u32)> = (0..l).flat_map(|y| (0..l).map(move |x| (x, y))).collect();
    for &(x, y) in &cells {
        for (a, b) in [(0, 1), (2, 3)] {
            bonds.push(Bond { a: s(x, y, a), b: s(x, y, b), color: Color::X });
            dimers.push((s(x, y, a), s(x, y, b)));
        }
    }
    for &(x, y) in &cells {
        for (a, b) in [(0, 2), (1, 3)] {
            bonds.push(Bond { a: s(x, y, a), b: s(x, y, b), color: Color::Y });
        }
    }
    for &(x, y) in &cells {
        for (a, b) in [(1, 0), (3, 2)] {
            bonds.push(Bond { a: s(x, y, a), b: s(x + 1, y, b), color: Color::X });
        }
    }
    for &(x, y) in &cells {
        for (a, b) in [(2, 0), (3, 1)] {
            bonds.push(Bond { a: s(x, y, a), b: s(x, y + 1, b), color: Color::Y });
        }
    }
    finish(Geometry::CardyL3D, l, l, 4, bonds, dimers, all_translations(l, l))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(spec: &LatticeSpec) -> Vec<usize> {
        Color::ALL.iter().map(|&c| spec.bonds_of(c).count()).collect()
    }

    #[test]
    fn honeycomb_small() {
        let h = LatticeSpec::build(Geometry::Honeycomb, 2, 2).unwrap();
        assert_eq!(h.n_sites(), 8);
        assert_eq!(h.bonds().len(), 12);
        assert_eq!(&counts(&h)[..3], &[4, 4, 4]);
        let yk = LatticeSpec::build(Geometry::YaoKivelson, 2, 2).unwrap();
        assert_eq!(yk.n_sites(), 24);
        assert!(LatticeSpec::build(Geometry::Honeycomb, 1, 1).is_err());
        assert!(LatticeSpec::build(Geometry::KekuleHoneycomb, 4, 4).is_err());
        assert!(LatticeSpec::build(Geometry::CardyL3D, 4, 2).is_err());
    }

    #[test]
    fn weight_normalization() {
        let h = LatticeSpec::build(Geometry::Honeycomb, 3, 3).unwrap();
        let w = h.set_weights(&[(Color::X, 1.0), (Color::Y, 1.0), (Color::Z, 1.0)]).unwrap();
        for c in [Color::X, Color::Y, Color::Z] {
            assert!((w.weight(c) - 1.0 / 3.0).abs() < 1e-15);
        }
        let w = h.set_weights(&[(Color::X, 1.0), (Color::Y, 1.0), (Color::Z, 0.0)]).unwrap();
        assert_eq!((w.weight(Color::X), w.weight(Color::Y), w.weight(Color::Z)), (0.5, 0.5, 0.0));
        let n = LatticeSpec::build(Geometry::HoneycombNNN, 3, 3).unwrap();
        let w = n
            .set_weights(&[(Color::X, 2.0), (Color::Y, 1.0), (Color::Z, 1.0), (Color::J, 0.0)])
            .unwrap();
        assert_eq!(
            (w.weight(Color::X), w.weight(Color::Y), w.weight(Color::Z), w.weight(Color::J)),
            (0.5, 0.25, 0.25, 0.0)
        );
        assert!(h.set_weights(&[(Color::X, 0.0)]).is_err());
        assert!(h.set_weights(&[(Color::J, 1.0)]).is_err());
        assert!(h.set_weights(&[(Color::X, -1.0), (Color::Y, 2.0)]).is_err());
    }

    #[test]
    fn orientability() {
        let h = LatticeSpec::build(Geometry::Honeycomb, 4, 4).unwrap();
        assert!(h.is_orientable());
        let n = LatticeSpec::build(Geometry::HoneycombNNN, 4, 4).unwrap();
        assert!(!n.is_orientable());
        let n0 = n.set_weights(&[(Color::X, 1.0), (Color::Y, 1.0), (Color::Z, 1.0)]).unwrap();
        assert!(n0.is_orientable());
        let c = LatticeSpec::build(Geometry::CardyL3D, 3, 3).unwrap();
        assert!(!c.is_orientable());
        assert!(c.set_weights(&[(Color::P, 0.0), (Color::Q, 0.0)]).unwrap().is_orientable());
        assert!(c.set_weights(&[(Color::P, 0.0), (Color::Q, 0.4)]).unwrap().is_orientable());
        assert!(c.set_weights(&[(Color::P, 0.7), (Color::Q, 0.4)]).is_err());
    }

    #[test]
    fn yao_kivelson_orientable_limit() {
        // triangle colors carry J; zeroing one of them opens every triangle
        let yk = LatticeSpec::build(Geometry::YaoKivelson, 4, 4).unwrap();
        assert!(!yk.is_orientable());
        let open = yk
            .set_weights(&[
                (Color::R, 1.0),
                (Color::G, 1.0),
                (Color::X, 1.0),
                (Color::Y, 1.0),
                (Color::Z, 1.0),
            ])
            .unwrap();
        assert!(open.is_orientable());
    }

    #[test]
    fn kekule_pattern() {
        let k = LatticeSpec::build(Geometry::KekuleHoneycomb, 6, 6).unwrap();
        // one bond of every color at each site
        let mut seen = vec![[0u8; 3]; k.n_sites()];
        for b in k.bonds() {
            let c = match b.color {
                Color::R => 0,
                Color::G => 1,
                Color::B => 2,
                other => panic!("unexpected color {other}"),
            };
            seen[b.a as usize][c] += 1;
            seen[b.b as usize][c] += 1;
        }
        assert!(seen.iter().all(|s| *s == [1, 1, 1]));
        // two-color alternating cycles are hexagons
        let partner = |site: u32, c: Color| {
            k.bonds_of(c)
                .find(|b| b.a == site || b.b == site)
                .map(|b| if b.a == site { b.b } else { b.a })
                .unwrap()
        };
        for (c1, c2) in [(Color::R, Color::G), (Color::G, Color::B), (Color::R, Color::B)] {
            let mut cur = 0;
            let mut steps = 0;
            loop {
                cur = partner(cur, if steps % 2 == 0 { c1 } else { c2 });
                steps += 1;
                if cur == 0 && steps % 2 == 0 {
                    break;
                }
            }
            assert_eq!(steps, 6);
        }
        assert_eq!(k.translations().len(), 12);
        for &(dx, dy) in k.translations() {
            for b in k.bonds() {
                let (ta, tb) = (k.translate(b.a, dx, dy), k.translate(b.b, dx, dy));
                assert!(k
                    .bonds()
                    .iter()
                    .any(|o| o.color == b.color && ((o.a, o.b) == (ta, tb) || (o.a, o.b) == (tb, ta))));
            }
        }
    }

    #[test]
    fn frustration_degrees() {
        let h = LatticeSpec::build(Geometry::Honeycomb, 4, 4).unwrap();
        let g = h.frustration_graph();
        assert!(g.nodes.iter().all(|&i| g.degree(i) == 4));
        let tri = LatticeSpec::build(Geometry::HoneycombNNN, 4, 4)
            .unwrap()
            .set_weights(&[(Color::J, 1.0)])
            .unwrap();
        let g = tri.frustration_graph();
        assert_eq!(g.nodes.len(), 3 * tri.n_sites());
        assert!(g.nodes.iter().all(|&i| g.degree(i) == 10));
        let single = LatticeSpec::custom(2, &[(0, 1, Color::X)], &[(0, 1)]).unwrap();
        assert_eq!(single.frustration_graph().degree(0), 0);
    }

    #[test]
    fn translations_compose() {
        let h = LatticeSpec::build(Geometry::YaoKivelson, 3, 4).unwrap();
        for site in 0..h.n_sites() as u32 {
            let t = h.translate(site, 2, 3);
            let (ix, iy) = h.inverse_translation(2, 3);
            assert_eq!(h.translate(t, ix, iy), site);
            assert_eq!(h.site(t).sub, h.site(site).sub);
        }
        let table = h.translation_table(2, 3);
        assert!((0..h.n_sites() as u32).all(|s| table[s as usize] == h.translate(s, 2, 3)));
    }

    #[test]
    fn nnn_weight_counts_both_sublattices() {
        let h = LatticeSpec::build(Geometry::HoneycombNNN, 4, 4)
            .unwrap()
            .set_weights(&[(Color::X, 0.25), (Color::Y, 0.25), (Color::Z, 0.25), (Color::J, 0.25)])
            .unwrap();
        assert!((h.weight(Color::J) - 0.4).abs() < 1e-15);
        assert!((h.weight(Color::Z) - 0.2).abs() < 1e-15);
    }
}
