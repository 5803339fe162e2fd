//! Physical quantities read off closed boundaries: entanglement and mutual
//! information from surface arcs, spanning statistics, probe connectivity
//! (watermelon and Poisson-Dirichlet estimators), loop-length distributions
//! and diffusion fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::LoopHistogram;
use crate::lattice::LatticeSpec;
use crate::loopstate::{BoundaryArc, Closure, ClosurePolicy, End};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

/// One open arc with both ends on the final time slice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SurfaceArc {
    pub a: u32,
    pub b: u32,
    pub length: u64,
    /// Unit-cell coordinates of the two ends.
    pub a_cell: (u32, u32),
    pub b_cell: (u32, u32),
}

impl SurfaceArc {
    pub fn new(spec: &LatticeSpec, a: u32, b: u32, length: u64) -> Self {
        let (sa, sb) = (spec.site(a), spec.site(b));
        SurfaceArc { a, b, length, a_cell: (sa.x, sa.y), b_cell: (sb.x, sb.y) }
    }
}

/// Final-time pairing table of a pure output state.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRecord {
    pub lx: u32,
    pub ly: u32,
    pub n_sites: u32,
    pub arcs: Vec<SurfaceArc>,
}

impl SurfaceRecord {
    pub fn new(spec: &LatticeSpec, arcs: Vec<SurfaceArc>) -> Self {
        SurfaceRecord {
            lx: spec.lx(),
            ly: spec.ly(),
            n_sites: spec.n_sites() as u32,
            arcs,
        }
    }

    pub fn extent(&self, axis: Axis) -> u32 {
        match axis {
            Axis::X => self.lx,
            Axis::Y => self.ly,
        }
    }

    /// Minimal-image projected length of an arc along `axis`.
    pub fn surface_length(&self, arc: &SurfaceArc, axis: Axis) -> u32 {
        let (a, b, l) = match axis {
            Axis::X => (arc.a_cell.0, arc.b_cell.0, self.lx),
            Axis::Y => (arc.a_cell.1, arc.b_cell.1, self.ly),
        };
        min_image(a, b, l)
    }
}

#[inline]
fn min_image(a: u32, b: u32, l: u32) -> u32 {
    let d = a.abs_diff(b) % l;
    d.min(l - d)
}

/// Normalized distribution of minimal-image surface lengths, indexed by
/// length `0..=L/2`. Empty for an empty record.
pub fn surface_distribution(rec: &SurfaceRecord, axis: Axis) -> Vec<f64> {
    if rec.arcs.is_empty() {
        return Vec::new();
    }
    let counts = surface_counts(rec, axis);
    let total = rec.arcs.len() as f64;
    counts.iter().map(|&c| c as f64 / total).collect()
}

/// Arc counts per minimal-image surface length.
pub fn surface_counts(rec: &SurfaceRecord, axis: Axis) -> Vec<u64> {
    let l = rec.extent(axis);
    let mut counts = vec![0u64; (l / 2 + 1) as usize];
    for arc in &rec.arcs {
        counts[rec.surface_length(arc, axis) as usize] += 1;
    }
    counts
}

/// Entanglement (bits) of the cylinder `[start, start + len)` along `axis`:
/// half the number of arcs with exactly one end inside.
pub fn entanglement_cylinder(rec: &SurfaceRecord, axis: Axis, start: u32, len: u32) -> Result<f64> {
    let l = rec.extent(axis);
    if len > l {
        return Err(Error::Argument(format!("cylinder length {len} exceeds extent {l}")));
    }
    let inside = |c: u32| (c + l - start % l) % l < len;
    let coord = |cell: (u32, u32)| match axis {
        Axis::X => cell.0,
        Axis::Y => cell.1,
    };
    let crossing = rec
        .arcs
        .iter()
        .filter(|a| inside(coord(a.a_cell)) != inside(coord(a.b_cell)))
        .count();
    Ok(crossing as f64 / 2.0)
}

/// Entanglement of cylinders of every length `0..=L`, averaged over all
/// cut positions, in one O(N + L) pass: an arc of surface length d is cut
/// by 2·min(ℓ, d, L−ℓ) of the L placements.
pub fn entanglement_profile(rec: &SurfaceRecord, axis: Axis) -> Vec<f64> {
    let l = rec.extent(axis);
    let counts = surface_counts(rec, axis);
    (0..=l)
        .map(|len| {
            let cut: u64 = counts
                .iter()
                .enumerate()
                .map(|(d, &c)| c * (d as u32).min(len).min(l - len) as u64)
                .sum();
            cut as f64 / l as f64
        })
        .collect()
}

fn region_mask(n: u32, region: &[u32]) -> Result<Vec<bool>> {
    let mut mask = vec![false; n as usize];
    for &s in region {
        if s >= n {
            return Err(Error::Argument(format!("site {s} outside lattice")));
        }
        mask[s as usize] = true;
    }
    Ok(mask)
}

/// Entanglement (bits) of an arbitrary site set.
pub fn entropy(rec: &SurfaceRecord, region: &[u32]) -> Result<f64> {
    let mask = region_mask(rec.n_sites, region)?;
    let crossing = rec
        .arcs
        .iter()
        .filter(|a| mask[a.a as usize] != mask[a.b as usize])
        .count();
    Ok(crossing as f64 / 2.0)
}

/// Number of arcs joining `a` and `b` (each arc carries one half-bit).
pub fn mutual_information(rec: &SurfaceRecord, a: &[u32], b: &[u32]) -> Result<u64> {
    let ma = region_mask(rec.n_sites, a)?;
    let mb = region_mask(rec.n_sites, b)?;
    if ma.iter().zip(&mb).any(|(x, y)| *x && *y) {
        return Err(Error::Argument("regions overlap".into()));
    }
    Ok(rec
        .arcs
        .iter()
        .filter(|arc| {
            let (i, j) = (arc.a as usize, arc.b as usize);
            (ma[i] && mb[j]) || (ma[j] && mb[i])
        })
        .count() as u64)
}

/// I₃(A,B,C) = I₂(A,B) + I₂(A,C) − I₂(A,B∪C), in arcs.
pub fn tripartite_information(rec: &SurfaceRecord, a: &[u32], b: &[u32], c: &[u32]) -> Result<i64> {
    let bc: Vec<u32> = b.iter().chain(c).copied().collect();
    let ab = mutual_information(rec, a, b)? as i64;
    let ac = mutual_information(rec, a, c)? as i64;
    let abc = mutual_information(rec, a, &bc)? as i64;
    Ok(ab + ac - abc)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanningStats {
    /// Number of top–bottom arcs.
    pub count: u64,
    /// Residual entropy in bits, n_s / 2.
    pub entropy: f64,
    /// Summed bulk length of the spanning arcs.
    pub length: u64,
}

pub fn spanning_stats(closure: &Closure, policy: ClosurePolicy) -> Result<SpanningStats> {
    if policy != ClosurePolicy::MixedBottom {
        return Err(Error::Argument(format!(
            "spanning statistics need a mixed-bottom closure, got {}",
            policy.name()
        )));
    }
    Ok(SpanningStats {
        count: closure.spanning,
        entropy: closure.spanning as f64 / 2.0,
        length: closure.spanning_length,
    })
}

fn probe_of(end: End) -> Option<u32> {
    match end {
        End::Probe { probe, .. } => Some(probe),
        _ => None,
    }
}

/// Number of arcs running between probe `i` and probe `j` (I₂ of the two ancillas).
pub fn probe_linking(closure: &Closure, i: u32, j: u32) -> u64 {
    closure
        .arcs
        .iter()
        .filter(|arc| {
            let (p, q) = (probe_of(arc.a), probe_of(arc.b));
            (p == Some(i) && q == Some(j)) || (p == Some(j) && q == Some(i))
        })
        .count() as u64
}

/// Watermelon sample ½·I₂(A, B) for a two-probe closure: 1 when both probes
/// lie on one loop (two legs between them), else 0.
pub fn watermelon_sample(closure: &Closure) -> f64 {
    probe_linking(closure, 0, 1) as f64 / 2.0
}

/// Loop label per probe: probes share a label iff they sit on the same loop.
pub fn probe_clusters(closure: &Closure, n_probes: u32) -> Result<Vec<u32>> {
    let mut parent: Vec<u32> = (0..n_probes).collect();
    fn find(p: &mut [u32], mut x: u32) -> u32 {
        while p[x as usize] != x {
            p[x as usize] = p[p[x as usize] as usize];
            x = p[x as usize];
        }
        x
    }
    for arc in closure.arcs.iter() {
        match (probe_of(arc.a), probe_of(arc.b)) {
            (Some(i), Some(j)) => {
                if i >= n_probes || j >= n_probes {
                    return Err(Error::Argument(format!("probe id beyond {n_probes}")));
                }
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri.max(rj) as usize] = ri.min(rj);
            }
            (None, None) => {}
            _ => {
                return Err(Error::Argument(
                    "probe arc ends on an open boundary; close all non-ancilla arcs first".into(),
                ))
            }
        }
    }
    Ok((0..n_probes).map(|i| find(&mut parent, i)).collect())
}

/// Running estimate of P₂, P₃, P₄ from four-probe samples, averaged over
/// every pair / triple so the estimate is symmetric under probe relabeling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PdAccumulator {
    pub samples: u64,
    pub pairs: u64,
    pub triples: u64,
    pub quads: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdRatios {
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
    /// P₂²/P₄
    pub r22_4: f64,
    /// P₂³/P₃²
    pub r23_32: f64,
}

impl PdAccumulator {
    pub fn add(&mut self, labels: &[u32]) -> Result<()> {
        if labels.len() != 4 {
            return Err(Error::Argument(format!("need 4 probes, got {}", labels.len())));
        }
        self.samples += 1;
        for i in 0..4 {
            for j in i + 1..4 {
                self.pairs += (labels[i] == labels[j]) as u64;
                for k in j + 1..4 {
                    self.triples += (labels[i] == labels[j] && labels[j] == labels[k]) as u64;
                }
            }
        }
        self.quads += labels.iter().all(|&l| l == labels[0]) as u64;
        Ok(())
    }

    pub fn merge(&mut self, other: &PdAccumulator) {
        self.samples += other.samples;
        self.pairs += other.pairs;
        self.triples += other.triples;
        self.quads += other.quads;
    }

    pub fn ratios(&self) -> Result<PdRatios> {
        if self.samples == 0 {
            return Err(Error::Argument("no probe samples".into()));
        }
        let s = self.samples as f64;
        let p2 = self.pairs as f64 / (6.0 * s);
        let p3 = self.triples as f64 / (4.0 * s);
        let p4 = self.quads as f64 / s;
        Ok(PdRatios { p2, p3, p4, r22_4: p2 * p2 / p4, r23_32: p2.powi(3) / (p3 * p3) })
    }
}

/// Fraction of loop length carried by loops shorter than `cutoff`: the
/// space-time density of finite loops that obstructs arc endpoints.
pub fn occupied_fraction(hist: &LoopHistogram, cutoff: u64) -> f64 {
    if hist.total_length() == 0 {
        return 0.0;
    }
    hist.length_below(cutoff) as f64 / hist.total_length() as f64
}

/// Radial surface-length distribution from (ℓ_x, ℓ_y) displacements with
/// the minimal-image metric; unit-width bins in r.
pub fn radial_counts(rec: &SurfaceRecord) -> Vec<u64> {
    let rmax = ((rec.lx as f64 / 2.0).hypot(rec.ly as f64 / 2.0)).ceil() as usize + 1;
    let mut counts = vec![0u64; rmax];
    for arc in &rec.arcs {
        let dx = rec.surface_length(arc, Axis::X) as f64;
        let dy = rec.surface_length(arc, Axis::Y) as f64;
        counts[dx.hypot(dy).floor() as usize] += 1;
    }
    counts
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionFit {
    pub diffusion: f64,
    pub error: f64,
    pub chi2_reduced: f64,
    /// Set when the power law describes the data poorly (χ²_r > 3).
    pub poor_fit: bool,
}

/// Fits P(r) = √(2D)/r² to `(r, P, σ)` points by weighted least squares
/// in the single amplitude A = √(2D).
pub fn fit_diffusion(points: &[(f64, f64, f64)]) -> Result<DiffusionFit> {
    let pts: Vec<_> = points.iter().filter(|p| p.0 > 0.0 && p.2 > 0.0).collect();
    if pts.len() < 2 {
        return Err(Error::Argument("need at least two radial points".into()));
    }
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &&(r, p, s) in &pts {
        let x = r.powi(-2);
        sxy += x * p / (s * s);
        sxx += x * x / (s * s);
    }
    let amp = sxy / sxx;
    let amp_err = sxx.sqrt().recip();
    let chi2: f64 = pts
        .iter()
        .map(|&&(r, p, s)| ((p - amp / (r * r)) / s).powi(2))
        .sum();
    let chi2_reduced = chi2 / (pts.len() - 1) as f64;
    let diffusion = amp * amp / 2.0;
    Ok(DiffusionFit {
        diffusion,
        error: amp * amp_err,
        chi2_reduced,
        poor_fit: chi2_reduced > 3.0,
    })
}

/// Radial points (r, P(r), σ) over `[r_min, r_max]` from accumulated counts.
pub fn radial_points(counts: &[u64], r_min: usize, r_max: usize) -> Vec<(f64, f64, f64)> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Vec::new();
    }
    (r_min..=r_max.min(counts.len().saturating_sub(1)))
        .filter(|&r| counts[r] > 0)
        .map(|r| {
            let c = counts[r] as f64;
            let t = total as f64;
            (r as f64 + 0.5, c / t, c.sqrt() / t)
        })
        .collect()
}

/// Every open arc of a closure touching a probe ends on another probe.
pub fn probes_closed(closure: &Closure) -> bool {
    closure.arcs.iter().all(|a: &BoundaryArc| {
        probe_of(a.a).is_some() == probe_of(a.b).is_some()
    })
}
