use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

/// Logarithmic bins per decade (bin edges at 10^{k/8}).
pub const BINS_PER_DECADE: u32 = 8;

const MAX_BIN: usize = 19 * BINS_PER_DECADE as usize;
const SMALL: usize = 4096;

struct Table {
    /// Smallest integer length in bin k: ceil(10^{k/8}).
    lower: Vec<u64>,
    small: Vec<u16>,
}

fn table() -> &'static Table {
    static TABLE: OnceLock<Table> = OnceLock::new();
    TABLE.get_or_init(|| {
        let lower: Vec<u64> = (0..=MAX_BIN)
            .map(|k| {
                if k % BINS_PER_DECADE as usize == 0 {
                    10u64.pow((k / BINS_PER_DECADE as usize) as u32)
                } else {
                    10f64.powf(k as f64 / BINS_PER_DECADE as f64).ceil() as u64
                }
            })
            .collect();
        let small = (0..SMALL as u64)
            .map(|len| {
                if len == 0 {
                    0
                } else {
                    (lower.partition_point(|&lo| lo <= len) - 1) as u16
                }
            })
            .collect();
        Table { lower, small }
    })
}

/// Bin index of a positive loop length.
#[inline]
pub fn bin_of(len: u64) -> usize {
    debug_assert!(len > 0);
    let t = table();
    if (len as usize) < SMALL {
        t.small[len as usize] as usize
    } else {
        t.lower.partition_point(|&lo| lo <= len) - 1
    }
}

/// Integer lengths covered by bin `k`, as the half-open range `[lo, hi)`.
pub fn bin_range(k: usize) -> (u64, u64) {
    let t = table();
    let hi = t.lower.get(k + 1).copied().unwrap_or(u64::MAX);
    (t.lower[k], hi)
}

/// Log-binned counts of closed-loop lengths.
///
/// Loops of length zero (identity-glued world lines) are kept apart in
/// `trivial` and never enter the bins or the totals.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopHistogram {
    counts: Vec<u64>,
    /// Summed loop length per bin.
    lengths: Vec<u64>,
    total_loops: u64,
    total_length: u64,
    trivial: u64,
    /// Loops of odd length. While zero, densities count only even lengths.
    #[serde(default)]
    odd: u64,
}

/// One populated bin, normalized as a probability density per unit length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinDensity {
    pub lo: u64,
    pub hi: u64,
    /// Geometric center of the covered integer lengths.
    pub center: f64,
    pub count: u64,
    /// count / (width × total loops)
    pub density: f64,
}

impl LoopHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn record(&mut self, len: u64) {
        if len == 0 {
            self.trivial += 1;
            return;
        }
        let k = bin_of(len);
        if k >= self.counts.len() {
            self.counts.resize(k + 1, 0);
            self.lengths.resize(k + 1, 0);
        }
        self.counts[k] += 1;
        self.lengths[k] += len;
        self.odd += len & 1;
        self.total_loops += 1;
        self.total_length += len;
    }

    pub fn record_many(&mut self, len: u64, times: u64) {
        if len == 0 {
            self.trivial += times;
            return;
        }
        let k = bin_of(len);
        if k >= self.counts.len() {
            self.counts.resize(k + 1, 0);
            self.lengths.resize(k + 1, 0);
        }
        self.counts[k] += times;
        self.lengths[k] += len * times;
        self.odd += (len & 1) * times;
        self.total_loops += times;
        self.total_length += len * times;
    }

    pub fn merge(&mut self, other: &LoopHistogram) {
        if other.counts.len() > self.counts.len() {
            self.counts.resize(other.counts.len(), 0);
            self.lengths.resize(other.counts.len(), 0);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.lengths.iter_mut().zip(&other.lengths) {
            *a += b;
        }
        self.total_loops += other.total_loops;
        self.total_length += other.total_length;
        self.trivial += other.trivial;
        self.odd += other.odd;
    }

    pub fn merged(mut self, other: &LoopHistogram) -> Self {
        self.merge(other);
        self
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, bin: usize) -> u64 {
        self.counts.get(bin).copied().unwrap_or(0)
    }

    /// Summed loop length in bin `k`.
    pub fn length_in(&self, bin: usize) -> u64 {
        self.lengths.get(bin).copied().unwrap_or(0)
    }

    /// Total length of loops shorter than `cutoff` (resolved at bin edges:
    /// bins whose range lies entirely below `cutoff`).
    pub fn length_below(&self, cutoff: u64) -> u64 {
        (0..self.counts.len())
            .filter(|&k| bin_range(k).1 <= cutoff)
            .map(|k| self.lengths[k])
            .sum()
    }

    pub fn total_loops(&self) -> u64 {
        self.total_loops
    }

    pub fn total_length(&self) -> u64 {
        self.total_length
    }

    pub fn trivial(&self) -> u64 {
        self.trivial
    }

    pub fn odd(&self) -> u64 {
        self.odd
    }

    /// Overrides the odd-loop count (for histograms rebuilt from bin counts).
    pub fn set_odd(&mut self, odd: u64) {
        self.odd = odd;
    }

    /// Populated bins as a normalized density P(ℓ).
    ///
    /// The width of a bin is the number of attainable lengths it covers: on
    /// bipartite space-time lattices every loop is even, and dividing by the
    /// full integer width would alias the parity into the narrow bins.
    pub fn densities(&self) -> Vec<BinDensity> {
        let norm = self.total_loops.max(1) as f64;
        let even_only = self.odd == 0;
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(k, &count)| {
                let (lo, hi) = bin_range(k);
                let width = if even_only { ((hi - 1) / 2 + 1 - (lo + 1) / 2).max(1) } else { hi - lo } as f64;
                BinDensity {
                    lo,
                    hi,
                    center: (lo as f64 * (hi - 1) as f64).sqrt(),
                    count,
                    density: count as f64 / (width * norm),
                }
            })
            .collect()
    }
}
