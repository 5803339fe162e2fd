//! Finite-size scaling: B-spline data collapse with nested linear solves,
//! χ² landscapes, power-law fits and the Lifshitz entanglement fit.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::LoopHistogram;
use crate::theory::lifshitz_j;

/// χ² increment defining the reported uncertainty contour.
pub const CONTOUR_DELTA: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub l: u32,
    pub k: f64,
    pub y: f64,
    pub sigma: f64,
}

impl SamplePoint {
    pub fn new(l: u32, k: f64, y: f64, sigma: f64) -> Self {
        SamplePoint { l, k, y, sigma }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    /// x = L^{1/ν}(K−K_c)
    Linear,
    /// x = L^{1/ν}(K−K_c)(1+α(K−K_c))
    Nonlinear,
    /// Nonlinear, times an amplitude (1 + β_irr L^{y_irr}).
    WithIrrelevant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Knots {
    /// Spacing 0.1 on [−0.5, 1.5], 1 on [2, 5], unit spacing beyond.
    Paper,
    /// This many equal intervals across the data range.
    Uniform(usize),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CollapseConfig {
    pub model: Model,
    pub knots: Knots,
    /// Only points with K inside this range enter the fit.
    pub window: Option<(f64, f64)>,
    /// Only points with scaling variable x inside this range enter the fit.
    pub x_window: Option<(f64, f64)>,
    /// Search range and landscape extent for K_c.
    pub kc_range: (f64, f64),
    pub nu_range: (f64, f64),
    /// Landscape resolution per axis; also the seeding grid.
    pub grid: usize,
    pub landscape: bool,
    /// Skip the profile scans for parameter errors.
    pub skip_errors: bool,
}

impl CollapseConfig {
    pub fn new(kc_range: (f64, f64), nu_range: (f64, f64)) -> Self {
        CollapseConfig {
            model: Model::Nonlinear,
            knots: Knots::Paper,
            window: None,
            x_window: None,
            kc_range,
            nu_range,
            grid: 21,
            landscape: true,
            skip_errors: false,
        }
    }
}

/// Normalized cost χ²/χ²_* over a (K_c, ν) grid, other parameters at the optimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landscape {
    pub kc: Vec<f64>,
    pub nu: Vec<f64>,
    /// Row-major: `cost[i * nu.len() + j]` at (kc[i], nu[j]).
    pub cost: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub kc: f64,
    pub nu: f64,
    pub alpha: f64,
    /// (β_irr, y_irr)
    pub irrelevant: Option<(f64, f64)>,
    pub eta: Option<f64>,
    pub beta: Option<f64>,
    /// Half-widths of the χ²_* + 4 profile contour, by parameter name.
    pub errors: BTreeMap<String, f64>,
    pub breakpoints: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub chi2: f64,
    pub dof: usize,
    pub chi2_reduced: f64,
    pub n_points: usize,
    pub warnings: Vec<String>,
    pub landscape: Option<Landscape>,
}

impl ScalingFit {
    pub fn error(&self, name: &str) -> f64 {
        self.errors.get(name).copied().unwrap_or(f64::NAN)
    }

    /// Evaluate the fitted scaling function at x.
    pub fn scaling_function(&self, x: f64) -> f64 {
        Spline::from_breakpoints(&self.breakpoints).eval(&self.coefficients, x)
    }
}

// ---------------------------------------------------------------- splines

/// Clamped cubic B-spline basis.
struct Spline {
    knots: Vec<f64>,
}

impl Spline {
    fn from_breakpoints(bp: &[f64]) -> Self {
        let (first, last) = (bp[0], bp[bp.len() - 1]);
        let mut knots = vec![first; 3];
        knots.extend_from_slice(bp);
        knots.extend_from_slice(&[last; 3]);
        Spline { knots }
    }

    fn n_basis(&self) -> usize {
        self.knots.len() - 4
    }

    /// Index of the first non-zero basis function at x and the four values.
    fn basis(&self, x: f64) -> (usize, [f64; 4]) {
        let t = &self.knots;
        let nb = self.n_basis();
        let i = (t.partition_point(|&k| k <= x).max(1) - 1).clamp(3, nb - 1);
        let mut n = [1.0, 0.0, 0.0, 0.0];
        let mut left = [0.0; 4];
        let mut right = [0.0; 4];
        for j in 1..=3 {
            left[j] = x - t[i + 1 - j];
            right[j] = t[i + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (i - 3, n)
    }

    fn eval(&self, coef: &[f64], x: f64) -> f64 {
        let (s, n) = self.basis(x);
        (0..4).map(|r| coef[s + r] * n[r]).sum()
    }
}

fn paper_grid(lo: f64, hi: f64) -> Vec<f64> {
    let mut g: Vec<f64> = (0..=20).map(|k| -0.5 + 0.1 * k as f64).collect();
    g.extend([2.0, 3.0, 4.0, 5.0]);
    let mut x = -1.5;
    while x > lo {
        g.push(x);
        x -= 1.0;
    }
    let mut x = 6.0;
    while x < hi {
        g.push(x);
        x += 1.0;
    }
    g.sort_by(f64::total_cmp);
    g
}

/// Breakpoints spanning the sorted abscissae, thinned so that every interval
/// holds at least two points.
fn breakpoints(knots: &Knots, xs: &[f64]) -> Vec<f64> {
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    let interior: Vec<f64> = match knots {
        Knots::Paper => paper_grid(lo, hi).into_iter().filter(|&b| b > lo && b < hi).collect(),
        Knots::Uniform(n) => {
            let n = (*n).max(1);
            (1..n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
        }
    };
    let mut bp = vec![lo];
    let mut count = 0usize;
    let mut next = 0usize;
    for &b in &interior {
        while next < xs.len() && xs[next] < b {
            next += 1;
            count += 1;
        }
        if count >= 2 {
            bp.push(b);
            count = 0;
        }
    }
    let tail = xs.len() - next + count;
    if tail < 2 && bp.len() > 1 {
        bp.pop();
    }
    bp.push(hi);
    bp
}

// ------------------------------------------------------- collapse problem

const KC: usize = 0;
const NU: usize = 1;
const ALPHA: usize = 2;
const B_IRR: usize = 3;
const Y_IRR: usize = 4;
const ORD: usize = 5;
const NAMES: [&str; 6] = ["kc", "nu", "alpha", "b_irr", "y_irr", "ordinate"];

/// How the observable is rescaled before collapsing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Ordinate {
    Plain,
    /// M·L^{−(5−η)/2}; the ordinate parameter is η.
    SpanningLength,
    /// G₂·L^{2β/ν}; the ordinate parameter is β.
    Watermelon,
}

impl Ordinate {
    fn exponent(self, p: &[f64; 6]) -> f64 {
        match self {
            Ordinate::Plain => 0.0,
            Ordinate::SpanningLength => -(5.0 - p[ORD]) / 2.0,
            Ordinate::Watermelon => 2.0 * p[ORD] / p[NU],
        }
    }

    fn name(self) -> &'static str {
        match self {
            Ordinate::Plain => "ordinate",
            Ordinate::SpanningLength => "eta",
            Ordinate::Watermelon => "beta",
        }
    }
}

struct Problem<'a> {
    data: Vec<SamplePoint>,
    ordinate: Ordinate,
    cfg: &'a CollapseConfig,
    free: Vec<usize>,
    scale: [f64; 6],
}

struct Eval {
    chi2: f64,
    breakpoints: Vec<f64>,
    coefficients: Vec<f64>,
    n: usize,
    thinned: bool,
}

impl<'a> Problem<'a> {
    fn new(data: &[SamplePoint], ordinate: Ordinate, cfg: &'a CollapseConfig, free: Vec<usize>) -> Result<Self> {
        if data.iter().any(|p| !(p.sigma > 0.0) || !p.y.is_finite() || !p.k.is_finite()) {
            return Err(Error::Argument("sample points need finite values and σ > 0".into()));
        }
        let mut data: Vec<SamplePoint> = data
            .iter()
            .copied()
            .filter(|p| cfg.window.map_or(true, |(lo, hi)| p.k >= lo && p.k <= hi))
            .collect();
        data.sort_by(|a, b| {
            (a.l, a.k.to_bits(), a.y.to_bits(), a.sigma.to_bits())
                .cmp(&(b.l, b.k.to_bits(), b.y.to_bits(), b.sigma.to_bits()))
        });
        let mut sizes: Vec<u32> = data.iter().map(|p| p.l).collect();
        sizes.dedup();
        if sizes.len() < 3 {
            return Err(Error::Argument(format!(
                "collapse needs at least 3 distinct system sizes, got {}",
                sizes.len()
            )));
        }
        if cfg.grid < 2 || !(cfg.kc_range.0 < cfg.kc_range.1) || !(cfg.nu_range.0 < cfg.nu_range.1) {
            return Err(Error::Argument("degenerate search ranges".into()));
        }
        let g = (cfg.grid - 1) as f64;
        let scale = [
            (cfg.kc_range.1 - cfg.kc_range.0) / g,
            (cfg.nu_range.1 - cfg.nu_range.0) / g,
            0.5,
            0.1,
            0.3,
            0.05,
        ];
        Ok(Problem { data, ordinate, cfg, free, scale })
    }

    fn evaluate(&self, p: &[f64; 6]) -> Option<Eval> {
        if !(p[NU] > 0.05) || p.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let irr = self.cfg.model == Model::WithIrrelevant;
        let omega = self.ordinate.exponent(p);
        let mut rows: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(self.data.len());
        for d in &self.data {
            let l = d.l as f64;
            let dk = d.k - p[KC];
            let x = l.powf(1.0 / p[NU]) * dk * (1.0 + p[ALPHA] * dk);
            if let Some((lo, hi)) = self.cfg.x_window {
                if x < lo || x > hi {
                    continue;
                }
            }
            let amp = if irr { 1.0 + p[B_IRR] * l.powf(p[Y_IRR]) } else { 1.0 };
            let s = l.powf(omega);
            rows.push((x, amp, d.y * s, d.sigma * s));
        }
        if rows.len() < 6 {
            return None;
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
        if !(xs[xs.len() - 1] > xs[0]) {
            return None;
        }
        let mut bp = breakpoints(&self.cfg.knots, &xs);
        let mut thinned = false;
        loop {
            let spline = Spline::from_breakpoints(&bp);
            let m = spline.n_basis();
            if m + 1 < rows.len() {
                if let Some((coef, chi2)) = solve_spline(&spline, &rows) {
                    return Some(Eval { chi2, breakpoints: bp, coefficients: coef, n: rows.len(), thinned });
                }
            }
            if bp.len() <= 2 {
                return None;
            }
            // drop every other interior breakpoint and retry
            thinned = true;
            let last = bp[bp.len() - 1];
            let mut fewer: Vec<f64> = bp[..bp.len() - 1].iter().copied().step_by(2).collect();
            fewer.push(last);
            bp = fewer;
        }
    }

    fn chi2(&self, p: &[f64; 6]) -> f64 {
        self.evaluate(p).map_or(f64::INFINITY, |e| e.chi2)
    }

    fn expand(&self, base: &[f64; 6], sub: &[f64], which: &[usize]) -> [f64; 6] {
        let mut p = *base;
        for (&i, &v) in which.iter().zip(sub) {
            p[i] = v;
        }
        p
    }

    /// Minimize over the parameters in `which`, starting at `base`.
    fn minimize(&self, base: &[f64; 6], which: &[usize], step_frac: f64) -> ([f64; 6], f64, bool) {
        if which.is_empty() {
            return (*base, self.chi2(base), true);
        }
        let x0: Vec<f64> = which.iter().map(|&i| base[i]).collect();
        let steps: Vec<f64> = which.iter().map(|&i| self.scale[i] * step_frac).collect();
        let f = |x: &[f64]| self.chi2(&self.expand(base, x, which));
        let (x, fx, ok) = nelder_mead(&f, &x0, &steps, 1e-10, 4000);
        (self.expand(base, &x, which), fx, ok)
    }

    fn fit(&self, start: [f64; 6]) -> Result<([f64; 6], f64, Vec<String>)> {
        let mut warnings = Vec::new();
        // seeding grid over (K_c, ν)
        let g = self.cfg.grid;
        let grid_pts: Vec<(f64, f64)> = (0..g)
            .flat_map(|i| (0..g).map(move |j| (i, j)))
            .map(|(i, j)| (lerp(self.cfg.kc_range, i, g), lerp(self.cfg.nu_range, j, g)))
            .collect();
        let kc_free = self.free.contains(&KC);
        let nu_free = self.free.contains(&NU);
        let mut best = start;
        let mut best_chi2 = self.chi2(&start);
        if kc_free || nu_free {
            let others: Vec<usize> = self.free.iter().copied().filter(|&i| i != KC && i != NU).collect();
            let seeds: Vec<([f64; 6], f64)> = grid_pts
                .par_iter()
                .map(|&(kc, nu)| {
                    let mut p = start;
                    if kc_free {
                        p[KC] = kc;
                    }
                    if nu_free {
                        p[NU] = nu;
                    }
                    let (p, c, _) = self.minimize(&p, &others, 1.0);
                    (p, c)
                })
                .collect();
            for (p, c) in seeds {
                if c < best_chi2 {
                    best = p;
                    best_chi2 = c;
                }
            }
        }
        let mut converged = false;
        for _ in 0..4 {
            let (p, c, ok) = self.minimize(&best, &self.free, 1.0);
            let improved = best_chi2 - c;
            if c <= best_chi2 {
                best = p;
                best_chi2 = c;
            }
            if ok && improved.abs() < 1e-9 * best_chi2.max(1.0) {
                converged = true;
                break;
            }
        }
        if !best_chi2.is_finite() {
            return Err(Error::Fit("no finite χ² anywhere in the search range".into()));
        }
        if !converged {
            warnings.push("simplex restarts did not settle; optimum may be imprecise".into());
        }
        Ok((best, best_chi2, warnings))
    }

    /// Half-width of the χ²_* + Δ contour of the profile along parameter `which`.
    fn profile_error(&self, best: &[f64; 6], chi2_best: f64, which: usize) -> f64 {
        let others: Vec<usize> = self.free.iter().copied().filter(|&i| i != which).collect();
        let target = chi2_best + CONTOUR_DELTA;
        let profile = |v: f64| {
            let mut p = *best;
            p[which] = v;
            self.minimize(&p, &others, 0.2).1
        };
        let mut widths = [f64::INFINITY; 2];
        for (side, sign) in [-1.0f64, 1.0].into_iter().enumerate() {
            let mut inner = 0.0;
            let mut outer = self.scale[which] * 0.05;
            let mut found = false;
            for _ in 0..40 {
                if profile(best[which] + sign * outer) >= target {
                    found = true;
                    break;
                }
                inner = outer;
                outer *= 2.0;
            }
            if !found {
                continue;
            }
            for _ in 0..30 {
                let mid = 0.5 * (inner + outer);
                if profile(best[which] + sign * mid) >= target {
                    outer = mid;
                } else {
                    inner = mid;
                }
                if outer - inner < 1e-4 * outer {
                    break;
                }
            }
            widths[side] = 0.5 * (inner + outer);
        }
        0.5 * (widths[0] + widths[1])
    }

    fn landscape(&self, best: &[f64; 6], chi2_best: f64) -> Landscape {
        let g = self.cfg.grid;
        let kc: Vec<f64> = (0..g).map(|i| lerp(self.cfg.kc_range, i, g)).collect();
        let nu: Vec<f64> = (0..g).map(|j| lerp(self.cfg.nu_range, j, g)).collect();
        let cost = (0..g * g)
            .into_par_iter()
            .map(|idx| {
                let mut p = *best;
                p[KC] = kc[idx / g];
                p[NU] = nu[idx % g];
                self.chi2(&p) / chi2_best.max(f64::MIN_POSITIVE)
            })
            .collect();
        Landscape { kc, nu, cost }
    }

    fn run(&self, start: [f64; 6]) -> Result<ScalingFit> {
        let (best, chi2, mut warnings) = self.fit(start)?;
        let eval = self
            .evaluate(&best)
            .ok_or_else(|| Error::Fit("optimum has no valid spline solution".into()))?;
        if eval.thinned {
            warnings.push("singular spline system; refitted with fewer knots".into());
        }
        let mut errors = BTreeMap::new();
        if !self.cfg.skip_errors {
            for &i in &self.free {
                let name = if i == ORD { self.ordinate.name() } else { NAMES[i] };
                errors.insert(name.to_string(), self.profile_error(&best, chi2, i));
            }
        }
        let dof = eval.n.saturating_sub(eval.coefficients.len() + self.free.len());
        let landscape = (self.cfg.landscape && self.free.contains(&KC) && self.free.contains(&NU))
            .then(|| self.landscape(&best, chi2));
        Ok(ScalingFit {
            kc: best[KC],
            nu: best[NU],
            alpha: best[ALPHA],
            irrelevant: (self.cfg.model == Model::WithIrrelevant).then_some((best[B_IRR], best[Y_IRR])),
            eta: (self.ordinate == Ordinate::SpanningLength).then_some(best[ORD]),
            beta: (self.ordinate == Ordinate::Watermelon).then_some(best[ORD]),
            errors,
            breakpoints: eval.breakpoints,
            coefficients: eval.coefficients,
            chi2,
            dof,
            chi2_reduced: if dof > 0 { chi2 / dof as f64 } else { f64::NAN },
            n_points: eval.n,
            warnings,
            landscape,
        })
    }
}

fn lerp((lo, hi): (f64, f64), i: usize, n: usize) -> f64 {
    lo + (hi - lo) * i as f64 / (n - 1) as f64
}

/// Weighted least squares for the spline coefficients; rows are
/// (x, amplitude, y, σ). Returns None on a singular normal matrix.
fn solve_spline(spline: &Spline, rows: &[(f64, f64, f64, f64)]) -> Option<(Vec<f64>, f64)> {
    let m = spline.n_basis();
    let mut ata = DMatrix::<f64>::zeros(m, m);
    let mut atb = DVector::<f64>::zeros(m);
    let mut basis = Vec::with_capacity(rows.len());
    for &(x, amp, y, s) in rows {
        let (first, n) = spline.basis(x);
        let w = amp / s;
        let a = [n[0] * w, n[1] * w, n[2] * w, n[3] * w];
        for r in 0..4 {
            atb[first + r] += a[r] * y / s;
            for c in 0..4 {
                ata[(first + r, first + c)] += a[r] * a[c];
            }
        }
        basis.push((first, a));
    }
    // reject near-singular systems relative to the diagonal scale
    let diag_max = (0..m).map(|i| ata[(i, i)]).fold(0.0, f64::max);
    if (0..m).any(|i| ata[(i, i)] <= 1e-12 * diag_max) {
        return None;
    }
    let chol = ata.cholesky()?;
    let l = chol.l();
    let min_pivot = (0..m).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_pivot <= 1e-13 * diag_max {
        return None;
    }
    let coef = chol.solve(&atb);
    let chi2 = rows
        .iter()
        .zip(&basis)
        .map(|(&(_, _, y, s), (first, a))| {
            let fit: f64 = (0..4).map(|r| a[r] * coef[first + r]).sum();
            (y / s - fit).powi(2)
        })
        .sum();
    Some((coef.iter().copied().collect(), chi2))
}

/// Downhill simplex. Returns (argmin, min, converged).
pub fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    steps: &[f64],
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64, bool) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += steps[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let sanitize = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    values.iter_mut().for_each(|v| *v = sanitize(*v));
    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let (fbest, fworst) = (values[0], values[n]);
        let spread = (fworst - fbest).abs();
        let size = (1..=n)
            .map(|i| {
                simplex[i]
                    .iter()
                    .zip(&simplex[0])
                    .zip(steps)
                    .map(|((a, b), s)| ((a - b) / s).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if fbest.is_finite() && spread <= tol * (fbest.abs() + tol) && size < 1e-6 {
            return (simplex[0].clone(), fbest, true);
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (w - c)).collect()
        };
        let xr = along(-1.0);
        let fr = sanitize(f(&xr));
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = sanitize(f(&xe));
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let x = along(-0.5);
            let fx = sanitize(f(&x));
            (x, fx)
        } else {
            let x = along(0.5);
            let fx = sanitize(f(&x));
            (x, fx)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        for i in 1..=n {
            let v: Vec<f64> = simplex[0].iter().zip(&simplex[i]).map(|(b, x)| b + 0.5 * (x - b)).collect();
            values[i] = sanitize(f(&v));
            simplex[i] = v;
        }
    }
    let (i, &v) = values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    (simplex[i].clone(), v, false)
}

fn start_point(cfg: &CollapseConfig) -> [f64; 6] {
    [
        0.5 * (cfg.kc_range.0 + cfg.kc_range.1),
        0.5 * (cfg.nu_range.0 + cfg.nu_range.1),
        0.0,
        0.0,
        -1.0,
        0.0,
    ]
}

fn model_params(model: Model) -> Vec<usize> {
    match model {
        Model::Linear => vec![KC, NU],
        Model::Nonlinear => vec![KC, NU, ALPHA],
        Model::WithIrrelevant => vec![KC, NU, ALPHA, B_IRR, Y_IRR],
    }
}

/// Data collapse y = f(x) with x = L^{1/ν}(K−K_c)(1+α(K−K_c)).
pub fn collapse_fit(data: &[SamplePoint], cfg: &CollapseConfig) -> Result<ScalingFit> {
    let problem = Problem::new(data, Ordinate::Plain, cfg, model_params(cfg.model))?;
    problem.run(start_point(cfg))
}

/// Fixed or free (ν, η) for the spanning-length collapse.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpanningExponents {
    pub nu: Option<f64>,
    pub eta: Option<f64>,
}

/// Collapse of M·L^{−(5−η)/2} against the scaling variable; fits (K_c, ν, η)
/// unless ν or η are fixed.
pub fn spanning_length_collapse(
    data: &[SamplePoint],
    cfg: &CollapseConfig,
    fixed: SpanningExponents,
) -> Result<ScalingFit> {
    let mut free = model_params(cfg.model);
    let mut start = start_point(cfg);
    if let Some(nu) = fixed.nu {
        free.retain(|&i| i != NU);
        start[NU] = nu;
    }
    match fixed.eta {
        Some(eta) => start[ORD] = eta,
        None => free.push(ORD),
    }
    let problem = Problem::new(data, Ordinate::SpanningLength, cfg, free)?;
    problem.run(start)
}

/// Collapse of G₂·L^{2β/ν} at fixed (K_c, ν); fits β and the nonlinear
/// coefficient.
pub fn beta_collapse(data: &[SamplePoint], kc: f64, nu: f64, cfg: &CollapseConfig) -> Result<ScalingFit> {
    let mut start = start_point(cfg);
    start[KC] = kc;
    start[NU] = nu;
    start[ORD] = 0.5;
    let mut free = vec![ORD];
    if cfg.model != Model::Linear {
        free.push(ALPHA);
    }
    let problem = Problem::new(data, Ordinate::Watermelon, cfg, free)?;
    // coarse scan over β seeds the simplex
    let mut best = (start, problem.chi2(&start));
    for i in 0..=40 {
        let mut p = start;
        p[ORD] = 0.05 * i as f64;
        let c = problem.chi2(&p);
        if c < best.1 {
            best = (p, c);
        }
    }
    problem.run(best.0)
}

// ------------------------------------------------------------ power laws

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// τ in P ∝ x^{−τ}
    pub exponent: f64,
    pub error: f64,
    pub amplitude: f64,
    pub chi2_reduced: f64,
    pub points: usize,
}

/// Default Fisher-exponent window [10^{2.5}, 10^{−2}·L³].
pub fn default_window(l: u32) -> (f64, f64) {
    (10f64.powf(2.5), 1e-2 * (l as f64).powi(3))
}

#[derive(Clone, Debug)]
struct Wls {
    coef: Vec<f64>,
    cov: DMatrix<f64>,
    chi2: f64,
    dof: usize,
}

/// Weighted linear least squares on rows (features, y, σ).
fn wls(rows: &[(Vec<f64>, f64, f64)]) -> Result<Wls> {
    let m = rows.first().map_or(0, |r| r.0.len());
    if rows.len() < m || m == 0 {
        return Err(Error::Argument("too few points for the linear model".into()));
    }
    let mut ata = DMatrix::<f64>::zeros(m, m);
    let mut atb = DVector::<f64>::zeros(m);
    for (f, y, s) in rows {
        let w = 1.0 / (s * s);
        for r in 0..m {
            atb[r] += w * f[r] * y;
            for c in 0..m {
                ata[(r, c)] += w * f[r] * f[c];
            }
        }
    }
    let chol = ata.cholesky().ok_or_else(|| Error::Fit("singular normal equations".into()))?;
    let coef = chol.solve(&atb);
    let cov = chol.inverse();
    let chi2 = rows
        .iter()
        .map(|(f, y, s)| {
            let fit: f64 = f.iter().zip(coef.iter()).map(|(a, b)| a * b).sum();
            ((y - fit) / s).powi(2)
        })
        .sum();
    Ok(Wls { coef: coef.iter().copied().collect(), cov, chi2, dof: rows.len() - m })
}

/// Power-law fit to (x, y, σ_y) points by weighted least squares in log-log.
/// The slope error is inflated by √χ²_r when the fit is poor.
pub fn powerlaw_fit_points(points: &[(f64, f64, f64)]) -> Result<PowerLawFit> {
    let rows: Vec<(Vec<f64>, f64, f64)> = points
        .iter()
        .filter(|p| p.0 > 0.0 && p.1 > 0.0 && p.2 > 0.0)
        .map(|&(x, y, s)| (vec![1.0, x.ln()], y.ln(), s / y))
        .collect();
    if rows.len() < 3 {
        return Err(Error::Argument(format!("power-law fit needs ≥ 3 positive points, got {}", rows.len())));
    }
    let w = wls(&rows)?;
    let chi2_reduced = if w.dof > 0 { w.chi2 / w.dof as f64 } else { f64::NAN };
    let inflate = if chi2_reduced > 1.0 { chi2_reduced.sqrt() } else { 1.0 };
    Ok(PowerLawFit {
        exponent: -w.coef[1],
        error: w.cov[(1, 1)].sqrt() * inflate,
        amplitude: w.coef[0].exp(),
        chi2_reduced,
        points: rows.len(),
    })
}

/// Fit P(ℓ) ∝ ℓ^{−τ} over histogram bins lying entirely inside `window`.
pub fn powerlaw_fit(hist: &LoopHistogram, window: (f64, f64)) -> Result<PowerLawFit> {
    let points: Vec<(f64, f64, f64)> = hist
        .densities()
        .into_iter()
        .filter(|b| b.lo as f64 >= window.0 && (b.hi - 1) as f64 <= window.1)
        .map(|b| (b.center, b.density, b.density / (b.count as f64).sqrt()))
        .collect();
    if points.len() < 8 {
        return Err(Error::Argument(format!(
            "power-law fit needs ≥ 8 populated bins in [{}, {}], got {}",
            window.0,
            window.1,
            points.len()
        )));
    }
    powerlaw_fit_points(&points)
}

// ------------------------------------------------------- entanglement fits

/// Entanglement profile S(ℓ) ± σ for one system size; ℓ = 1..L−1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub l: u32,
    pub points: Vec<(f64, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifshitzFit {
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    pub lambda_error: f64,
    pub chi2: f64,
    pub dof: usize,
    pub chi2_reduced: f64,
}

/// Linear fit with two features; returns (a, b, χ², dof).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub a: f64,
    pub b: f64,
    pub a_error: f64,
    pub b_error: f64,
    pub chi2: f64,
    pub dof: usize,
    pub chi2_reduced: f64,
}

fn profile_rows<F>(profiles: &[Profile], features: F) -> Result<Vec<(Vec<f64>, f64, f64)>>
where
    F: Fn(f64, f64) -> Result<Vec<f64>>,
{
    let mut rows = Vec::new();
    for p in profiles {
        let l = p.l as f64;
        for &(ell, s, sigma) in &p.points {
            if !(ell > 0.0 && ell < l) {
                continue;
            }
            if !(sigma > 0.0) {
                return Err(Error::Argument("profile points need σ > 0".into()));
            }
            rows.push((features(ell, l)?, s, sigma));
        }
    }
    Ok(rows)
}

fn linear_fit(rows: &[(Vec<f64>, f64, f64)]) -> Result<LinearFit> {
    let w = wls(rows)?;
    Ok(LinearFit {
        a: w.coef[0],
        b: w.coef[1],
        a_error: w.cov[(0, 0)].sqrt(),
        b_error: w.cov[(1, 1)].sqrt(),
        chi2: w.chi2,
        dof: w.dof,
        chi2_reduced: if w.dof > 0 { w.chi2 / w.dof as f64 } else { f64::NAN },
    })
}

fn lifshitz_at(profiles: &[Profile], lambda: f64) -> Result<Wls> {
    let rows = profile_rows(profiles, |ell, l| Ok(vec![l, lifshitz_j(ell / l, lambda)?]))?;
    wls(&rows)
}

/// Joint fit S(ℓ, L) = aL + b·J(ℓ/L; λ) over all profiles; λ by a log-spaced
/// scan followed by golden-section refinement.
pub fn lifshitz_fit(profiles: &[Profile]) -> Result<LifshitzFit> {
    let chi2 = |lam: f64| lifshitz_at(profiles, lam).map(|w| w.chi2).unwrap_or(f64::INFINITY);
    let (lmin, lmax) = (0.3f64, 30.0f64);
    let n = 60;
    let grid: Vec<f64> = (0..=n).map(|i| lmin * (lmax / lmin).powf(i as f64 / n as f64)).collect();
    let vals: Vec<f64> = grid.iter().map(|&l| chi2(l)).collect();
    let (i, _) = vals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::Fit("empty λ scan".into()))?;
    if !vals[i].is_finite() {
        return Err(Error::Fit("Lifshitz fit has no finite χ²".into()));
    }
    let (mut a, mut b) = (grid[i.saturating_sub(1)].ln(), grid[(i + 1).min(n)].ln());
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let f = |x: f64| chi2(x.exp());
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-10 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let lambda = (0.5 * (a + b)).exp();
    let w = lifshitz_at(profiles, lambda)?;
    if i == 0 || i == n {
        return Err(Error::Fit(format!("λ optimum at the scan edge ({lambda})")));
    }
    // contour half-width along λ (a, b are linear and profiled exactly)
    let target = w.chi2 + CONTOUR_DELTA;
    let edge = |dir: f64| {
        let (mut lo, mut hi) = (0.0f64, 0.05f64);
        while hi < 5.0 && chi2((lambda.ln() + dir * hi).exp()) < target {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if chi2((lambda.ln() + dir * mid).exp()) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lambda.ln() + dir * 0.5 * (lo + hi)).exp()
    };
    let lambda_error = 0.5 * (edge(1.0) - edge(-1.0));
    Ok(LifshitzFit {
        a: w.coef[0],
        b: w.coef[1],
        lambda,
        lambda_error,
        chi2: w.chi2,
        dof: w.dof.saturating_sub(1),
        chi2_reduced: w.chi2 / w.dof.saturating_sub(1).max(1) as f64,
    })
}

/// Entanglement arc S(ℓ)/L = a·log sin(πℓ/L) + b.
pub fn cft_arc_fit(profiles: &[Profile]) -> Result<LinearFit> {
    let rows = profile_rows(profiles, |ell, l| Ok(vec![l * (PI * ell / l).sin().ln(), l]))?;
    linear_fit(&rows)
}

/// Liquid-phase log law S(ℓ) = c·L_y·log R(ℓ) + d·L_y with chord length
/// R(ℓ) = (L/π) sin(πℓ/L). Here L_y = L (square cross-section).
pub fn log_law_fit(profiles: &[Profile]) -> Result<LinearFit> {
    let rows = profile_rows(profiles, |ell, l| Ok(vec![l * (l / PI * (PI * ell / l).sin()).ln(), l]))?;
    linear_fit(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::Normal;
    use rand::distributions::Distribution;

    fn noise(rng: &mut ChaCha8Rng) -> f64 {
        Normal::new(0.0, 1.0).unwrap().sample(rng)
    }

    fn sigmoid(x: f64) -> f64 {
        0.5 * (1.0 + (x * 0.8).tanh())
    }

    fn synthetic(kc: f64, nu: f64, rel: f64, seed: u64) -> Vec<SamplePoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for l in [16u32, 32, 64, 128] {
            for i in 0..25 {
                let k = kc - 0.06 + 0.12 * i as f64 / 24.0;
                let x = (l as f64).powf(1.0 / nu) * (k - kc);
                if x.abs() > 4.0 {
                    continue;
                }
                let y = 0.2 + sigmoid(x);
                let s = rel * y;
                out.push(SamplePoint::new(l, k, y + s * noise(&mut rng), s));
            }
        }
        out
    }

    #[test]
    fn spline_partition_of_unity() {
        let s = Spline::from_breakpoints(&[-1.0, -0.3, 0.0, 0.5, 2.0]);
        for i in 0..=100 {
            let x = -1.0 + 3.0 * i as f64 / 100.0;
            let (_, n) = s.basis(x);
            assert_abs_diff_eq!(n.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert!(n.iter().all(|&v| v >= -1e-15));
        }
    }

    #[test]
    fn breakpoints_cover_data() {
        let xs: Vec<f64> = (0..50).map(|i| -2.0 + 0.1 * i as f64).collect();
        let bp = breakpoints(&Knots::Paper, &xs);
        assert_eq!(bp[0], -2.0);
        assert_eq!(*bp.last().unwrap(), xs[49]);
        assert!(bp.windows(2).all(|w| w[0] < w[1]));
        let bp = breakpoints(&Knots::Uniform(5), &xs);
        assert_eq!(bp.len(), 6);
    }

    #[test]
    fn nelder_mead_quadratic() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2);
        let (x, v, ok) = nelder_mead(&f, &[0.0, 0.0], &[0.5, 0.5], 1e-12, 5000);
        assert!(ok);
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(x[1], -2.0, epsilon = 1e-5);
        assert!(v < 1e-9);
    }

    fn quick_cfg() -> CollapseConfig {
        let mut cfg = CollapseConfig::new((0.62, 0.68), (0.8, 1.2));
        cfg.model = Model::Linear;
        cfg.knots = Knots::Uniform(8);
        cfg.grid = 9;
        cfg.landscape = false;
        cfg
    }

    #[test]
    fn collapse_round_trip() {
        let data = synthetic(0.65, 1.0, 0.01, 11);
        let fit = collapse_fit(&data, &quick_cfg()).unwrap();
        assert!((fit.kc - 0.65).abs() < 0.002, "{fit:?}");
        assert!((fit.nu - 1.0).abs() < 0.02, "{fit:?}");
        assert!(fit.error("kc") > 0.0 && fit.error("kc") < 0.01);
        assert!(fit.chi2_reduced > 0.5 && fit.chi2_reduced < 1.6);
    }

    #[test]
    fn collapse_is_order_invariant() {
        let data = synthetic(0.65, 1.0, 0.01, 3);
        let mut cfg = quick_cfg();
        cfg.skip_errors = true;
        let a = collapse_fit(&data, &cfg).unwrap();
        let mut rev = data.clone();
        rev.reverse();
        let b = collapse_fit(&rev, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn collapse_needs_three_sizes() {
        let data: Vec<SamplePoint> = synthetic(0.65, 1.0, 0.01, 3).into_iter().filter(|p| p.l < 64).collect();
        assert!(collapse_fit(&data, &quick_cfg()).unwrap_err().is_config());
    }

    #[test]
    fn powerlaw_round_trip() {
        let mut h = LoopHistogram::new();
        for len in 1..2_000_000u64 {
            let c = (1e15 * (len as f64).powf(-2.5)).round() as u64;
            h.record_many(len, c);
        }
        let fit = powerlaw_fit(&h, (316.0, 1e6)).unwrap();
        assert_abs_diff_eq!(fit.exponent, 2.5, epsilon = 0.02);

        let mut flat = LoopHistogram::new();
        for len in 1..100_000u64 {
            flat.record(len);
        }
        let fit = powerlaw_fit(&flat, (316.0, 1e5)).unwrap();
        assert_abs_diff_eq!(fit.exponent, 0.0, epsilon = 1e-3);
        assert!(powerlaw_fit(&flat, (316.0, 1000.0)).unwrap_err().is_config());
    }

    fn lifshitz_profiles(lambda: f64, seed: u64, sigma: f64) -> Vec<Profile> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        [32u32, 64, 128]
            .iter()
            .map(|&l| Profile {
                l,
                points: (1..l)
                    .map(|ell| {
                        let s = 0.4 * l as f64 + 1.5 * lifshitz_j(ell as f64 / l as f64, lambda).unwrap();
                        (ell as f64, s + sigma * noise(&mut rng), sigma)
                    })
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn lifshitz_round_trip() {
        let fit = lifshitz_fit(&lifshitz_profiles(3.4, 5, 0.01)).unwrap();
        assert!((fit.lambda - 3.4).abs() < 0.05, "{fit:?}");
        assert_abs_diff_eq!(fit.a, 0.4, epsilon = 1e-3);
        assert!(fit.chi2_reduced < 1.3);
        let arc = cft_arc_fit(&lifshitz_profiles(3.4, 5, 0.01)).unwrap();
        assert!(arc.chi2_reduced > fit.chi2_reduced);
    }

    #[test]
    fn log_law_exact() {
        let profiles: Vec<Profile> = [16u32, 32]
            .iter()
            .map(|&l| Profile {
                l,
                points: (1..l)
                    .map(|ell| {
                        let lf = l as f64;
                        let r = lf / PI * (PI * ell as f64 / lf).sin();
                        (ell as f64, 0.3 * lf * r.ln() + 0.1 * lf, 0.01)
                    })
                    .collect(),
            })
            .collect();
        let fit = log_law_fit(&profiles).unwrap();
        assert_abs_diff_eq!(fit.a, 0.3, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.b, 0.1, epsilon = 1e-10);
    }
}
