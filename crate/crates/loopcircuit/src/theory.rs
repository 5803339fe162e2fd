//! Closed-form reference formulas: microscopic diffusion constants, the
//! Lifshitz entanglement function, Poisson-Dirichlet laws and hyperscaling.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::lattice::Color;

/// Critical value of the microscopic diffusion constant in class BDI.
pub const D_CRITICAL: f64 = 3.0 / 16.0;

const NORM_TOL: f64 = 1e-9;
const SERIES_TOL: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymmetryClass {
    BDI,
    D,
}

impl SymmetryClass {
    /// Poisson-Dirichlet parameter at loop fugacity 1.
    pub fn pd_theta(self) -> f64 {
        match self {
            SymmetryClass::BDI => 1.0,
            SymmetryClass::D => 0.5,
        }
    }
}

fn check_simplex(w: [f64; 3]) -> Result<()> {
    if w.iter().any(|&k| !(k >= 0.0) || !k.is_finite()) {
        return Err(Error::Argument(format!("negative or non-finite weight in {w:?}")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > NORM_TOL {
        return Err(Error::Argument(format!("weights sum to {s}, expected 1")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HoneycombDiffusion {
    pub d_z: f64,
    pub d_perp: f64,
    pub d: f64,
}

/// Mean-squared displacement per step of a loop endpoint on the honeycomb
/// circuit, resolved along z and perpendicular to it.
pub fn d_mic_honeycomb(kx: f64, ky: f64, kz: f64) -> Result<HoneycombDiffusion> {
    check_simplex([kx, ky, kz])?;
    let d_z = 9.0 / 8.0 * kz * (kx + ky);
    let d_perp = (2.0 * d_z + 9.0 * kx * ky) / 6.0;
    Ok(HoneycombDiffusion { d_z, d_perp, d: 0.5 * (d_z + d_perp) })
}

/// Unit-cell averaged diffusion constant of the Kekulé circuit.
pub fn d_mic_kekule(kr: f64, kg: f64, kb: f64) -> Result<f64> {
    check_simplex([kr, kg, kb])?;
    let gr = kg * kr;
    Ok(3.0 / 8.0
        * (gr * (2.0 - 3.0 * gr) + kb * (kg + kr) * (2.0 + gr)
            - 3.0 * kb * kb * (kg * kg - gr + kr * kr)))
}

/// A one-parameter path through the weight simplex.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cut {
    /// Honeycomb, K on one color, the other two at (1−K)/2 each. Returns K.
    HoneycombAxial(Color),
    /// Honeycomb ray from the isotropic point along angle φ in the simplex
    /// plane. Returns the distance from (1/3, 1/3, 1/3).
    HoneycombRay(f64),
    /// Kekulé, K on one of R, G, B and the rest split evenly. Returns K.
    KekuleAxial(Color),
}

fn axial(c: Color, k: f64, colors: [Color; 3]) -> Result<[f64; 3]> {
    let i = colors
        .iter()
        .position(|&x| x == c)
        .ok_or_else(|| Error::Argument(format!("color {c} not on this cut")))?;
    let mut w = [(1.0 - k) / 2.0; 3];
    w[i] = k;
    Ok(w)
}

/// Unit vectors spanning the plane Σ K = 0.
fn ray_point(phi: f64, s: f64) -> [f64; 3] {
    let u = [1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt(), 0.0];
    let v = [1.0 / 6f64.sqrt(), 1.0 / 6f64.sqrt(), -2.0 / 6f64.sqrt()];
    let (c, sn) = (phi.cos(), phi.sin());
    let mut p = [1.0 / 3.0; 3];
    for i in 0..3 {
        p[i] += s * (c * u[i] + sn * v[i]);
    }
    p
}

/// Largest distance along the ray that stays inside the simplex.
fn ray_extent(phi: f64) -> f64 {
    let d = ray_point(phi, 1.0);
    d.iter()
        .map(|&x| x - 1.0 / 3.0)
        .filter(|&dx| dx < 0.0)
        .map(|dx| (1.0 / 3.0) / -dx)
        .fold(f64::INFINITY, f64::min)
}

impl Cut {
    /// Weights at parameter `t`, ordered as (X, Y, Z) or (R, G, B).
    pub fn weights(&self, t: f64) -> Result<[f64; 3]> {
        match *self {
            Cut::HoneycombAxial(c) => axial(c, t, [Color::X, Color::Y, Color::Z]),
            Cut::KekuleAxial(c) => axial(c, t, [Color::R, Color::G, Color::B]),
            Cut::HoneycombRay(phi) => Ok(ray_point(phi, t)),
        }
    }

    pub fn diffusion(&self, t: f64) -> Result<f64> {
        let [a, b, c] = self.weights(t)?;
        match self {
            Cut::HoneycombAxial(_) | Cut::HoneycombRay(_) => Ok(d_mic_honeycomb(a, b, c)?.d),
            Cut::KekuleAxial(_) => d_mic_kekule(a, b, c),
        }
    }

    /// Parameter range scanned for the crossing: from the isotropic point
    /// toward the single-color (or simplex-edge) limit.
    fn range(&self) -> (f64, f64) {
        match *self {
            Cut::HoneycombAxial(_) | Cut::KekuleAxial(_) => (1.0 / 3.0, 1.0),
            Cut::HoneycombRay(phi) => (0.0, ray_extent(phi)),
        }
    }
}

/// Point on `cut` where the microscopic diffusion constant equals 3/16,
/// found by bisection to 1e−10. `None` if D does not cross the critical
/// value on the cut.
pub fn critical_contour(cut: Cut) -> Result<Option<f64>> {
    let (mut lo, mut hi) = cut.range();
    let f = |t: f64| cut.diffusion(t).map(|d| d - D_CRITICAL);
    let (mut flo, fhi) = (f(lo)?, f(hi)?);
    if flo == 0.0 {
        return Ok(Some(lo));
    }
    if fhi == 0.0 {
        return Ok(Some(hi));
    }
    if flo.signum() == fhi.signum() {
        return Ok(None);
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(Some(mid));
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// log θ₃(i t) = log Σ_n e^{−π t n²}, t > 0.
///
/// For t < 1 the modular image θ₃(i t) = t^{−1/2} θ₃(i/t) is summed instead,
/// which keeps the series short.
pub fn ln_theta3_imag(t: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("theta3 needs Im τ > 0, got {t}")));
    }
    if t < 1.0 {
        return Ok(-0.5 * t.ln() + ln_theta3_imag(1.0 / t)?);
    }
    let mut sum = 1.0;
    for n in 1.. {
        let term = 2.0 * (-PI * t * (n * n) as f64).exp();
        sum += term;
        if term < SERIES_TOL * sum {
            break;
        }
    }
    Ok(sum.ln())
}

/// log η(i t) = −π t/12 + Σ_n log(1 − e^{−2π n t}), t > 0.
///
/// Uses η(i t) = t^{−1/2} η(i/t) for t < 1.
pub fn ln_eta_imag(t: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("eta needs Im τ > 0, got {t}")));
    }
    if t < 1.0 {
        return Ok(-0.5 * t.ln() + ln_eta_imag(1.0 / t)?);
    }
    let q = (-2.0 * PI * t).exp();
    let mut acc = -PI * t / 12.0;
    let mut qn = q;
    while qn > SERIES_TOL {
        acc += (-qn).ln_1p();
        qn *= q;
    }
    Ok(acc)
}

/// Lifshitz scaling function
/// J(u) = log[θ₃(iλu) θ₃(iλ(1−u)) / (η(2iu) η(2i(1−u)))].
pub fn lifshitz_j(u: f64, lambda: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("lifshitz J needs 0 < u < 1, got {u}")));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!("lifshitz J needs λ > 0, got {lambda}")));
    }
    let v = 1.0 - u;
    Ok(ln_theta3_imag(lambda * u)? + ln_theta3_imag(lambda * v)?
        - ln_eta_imag(2.0 * u)?
        - ln_eta_imag(2.0 * v)?)
}

fn check_pd(theta: f64, f: f64) -> Result<()> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::Argument(format!("PD parameter θ must be positive, got {theta}")));
    }
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::Argument(format!("occupied fraction must lie in (0, 1], got {f}")));
    }
    Ok(())
}

/// Probability that m random points of space-time lie on one loop.
pub fn pd_pm(m: u32, theta: f64, f: f64) -> Result<f64> {
    check_pd(theta, f)?;
    if m < 2 {
        return Err(Error::Argument(format!("need m ≥ 2 points, got {m}")));
    }
    let m = m as f64;
    Ok((m * f.ln() + ln_gamma(1.0 + theta) + ln_gamma(m) - ln_gamma(m + theta)).exp())
}

/// ℓ·P(ℓ) for macroscopic loops in a volume of total length `total`.
pub fn pd_weighted_density(len: f64, total: f64, theta: f64, f: f64) -> Result<f64> {
    check_pd(theta, f)?;
    let cap = f * total;
    if !(len > 0.0 && len < cap) {
        return Err(Error::Argument(format!("loop length {len} outside (0, {cap})")));
    }
    Ok(theta / total * (1.0 - len / cap).powf(theta - 1.0))
}

/// Poisson-Dirichlet loop-length density P(ℓ).
pub fn pd_density(len: f64, total: f64, theta: f64, f: f64) -> Result<f64> {
    Ok(pd_weighted_density(len, total, theta, f)? / len)
}

/// Ratios (P₂²/P₄, P₂³/P₃²); independent of the occupied fraction.
pub fn pd_ratios(theta: f64) -> Result<(f64, f64)> {
    let (p2, p3, p4) = (pd_pm(2, theta, 1.0)?, pd_pm(3, theta, 1.0)?, pd_pm(4, theta, 1.0)?);
    Ok((p2 * p2 / p4, p2.powi(3) / (p3 * p3)))
}

/// Critical exponents tied together by hyperscaling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    pub nu: f64,
    pub eta: f64,
    pub tau: f64,
    pub d_f: f64,
    pub beta: f64,
    pub theta: f64,
    pub class: SymmetryClass,
}

pub fn eta_from_tau(tau: f64) -> Result<f64> {
    if !(tau > 1.0) {
        return Err(Error::Domain(format!("Fisher exponent must exceed 1, got {tau}")));
    }
    Ok(5.0 - 6.0 / (tau - 1.0))
}

pub fn tau_from_eta(eta: f64) -> Result<f64> {
    if !(eta < 5.0) {
        return Err(Error::Domain(format!("anomalous dimension must be below 5, got {eta}")));
    }
    Ok((11.0 - eta) / (5.0 - eta))
}

pub fn fractal_dimension(tau: f64) -> Result<f64> {
    if !(tau > 1.0) {
        return Err(Error::Domain(format!("Fisher exponent must exceed 1, got {tau}")));
    }
    Ok(3.0 / (tau - 1.0))
}

/// β = ν(η+1)/2.
pub fn beta_from_eta(nu: f64, eta: f64) -> f64 {
    nu * (eta + 1.0) / 2.0
}

/// β = 3ν(τ−2)/(τ−1).
pub fn beta_from_tau(nu: f64, tau: f64) -> Result<f64> {
    if !(tau > 1.0) {
        return Err(Error::Domain(format!("Fisher exponent must exceed 1, got {tau}")));
    }
    Ok(3.0 * nu * (tau - 2.0) / (tau - 1.0))
}

impl Exponents {
    pub fn from_tau(tau: f64, nu: f64, class: SymmetryClass) -> Result<Self> {
        let eta = eta_from_tau(tau)?;
        Ok(Exponents {
            nu,
            eta,
            tau,
            d_f: fractal_dimension(tau)?,
            beta: beta_from_eta(nu, eta),
            theta: class.pd_theta(),
            class,
        })
    }

    pub fn from_eta(eta: f64, nu: f64, class: SymmetryClass) -> Result<Self> {
        let tau = tau_from_eta(eta)?;
        Ok(Exponents {
            nu,
            eta,
            tau,
            d_f: (5.0 - eta) / 2.0,
            beta: beta_from_eta(nu, eta),
            theta: class.pd_theta(),
            class,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReferenceKind {
    /// Return time of a one-dimensional walk.
    FirstPassage,
    /// Bulk Brownian loops in the liquid.
    BulkLiquid,
    SurfaceCritical,
    SurfaceLiquid,
    /// Bulk loops with an open temporal boundary: power law times e^{−αℓ}.
    OpenBoundary,
}

impl ReferenceKind {
    pub fn name(self) -> &'static str {
        match self {
            ReferenceKind::FirstPassage => "first-passage",
            ReferenceKind::BulkLiquid => "bulk-liquid",
            ReferenceKind::SurfaceCritical => "surface-critical",
            ReferenceKind::SurfaceLiquid => "surface-liquid",
            ReferenceKind::OpenBoundary => "open-boundary",
        }
    }
}

impl std::str::FromStr for ReferenceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            ReferenceKind::FirstPassage,
            ReferenceKind::BulkLiquid,
            ReferenceKind::SurfaceCritical,
            ReferenceKind::SurfaceLiquid,
            ReferenceKind::OpenBoundary,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::Argument(format!("unknown reference form '{s}'")))
    }
}

/// Unnormalized reference density A·ℓ^{−exponent}·e^{−αℓ}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceForm {
    pub kind: ReferenceKind,
    pub exponent: f64,
    pub decay: f64,
}

impl ReferenceForm {
    pub fn eval(&self, len: f64) -> f64 {
        len.powf(-self.exponent) * (-self.decay * len).exp()
    }

    pub fn with_decay(mut self, alpha: f64) -> Self {
        self.decay = alpha;
        self
    }
}

pub fn reference_forms(kind: ReferenceKind) -> ReferenceForm {
    let exponent = match kind {
        ReferenceKind::FirstPassage => 1.5,
        ReferenceKind::BulkLiquid | ReferenceKind::OpenBoundary => 2.5,
        ReferenceKind::SurfaceCritical => 3.0,
        ReferenceKind::SurfaceLiquid => 2.0,
    };
    ReferenceForm { kind, exponent, decay: 0.0 }
}
