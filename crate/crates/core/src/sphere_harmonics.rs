//! Zonal harmonics on `S^d ⊂ R^{d+1}` and mode extraction for dot-product kernels.
//!
//! A kernel `k(x, y) = f(<x, y>)` on the sphere is diagonal in spherical
//! harmonics: every harmonic of degree `n` is an eigenfunction with eigenvalue
//! `μ_n`, repeated `a_n` times. Eigenvalues are taken with respect to the
//! normalized uniform measure `σ/ω_d`, so that
//!
//! ```text
//! μ_n = c_d ∫_{-1}^{1} f(t) C_n^λ(t)/C_n^λ(1) (1-t²)^{(d-2)/2} dt,   λ = (d-1)/2,
//! ```
//!
//! with `c_d` fixed by `Σ_n μ_n a_n = f(1)` (a constant profile has `μ_0 = 1`).
//!
//! The profiles of interest (arc-cosine compositions) have `sqrt(1-t)`
//! singularities at the endpoints, which cripple Gauss–Jacobi convergence in
//! `t`. After `t = cos θ` those terms become analytic, so the integral is
//! evaluated as `c_d ∫_0^π f(cos θ) P_n(cos θ) sin^{d-1} θ dθ` with
//! Gauss–Legendre nodes in `θ`.

use std::f64::consts::PI;
use std::io::Write;

use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;
use crate::seq_calculus::binomial_weight_f64;

/// Highest degree evaluated by the upward recurrence.
pub const MAX_DEGREE: usize = 200;

/// Relative agreement required between the `q`- and `2q`-node passes.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereGeometry {
    d: usize,
    lambda: f64,
    omega: f64,
}

impl SphereGeometry {
    /// Geometry of `S^d`; `d >= 2` is required by the Gegenbauer representation.
    pub fn new(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidDimension(d));
        }
        let half = (d as f64 + 1.0) / 2.0;
        Ok(SphereGeometry { d, lambda: (d as f64 - 1.0) / 2.0, omega: 2.0 * PI.powf(half) / gamma(half) })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// `λ = (d-1)/2`.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Surface area `ω_d` of `S^d`.
    pub fn omega(&self) -> f64 {
        self.omega
    }
}

/// Dimension `a_n` of the degree-`n` spherical harmonics on `S^d`.
pub fn multiplicity(n: usize, d: usize) -> u128 {
    let c = |top: usize, k: usize| crate::seq_calculus::binomial_weight_exact(k, top - k).expect("overflow");
    match n {
        0 => 1,
        1 => d as u128 + 1,
        _ => c(n + d, n) - c(n - 2 + d, n - 2),
    }
}

fn check_degree(n: usize) -> Result<()> {
    if n > MAX_DEGREE {
        Err(Error::DegreeTooLarge { degree: n, limit: MAX_DEGREE })
    } else {
        Ok(())
    }
}

/// Values `C_0^λ(u), ..., C_n^λ(u)` by the upward recurrence
/// `k C_k = 2(k+λ-1) u C_{k-1} - (k+2λ-2) C_{k-2}`.
fn gegenbauer_table(n: usize, lambda: f64, u: f64, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if n == 0 {
        return;
    }
    out.push(2.0 * lambda * u);
    for k in 2..=n {
        let kf = k as f64;
        let next = (2.0 * (kf + lambda - 1.0) * u * out[k - 1] - (kf + 2.0 * lambda - 2.0) * out[k - 2]) / kf;
        out.push(next);
    }
}

/// Gegenbauer polynomial `C_n^λ(u)`.
pub fn gegenbauer(n: usize, lambda: f64, u: f64) -> Result<f64> {
    check_degree(n)?;
    if lambda <= 0.0 {
        return Err(Error::InvalidParameter(format!("Gegenbauer index must be positive, got {lambda}")));
    }
    let mut t = Vec::with_capacity(n + 1);
    gegenbauer_table(n, lambda, u, &mut t);
    Ok(t[n])
}

/// Zonal harmonic `Z_n(u) = (n+λ)/λ · C_n^λ(u)`; `Z_n(1) = a_n`.
pub fn zonal(n: usize, geometry: &SphereGeometry, u: f64) -> Result<f64> {
    let lambda = geometry.lambda;
    Ok((n as f64 + lambda) / lambda * gegenbauer(n, lambda, u)?)
}

/// Order-`d` Cesàro mean of the zonal harmonics,
/// `K_n(u) = (1/A_n^d) Σ_{k<=n} A_{n-k}^d Z_k(u)`, which is nonnegative.
pub fn cesaro_kernel(n: usize, geometry: &SphereGeometry, u: f64) -> Result<f64> {
    check_degree(n)?;
    if !(-1.0..=1.0).contains(&u) {
        return Err(Error::ArgumentOutOfRange(u));
    }
    let lambda = geometry.lambda;
    let d = geometry.d;
    let mut c = Vec::with_capacity(n + 1);
    gegenbauer_table(n, lambda, u, &mut c);
    let total: f64 = c
        .iter()
        .enumerate()
        .map(|(k, ck)| binomial_weight_f64(n - k, d) * (k as f64 + lambda) / lambda * ck)
        .sum();
    Ok(total / binomial_weight_f64(n, d))
}

/// Per-degree eigenvalues of a dot-product kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSpectrum {
    pub mu: Vec<f64>,
    pub mult: Vec<u128>,
    pub geometry: SphereGeometry,
}

impl ModeSpectrum {
    pub fn max_degree(&self) -> usize {
        self.mu.len() - 1
    }

    /// Degrees with a negative eigenvalue; a positive definite profile has none.
    pub fn negative_degrees(&self) -> Vec<usize> {
        self.mu.iter().enumerate().filter(|(_, &m)| m < 0.0).map(|(n, _)| n).collect()
    }

    /// `Σ_{n<=N} μ_n a_n`, which tends to `f(1)`.
    pub fn trace_through(&self, degree: usize) -> f64 {
        self.mu.iter().zip(&self.mult).take(degree + 1).map(|(m, &a)| m * a as f64).sum()
    }

    /// First degree `N` with `μ_N a_N < rel · f(1)`.
    pub fn truncation_degree(&self, value_at_one: f64, rel: f64) -> Option<usize> {
        self.mu.iter().zip(&self.mult).position(|(m, &a)| (m * a as f64).abs() < rel * value_at_one.abs())
    }

    /// CSV with columns `n,a_n,mu_n`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,a_n,mu_n")?;
        for (n, (m, a)) in self.mu.iter().zip(&self.mult).enumerate() {
            writeln!(w, "{n},{a},{m:e}")?;
        }
        Ok(())
    }
}

fn modes_with_nodes(profile: &dyn Fn(f64) -> f64, geometry: &SphereGeometry, n_max: usize, q: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let rule = gauss_legendre(q, 0.0, PI)?;
    let d = geometry.d as i32;
    let mut mu = vec![0.0; n_max + 1];
    let mut scale = vec![0.0; n_max + 1];
    let mut norm = 0.0;
    let mut table = Vec::with_capacity(n_max + 1);
    let mut at_one = Vec::with_capacity(n_max + 1);
    gegenbauer_table(n_max, geometry.lambda, 1.0, &mut at_one);
    for (&theta, &w) in rule.nodes.iter().zip(&rule.weights) {
        let u = theta.cos();
        let wt = w * theta.sin().powi(d - 1);
        let f = profile(u);
        norm += wt;
        gegenbauer_table(n_max, geometry.lambda, u, &mut table);
        for n in 0..=n_max {
            let term = wt * f * table[n] / at_one[n];
            mu[n] += term;
            scale[n] += term.abs();
        }
    }
    for n in 0..=n_max {
        mu[n] /= norm;
        scale[n] /= norm;
    }
    Ok((mu, scale))
}

/// Mode eigenvalues `μ_0..μ_{n_max}` of the profile, with a doubling check.
///
/// The rule is run at `quad_order` and `2·quad_order` nodes; every degree must
/// agree to [`CONVERGENCE_TOLERANCE`] relative, up to a rounding floor set by
/// the magnitude of the summed terms.
pub fn funk_hecke_modes(
    profile: impl Fn(f64) -> f64,
    geometry: &SphereGeometry,
    n_max: usize,
    quad_order: usize,
) -> Result<ModeSpectrum> {
    check_degree(n_max)?;
    let (coarse, _) = modes_with_nodes(&profile, geometry, n_max, quad_order)?;
    let (fine, scale) = modes_with_nodes(&profile, geometry, n_max, 2 * quad_order)?;
    for n in 0..=n_max {
        let floor = 64.0 * f64::EPSILON * scale[n];
        let diff = (coarse[n] - fine[n]).abs();
        if diff > CONVERGENCE_TOLERANCE * fine[n].abs() + floor {
            return Err(Error::QuadratureNotConverged { degree: n, change: diff / fine[n].abs() });
        }
    }
    Ok(ModeSpectrum {
        mult: (0..=n_max).map(|n| multiplicity(n, geometry.d)).collect(),
        mu: fine,
        geometry: *geometry,
    })
}

/// The `count` largest eigenvalues with multiplicity, descending.
pub fn modes_to_lambda(spectrum: &ModeSpectrum, count: usize) -> Result<Vec<f64>> {
    if let Some(&degree) = spectrum.negative_degrees().first() {
        return Err(Error::NegativeMode { degree, value: spectrum.mu[degree] });
    }
    let available: u128 = spectrum.mult.iter().sum();
    if available < count as u128 {
        return Err(Error::InsufficientDegrees { available, requested: count });
    }
    let mut order: Vec<usize> = (0..spectrum.mu.len()).collect();
    order.sort_by(|&a, &b| spectrum.mu[b].total_cmp(&spectrum.mu[a]).then(a.cmp(&b)));
    let mut out = Vec::with_capacity(count);
    for n in order {
        let take = (spectrum.mult[n]).min((count - out.len()) as u128) as usize;
        out.extend(std::iter::repeat(spectrum.mu[n]).take(take));
        if out.len() == count {
            break;
        }
    }
    Ok(out)
}
