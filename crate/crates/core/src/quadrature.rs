//! Gauss–Jacobi quadrature.
//!
//! Nodes are the zeros of the Jacobi polynomial `P_n^{(α,β)}`, found by Newton
//! iteration on the three-term recurrence from Tricomi-type initial guesses.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Newton tolerance on the roots.
pub const ROOT_TOLERANCE: f64 = 1e-14;
const MAX_NEWTON_STEPS: usize = 100;

/// Nodes (descending) and weights of an `n`-point rule.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ w_i f(x_i)`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// `(P_n(x), P_{n-1}(x))` for the Jacobi family.
fn jacobi_pair(n: usize, alpha: f64, beta: f64, x: f64) -> (f64, f64) {
    let ab = alpha + beta;
    let mut p_prev = 1.0;
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p = 0.5 * (alpha - beta + (ab + 2.0) * x);
    for k in 2..=n {
        let k = k as f64;
        let c = 2.0 * k + ab;
        let a1 = 2.0 * k * (k + ab) * (c - 2.0);
        let a2 = (c - 1.0) * (alpha * alpha - beta * beta);
        let a3 = (c - 2.0) * (c - 1.0) * c;
        let a4 = 2.0 * (k + alpha - 1.0) * (k + beta - 1.0) * c;
        let next = ((a2 + a3 * x) * p - a4 * p_prev) / a1;
        p_prev = p;
        p = next;
    }
    (p, p_prev)
}

/// `P_n'(x)` from `(2n+α+β)(1-x²)P_n' = n[(α-β) - (2n+α+β)x]P_n + 2(n+α)(n+β)P_{n-1}`.
fn jacobi_derivative(n: usize, alpha: f64, beta: f64, x: f64, p: f64, p_prev: f64) -> f64 {
    let nf = n as f64;
    let c = 2.0 * nf + alpha + beta;
    (nf * (alpha - beta - c * x) * p + 2.0 * (nf + alpha) * (nf + beta) * p_prev) / (c * (1.0 - x * x))
}

/// Gauss–Jacobi rule for `∫_{-1}^{1} f(x) (1-x)^α (1+x)^β dx`.
pub fn gauss_jacobi(n: usize, alpha: f64, beta: f64) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::InvalidParameter("quadrature order must be positive".into()));
    }
    if alpha <= -1.0 || beta <= -1.0 {
        return Err(Error::InvalidParameter(format!("Jacobi exponents must exceed -1, got ({alpha}, {beta})")));
    }
    let nf = n as f64;
    let ln_const = ln_gamma(nf + alpha + 1.0) + ln_gamma(nf + beta + 1.0)
        - ln_gamma(nf + alpha + beta + 1.0)
        - ln_gamma(nf + 1.0)
        + (alpha + beta + 1.0) * std::f64::consts::LN_2;
    let scale = ln_const.exp();

    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for k in 1..=n {
        let theta = std::f64::consts::PI * (k as f64 - 0.25 + 0.5 * alpha) / (nf + 0.5 * (alpha + beta + 1.0));
        let mut x = theta.cos();
        let mut converged = false;
        for _ in 0..MAX_NEWTON_STEPS {
            let (p, pp) = jacobi_pair(n, alpha, beta, x);
            let dp = jacobi_derivative(n, alpha, beta, x, p, pp);
            let step = p / dp;
            x -= step;
            x = x.clamp(-1.0 + f64::EPSILON, 1.0 - f64::EPSILON);
            if step.abs() <= ROOT_TOLERANCE * x.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::QuadratureNotConverged { degree: n, change: f64::NAN });
        }
        let (p, pp) = jacobi_pair(n, alpha, beta, x);
        let dp = jacobi_derivative(n, alpha, beta, x, p, pp);
        nodes.push(x);
        weights.push(scale / ((1.0 - x * x) * dp * dp));
    }
    if nodes.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::QuadratureNotConverged { degree: n, change: f64::NAN });
    }
    Ok(QuadratureRule { nodes, weights })
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Result<QuadratureRule> {
    let base = gauss_jacobi(n, 0.0, 0.0)?;
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    Ok(QuadratureRule {
        nodes: base.nodes.iter().map(|x| mid + half * x).collect(),
        weights: base.weights.iter().map(|w| half * w).collect(),
    })
}
