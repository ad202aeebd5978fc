//! Kernel gradient-flow regression.
//!
//! Starting from `f_0 ≡ 0`, the flow `d/dt f_t(x) = -(1/n) K(x, X)(f_t(X) - y)`
//! has the closed form
//!
//! ```text
//! f_t(x) = K(x, X) U diag((1 - exp(-λ_i t / n)) / λ_i) Uᵀ y
//! ```
//!
//! where `K(X, X) = U diag(λ) Uᵀ`. Early stopping at a finite `t` acts as the
//! regularizer; the stopping time is either set from the sample size or chosen
//! on a holdout set.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::loglog::fit_loglog;
use crate::ntk_kernels::{gram, Eigen, Kernel, NtkDescriptor};
use crate::rng::substream;
use crate::spectral_estimator::{sample_with, DistributionKind, SampleDistribution};

/// Relative eigenvalue tolerance used by the sample-size experiments.
pub const GRAM_TOLERANCE: f64 = 1e-10;

/// A real function of a point, shared between tasks and risk evaluations.
pub type Target = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Anything that maps a point to a prediction.
pub trait Predictor {
    fn predict(&self, x: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64> Predictor for F {
    fn predict(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// Training data `y_i = f*(x_i) + ε_i`.
#[derive(Clone)]
pub struct RegressionTask {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub f_star: Option<Target>,
    pub noise_sigma: f64,
    /// Truncation level for cross-validation.
    pub bound: Option<f64>,
}

impl fmt::Debug for RegressionTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegressionTask")
            .field("n", &self.x.len())
            .field("noise_sigma", &self.noise_sigma)
            .field("bound", &self.bound)
            .field("has_f_star", &self.f_star.is_some())
            .finish()
    }
}

impl RegressionTask {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::InvalidParameter(format!("{} inputs but {} targets", x.len(), y.len())));
        }
        Ok(RegressionTask { x, y, f_star: None, noise_sigma: 0.0, bound: None })
    }

    pub fn with_truth(mut self, f_star: Target, noise_sigma: f64) -> Self {
        self.f_star = Some(f_star);
        self.noise_sigma = noise_sigma;
        self
    }

    pub fn with_bound(mut self, bound: f64) -> Result<Self> {
        if !(bound > 0.0) {
            return Err(Error::InvalidParameter(format!("truncation bound must be positive, got {bound}")));
        }
        self.bound = Some(bound);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }
}

/// Draws `n` inputs from `dist` and labels them with `f* + σ·N(0, 1)`.
pub fn synthetic_task<R: Rng>(
    f_star: Target,
    dist: &SampleDistribution,
    n: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<RegressionTask> {
    let x = sample_with(dist, n, rng)?;
    let y = x
        .iter()
        .map(|p| {
            let eps: f64 = rng.sample(StandardNormal);
            f_star(p) + sigma * eps
        })
        .collect();
    Ok(RegressionTask::new(x, y)?.with_truth(f_star, sigma))
}

/// `f(x) = Σ_j α_j K(x, z_j)`.
#[derive(Debug, Clone)]
pub struct KernelExpansion<K> {
    pub kernel: K,
    pub centers: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
}

impl<K: Kernel> Predictor for KernelExpansion<K> {
    fn predict(&self, x: &[f64]) -> f64 {
        self.centers.iter().zip(&self.coefficients).map(|(z, a)| a * self.kernel.eval(x, z)).sum()
    }
}

/// `(1 - exp(-λ t/n)) / λ`, continued by `t/n` at `λ = 0`.
fn spectral_filter(lambda: f64, t: f64, n: f64) -> f64 {
    if t.is_infinite() {
        return 1.0 / lambda;
    }
    let x = lambda * t / n;
    if x.abs() < 1e-12 {
        t / n * (1.0 - 0.5 * x)
    } else {
        -(-x).exp_m1() / lambda
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("time must be nonnegative, got {t}")))
    }
}

/// Closed-form solution of the kernel gradient flow on a fixed training set.
#[derive(Debug, Clone)]
pub struct FlowPredictor<K> {
    kernel: K,
    x: Vec<Vec<f64>>,
    y: DVector<f64>,
    eigen: Eigen,
    /// `Uᵀ y`
    projected: DVector<f64>,
    lambda_min: f64,
}

impl<K: Kernel> FlowPredictor<K> {
    /// Eigendecomposes `K(X, X)`; fails unless it is positive definite.
    pub fn new(kernel: K, task: &RegressionTask) -> Result<Self> {
        Self::build(kernel, task, None)
    }

    /// Like [`FlowPredictor::new`], but accepts eigenvalues down to
    /// `-tolerance · λ_max`. Large samples in low dimension give Gram matrices
    /// that are positive definite in exact arithmetic yet have roundoff-level
    /// eigenvalues; the flow filter stays finite there because it tends to
    /// `t/n` as `λ → 0`.
    pub fn new_tolerant(kernel: K, task: &RegressionTask, tolerance: f64) -> Result<Self> {
        Self::build(kernel, task, Some(tolerance))
    }

    fn build(kernel: K, task: &RegressionTask, tolerance: Option<f64>) -> Result<Self> {
        let mut g = gram(&kernel, &task.x)?;
        let lambda_min = match tolerance {
            None => g.check_positive_definite()?,
            Some(tol) => {
                let values = &g.eigen()?.values;
                let (max, min) = (values[0], values[values.len() - 1]);
                if min < -tol * max.abs() {
                    return Err(Error::NotPositiveDefinite(min));
                }
                min
            }
        };
        let eigen = g.eigen()?.clone();
        let y = DVector::from_column_slice(&task.y);
        let projected = eigen.vectors.tr_mul(&y);
        Ok(FlowPredictor { kernel, x: task.x.clone(), y, eigen, projected, lambda_min })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigen.values
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    /// Dual coefficients `c_t` with `f_t(x) = K(x, X) c_t`.
    pub fn coefficients(&self, t: f64) -> Result<DVector<f64>> {
        check_time(t)?;
        let n = self.n() as f64;
        let filtered = DVector::from_iterator(
            self.n(),
            self.eigen.values.iter().zip(self.projected.iter()).map(|(&l, &p)| spectral_filter(l, t, n) * p),
        );
        Ok(&self.eigen.vectors * filtered)
    }

    /// The predictor frozen at time `t`.
    pub fn at(&self, t: f64) -> Result<FlowAt<'_, K>> {
        Ok(FlowAt { flow: self, t, coefficients: self.coefficients(t)? })
    }

    /// `f_t(x)`.
    pub fn predict(&self, x: &[f64], t: f64) -> Result<f64> {
        Ok(self.at(t)?.predict(x))
    }

    /// Rows `K(p, X)` for each evaluation point `p`.
    pub fn cross_kernel(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(points.len(), self.n(), |i, j| self.kernel.eval(&points[i], &self.x[j]))
    }

    /// `f_t` at the points whose cross-kernel rows are given.
    pub fn predict_from_cross(&self, cross: &DMatrix<f64>, t: f64) -> Result<DVector<f64>> {
        Ok(cross * self.coefficients(t)?)
    }

    /// `f_t(X) = U diag(1 - exp(-λ t/n)) Uᵀ y`.
    pub fn train_predictions(&self, t: f64) -> Result<DVector<f64>> {
        check_time(t)?;
        let n = self.n() as f64;
        let filtered = DVector::from_iterator(
            self.n(),
            self.eigen.values.iter().zip(self.projected.iter()).map(|(&l, &p)| {
                if t.is_infinite() {
                    p
                } else {
                    -(-l * t / n).exp_m1() * p
                }
            }),
        );
        Ok(&self.eigen.vectors * filtered)
    }

    /// `‖f_t(X) - y‖ = ‖exp(-K t/n) y‖`, evaluated in the eigenbasis.
    pub fn train_residual(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        let n = self.n() as f64;
        Ok(self
            .eigen
            .values
            .iter()
            .zip(self.projected.iter())
            .map(|(&l, &p)| ((-l * t / n).exp() * p).powi(2))
            .sum::<f64>()
            .sqrt())
    }

    /// `exp(-λ_min t/n) ‖y‖`.
    pub fn residual_envelope(&self, t: f64) -> f64 {
        (-self.lambda_min * t / self.n() as f64).exp() * self.y.norm()
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.y
    }
}

/// A flow predictor evaluated at a fixed time.
#[derive(Debug, Clone)]
pub struct FlowAt<'a, K> {
    flow: &'a FlowPredictor<K>,
    t: f64,
    coefficients: DVector<f64>,
}

impl<K> FlowAt<'_, K> {
    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }
}

impl<K: Kernel> Predictor for FlowAt<'_, K> {
    fn predict(&self, x: &[f64]) -> f64 {
        self.flow.x.iter().zip(self.coefficients.iter()).map(|(xi, c)| c * self.flow.kernel.eval(x, xi)).sum()
    }
}

/// Exponent `(d+1)/(s(d+1)+d)` of the early-stopping schedule.
pub fn stopping_exponent(d: usize, s: f64) -> Result<f64> {
    let dp = d as f64 + 1.0;
    let threshold = 1.0 / dp;
    if !(s > threshold) {
        return Err(Error::SmoothnessBelowThreshold { s, threshold });
    }
    Ok(dp / (s * dp + d as f64))
}

/// `t_op = c · n^{(d+1)/(s(d+1)+d)}`.
pub fn optimal_stopping_time(n: usize, d: usize, s: f64, c: f64) -> Result<f64> {
    let e = stopping_exponent(d, s)?;
    if n == 0 || !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("need n >= 1 and c > 0, got n = {n}, c = {c}")));
    }
    Ok(c * (n as f64).powf(e))
}

/// Exponent `s(d+1)/(s(d+1)+d)` of the squared-L2 risk at `t_op`.
pub fn risk_exponent(d: usize, s: f64) -> f64 {
    let dp = d as f64 + 1.0;
    s * dp / (s * dp + d as f64)
}

/// `min(|a|, M) sgn(a)`.
pub fn truncate(a: f64, bound: f64) -> f64 {
    a.clamp(-bound, bound)
}

/// A predictor with outputs clamped to `[-M, M]`.
#[derive(Debug, Clone)]
pub struct Truncated<P> {
    pub inner: P,
    pub bound: f64,
}

impl<P: Predictor> Predictor for Truncated<P> {
    fn predict(&self, x: &[f64]) -> f64 {
        truncate(self.inner.predict(x), self.bound)
    }
}

/// `{1, Q, Q², …, Q^⌊log_Q n⌋}`.
pub fn candidate_grid(n: usize, q: f64) -> Result<Vec<f64>> {
    if !(q > 1.0) || n == 0 {
        return Err(Error::InvalidParameter(format!("candidate grid needs Q > 1 and n >= 1, got Q = {q}, n = {n}")));
    }
    let limit = n as f64 * (1.0 + 1e-12);
    let mut out = vec![1.0];
    while out[out.len() - 1] * q <= limit {
        let next = out[out.len() - 1] * q;
        out.push(next);
    }
    Ok(out)
}

/// Outcome of holdout selection over a candidate set of stopping times.
#[derive(Debug, Clone)]
pub struct CvSelection<'a, K> {
    pub t_cv: f64,
    pub index: usize,
    /// Mean squared truncated holdout error per candidate.
    pub scores: Vec<f64>,
    /// `L_M ∘ f_{t_cv}`.
    pub predictor: Truncated<FlowAt<'a, K>>,
}

/// Chooses `argmin_t Σ (L_M f_t(x̃_i) - ỹ_i)²`, ties going to the smallest `t`.
pub fn cv_select_stopping<'a, K: Kernel>(
    flow: &'a FlowPredictor<K>,
    candidates: &[f64],
    holdout_x: &[Vec<f64>],
    holdout_y: &[f64],
    bound: f64,
) -> Result<CvSelection<'a, K>> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("no candidate stopping times".into()));
    }
    if holdout_x.is_empty() || holdout_x.len() != holdout_y.len() {
        return Err(Error::InvalidParameter("holdout set must be nonempty with matching targets".into()));
    }
    if !(bound > 0.0) {
        return Err(Error::InvalidParameter(format!("truncation bound must be positive, got {bound}")));
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| candidates[a].total_cmp(&candidates[b]));
    let cross = flow.cross_kernel(holdout_x);
    let mut scores = vec![0.0; candidates.len()];
    for (i, &t) in candidates.iter().enumerate() {
        let pred = flow.predict_from_cross(&cross, t)?;
        scores[i] = pred.iter().zip(holdout_y).map(|(p, y)| (truncate(*p, bound) - y).powi(2)).sum::<f64>()
            / holdout_y.len() as f64;
    }
    let mut best = order[0];
    for &i in &order[1..] {
        if scores[i] < scores[best] {
            best = i;
        }
    }
    let t_cv = candidates[best];
    Ok(CvSelection { t_cv, index: best, scores, predictor: Truncated { inner: flow.at(t_cv)?, bound } })
}

/// Monte Carlo estimate of `E (f̂(x) - f*(x))²` over `n_mc` fresh draws.
pub fn l2_risk<P: Predictor + ?Sized, F: Fn(&[f64]) -> f64 + ?Sized>(
    predictor: &P,
    f_star: &F,
    dist: &SampleDistribution,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    let points = sample_with(dist, n_mc, &mut substream(seed, "l2-risk", 0))?;
    Ok(mean_squared_error(predictor, f_star, &points))
}

/// `max_x (f̂(x) - f*(x))²` over a grid.
pub fn sup_risk<P: Predictor + ?Sized, F: Fn(&[f64]) -> f64 + ?Sized>(
    predictor: &P,
    f_star: &F,
    grid: &[Vec<f64>],
) -> f64 {
    grid.iter().map(|x| (predictor.predict(x) - f_star(x)).powi(2)).fold(0.0, f64::max)
}

/// Mean of `(f̂(x) - f*(x))²` over the given points.
pub fn mean_squared_error<P: Predictor + ?Sized, F: Fn(&[f64]) -> f64 + ?Sized>(
    predictor: &P,
    f_star: &F,
    points: &[Vec<f64>],
) -> f64 {
    points.iter().map(|x| (predictor.predict(x) - f_star(x)).powi(2)).sum::<f64>() / points.len() as f64
}

/// One row of a risk curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskPoint {
    pub t: f64,
    pub train_residual: f64,
    /// Mean squared error against holdout targets, truncated when a bound is set.
    pub holdout_risk: f64,
    /// Mean squared error against `f*` on the evaluation points, or NaN without `f*`.
    pub l2_risk: f64,
}

/// Evaluates a flow on a list of times against a holdout set and, when
/// available, against `f*` on fixed evaluation points.
pub fn risk_curve<K: Kernel>(
    flow: &FlowPredictor<K>,
    times: &[f64],
    holdout: (&[Vec<f64>], &[f64]),
    bound: Option<f64>,
    truth: Option<(&dyn Fn(&[f64]) -> f64, &[Vec<f64>])>,
) -> Result<Vec<RiskPoint>> {
    let (hx, hy) = holdout;
    let hcross = flow.cross_kernel(hx);
    let truth = truth.map(|(f, pts)| (flow.cross_kernel(pts), pts.iter().map(|p| f(p)).collect::<Vec<f64>>()));
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let hp = flow.predict_from_cross(&hcross, t)?;
        let holdout_risk = if hy.is_empty() {
            f64::NAN
        } else {
            hp.iter()
                .zip(hy)
                .map(|(p, y)| (bound.map_or(*p, |m| truncate(*p, m)) - y).powi(2))
                .sum::<f64>()
                / hy.len() as f64
        };
        let l2_risk = match &truth {
            Some((cross, fs)) => {
                let p = flow.predict_from_cross(cross, t)?;
                p.iter().zip(fs).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / fs.len() as f64
            }
            None => f64::NAN,
        };
        out.push(RiskPoint { t, train_residual: flow.train_residual(t)?, holdout_risk, l2_risk });
    }
    Ok(out)
}

/// Writes a risk curve as `t,train_residual,holdout_risk,l2_risk`.
pub fn write_risk_curve<W: Write>(curve: &[RiskPoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "t,train_residual,holdout_risk,l2_risk")?;
    for p in curve {
        writeln!(w, "{:e},{:e},{:e},{:e}", p.t, p.train_residual, p.holdout_risk, p.l2_risk)?;
    }
    Ok(())
}

/// `count` log-spaced times from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

/// The one-dimensional synthetic target used by the scaling experiments:
/// a short kernel expansion of the depth-`layers` NTK.
pub fn reference_target(layers: usize) -> Result<KernelExpansion<NtkDescriptor>> {
    Ok(KernelExpansion {
        kernel: NtkDescriptor::full(layers)?,
        centers: vec![vec![-0.7], vec![-0.2], vec![0.3], vec![0.8]],
        coefficients: vec![1.0, -1.5, 1.2, -0.8],
    })
}

/// A kernel expansion target in dimension `d`: the reference target when
/// `d = 1`, otherwise the same coefficients on seeded centers in `[-1, 1]^d`.
pub fn kernel_target(d: usize, layers: usize, seed: u64) -> Result<KernelExpansion<NtkDescriptor>> {
    let mut target = reference_target(layers)?;
    if d != 1 {
        let dist = SampleDistribution::new(DistributionKind::UniformCube { lo: -1.0, hi: 1.0 }, d, seed);
        target.centers = sample_with(&dist, target.coefficients.len(), &mut substream(seed, "target", 0))?;
    }
    Ok(target)
}

/// Settings of the risk-versus-sample-size experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RateConfig {
    pub layers: usize,
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub sigma: f64,
    pub s: f64,
    /// Scale `c` of `t_op = c n^{exponent}`.
    pub scale: f64,
    /// Evaluation grid size on `[-1, 1]`.
    pub grid_points: usize,
    pub root_seed: u64,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig {
            layers: 2,
            sizes: vec![128, 256, 512, 1024],
            reps: 10,
            sigma: 0.5,
            s: 1.0,
            scale: 10.0,
            grid_points: 2001,
            root_seed: 0,
        }
    }
}

/// Mean risk per sample size and the fitted decay exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// `(n, t_op, mean L2 risk)`
    pub rows: Vec<(usize, f64, f64)>,
    /// Negated slope of `ln risk` against `ln n`.
    pub fitted_exponent: f64,
    pub theory_exponent: f64,
}

/// Runs the flow at `t_op(n)` on the reference target for each sample size
/// (inputs uniform on `[-1, 1]`) and fits the risk decay.
pub fn rate_experiment(config: &RateConfig) -> Result<RateReport> {
    let d = 1;
    let target = reference_target(config.layers)?;
    let grid = uniform_grid(config.grid_points);
    let f_grid: Vec<f64> = grid.iter().map(|x| target.predict(x)).collect();
    let dist = SampleDistribution::new(DistributionKind::UniformCube { lo: -1.0, hi: 1.0 }, d, config.root_seed);
    let (_, truth) = reference_truth(config.layers)?;
    let mut rows = Vec::new();
    for &n in &config.sizes {
        let t_op = optimal_stopping_time(n, d, config.s, config.scale)?;
        let mut total = 0.0;
        for rep in 0..config.reps {
            let mut rng = substream(config.root_seed, &format!("rate/{n}"), rep as u64);
            let task = synthetic_task(truth.clone(), &dist, n, config.sigma, &mut rng)?;
            let flow = FlowPredictor::new_tolerant(target.kernel, &task, GRAM_TOLERANCE)?;
            let pred = flow.predict_from_cross(&flow.cross_kernel(&grid), t_op)?;
            total += pred.iter().zip(&f_grid).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / f_grid.len() as f64;
        }
        rows.push((n, t_op, total / config.reps as f64));
    }
    let fit = fit_loglog(rows.iter().map(|&(n, _, r)| (n as f64, r)));
    Ok(RateReport { rows, fitted_exponent: -fit.slope, theory_exponent: risk_exponent(d, config.s) })
}

fn uniform_grid(points: usize) -> Vec<Vec<f64>> {
    (0..points).map(|i| vec![-1.0 + 2.0 * i as f64 / (points.max(2) - 1) as f64]).collect()
}

fn reference_truth(layers: usize) -> Result<(KernelExpansion<NtkDescriptor>, Target)> {
    let target = reference_target(layers)?;
    let t = target.clone();
    Ok((target, Arc::new(move |x: &[f64]| t.predict(x))))
}

/// `(160 M² ln(2|T|/δ) / ñ)^{1/2}`, the additive slack of the holdout guarantee.
pub fn cv_slack(bound: f64, candidates: usize, holdout: usize, delta: f64) -> f64 {
    (160.0 * bound * bound * (2.0 * candidates as f64 / delta).ln() / holdout as f64).sqrt()
}

/// Settings of the holdout stopping-time selection experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub layers: usize,
    pub n_train: usize,
    pub n_holdout: usize,
    pub sigma: f64,
    /// Truncation level `M`; targets are clipped to `[-M, M]`.
    pub bound: f64,
    /// Ratio `Q` of the candidate grid.
    pub q: f64,
    pub delta: f64,
    pub runs: usize,
    pub grid_points: usize,
    pub root_seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            layers: 2,
            n_train: 200,
            n_holdout: 100,
            sigma: 0.3,
            bound: 3.0,
            q: 2.0,
            delta: 0.1,
            runs: 50,
            grid_points: 2001,
            root_seed: 0,
        }
    }
}

/// One holdout-selection run, with risks as L2 distances `‖L_M f_t - f*‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct CvRun {
    pub t_cv: f64,
    pub selected_risk: f64,
    pub best_risk: f64,
    pub best_t: f64,
    /// `2 · best_risk + slack`
    pub oracle_bound: f64,
}

impl CvRun {
    pub fn within_bound(&self) -> bool {
        self.selected_risk <= self.oracle_bound
    }
}

/// Trains on the reference target with clipped noisy labels, selects the
/// stopping time on an independent holdout set, and compares with the best
/// candidate in hindsight.
pub fn cv_run(config: &CvConfig, run: usize) -> Result<CvRun> {
    let (target, truth) = reference_truth(config.layers)?;
    let dist = SampleDistribution::new(DistributionKind::UniformCube { lo: -1.0, hi: 1.0 }, 1, config.root_seed);
    let mut rng = substream(config.root_seed, "cv", run as u64);
    let clip = |mut task: RegressionTask| {
        task.y.iter_mut().for_each(|v| *v = truncate(*v, config.bound));
        task.with_bound(config.bound)
    };
    let train = clip(synthetic_task(truth.clone(), &dist, config.n_train, config.sigma, &mut rng)?)?;
    let holdout = clip(synthetic_task(truth, &dist, config.n_holdout, config.sigma, &mut rng)?)?;
    let flow = FlowPredictor::new_tolerant(target.kernel, &train, GRAM_TOLERANCE)?;
    let candidates = candidate_grid(config.n_train, config.q)?;
    let selection = cv_select_stopping(&flow, &candidates, &holdout.x, &holdout.y, config.bound)?;

    let grid = uniform_grid(config.grid_points);
    let f_grid: Vec<f64> = grid.iter().map(|x| target.predict(x)).collect();
    let cross = flow.cross_kernel(&grid);
    let mut risks = Vec::with_capacity(candidates.len());
    for &t in &candidates {
        let p = flow.predict_from_cross(&cross, t)?;
        let mse = p.iter().zip(&f_grid).map(|(a, b)| (truncate(*a, config.bound) - b).powi(2)).sum::<f64>()
            / f_grid.len() as f64;
        risks.push(mse.sqrt());
    }
    let best = (0..risks.len()).fold(0, |b, i| if risks[i] < risks[b] { i } else { b });
    let slack = cv_slack(config.bound, candidates.len(), config.n_holdout, config.delta);
    Ok(CvRun {
        t_cv: selection.t_cv,
        selected_risk: risks[selection.index],
        best_risk: risks[best],
        best_t: candidates[best],
        oracle_bound: 2.0 * risks[best] + slack,
    })
}

pub fn cv_experiment(config: &CvConfig) -> Result<Vec<CvRun>> {
    (0..config.runs).map(|r| cv_run(config, r)).collect()
}

/// Writes holdout-selection runs as CSV.
pub fn write_cv_runs<W: Write>(runs: &[CvRun], mut w: W) -> std::io::Result<()> {
    writeln!(w, "run,t_cv,selected_risk,best_t,best_risk,oracle_bound,within_bound")?;
    for (i, r) in runs.iter().enumerate() {
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e},{:e},{}",
            i,
            r.t_cv,
            r.selected_risk,
            r.best_t,
            r.best_risk,
            r.oracle_bound,
            r.within_bound()
        )?;
    }
    Ok(())
}

/// Settings of the early-stopping versus near-interpolation comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OverfitConfig {
    pub layers: usize,
    pub n: usize,
    pub sigma: f64,
    pub s: f64,
    pub scale: f64,
    /// The late time is `factor · t_op`.
    pub factor: f64,
    pub runs: usize,
    pub grid_points: usize,
    pub root_seed: u64,
}

impl Default for OverfitConfig {
    fn default() -> Self {
        OverfitConfig {
            layers: 2,
            n: 256,
            sigma: 0.3,
            s: 1.0,
            scale: 10.0,
            factor: 1e6,
            runs: 20,
            grid_points: 2001,
            root_seed: 0,
        }
    }
}

/// Mean squared L2 risk at `t_op` and at `factor · t_op` for one run.
pub fn overfit_run(config: &OverfitConfig, run: usize) -> Result<(f64, f64)> {
    let (target, truth) = reference_truth(config.layers)?;
    let dist = SampleDistribution::new(DistributionKind::UniformCube { lo: -1.0, hi: 1.0 }, 1, config.root_seed);
    let mut rng = substream(config.root_seed, "overfit", run as u64);
    let task = synthetic_task(truth, &dist, config.n, config.sigma, &mut rng)?;
    let flow = FlowPredictor::new_tolerant(target.kernel, &task, GRAM_TOLERANCE)?;
    let t_op = optimal_stopping_time(config.n, 1, config.s, config.scale)?;
    let grid = uniform_grid(config.grid_points);
    let f_grid: Vec<f64> = grid.iter().map(|x| target.predict(x)).collect();
    let cross = flow.cross_kernel(&grid);
    let risk = |t: f64| -> Result<f64> {
        let p = flow.predict_from_cross(&cross, t)?;
        Ok(p.iter().zip(&f_grid).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / f_grid.len() as f64)
    };
    Ok((risk(t_op)?, risk(config.factor * t_op)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_task(n: usize, seed: u64) -> RegressionTask {
        let dist = SampleDistribution::new(DistributionKind::UniformCube { lo: -1.0, hi: 1.0 }, 2, seed);
        let f: Target = Arc::new(|x: &[f64]| (3.0 * x[0]).sin() + x[1]);
        synthetic_task(f, &dist, n, 0.1, &mut substream(seed, "test", 0)).unwrap()
    }

    #[test]
    fn zero_time_is_zero() {
        let task = small_task(10, 1);
        let flow = FlowPredictor::new(NtkDescriptor::full(2).unwrap(), &task).unwrap();
        for x in [[0.1, 0.2], [-0.9, 0.4]] {
            assert_eq!(flow.predict(&x, 0.0).unwrap(), 0.0);
        }
        assert!((flow.train_residual(0.0).unwrap() - flow.targets().norm()).abs() < 1e-12);
    }

    #[test]
    fn infinite_time_interpolates() {
        let task = small_task(10, 2);
        let flow = FlowPredictor::new(NtkDescriptor::full(2).unwrap(), &task).unwrap();
        let at = flow.at(f64::INFINITY).unwrap();
        for (x, y) in task.x.iter().zip(&task.y) {
            assert!((at.predict(x) - y).abs() < 1e-8, "{} vs {}", at.predict(x), y);
        }
    }

    #[test]
    fn residual_matches_predictions_and_envelope() {
        let task = small_task(10, 3);
        let flow = FlowPredictor::new(NtkDescriptor::full(2).unwrap(), &task).unwrap();
        for t in [0.5, 3.0, 40.0] {
            let fx = flow.train_predictions(t).unwrap();
            let direct = (fx - flow.targets()).norm();
            let r = flow.train_residual(t).unwrap();
            assert!((direct - r).abs() < 1e-10 * flow.targets().norm());
            assert!(r <= flow.residual_envelope(t) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn negative_time_rejected() {
        let task = small_task(4, 4);
        let flow = FlowPredictor::new(NtkDescriptor::full(2).unwrap(), &task).unwrap();
        assert!(flow.predict(&[0.0, 0.0], -1.0).is_err());
    }

    #[test]
    fn duplicated_inputs_are_not_positive_definite() {
        let task = RegressionTask::new(vec![vec![0.3], vec![0.3]], vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            FlowPredictor::new(NtkDescriptor::full(2).unwrap(), &task),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn filter_is_continuous_at_zero_eigenvalue() {
        let n = 10.0;
        for t in [0.0, 1.0, 50.0] {
            let at_zero = spectral_filter(0.0, t, n);
            assert_eq!(at_zero, t / n);
            assert!((spectral_filter(1e-9, t, n) - at_zero).abs() <= 1e-7 * at_zero.max(1.0));
        }
    }

    #[test]
    fn tolerant_flow_accepts_near_singular_gram() {
        let x: Vec<Vec<f64>> = (0..400).map(|i| vec![-1.0 + 2.0 * i as f64 / 399.0]).collect();
        let y: Vec<f64> = x.iter().map(|p| p[0].sin()).collect();
        let task = RegressionTask::new(x, y).unwrap();
        let desc = NtkDescriptor::full(2).unwrap();
        let flow = FlowPredictor::new_tolerant(desc, &task, GRAM_TOLERANCE).unwrap();
        let p = flow.predict(&[0.1], 100.0).unwrap();
        assert!((p - 0.1f64.sin()).abs() < 0.05, "{p}");
    }

    #[test]
    fn stopping_time_examples() {
        let t = optimal_stopping_time(256, 1, 1.0, 1.0).unwrap();
        assert!((t - 256f64.powf(2.0 / 3.0)).abs() < 1e-12);
        assert!((t - 40.3175).abs() < 1e-3);
        assert!(stopping_exponent(1, 2.0).unwrap() < stopping_exponent(1, 1.0).unwrap());
        assert!(matches!(optimal_stopping_time(10, 1, 0.5, 1.0), Err(Error::SmoothnessBelowThreshold { .. })));
        assert!((risk_exponent(1, 1.0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn truncation_examples() {
        assert_eq!(truncate(5.0, 2.0), 2.0);
        assert_eq!(truncate(-0.5, 2.0), -0.5);
        assert_eq!(truncate(-7.0, 3.0), -3.0);
    }

    #[test]
    fn candidate_grid_powers() {
        assert_eq!(candidate_grid(10, 2.0).unwrap(), vec![1.0, 2.0, 4.0, 8.0]);
        assert_eq!(candidate_grid(8, 2.0).unwrap(), vec![1.0, 2.0, 4.0, 8.0]);
        assert_eq!(candidate_grid(1, 3.0).unwrap(), vec![1.0]);
        assert!(candidate_grid(10, 1.0).is_err());
    }

    #[test]
    fn single_candidate_is_returned() {
        let task = small_task(8, 5);
        let flow = FlowPredictor::new(NtkDescriptor::full(2).unwrap(), &task).unwrap();
        let sel = cv_select_stopping(&flow, &[7.0], &task.x[..2], &task.y[..2], 5.0).unwrap();
        assert_eq!(sel.t_cv, 7.0);
    }

    #[test]
    fn ties_go_to_smallest_time() {
        let task = small_task(8, 6);
        let flow = FlowPredictor::new(NtkDescriptor::full(2).unwrap(), &task).unwrap();
        // with a tiny bound every candidate saturates to the same score
        let hy = vec![10.0; 3];
        let sel = cv_select_stopping(&flow, &[50.0, 5.0, 500.0], &task.x[..3], &hy, 1e-9).unwrap();
        assert_eq!(sel.t_cv, 5.0);
    }

    #[test]
    fn risk_trivial_cases() {
        let dist = SampleDistribution::new(DistributionKind::UniformCube { lo: -1.0, hi: 1.0 }, 2, 0);
        let f = |x: &[f64]| x[0] * x[1];
        assert_eq!(l2_risk(&f, &f, &dist, 100, 1).unwrap(), 0.0);
        let zero = |_: &[f64]| 0.0;
        let one = |_: &[f64]| 1.0;
        assert_eq!(l2_risk(&zero, &one, &dist, 100, 1).unwrap(), 1.0);
        let grid = vec![vec![0.0, 0.0], vec![0.5, 0.5]];
        assert_eq!(sup_risk(&f, &f, &grid), 0.0);
        assert_eq!(sup_risk(&zero, &one, &grid), 1.0);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1.0, 1000.0, 4);
        for (a, b) in g.iter().zip([1.0, 10.0, 100.0, 1000.0]) {
            assert!((a - b).abs() < 1e-9 * b);
        }
    }

    #[test]
    fn risk_curve_csv_header() {
        let task = small_task(6, 7);
        let flow = FlowPredictor::new(NtkDescriptor::full(2).unwrap(), &task).unwrap();
        let curve = risk_curve(&flow, &[1.0, 10.0], (&task.x, &task.y), Some(3.0), None).unwrap();
        let mut buf = Vec::new();
        write_risk_curve(&curve, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,train_residual,holdout_risk,l2_risk\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
