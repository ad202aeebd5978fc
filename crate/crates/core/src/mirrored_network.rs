//! A finite-width mirrored ReLU network and its lazy-regime diagnostics.
//!
//! Two copies ("parities") of an `L`-hidden-layer ReLU network share their
//! initial weights and are subtracted at the output:
//!
//! ```text
//! α^(0)   = x̃ = (x, 1)
//! α^(l)   = sqrt(2/m_l) · relu(W^(l-1) α^(l-1)),   l = 1..L
//! g^(p)   = W^(L) α^(L) + b
//! f(x)    = (√2/2) (g^(1)(x) - g^(2)(x))
//! ```
//!
//! so the output is exactly zero at initialization. Trained by full-batch
//! gradient descent on `(1/2n) Σ (f(x_i) - y_i)²`, the tangent kernel stays
//! close to the closed-form NTK when the width is large.

use std::f64::consts::FRAC_1_SQRT_2;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernel_flow::{FlowPredictor, Predictor, RegressionTask, Target};
use crate::ntk_kernels::{ntk_eval, NtkDescriptor};
use crate::rng::substream;
use crate::spectral_estimator::{sample_with, DistributionKind, SampleDistribution};

/// Steps over which the divergence detector compares residuals.
pub const DIVERGENCE_WINDOW: usize = 100;
/// Residual growth factor over `DIVERGENCE_WINDOW` steps that aborts training.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
/// Largest number of probes in a default grid.
pub const MAX_PROBES: usize = 625;

/// All weights of the mirrored network plus a copy of the initial ones.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    d: usize,
    widths: Vec<usize>,
    seed: u64,
    /// `weights[p][l]` is `W^(l,p)`, of shape `m_{l+1} × m_l`.
    weights: [Vec<DMatrix<f64>>; 2],
    bias: [f64; 2],
    init_weights: [Vec<DMatrix<f64>>; 2],
    init_bias: [f64; 2],
}

/// Per-layer quantities of one forward pass over a batch (one column per input).
#[derive(Debug, Clone)]
pub struct Activations {
    /// `α^(0..=L)`
    pub alphas: Vec<DMatrix<f64>>,
    /// Activation patterns `1{z^(l) > 0}` for `l = 1..=L`.
    pub patterns: Vec<DMatrix<f64>>,
    /// `g^(p)` per input.
    pub output: Vec<f64>,
}

fn lift_batch(xs: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
    if let Some(bad) = xs.iter().find(|x| x.len() != d) {
        return Err(Error::InvalidParameter(format!("expected {d}-dimensional input, got {}", bad.len())));
    }
    Ok(DMatrix::from_fn(d + 1, xs.len(), |i, j| if i < d { xs[j][i] } else { 1.0 }))
}

// Products of a wide weight matrix with a thin batch matrix. A general GEMM
// repacks the wide operand on every call; these stream it once, column by column.

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

/// `W a`
fn thin_mul(w: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, k) = w.shape();
    let n = a.ncols();
    let mut z = DMatrix::zeros(m, n);
    let zs = z.as_mut_slice();
    for (j, col) in w.as_slice().chunks_exact(m).enumerate().take(k) {
        for b in 0..n {
            let s = a[(j, b)];
            if s != 0.0 {
                axpy(&mut zs[b * m..(b + 1) * m], s, col);
            }
        }
    }
    z
}

/// `Wᵀ d`
fn thin_tr_mul(w: &DMatrix<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
    let m = w.nrows();
    let n = d.ncols();
    let mut out = DMatrix::zeros(w.ncols(), n);
    let ds = d.as_slice();
    for (j, col) in w.as_slice().chunks_exact(m).enumerate() {
        for b in 0..n {
            out[(j, b)] = dot(col, &ds[b * m..(b + 1) * m]);
        }
    }
    out
}

/// `W += c · d aᵀ`
fn thin_rank_update(w: &mut DMatrix<f64>, c: f64, d: &DMatrix<f64>, a: &DMatrix<f64>) {
    let m = w.nrows();
    let n = d.ncols();
    let ds = d.as_slice();
    for (j, col) in w.as_mut_slice().chunks_exact_mut(m).enumerate() {
        for b in 0..n {
            let s = c * a[(j, b)];
            if s != 0.0 {
                axpy(col, s, &ds[b * m..(b + 1) * m]);
            }
        }
    }
}

impl NetworkState {
    /// Parity-1 weights and bias i.i.d. `N(0, 1)`; parity 2 copies them.
    pub fn init(d: usize, widths: &[usize], seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::InvalidParameter("need at least one hidden layer with positive width".into()));
        }
        let mut rng = substream(seed, "network-init", 0);
        let mut dims = vec![d + 1];
        dims.extend_from_slice(widths);
        dims.push(1);
        let w1: Vec<DMatrix<f64>> = dims
            .windows(2)
            .map(|w| DMatrix::from_fn(w[1], w[0], |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let b: f64 = rng.sample(StandardNormal);
        let weights = [w1.clone(), w1];
        Ok(NetworkState {
            d,
            widths: widths.to_vec(),
            seed,
            init_weights: weights.clone(),
            weights,
            bias: [b, b],
            init_bias: [b, b],
        })
    }

    /// Equal widths `m` in all `layers` hidden layers.
    pub fn init_uniform(d: usize, layers: usize, m: usize, seed: u64) -> Result<Self> {
        Self::init(d, &vec![m; layers], seed)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn layers(&self) -> usize {
        self.widths.len()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `W^(l,p)` with parity `p ∈ {0, 1}`.
    pub fn weight(&self, layer: usize, parity: usize) -> &DMatrix<f64> {
        &self.weights[parity][layer]
    }

    pub fn weight_mut(&mut self, layer: usize, parity: usize) -> &mut DMatrix<f64> {
        &mut self.weights[parity][layer]
    }

    pub fn bias(&self, parity: usize) -> f64 {
        self.bias[parity]
    }

    pub fn bias_mut(&mut self, parity: usize) -> &mut f64 {
        &mut self.bias[parity]
    }

    /// Forward pass of one parity over a batch.
    pub fn activations(&self, xs: &[Vec<f64>], parity: usize) -> Result<Activations> {
        let mut alpha = lift_batch(xs, self.d)?;
        let mut alphas = Vec::with_capacity(self.layers() + 1);
        let mut patterns = Vec::with_capacity(self.layers());
        let w = &self.weights[parity];
        for (l, &m) in self.widths.iter().enumerate() {
            let z = thin_mul(&w[l], &alpha);
            let scale = (2.0 / m as f64).sqrt();
            patterns.push(z.map(|v| if v > 0.0 { 1.0 } else { 0.0 }));
            alphas.push(alpha);
            alpha = z.map(|v| scale * v.max(0.0));
        }
        let g = thin_mul(&w[self.layers()], &alpha);
        alphas.push(alpha);
        let output = g.iter().map(|v| v + self.bias[parity]).collect();
        Ok(Activations { alphas, patterns, output })
    }

    /// Backpropagated `δ^(l+1)` for `l = 0..=L`, so that
    /// `∂g/∂W^(l) = δ^(l+1) α^(l)ᵀ` column by column.
    fn deltas(&self, acts: &Activations, parity: usize) -> Vec<DMatrix<f64>> {
        let layers = self.layers();
        let n = acts.output.len();
        let mut out = vec![DMatrix::zeros(0, 0); layers + 1];
        out[layers] = DMatrix::from_element(1, n, 1.0);
        for l in (1..=layers).rev() {
            let scale = (2.0 / self.widths[l - 1] as f64).sqrt();
            let back = thin_tr_mul(&self.weights[parity][l], &out[l]);
            out[l - 1] = back.component_mul(&acts.patterns[l - 1]) * scale;
        }
        out
    }

    /// `f(x)` for each input.
    pub fn forward_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let g1 = self.activations(xs, 0)?.output;
        let g2 = self.activations(xs, 1)?.output;
        Ok(g1.iter().zip(&g2).map(|(a, b)| FRAC_1_SQRT_2 * (a - b)).collect())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward_batch(std::slice::from_ref(&x.to_vec()))?[0])
    }

    /// Per-parity tangent kernels `K^(p)(a_i, b_j) = ⟨∇g^(p)(a_i), ∇g^(p)(b_j)⟩`.
    pub fn parity_kernels(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<[DMatrix<f64>; 2]> {
        let mut out = [DMatrix::zeros(a.len(), b.len()), DMatrix::zeros(a.len(), b.len())];
        for (p, k) in out.iter_mut().enumerate() {
            let aa = self.activations(a, p)?;
            let ad = self.deltas(&aa, p);
            let ba = self.activations(b, p)?;
            let bd = self.deltas(&ba, p);
            k.fill(1.0);
            for l in 0..=self.layers() {
                let dd = ad[l].tr_mul(&bd[l]);
                let al = aa.alphas[l].tr_mul(&ba.alphas[l]);
                *k += dd.component_mul(&al);
            }
        }
        Ok(out)
    }

    /// `K_t(a_i, b_j) = ⟨∇_θ f(a_i), ∇_θ f(b_j)⟩ = (K^(1) + K^(2)) / 2`.
    pub fn tangent_kernel_matrix(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let [k1, k2] = self.parity_kernels(a, b)?;
        Ok((k1 + k2) * 0.5)
    }

    pub fn tangent_kernel(&self, x: &[f64], x_prime: &[f64]) -> Result<f64> {
        Ok(self.tangent_kernel_matrix(&[x.to_vec()], &[x_prime.to_vec()])?[(0, 0)])
    }

    /// Number of trainable parameters in both parities.
    pub fn num_parameters(&self) -> usize {
        2 * (self.weights[0].iter().map(|w| w.len()).sum::<usize>() + 1)
    }

    /// Parameters flattened as parity 1 weights (layer order, column-major), its
    /// bias, then the same for parity 2.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for p in 0..2 {
            for w in &self.weights[p] {
                out.extend_from_slice(w.as_slice());
            }
            out.push(self.bias[p]);
        }
        out
    }

    pub fn set_parameters(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.num_parameters() {
            return Err(Error::InvalidParameter(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                theta.len()
            )));
        }
        let mut k = 0;
        for p in 0..2 {
            for w in &mut self.weights[p] {
                let len = w.len();
                w.as_mut_slice().copy_from_slice(&theta[k..k + len]);
                k += len;
            }
            self.bias[p] = theta[k];
            k += 1;
        }
        Ok(())
    }

    /// `∇_θ f(x)` in the layout of [`NetworkState::parameters`].
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let xs = [x.to_vec()];
        let mut out = Vec::with_capacity(self.num_parameters());
        for p in 0..2 {
            let sign = if p == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            let acts = self.activations(&xs, p)?;
            let deltas = self.deltas(&acts, p);
            for l in 0..=self.layers() {
                let g = &deltas[l] * acts.alphas[l].transpose() * sign;
                out.extend_from_slice(g.as_slice());
            }
            out.push(sign);
        }
        Ok(out)
    }

    /// Largest per-layer Frobenius drift `max_p ‖W^(l,p) - W^(l,p)_0‖_F`, for each `l`.
    pub fn layer_drifts(&self) -> Vec<f64> {
        (0..=self.layers())
            .map(|l| {
                (0..2).map(|p| (&self.weights[p][l] - &self.init_weights[p][l]).norm()).fold(0.0, f64::max)
            })
            .collect()
    }

    /// One explicit Euler step of `θ' = -(1/n) Σ_i (f(x_i) - y_i) ∇f(x_i)`.
    /// Returns the residual vector before the step.
    fn gradient_step(&mut self, x: &[Vec<f64>], y: &[f64], eta: f64) -> Result<Vec<f64>> {
        let n = x.len() as f64;
        let acts = [self.activations(x, 0)?, self.activations(x, 1)?];
        let r: Vec<f64> =
            (0..x.len()).map(|i| FRAC_1_SQRT_2 * (acts[0].output[i] - acts[1].output[i]) - y[i]).collect();
        let rv = DVector::from_column_slice(&r);
        for (p, acts) in acts.iter().enumerate() {
            let sign = if p == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            let deltas = self.deltas(acts, p);
            let coef = -eta / n * sign;
            for l in 0..=self.layers() {
                let mut weighted = deltas[l].clone();
                for (j, mut col) in weighted.column_iter_mut().enumerate() {
                    col *= rv[j];
                }
                thin_rank_update(&mut self.weights[p][l], coef, &weighted, &acts.alphas[l]);
            }
            self.bias[p] += coef * rv.sum();
        }
        Ok(r)
    }

    /// `n / (2 λ_max(K_0(X, X)))`, a conservative Euler step size.
    pub fn recommended_step_size(&self, x: &[Vec<f64>]) -> Result<f64> {
        let k = self.tangent_kernel_matrix(x, x)?;
        let lmax = nalgebra::SymmetricEigen::new(k).eigenvalues.max();
        Ok(x.len() as f64 / (2.0 * lmax))
    }

    /// Writes a plain-text checkpoint: a header line, then one block per weight
    /// matrix with its values in row-major order.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let widths: Vec<String> = self.widths.iter().map(|m| m.to_string()).collect();
        writeln!(w, "ntk-spectra-network d={} L={} widths={} seed={}", self.d, self.layers(), widths.join(","), self.seed)?;
        for (label, weights, bias) in
            [("current", &self.weights, &self.bias), ("init", &self.init_weights, &self.init_bias)]
        {
            for p in 0..2 {
                for (l, m) in weights[p].iter().enumerate() {
                    writeln!(w, "W {label} {l} {} {} {}", p + 1, m.nrows(), m.ncols())?;
                    for row in m.row_iter() {
                        let vals: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                        writeln!(w, "{}", vals.join(" "))?;
                    }
                }
                writeln!(w, "b {label} {} {:e}", p + 1, bias[p])?;
            }
        }
        Ok(())
    }

    /// Reads a checkpoint produced by [`NetworkState::write_checkpoint`].
    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().map(|l| l.map_err(|e| Error::Parse(e.to_string())));
        let header = lines.next().ok_or_else(|| Error::Parse("empty checkpoint".into()))??;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("ntk-spectra-network") {
            return Err(Error::Parse("missing checkpoint header".into()));
        }
        let mut d = None;
        let mut widths = None;
        let mut seed = None;
        for f in fields {
            let (k, v) = f.split_once('=').ok_or_else(|| Error::Parse(format!("bad header field '{f}'")))?;
            let bad = |_| Error::Parse(format!("bad value in '{f}'"));
            match k {
                "d" => d = Some(v.parse::<usize>().map_err(bad)?),
                "L" => {}
                "widths" => {
                    widths = Some(v.split(',').map(|s| s.parse::<usize>()).collect::<std::result::Result<Vec<_>, _>>().map_err(bad)?)
                }
                "seed" => seed = Some(v.parse::<u64>().map_err(bad)?),
                _ => return Err(Error::Parse(format!("unknown header field '{k}'"))),
            }
        }
        let (Some(d), Some(widths), Some(seed)) = (d, widths, seed) else {
            return Err(Error::Parse("incomplete checkpoint header".into()));
        };
        let mut state = NetworkState::init(d, &widths, seed)?;
        let parse_f = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number '{s}'")));
        while let Some(line) = lines.next() {
            let line = line?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                [] => continue,
                ["W", label, l, p, rows, cols] => {
                    let l: usize = l.parse().map_err(|_| Error::Parse(line.clone()))?;
                    let p: usize = p.parse::<usize>().map_err(|_| Error::Parse(line.clone()))?;
                    let rows: usize = rows.parse().map_err(|_| Error::Parse(line.clone()))?;
                    let cols: usize = cols.parse().map_err(|_| Error::Parse(line.clone()))?;
                    if !(1..=2).contains(&p) || l > widths.len() {
                        return Err(Error::Parse(format!("block out of range: {line}")));
                    }
                    let target = match *label {
                        "current" => &mut state.weights[p - 1][l],
                        "init" => &mut state.init_weights[p - 1][l],
                        _ => return Err(Error::Parse(format!("unknown block label in {line}"))),
                    };
                    if target.shape() != (rows, cols) {
                        return Err(Error::Parse(format!("shape mismatch in {line}")));
                    }
                    for i in 0..rows {
                        let row = lines.next().ok_or_else(|| Error::Parse("truncated weight block".into()))??;
                        let vals: Vec<f64> = row.split_whitespace().map(parse_f).collect::<Result<_>>()?;
                        if vals.len() != cols {
                            return Err(Error::Parse(format!("row {i} of {line} has {} values", vals.len())));
                        }
                        for (j, v) in vals.into_iter().enumerate() {
                            target[(i, j)] = v;
                        }
                    }
                }
                ["b", label, p, v] => {
                    let p: usize = p.parse().map_err(|_| Error::Parse(line.clone()))?;
                    if !(1..=2).contains(&p) {
                        return Err(Error::Parse(format!("bad parity in {line}")));
                    }
                    let v = parse_f(v)?;
                    match *label {
                        "current" => state.bias[p - 1] = v,
                        "init" => state.init_bias[p - 1] = v,
                        _ => return Err(Error::Parse(format!("unknown block label in {line}"))),
                    }
                }
                _ => return Err(Error::Parse(format!("unexpected line '{line}'"))),
            }
        }
        Ok(state)
    }
}

/// Tensor grid with `per_axis^d` points in `[-1, 1]^d`, the per-axis count
/// reduced until the grid has at most `cap` points.
pub fn probe_grid(d: usize, per_axis: usize, cap: usize) -> Vec<Vec<f64>> {
    let mut k = per_axis.max(2);
    while k > 2 && (k as f64).powi(d as i32) > cap as f64 {
        k -= 1;
    }
    let axis: Vec<f64> = (0..k).map(|i| -1.0 + 2.0 * i as f64 / (k - 1) as f64).collect();
    let mut out = vec![Vec::new()];
    for _ in 0..d {
        out = out.into_iter().flat_map(|p| axis.iter().map(move |&a| [p.clone(), vec![a]].concat())).collect();
    }
    out
}

/// What to record while training.
pub struct ProbeConfig<'a> {
    pub grid: Vec<Vec<f64>>,
    /// Record every this many steps (and at the final step).
    pub log_every: usize,
    /// Reference kernel for `sup |K_t - K^NT|` over probe pairs.
    pub ntk: Option<NtkDescriptor>,
    /// Reference flow for `sup |f_t^NN - f_t^NTK|` over the probes.
    pub flow: Option<&'a FlowPredictor<NtkDescriptor>>,
}

/// Training diagnostics at the logged times.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub times: Vec<f64>,
    pub train_residuals: Vec<f64>,
    /// `weight_drifts[k][l]`: largest `‖W^(l,p)_t - W^(l,p)_0‖_F` over parities.
    pub weight_drifts: Vec<Vec<f64>>,
    pub kernel_gaps: Option<Vec<f64>>,
    pub predictor_gaps: Option<Vec<f64>>,
    /// Network outputs on the probe grid at each logged time.
    pub probe_outputs: Vec<Vec<f64>>,
    /// Residual norm before every step, plus after the last one.
    pub step_residuals: Vec<f64>,
}

impl TrainTrace {
    /// Writes `t,residual,drift_l0..drift_lL,kernel_gap,predictor_gap`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let layers = self.weight_drifts.first().map_or(0, Vec::len);
        let drift_cols: Vec<String> = (0..layers).map(|l| format!("drift_l{l}")).collect();
        writeln!(w, "t,residual,{},kernel_gap,predictor_gap", drift_cols.join(","))?;
        for k in 0..self.times.len() {
            let drifts: Vec<String> = self.weight_drifts[k].iter().map(|v| format!("{v:e}")).collect();
            let kg = self.kernel_gaps.as_ref().map_or(f64::NAN, |g| g[k]);
            let pg = self.predictor_gaps.as_ref().map_or(f64::NAN, |g| g[k]);
            writeln!(w, "{:e},{:e},{},{:e},{:e}", self.times[k], self.train_residuals[k], drifts.join(","), kg, pg)?;
        }
        Ok(())
    }
}

fn kernel_gap(state: &NetworkState, grid: &[Vec<f64>], reference: &DMatrix<f64>) -> Result<f64> {
    let kt = state.tangent_kernel_matrix(grid, grid)?;
    Ok((kt - reference).abs().max())
}

/// Full-batch gradient descent for `steps` steps of size `eta`, so that step
/// `k` sits at time `t = k·eta` on the flow clock.
pub fn train(
    state: &mut NetworkState,
    task: &RegressionTask,
    eta: f64,
    steps: usize,
    probes: &ProbeConfig<'_>,
) -> Result<TrainTrace> {
    if !(eta > 0.0) {
        return Err(Error::InvalidParameter(format!("step size must be positive, got {eta}")));
    }
    if probes.log_every == 0 {
        return Err(Error::InvalidParameter("log interval must be positive".into()));
    }
    let ntk_ref = match &probes.ntk {
        Some(desc) => Some(DMatrix::from_fn(probes.grid.len(), probes.grid.len(), |i, j| {
            ntk_eval(desc, &probes.grid[i], &probes.grid[j]).unwrap_or(f64::NAN)
        })),
        None => None,
    };
    let mut trace = TrainTrace {
        times: Vec::new(),
        train_residuals: Vec::new(),
        weight_drifts: Vec::new(),
        kernel_gaps: ntk_ref.as_ref().map(|_| Vec::new()),
        predictor_gaps: probes.flow.map(|_| Vec::new()),
        probe_outputs: Vec::new(),
        step_residuals: Vec::with_capacity(steps + 1),
    };
    let y = DVector::from_column_slice(&task.y);
    let log = |state: &NetworkState, k: usize, residual: f64, trace: &mut TrainTrace| -> Result<()> {
        let t = k as f64 * eta;
        trace.times.push(t);
        trace.train_residuals.push(residual);
        trace.weight_drifts.push(state.layer_drifts());
        let outputs = if probes.grid.is_empty() { Vec::new() } else { state.forward_batch(&probes.grid)? };
        if let (Some(gaps), Some(r)) = (trace.kernel_gaps.as_mut(), ntk_ref.as_ref()) {
            gaps.push(kernel_gap(state, &probes.grid, r)?);
        }
        if let (Some(gaps), Some(flow)) = (trace.predictor_gaps.as_mut(), probes.flow) {
            let at = flow.at(t)?;
            gaps.push(outputs.iter().zip(&probes.grid).map(|(o, x)| (o - at.predict(x)).abs()).fold(0.0, f64::max));
        }
        trace.probe_outputs.push(outputs);
        Ok(())
    };
    let check = |k: usize, residual: f64, history: &[f64]| -> Result<()> {
        if !residual.is_finite() {
            return Err(Error::Diverged { step: k, residual, previous: history.last().copied().unwrap_or(f64::NAN) });
        }
        if k >= DIVERGENCE_WINDOW {
            let previous = history[k - DIVERGENCE_WINDOW];
            if residual > DIVERGENCE_FACTOR * previous {
                return Err(Error::Diverged { step: k, residual, previous });
            }
        }
        Ok(())
    };
    for k in 0..=steps {
        if k % probes.log_every == 0 || k == steps {
            let f = DVector::from_vec(state.forward_batch(&task.x)?);
            let residual = (f - &y).norm();
            check(k, residual, &trace.step_residuals)?;
            log(state, k, residual, &mut trace)?;
        }
        if k == steps {
            let last = *trace.train_residuals.last().expect("final state logged");
            trace.step_residuals.push(last);
            break;
        }
        let residual = DVector::from_vec(state.gradient_step(&task.x, &task.y, eta)?).norm();
        check(k, residual, &trace.step_residuals)?;
        trace.step_residuals.push(residual);
    }
    Ok(trace)
}

/// `max |f^NN_t(z) - f^NTK_t(z)|` over the probe grid and the requested times.
pub fn uniform_gap(
    trace: &TrainTrace,
    flow: &FlowPredictor<NtkDescriptor>,
    grid: &[Vec<f64>],
    times: &[f64],
) -> Result<f64> {
    let mut gap: f64 = 0.0;
    for &t in times {
        let k = trace
            .times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
            .ok_or_else(|| Error::TimeMisaligned(format!("time {t} was not logged")))?;
        let outputs = &trace.probe_outputs[k];
        if outputs.len() != grid.len() {
            return Err(Error::TimeMisaligned(format!(
                "trace holds {} probe outputs but the grid has {} points",
                outputs.len(),
                grid.len()
            )));
        }
        let at = flow.at(t)?;
        for (o, x) in outputs.iter().zip(grid) {
            gap = gap.max((o - at.predict(x)).abs());
        }
    }
    Ok(gap)
}

/// Settings of the width sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct LazyConfig {
    pub d: usize,
    pub layers: usize,
    pub n: usize,
    pub eta: f64,
    pub steps: usize,
    pub log_every: usize,
    pub widths: Vec<usize>,
    pub seeds: usize,
    pub root_seed: u64,
}

impl Default for LazyConfig {
    fn default() -> Self {
        LazyConfig {
            d: 2,
            layers: 2,
            n: 5,
            eta: 0.05,
            steps: 200,
            log_every: 20,
            widths: vec![256, 1024, 4096],
            seeds: 5,
            root_seed: 0,
        }
    }
}

/// Diagnostics of one `(width, seed)` run.
#[derive(Debug, Clone, PartialEq)]
pub struct LazyRow {
    pub width: usize,
    pub seed_index: usize,
    /// `sup |K_0 - K^NT|` over probe pairs at initialization.
    pub kernel_gap_init: f64,
    /// `sup |K_t - K^NT|` at the final time.
    pub kernel_gap_final: f64,
    /// `sup |f^NN_t - f^NTK_t|` over probes and logged times.
    pub predictor_gap: f64,
    /// Largest per-layer drift over logged times, divided by `m^{1/4}`.
    pub scaled_drift: f64,
    pub final_residual: f64,
}

/// Task used by the width sweep for one seed: `y = sin(3x_0) + x_1` (or
/// `sin(3x_0)` in one dimension) at uniform inputs in `[-1, 1]^d`.
pub fn lazy_task(config: &LazyConfig, seed_index: usize) -> Result<RegressionTask> {
    let f: Target = std::sync::Arc::new(|x: &[f64]| (3.0 * x[0]).sin() + x.get(1).copied().unwrap_or(0.0));
    let dist = SampleDistribution::new(DistributionKind::UniformCube { lo: -1.0, hi: 1.0 }, config.d, config.root_seed);
    let mut rng = substream(config.root_seed, "lazy/task", seed_index as u64);
    let x = sample_with(&dist, config.n, &mut rng)?;
    let y = x.iter().map(|p| f(p)).collect();
    Ok(RegressionTask::new(x, y)?.with_truth(f, 0.0))
}

/// Trains one network of width `m` on the seed's task and compares it with the
/// kernel flow on the same data.
pub fn lazy_run(config: &LazyConfig, width: usize, seed_index: usize) -> Result<LazyRow> {
    let task = lazy_task(config, seed_index)?;
    let desc = NtkDescriptor::full(config.layers)?;
    let flow = FlowPredictor::new(desc, &task)?;
    let grid = probe_grid(config.d, 5, MAX_PROBES);
    let net_seed = crate::rng::substream_seed(config.root_seed, &format!("lazy/net/{width}"), seed_index as u64);
    let mut state = NetworkState::init_uniform(config.d, config.layers, width, net_seed)?;
    let probes = ProbeConfig { grid: grid.clone(), log_every: config.log_every, ntk: Some(desc), flow: Some(&flow) };
    let trace = train(&mut state, &task, config.eta, config.steps, &probes)?;
    let kernel_gaps = trace.kernel_gaps.as_ref().expect("kernel gaps requested");
    let predictor_gap = uniform_gap(&trace, &flow, &grid, &trace.times)?;
    let quarter = (width as f64).powf(0.25);
    let scaled_drift = trace.weight_drifts.iter().flatten().fold(0.0, |a: f64, &b| a.max(b)) / quarter;
    Ok(LazyRow {
        width,
        seed_index,
        kernel_gap_init: kernel_gaps[0],
        kernel_gap_final: *kernel_gaps.last().expect("at least one log"),
        predictor_gap,
        scaled_drift,
        final_residual: *trace.train_residuals.last().expect("at least one log"),
    })
}

/// Writes width-sweep rows as CSV.
pub fn write_lazy_rows<W: Write>(rows: &[LazyRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "m,seed,kernel_gap_init,kernel_gap_final,predictor_gap,scaled_drift,final_residual")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:e},{:e},{:e},{:e},{:e}",
            r.width, r.seed_index, r.kernel_gap_init, r.kernel_gap_final, r.predictor_gap, r.scaled_drift, r.final_residual
        )?;
    }
    Ok(())
}
