//! Closed-form neural tangent kernels of mirrored ReLU networks.
//!
//! With the arc-cosine kernels
//!
//! ```text
//! κ0(u) = (π - arccos u)/π,    κ1(u) = (sqrt(1-u²) + u(π - arccos u))/π,
//! ```
//!
//! the homogeneous NTK of an `L`-hidden-layer network on the sphere is
//! `K0(u) = Σ_{r=0}^{L} κ1^(r)(u) Π_{s=r}^{L-1} κ0(κ1^(s)(u))`, and on `R^d`
//! inputs are lifted to `x̃ = (x, 1)`:
//!
//! ```text
//! K(x, x') = |x̃| |x̃'| K0(<x̃, x̃'>/(|x̃||x̃'|)) + 1.
//! ```
//!
//! Gram matrices come back as [`KernelMatrix`], which caches its
//! eigendecomposition and records the smallest eigenvalue once checked.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Cosine arguments may drift this far past `±1` and are clamped.
pub const CLAMP_TOLERANCE: f64 = 1e-9;
/// Within this distance of `±1` the closed-form endpoint values are used.
pub const ENDPOINT_TOLERANCE: f64 = 1e-14;
/// Relative asymmetry accepted by [`KernelMatrix::from_matrix`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

fn clamp_cosine(u: f64) -> Result<f64> {
    if !u.is_finite() || u.abs() > 1.0 + CLAMP_TOLERANCE {
        return Err(Error::ArgumentOutOfRange(u));
    }
    Ok(u.clamp(-1.0, 1.0))
}

#[inline]
fn kappa0_unchecked(u: f64) -> f64 {
    if 1.0 - u.abs() < ENDPOINT_TOLERANCE {
        return if u > 0.0 { 1.0 } else { 0.0 };
    }
    (std::f64::consts::PI - u.acos()) / std::f64::consts::PI
}

#[inline]
fn kappa1_unchecked(u: f64) -> f64 {
    if 1.0 - u.abs() < ENDPOINT_TOLERANCE {
        return if u > 0.0 { 1.0 } else { 0.0 };
    }
    ((1.0 - u * u).sqrt() + u * (std::f64::consts::PI - u.acos())) / std::f64::consts::PI
}

/// Zeroth-order arc-cosine kernel.
pub fn kappa0(u: f64) -> Result<f64> {
    Ok(kappa0_unchecked(clamp_cosine(u)?))
}

/// First-order arc-cosine kernel.
pub fn kappa1(u: f64) -> Result<f64> {
    Ok(kappa1_unchecked(clamp_cosine(u)?))
}

/// `K0(u)` for `u` already in `[-1, 1]`.
fn profile_unchecked(layers: usize, u: f64) -> f64 {
    let mut k1 = Vec::with_capacity(layers + 1);
    k1.push(u);
    for s in 0..layers {
        k1.push(kappa1_unchecked(k1[s]));
    }
    // Π_{s=r}^{L-1} κ0(κ1^(s)), accumulated from the top layer down
    let mut prod = 1.0;
    let mut total = k1[layers];
    for r in (0..layers).rev() {
        prod *= kappa0_unchecked(k1[r]);
        total += k1[r] * prod;
    }
    total
}

/// Which form of the kernel a descriptor evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Kernel on `R^d` with input lift and norm scaling.
    Full,
    /// Dot-product kernel on the unit sphere.
    Homogeneous,
}

/// Activation of the underlying network. Only ReLU has a closed form here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
}

/// Describes one NTK: depth, variant and whether the output bias constant is added.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NtkDescriptor {
    layers: usize,
    include_bias_constant: bool,
    variant: Variant,
    activation: Activation,
}

impl NtkDescriptor {
    /// The full kernel `K` on `R^d`, including the `+1` bias term.
    pub fn full(layers: usize) -> Result<Self> {
        Self::build(layers, true, Variant::Full)
    }

    /// The full kernel without the constant term, `|x̃||x̃'| K0(ū)`.
    pub fn full_without_bias(layers: usize) -> Result<Self> {
        Self::build(layers, false, Variant::Full)
    }

    /// The dot-product kernel `K0` on `S^d`.
    pub fn homogeneous(layers: usize) -> Result<Self> {
        Self::build(layers, false, Variant::Homogeneous)
    }

    fn build(layers: usize, include_bias_constant: bool, variant: Variant) -> Result<Self> {
        if layers == 0 {
            return Err(Error::InvalidParameter("at least one hidden layer is required".into()));
        }
        Ok(NtkDescriptor { layers, include_bias_constant, variant, activation: Activation::Relu })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn includes_bias_constant(&self) -> bool {
        self.include_bias_constant
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Descriptor of the same depth in the other variant.
    pub fn as_homogeneous(&self) -> Self {
        NtkDescriptor { include_bias_constant: false, variant: Variant::Homogeneous, ..*self }
    }
}

/// Homogeneous profile `K0(u)`.
pub fn ntk_profile(desc: &NtkDescriptor, u: f64) -> Result<f64> {
    if desc.variant != Variant::Homogeneous {
        return Err(Error::VariantMismatch("profile needs the homogeneous variant"));
    }
    Ok(profile_unchecked(desc.layers, clamp_cosine(u)?))
}

/// An input lifted to the upper hemisphere: `x ↦ (x, 1)/|(x, 1)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedPoint {
    pub x: Vec<f64>,
    pub x_tilde: Vec<f64>,
    pub norm_tilde: f64,
    pub y: Vec<f64>,
}

impl LiftedPoint {
    pub fn new(x: &[f64]) -> Self {
        let mut x_tilde = x.to_vec();
        x_tilde.push(1.0);
        let norm_tilde = dot(&x_tilde, &x_tilde).sqrt();
        let y = x_tilde.iter().map(|v| v / norm_tilde).collect();
        LiftedPoint { x: x.to_vec(), x_tilde, norm_tilde, y }
    }

    /// `ū = <x̃, x̃'>/(|x̃||x̃'|)`, clamped to `[-1, 1]`.
    pub fn cosine(&self, other: &LiftedPoint) -> f64 {
        dot(&self.y, &other.y).clamp(-1.0, 1.0)
    }
}

/// The lift `Φ(x) = x̃/|x̃|` as a plain vector.
pub fn sphere_lift(x: &[f64]) -> Vec<f64> {
    LiftedPoint::new(x).y
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn full_from_lifted(desc: &NtkDescriptor, a: &LiftedPoint, b: &LiftedPoint) -> f64 {
    let bias = if desc.include_bias_constant { 1.0 } else { 0.0 };
    a.norm_tilde * b.norm_tilde * profile_unchecked(desc.layers, a.cosine(b)) + bias
}

/// `K(x, x')` for the full variant.
pub fn ntk_eval(desc: &NtkDescriptor, x: &[f64], x_prime: &[f64]) -> Result<f64> {
    if desc.variant != Variant::Full {
        return Err(Error::VariantMismatch("evaluation on R^d needs the full variant"));
    }
    if x.len() != x_prime.len() {
        return Err(Error::InvalidParameter(format!("dimension mismatch: {} vs {}", x.len(), x_prime.len())));
    }
    Ok(full_from_lifted(desc, &LiftedPoint::new(x), &LiftedPoint::new(x_prime)))
}

/// A symmetric kernel function on `R^d`.
pub trait Kernel {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64;

    /// Gram matrix; the default evaluates both triangles and averages them.
    fn gram_matrix(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let n = points.len();
        let raw = DMatrix::from_fn(n, n, |i, j| self.eval(&points[i], &points[j]));
        (&raw + raw.transpose()) * 0.5
    }
}

impl<F: Fn(&[f64], &[f64]) -> f64> Kernel for F {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self(x, y)
    }
}

impl Kernel for NtkDescriptor {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.variant {
            Variant::Full => full_from_lifted(self, &LiftedPoint::new(x), &LiftedPoint::new(y)),
            Variant::Homogeneous => profile_unchecked(self.layers, dot(x, y).clamp(-1.0, 1.0)),
        }
    }

    fn gram_matrix(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let n = points.len();
        let mut m = DMatrix::zeros(n, n);
        match self.variant {
            Variant::Full => {
                let lifted: Vec<LiftedPoint> = points.iter().map(|p| LiftedPoint::new(p)).collect();
                for j in 0..n {
                    for i in 0..=j {
                        let v = full_from_lifted(self, &lifted[i], &lifted[j]);
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                    }
                }
            }
            Variant::Homogeneous => {
                for j in 0..n {
                    for i in 0..=j {
                        let v = profile_unchecked(self.layers, dot(&points[i], &points[j]).clamp(-1.0, 1.0));
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                    }
                }
            }
        }
        m
    }
}

/// `(ρ ⊙ k)(x, x') = ρ(x) k(x, x') ρ(x')`.
#[derive(Debug, Clone)]
pub struct ScaledKernel<K, R> {
    pub inner: K,
    pub rho: R,
}

impl<K: Kernel, R: Fn(&[f64]) -> f64> Kernel for ScaledKernel<K, R> {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        (self.rho)(x) * self.inner.eval(x, y) * (self.rho)(y)
    }
}

pub fn scaled_kernel<K: Kernel, R: Fn(&[f64]) -> f64>(inner: K, rho: R) -> ScaledKernel<K, R> {
    ScaledKernel { inner, rho }
}

/// `(φ* k)(x, x') = k(φ(x), φ(x'))`.
#[derive(Debug, Clone)]
pub struct PullbackKernel<K, P> {
    pub inner: K,
    pub map: P,
}

impl<K: Kernel, P: Fn(&[f64]) -> Vec<f64>> Kernel for PullbackKernel<K, P> {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.inner.eval(&(self.map)(x), &(self.map)(y))
    }
}

pub fn pullback_kernel<K: Kernel, P: Fn(&[f64]) -> Vec<f64>>(inner: K, map: P) -> PullbackKernel<K, P> {
    PullbackKernel { inner, map }
}

/// `k1 + k2`.
#[derive(Debug, Clone)]
pub struct SumKernel<A, B>(pub A, pub B);

impl<A: Kernel, B: Kernel> Kernel for SumKernel<A, B> {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.0.eval(x, y) + self.1.eval(x, y)
    }
}

/// The constant kernel.
#[derive(Debug, Clone, Copy)]
pub struct ConstantKernel(pub f64);

impl Kernel for ConstantKernel {
    fn eval(&self, _: &[f64], _: &[f64]) -> f64 {
        self.0
    }
}

/// Eigenvalues (descending) and matching orthonormal eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// A symmetric Gram matrix with cached spectral data.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    entries: DMatrix<f64>,
    eigen: Option<Eigen>,
    lambda_min: Option<f64>,
}

impl KernelMatrix {
    /// Wraps a square matrix, rejecting asymmetry beyond [`SYMMETRY_TOLERANCE`].
    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::InvalidParameter("Gram matrix must be square".into()));
        }
        let scale = entries.amax().max(f64::MIN_POSITIVE);
        if (&entries - entries.transpose()).amax() > SYMMETRY_TOLERANCE * scale {
            return Err(Error::InvalidParameter("Gram matrix is not symmetric".into()));
        }
        let entries = (&entries + entries.transpose()) * 0.5;
        Ok(KernelMatrix { entries, eigen: None, lambda_min: None })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    /// Eigenvalues in descending order; no eigenvectors are formed unless cached.
    pub fn eigenvalues(&self) -> Vec<f64> {
        if let Some(e) = &self.eigen {
            return e.values.iter().copied().collect();
        }
        let mut v: Vec<f64> = self.entries.clone().symmetric_eigenvalues().iter().copied().collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    /// Full eigendecomposition, computed once.
    pub fn eigen(&mut self) -> Result<&Eigen> {
        if self.eigen.is_none() {
            let n = self.n();
            let se = nalgebra::SymmetricEigen::try_new(self.entries.clone(), f64::EPSILON, 0)
                .ok_or(Error::EigenFailure)?;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| se.eigenvalues[b].total_cmp(&se.eigenvalues[a]));
            let values = DVector::from_iterator(n, order.iter().map(|&i| se.eigenvalues[i]));
            let mut vectors = DMatrix::zeros(n, n);
            for (k, &i) in order.iter().enumerate() {
                vectors.set_column(k, &se.eigenvectors.column(i));
            }
            self.lambda_min = values.iter().last().copied();
            self.eigen = Some(Eigen { values, vectors });
        }
        Ok(self.eigen.as_ref().expect("just computed"))
    }

    /// Records and returns `λ_min`, failing if it is not positive.
    pub fn check_positive_definite(&mut self) -> Result<f64> {
        let lmin = match self.lambda_min {
            Some(v) => v,
            None => {
                let v = *self.eigenvalues().last().expect("non-empty matrix");
                self.lambda_min = Some(v);
                v
            }
        };
        if lmin > 0.0 {
            Ok(lmin)
        } else {
            Err(Error::NotPositiveDefinite(lmin))
        }
    }

    pub fn lambda_min(&self) -> Option<f64> {
        self.lambda_min
    }

    /// Row-major CSV preceded by a `# d=.. L=.. n=.. seed=..` header line.
    pub fn write_csv<W: Write>(&self, mut w: W, d: usize, layers: usize, seed: u64) -> std::io::Result<()> {
        writeln!(w, "# d={d} L={layers} n={} seed={seed}", self.n())?;
        for i in 0..self.n() {
            let row: Vec<String> = self.entries.row(i).iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Gram matrix of a kernel on a point set.
pub fn gram<K: Kernel>(kernel: &K, points: &[Vec<f64>]) -> Result<KernelMatrix> {
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    KernelMatrix::from_matrix(kernel.gram_matrix(points))
}
