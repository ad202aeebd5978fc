//! Empirical eigenvalue-decay estimation.
//!
//! The integral operator of a kernel under a sampling measure is approximated
//! by the Gram matrix of `n` i.i.d. draws scaled by `1/n`. Its eigenvalues are
//! fitted by `ln λ_i = -r ln i + b` over an index window that skips the head of
//! the spectrum and stays well below `n`.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::loglog::fit_loglog;
use crate::ntk_kernels::{gram, Kernel, NtkDescriptor, Variant};
use crate::rng::substream;

/// Eigenvalues at or below this fraction of the trace are treated as noise.
pub const NOISE_FLOOR: f64 = 1e-10;

/// Default fit window (1-based, inclusive).
pub const DEFAULT_WINDOW: (usize, usize) = (50, 200);

/// Shape of a sampling distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistributionKind {
    /// Coordinates i.i.d. uniform on `[lo, hi]`.
    UniformCube { lo: f64, hi: f64 },
    /// Uniform on `S^d ⊂ R^{d+1}`.
    UniformSphere,
    /// Coordinates i.i.d. with density `1 - |x|` on `[-1, 1]`.
    Triangular,
    /// Coordinates i.i.d. standard normal, redrawn outside `(-limit, limit)`.
    ClippedNormal { limit: f64 },
    /// Uniform on the cap `{y ∈ S^d : angle(y, e_{d+1}) <= angle}`.
    SphereCap { angle: f64 },
}

/// A seeded sampling distribution in dimension `d`.
///
/// For the sphere kinds `d` is the sphere dimension and points live in `R^{d+1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleDistribution {
    pub kind: DistributionKind,
    pub d: usize,
    pub seed: u64,
}

impl SampleDistribution {
    pub fn new(kind: DistributionKind, d: usize, seed: u64) -> Self {
        SampleDistribution { kind, d, seed }
    }

    /// Dimension of the sampled vectors.
    pub fn point_dim(&self) -> usize {
        match self.kind {
            DistributionKind::UniformSphere | DistributionKind::SphereCap { .. } => self.d + 1,
            _ => self.d,
        }
    }
}

fn sphere_point<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let z: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-300 {
            return z.into_iter().map(|v| v / norm).collect();
        }
    }
}

fn triangular<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen();
    if u < 0.5 {
        -1.0 + (2.0 * u).sqrt()
    } else {
        1.0 - (2.0 * (1.0 - u)).sqrt()
    }
}

/// Draws `n` i.i.d. points, deterministically in the seed.
pub fn sample(dist: &SampleDistribution, n: usize) -> Result<Vec<Vec<f64>>> {
    sample_with(dist, n, &mut crate::rng::substream(dist.seed, "sample", 0))
}

/// Draws `n` i.i.d. points from an explicit generator.
pub fn sample_with<R: Rng>(dist: &SampleDistribution, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be positive".into()));
    }
    let d = dist.d;
    let points = match dist.kind {
        DistributionKind::UniformCube { lo, hi } => {
            if !(lo < hi) {
                return Err(Error::InvalidParameter(format!("empty interval [{lo}, {hi}]")));
            }
            (0..n).map(|_| (0..d).map(|_| rng.gen_range(lo..=hi)).collect()).collect()
        }
        DistributionKind::UniformSphere => (0..n).map(|_| sphere_point(rng, d + 1)).collect(),
        DistributionKind::Triangular => (0..n).map(|_| (0..d).map(|_| triangular(rng)).collect()).collect(),
        DistributionKind::ClippedNormal { limit } => {
            if !(limit > 0.0) {
                return Err(Error::InvalidParameter(format!("clip limit must be positive, got {limit}")));
            }
            (0..n)
                .map(|_| {
                    (0..d)
                        .map(|_| loop {
                            let z: f64 = rng.sample(StandardNormal);
                            if z.abs() < limit {
                                break z;
                            }
                        })
                        .collect()
                })
                .collect()
        }
        DistributionKind::SphereCap { angle } => {
            if !(angle > 0.0 && angle <= PI) {
                return Err(Error::InvalidParameter(format!("cap angle must lie in (0, π], got {angle}")));
            }
            let threshold = angle.cos();
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let p = sphere_point(rng, d + 1);
                if angle >= PI || p[d] >= threshold {
                    out.push(p);
                }
            }
            out
        }
    };
    if d == 0 && !matches!(dist.kind, DistributionKind::UniformSphere | DistributionKind::SphereCap { .. }) {
        return Err(Error::InvalidDimension(0));
    }
    Ok(points)
}

/// Descending eigenvalues of `Gram/n` above the noise floor.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSpectrum {
    pub values: Vec<f64>,
    /// Number of eigenvalues at or below `NOISE_FLOOR · trace`.
    pub dropped: usize,
    pub trace: f64,
}

/// Eigenvalues of `(1/n) K(X, X)`, descending, with the noise floor removed.
pub fn empirical_eigenvalues<K: Kernel>(kernel: &K, points: &[Vec<f64>]) -> Result<EmpiricalSpectrum> {
    if points.is_empty() {
        return Err(Error::InvalidParameter("no sample points".into()));
    }
    let n = points.len() as f64;
    let g = gram(kernel, points)?;
    let trace = g.trace() / n;
    let all: Vec<f64> = g.eigenvalues().into_iter().map(|v| v / n).collect();
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenFailure);
    }
    let floor = NOISE_FLOOR * trace;
    let values: Vec<f64> = all.iter().copied().filter(|&v| v > floor).collect();
    Ok(EmpiricalSpectrum { dropped: all.len() - values.len(), values, trace })
}

/// Result of a log–log least-squares fit of an eigenvalue sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    /// Decay rate `r`: the negated fitted slope.
    pub rate: f64,
    pub intercept: f64,
    /// 1-based inclusive index window.
    pub window: (usize, usize),
    pub r2: f64,
    pub n_samples: usize,
    pub seed: Option<u64>,
}

/// Fits `ln λ_i = -r ln i + b` over the 1-based window `[i_lo, i_hi]`.
pub fn fit_decay(lambdas: &[f64], window: (usize, usize)) -> Result<DecayFit> {
    let (lo, hi) = window;
    if lo == 0 || hi <= lo {
        return Err(Error::InvalidParameter(format!("invalid window [{lo}, {hi}]")));
    }
    if hi > lambdas.len() {
        return Err(Error::WindowExceedsSpectrum { index: hi, available: lambdas.len() });
    }
    if let Some(k) = (lo..=hi).find(|&i| !(lambdas[i - 1] > 0.0)) {
        let available = lambdas.iter().take_while(|&&v| v > 0.0).count();
        return Err(Error::WindowExceedsSpectrum { index: k, available });
    }
    let line = fit_loglog((lo..=hi).map(|i| (i as f64, lambdas[i - 1])));
    Ok(DecayFit { rate: -line.slope, intercept: line.intercept, window, r2: line.r2, n_samples: lambdas.len(), seed: None })
}

/// Input distributions of the decay-rate table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TableDistribution {
    /// `U(-1, 1)` coordinates.
    UniformSymmetric,
    /// `U(0, 1)` coordinates.
    UniformPositive,
    Triangular,
    ClippedNormal,
}

impl TableDistribution {
    pub const ALL: [TableDistribution; 4] = [
        TableDistribution::UniformSymmetric,
        TableDistribution::UniformPositive,
        TableDistribution::Triangular,
        TableDistribution::ClippedNormal,
    ];

    pub fn kind(&self) -> DistributionKind {
        match self {
            TableDistribution::UniformSymmetric => DistributionKind::UniformCube { lo: -1.0, hi: 1.0 },
            TableDistribution::UniformPositive => DistributionKind::UniformCube { lo: 0.0, hi: 1.0 },
            TableDistribution::Triangular => DistributionKind::Triangular,
            TableDistribution::ClippedNormal => DistributionKind::ClippedNormal { limit: 10.0 },
        }
    }

    /// Short name used on the command line and in file names.
    pub fn name(&self) -> &'static str {
        match self {
            TableDistribution::UniformSymmetric => "ucube",
            TableDistribution::UniformPositive => "ucube01",
            TableDistribution::Triangular => "triangular",
            TableDistribution::ClippedNormal => "cnormal",
        }
    }
}

impl fmt::Display for TableDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TableDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TableDistribution::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown distribution '{s}' (expected ucube, ucube01, triangular or cnormal)")))
    }
}

/// Grid and sampling parameters of a decay-rate experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct EdrConfig {
    pub distributions: Vec<TableDistribution>,
    pub dims: Vec<usize>,
    pub layers: Vec<usize>,
    pub n: usize,
    pub window: (usize, usize),
    pub seeds: usize,
    pub root_seed: u64,
}

impl Default for EdrConfig {
    fn default() -> Self {
        EdrConfig {
            distributions: TableDistribution::ALL.to_vec(),
            dims: vec![3, 4, 5],
            layers: vec![2, 3, 4],
            n: 1000,
            window: DEFAULT_WINDOW,
            seeds: 3,
            root_seed: 0,
        }
    }
}

/// One `(distribution, d, L)` cell of the decay-rate table.
#[derive(Debug, Clone, PartialEq)]
pub struct EdrCell {
    pub distribution: TableDistribution,
    pub d: usize,
    pub layers: usize,
    pub fits: Vec<DecayFit>,
    /// Seed-averaged spectrum over the indices common to all seeds.
    pub mean_spectrum: Vec<f64>,
}

impl EdrCell {
    pub fn r_mean(&self) -> f64 {
        self.fits.iter().map(|f| f.rate).sum::<f64>() / self.fits.len() as f64
    }

    /// Sample standard deviation across seeds (zero for a single seed).
    pub fn r_std(&self) -> f64 {
        let k = self.fits.len();
        if k < 2 {
            return 0.0;
        }
        let m = self.r_mean();
        (self.fits.iter().map(|f| (f.rate - m).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
    }

    /// `(d+1)/d`.
    pub fn r_theory(&self) -> f64 {
        (self.d as f64 + 1.0) / self.d as f64
    }

    /// File-name stem `<dist>_d<d>_L<L>`.
    pub fn label(&self) -> String {
        format!("{}_d{}_L{}", self.distribution, self.d, self.layers)
    }
}

/// Runs one cell: `seeds` independent samples of size `n`, one fit each.
pub fn edr_cell(config: &EdrConfig, distribution: TableDistribution, d: usize, layers: usize) -> Result<EdrCell> {
    let desc = NtkDescriptor::full(layers)?;
    let tag = format!("edr/{distribution}/{d}/{layers}");
    let mut fits = Vec::with_capacity(config.seeds);
    let mut spectra = Vec::with_capacity(config.seeds);
    for s in 0..config.seeds {
        let mut rng = substream(config.root_seed, &tag, s as u64);
        let dist = SampleDistribution::new(distribution.kind(), d, config.root_seed);
        let points = sample_with(&dist, config.n, &mut rng)?;
        let spectrum = empirical_eigenvalues(&desc, &points)?;
        let mut fit = fit_decay(&spectrum.values, config.window)?;
        fit.seed = Some(crate::rng::substream_seed(config.root_seed, &tag, s as u64));
        fit.n_samples = config.n;
        fits.push(fit);
        spectra.push(spectrum.values);
    }
    let common = spectra.iter().map(Vec::len).min().unwrap_or(0);
    let mean_spectrum = (0..common).map(|i| spectra.iter().map(|s| s[i]).sum::<f64>() / spectra.len() as f64).collect();
    Ok(EdrCell { distribution, d, layers, fits, mean_spectrum })
}

/// Runs every cell of the grid in `(distribution, d, L)` order.
pub fn edr_experiment(config: &EdrConfig) -> Result<Vec<EdrCell>> {
    if config.seeds == 0 {
        return Err(Error::InvalidParameter("at least one seed is required".into()));
    }
    let mut cells = Vec::new();
    for &dist in &config.distributions {
        for &d in &config.dims {
            for &l in &config.layers {
                cells.push(edr_cell(config, dist, d, l)?);
            }
        }
    }
    Ok(cells)
}

/// Writes `edr_table.csv`.
pub fn write_edr_table<W: Write>(cells: &[EdrCell], config: &EdrConfig, mut w: W) -> std::io::Result<()> {
    writeln!(w, "distribution,d,L,r_mean,r_std,r_theory,n,window_lo,window_hi,seeds")?;
    for c in cells {
        writeln!(
            w,
            "{},{},{},{:.6},{:.6},{:.6},{},{},{},{}",
            c.distribution,
            c.d,
            c.layers,
            c.r_mean(),
            c.r_std(),
            c.r_theory(),
            config.n,
            config.window.0,
            config.window.1,
            c.fits.len()
        )?;
    }
    Ok(())
}

/// Writes a `spectrum_<cell>.csv` body: `i,lambda_i` with 1-based `i`.
pub fn write_spectrum<W: Write>(values: &[f64], mut w: W) -> std::io::Result<()> {
    writeln!(w, "i,lambda_i")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(w, "{},{:e}", i + 1, v)?;
    }
    Ok(())
}

/// Decay fit of the homogeneous NTK under the uniform law on a spherical cap.
///
/// At `cap_angle = π` this is the whole sphere `S^d`.
pub fn restricted_sphere_edr(
    desc: &NtkDescriptor,
    d: usize,
    cap_angle: f64,
    n: usize,
    window: (usize, usize),
    seed: u64,
) -> Result<DecayFit> {
    if desc.variant() != Variant::Homogeneous {
        return Err(Error::VariantMismatch("restricted-domain experiments use the homogeneous kernel"));
    }
    let dist = SampleDistribution::new(DistributionKind::SphereCap { angle: cap_angle }, d, seed);
    let points = sample(&dist, n)?;
    let spectrum = empirical_eigenvalues(desc, &points)?;
    let mut fit = fit_decay(&spectrum.values, window)?;
    fit.seed = Some(seed);
    fit.n_samples = n;
    Ok(fit)
}
