//! Sequence calculus on finite prefixes of real sequences.
//!
//! The operators here act on [`Seq`], which stores the first few terms of an
//! infinite sequence `(a_k)_{k>=0}`. A sequence is either a plain prefix (the
//! terms beyond the stored ones are unknown) or finitely supported (the terms
//! beyond the stored ones are zero). The distinction matters:
//!
//! * the forward difference `(Δa)_k = a_k - a_{k+1}` of a prefix loses one
//!   term, while on a finitely supported sequence it keeps its length;
//! * the tail sum `(Sa)_k = Σ_{r>=k} a_r` is only defined for finitely
//!   supported sequences, so asking for it on a prefix is an error instead of a
//!   silent truncation.
//!
//! Everything except the decay-condition checker is generic over [`Scalar`],
//! so exact identities can be tested with rationals and integer-valued floats.

use std::fmt::Debug;

use num_traits::{FromPrimitive, Num};

use crate::error::{Error, Result};

/// Numeric type usable by the sequence operators.
pub trait Scalar: Clone + PartialOrd + Num + FromPrimitive + Debug {}

impl<T: Clone + PartialOrd + Num + FromPrimitive + Debug> Scalar for T {}

/// Largest `k + p` for which `A_k^p` goes through the exact integer path.
pub const EXACT_BINOMIAL_LIMIT: usize = 60;

/// `A_k^p = C(k+p, k)` in exact integer arithmetic, `None` on overflow.
pub fn binomial_weight_exact(k: usize, p: usize) -> Option<u128> {
    let n = (k + p) as u128;
    let r = k.min(p) as u128;
    let mut acc: u128 = 1;
    for i in 0..r {
        // acc * (n - i) is divisible by (i + 1) at every step.
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

/// `A_k^p` by the multiplicative recurrence `Π_{i=1}^{k} (i+p)/i`.
pub fn binomial_weight_f64(k: usize, p: usize) -> f64 {
    let (small, big) = if k < p { (k, p) } else { (p, k) };
    (1..=small).fold(1.0, |acc, i| acc * (big + i) as f64 / i as f64)
}

/// `A_k^p` converted into `T`, exact for `k + p <= EXACT_BINOMIAL_LIMIT`.
pub fn binomial_weight<T: Scalar>(k: usize, p: usize) -> T {
    if k + p <= EXACT_BINOMIAL_LIMIT {
        if let Some(v) = binomial_weight_exact(k, p).and_then(T::from_u128) {
            return v;
        }
    }
    T::from_f64(binomial_weight_f64(k, p)).expect("binomial weight not representable")
}

/// What is known about the terms past the stored values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    /// Only a prefix is stored; later terms are unknown.
    Prefix,
    /// Every term past the stored values is zero.
    Finite,
}

/// Declared analytic tail of a decreasing sequence.
///
/// Index `n` is shifted so that the model is finite at `n = 0`:
/// power laws use `(n+1)^{-β}` and the logarithmic factor uses `ln(n + e)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailModel {
    /// `scale · (n+1)^{-beta}`
    PowerLaw { scale: f64, beta: f64 },
    /// `scale · exp(-rate · n^beta)`
    Exponential { scale: f64, rate: f64, beta: f64 },
    /// `scale · (n+1)^{-beta} · ln(n+e)^log_power`
    LogPower { scale: f64, beta: f64, log_power: f64 },
}

impl TailModel {
    /// Checks the admissible parameter ranges for dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        let d = d as f64;
        let ok = match *self {
            TailModel::PowerLaw { scale, beta } => scale > 0.0 && beta > d,
            TailModel::Exponential { scale, rate, beta } => scale > 0.0 && rate > 0.0 && beta > 0.0,
            TailModel::LogPower { scale, beta, log_power } => {
                scale > 0.0 && (beta > d || (beta == d && log_power > 1.0))
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("tail model {self:?} not admissible for d = {d}")))
        }
    }

    pub fn value(&self, n: usize) -> f64 {
        let x = n as f64;
        match *self {
            TailModel::PowerLaw { scale, beta } => scale * (x + 1.0).powf(-beta),
            TailModel::Exponential { scale, rate, beta } => scale * (-rate * x.powf(beta)).exp(),
            TailModel::LogPower { scale, beta, log_power } => {
                scale * (x + 1.0).powf(-beta) * (x + std::f64::consts::E).ln().powf(log_power)
            }
        }
    }
}

/// A finite prefix of a real sequence indexed from 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq<T = f64> {
    values: Vec<T>,
    support: Support,
    tail: Option<TailModel>,
}

impl<T: Scalar> Seq<T> {
    /// A prefix of an infinite sequence.
    pub fn prefix(values: Vec<T>) -> Result<Self> {
        Self::new(values, Support::Prefix)
    }

    /// A sequence that vanishes past the stored values.
    pub fn finite(values: Vec<T>) -> Result<Self> {
        Self::new(values, Support::Finite)
    }

    fn new(values: Vec<T>, support: Support) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InsufficientLength { needed: 1, available: 0 });
        }
        Ok(Seq { values, support, tail: None })
    }

    /// Attaches a declared tail, validated against dimension `d`.
    pub fn with_tail(mut self, tail: TailModel, d: usize) -> Result<Self> {
        tail.validate(d)?;
        self.tail = Some(tail);
        Ok(self)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn tail(&self) -> Option<&TailModel> {
        self.tail.as_ref()
    }

    /// Term `k`, reading zeros past the end of a finitely supported sequence.
    fn term(&self, k: usize) -> Option<T> {
        match self.values.get(k) {
            Some(v) => Some(v.clone()),
            None if self.support == Support::Finite => Some(T::zero()),
            None => None,
        }
    }
}

impl Seq<f64> {
    /// Samples `len` terms of a tail model, declared as the tail.
    pub fn from_model(model: TailModel, len: usize, d: usize) -> Result<Self> {
        Seq::prefix((0..len).map(|n| model.value(n)).collect())?.with_tail(model, d)
    }
}

fn difference_once<T: Scalar>(values: &[T], support: Support) -> Vec<T> {
    match support {
        Support::Prefix => values.windows(2).map(|w| w[0].clone() - w[1].clone()).collect(),
        Support::Finite => {
            let mut out: Vec<T> = values.windows(2).map(|w| w[0].clone() - w[1].clone()).collect();
            out.push(values[values.len() - 1].clone());
            out
        }
    }
}

/// `Δ^p a`, by `p`-fold application of `(Δa)_k = a_k - a_{k+1}`.
///
/// A prefix of length `len` yields `len - p` differences; a finitely supported
/// sequence keeps its length.
pub fn forward_difference<T: Scalar>(a: &Seq<T>, order: usize) -> Result<Seq<T>> {
    if a.support == Support::Prefix && a.len() <= order {
        return Err(Error::InsufficientLength { needed: order + 1, available: a.len() });
    }
    let mut values = a.values.clone();
    for _ in 0..order {
        values = difference_once(&values, a.support);
    }
    Ok(Seq { values, support: a.support, tail: None })
}

/// `S^p a`, the `p`-fold tail sum of a finitely supported sequence.
pub fn tail_sum<T: Scalar>(a: &Seq<T>, order: usize) -> Result<Seq<T>> {
    if a.support != Support::Finite {
        return Err(Error::InfiniteSupport);
    }
    let mut values = a.values.clone();
    for _ in 0..order {
        let mut acc = T::zero();
        for v in values.iter_mut().rev() {
            acc = acc + v.clone();
            *v = acc.clone();
        }
    }
    Ok(Seq { values, support: Support::Finite, tail: None })
}

/// `Σ_{k<=n} A_{n-k}^p a_k`, the unnormalized Cesàro sum (`= A_n^p s_n^p`).
pub fn cesaro_sum<T: Scalar>(a: &Seq<T>, order: usize, n: usize) -> Result<T> {
    if n >= a.len() {
        return Err(Error::IndexOutOfRange { index: n, len: a.len() });
    }
    Ok(a.values[..=n]
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (k, v)| acc + binomial_weight::<T>(n - k, order) * v.clone()))
}

/// The `p`-Cesàro mean `s_n^p = (1/A_n^p) Σ_{k<=n} A_{n-k}^p a_k`.
///
/// With `p = 0` every weight is one and this is the partial sum `Σ_{k<=n} a_k`.
pub fn cesaro_mean<T: Scalar>(a: &Seq<T>, order: usize, n: usize) -> Result<T> {
    Ok(cesaro_sum(a, order, n)? / binomial_weight::<T>(n, order))
}

/// Right-hand side of the summation-by-parts identity
/// `Σ a_k b_k = Σ_k Δ^{p+1} b_k · A_k^p s_k^p` for finitely supported `b`.
///
/// `a` must store at least as many terms as the support of `b`.
pub fn summation_by_parts<T: Scalar>(a: &Seq<T>, b: &Seq<T>, order: usize) -> Result<T> {
    if b.support != Support::Finite {
        return Err(Error::InfiniteSupport);
    }
    if a.len() < b.len() {
        return Err(Error::InsufficientLength { needed: b.len(), available: a.len() });
    }
    let db = forward_difference(b, order + 1)?;
    let mut total = T::zero();
    for (k, dk) in db.values.iter().enumerate() {
        total = total + dk.clone() * cesaro_sum(a, order, k)?;
    }
    Ok(total)
}

/// Output of [`left_extrapolate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExtrapolationResult<T = f64> {
    /// Sequence equal to the input from the pivot on, with vanishing `p`-th
    /// differences before it.
    pub tilde_mu: Seq<T>,
    /// `mu - tilde_mu`; zero from the pivot on.
    pub residual: Seq<T>,
    /// `tilde_mu_0`.
    pub leading: T,
    pub order_p: usize,
    pub pivot_n: usize,
}

/// Left extrapolation of a `p`-monotone sequence at pivot `N`.
///
/// Below the pivot the new sequence continues the degree-`p-1` polynomial
/// through `mu_N, ..., mu_{N+p-1}`, i.e. `Δ^p tilde_mu_k = 0` for `k < N`.
/// Going down from the pivot, `Δ^j tilde_mu_{k-1} = Δ^j tilde_mu_k + Δ^{j+1} tilde_mu_{k-1}`.
pub fn left_extrapolate<T: Scalar>(mu: &Seq<T>, order: usize, pivot: usize) -> Result<ExtrapolationResult<T>> {
    if order == 0 {
        return Err(Error::InvalidParameter("extrapolation order must be positive".into()));
    }
    if pivot + order >= mu.len() {
        return Err(Error::InsufficientLength { needed: pivot + order + 1, available: mu.len() });
    }
    let dp = forward_difference(mu, order)?;
    if let Some(index) = dp.values.iter().position(|v| *v < T::zero()) {
        return Err(Error::NotMonotone { order, index });
    }

    // diffs[j] = Δ^j tilde_mu at the current index, starting at the pivot.
    let mut diffs: Vec<T> = (0..order)
        .map(|j| {
            let mut row: Vec<T> = mu.values[pivot..=pivot + j].to_vec();
            for _ in 0..j {
                row = difference_once(&row, Support::Prefix);
            }
            row[0].clone()
        })
        .collect();

    let mut tilde = mu.values.clone();
    for k in (0..pivot).rev() {
        for j in (0..order - 1).rev() {
            diffs[j] = diffs[j].clone() + diffs[j + 1].clone();
        }
        tilde[k] = diffs[0].clone();
    }

    let residual: Vec<T> = mu.values.iter().zip(&tilde).map(|(m, t)| m.clone() - t.clone()).collect();
    let leading = tilde[0].clone();
    Ok(ExtrapolationResult {
        tilde_mu: Seq { values: tilde, support: mu.support, tail: None },
        residual: Seq { values: residual, support: Support::Finite, tail: None },
        leading,
        order_p: order,
        pivot_n: pivot,
    })
}

/// Closed form of the extrapolated leading term:
/// `Σ_{l<p} A_{N-1}^l Δ^l mu_N`, with `A_{-1}^0 = 1` and `A_{-1}^l = 0` otherwise.
pub fn extrapolation_leading<T: Scalar>(mu: &Seq<T>, order: usize, pivot: usize) -> Result<T> {
    let mut total = T::zero();
    for l in 0..order {
        let dl = forward_difference(mu, l)?;
        let d = dl.term(pivot).ok_or(Error::InsufficientLength { needed: pivot + l + 1, available: mu.len() })?;
        let w = match pivot {
            0 if l == 0 => T::one(),
            0 => T::zero(),
            _ => binomial_weight::<T>(pivot - 1, l),
        };
        total = total + w * d;
    }
    Ok(total)
}

/// `Σ_{l<=d} C(n+l, l) Δ^l mu_n`, the left-hand side of the decay-condition bound.
pub fn derivative_bound_lhs<T: Scalar>(mu: &Seq<T>, d: usize, n: usize) -> Result<T> {
    let mut total = T::zero();
    for l in 0..=d {
        let dl = forward_difference(mu, l)?;
        let v = dl.term(n).ok_or(Error::InsufficientLength { needed: n + l + 1, available: mu.len() })?;
        total = total + binomial_weight::<T>(n, l) * v;
    }
    Ok(total)
}

/// Outcome of one checked condition.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub passed: bool,
    pub first_violation: Option<usize>,
    /// Largest index `n` that was checked.
    pub checked_through: usize,
}

/// Outcome of the asymptotic counting condition, which a prefix cannot certify.
#[derive(Debug, Clone, PartialEq)]
pub enum AsymptoticOutcome {
    /// The sequence carries a declared tail from an admissible family.
    DeclaredTail(TailModel),
    /// Grid check of `N(ε/2) / N(ε)`; a heuristic, not a proof.
    Heuristic { passed: bool, max_ratio: f64, grid_points: usize },
}

impl AsymptoticOutcome {
    pub fn passed(&self) -> bool {
        match self {
            AsymptoticOutcome::DeclaredTail(_) => true,
            AsymptoticOutcome::Heuristic { passed, .. } => *passed,
        }
    }
}

/// Report of [`check_edr_condition`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    /// (a) regular variation of the counting function, heuristic.
    pub counting: AsymptoticOutcome,
    /// (b) `Δ^{d+1} mu_n >= 0`.
    pub monotone: CheckOutcome,
    /// (c) `Σ_{l<=d} C(qn+l, l) Δ^l mu_{qn} <= D mu_n`.
    pub derivative_bound: CheckOutcome,
}

impl ConditionReport {
    pub fn all_passed(&self) -> bool {
        self.counting.passed() && self.monotone.passed && self.derivative_bound.passed
    }
}

/// Ratio cap for the heuristic `N(ε/2) / N(ε)` check.
pub const COUNTING_RATIO_CAP: f64 = 8.0;

fn counting_function(mu: &[f64], eps: f64) -> Option<usize> {
    mu.iter().rposition(|&v| v > eps)
}

/// Checks the eigenvalue-decay condition on the stored prefix.
///
/// The checked range is every `n` for which both (b) and (c) are computable
/// from the stored terms.
pub fn check_edr_condition(mu: &Seq<f64>, d: usize, q: usize, bound: f64) -> Result<ConditionReport> {
    if q == 0 {
        return Err(Error::InvalidParameter("q must be a positive integer".into()));
    }
    let len = mu.len();
    // (c) at n needs index qn + d, (b) at n needs index n + d + 1.
    let needed = d + 2;
    if len < needed {
        return Err(Error::InsufficientLength { needed, available: len });
    }
    let n_max = ((len - 1 - d) / q).min(len - d - 2);

    let db = forward_difference(mu, d + 1)?;
    let first_neg = (0..=n_max).find(|&n| db.values[n] < 0.0);
    let monotone = CheckOutcome { passed: first_neg.is_none(), first_violation: first_neg, checked_through: n_max };

    let diffs: Vec<Seq<f64>> = (0..=d).map(|l| forward_difference(mu, l)).collect::<Result<_>>()?;
    let first_bad = (0..=n_max).find(|&n| {
        let nt = q * n;
        let lhs: f64 = (0..=d).map(|l| binomial_weight_f64(nt, l) * diffs[l].values[nt]).sum();
        lhs > bound * mu.values[n]
    });
    let derivative_bound =
        CheckOutcome { passed: first_bad.is_none(), first_violation: first_bad, checked_through: n_max };

    let counting = match mu.tail {
        Some(t) => AsymptoticOutcome::DeclaredTail(t),
        None => counting_heuristic(&mu.values),
    };
    Ok(ConditionReport { counting, monotone, derivative_bound })
}

fn counting_heuristic(mu: &[f64]) -> AsymptoticOutcome {
    let len = mu.len();
    let hi = mu[(len / 8).max(1).min(len - 1)];
    let lo = mu[len - 1];
    let mut max_ratio: f64 = 1.0;
    let mut points = 0;
    let mut passed = true;
    if hi > 0.0 && lo > 0.0 && hi > lo {
        let steps = 16;
        for s in 0..=steps {
            let eps = hi * (lo / hi).powf(s as f64 / steps as f64);
            let (Some(a), Some(b)) = (counting_function(mu, eps), counting_function(mu, eps / 2.0)) else {
                continue;
            };
            // N(ε/2) must stay inside the prefix to be meaningful.
            if b + 1 >= len || a == 0 {
                continue;
            }
            let ratio = b as f64 / a as f64;
            points += 1;
            max_ratio = max_ratio.max(ratio);
            if !(1.0..=COUNTING_RATIO_CAP).contains(&ratio) {
                passed = false;
            }
        }
    }
    AsymptoticOutcome::Heuristic { passed: passed && points > 0, max_ratio, grid_points: points }
}
