//! Empirical risk functionals on loss samples (losses positive).
//!
//! `α` is a tail probability by default: V@R at `α = 0.01` is the 99%
//! quantile of the loss. [`AlphaConvention::LowerBound`] reads `α` as the
//! quantile level itself.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::OrderedField;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaConvention {
    /// Quantile level `p = 1 - α`.
    #[default]
    TailProbability,
    /// Quantile level `p = α`.
    LowerBound,
}

/// Sorted sample `x_(1) ≤ … ≤ x_(N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalDistribution<T> {
    sorted: Vec<T>,
}

impl<T: OrderedField> EmpiricalDistribution<T> {
    pub fn new(mut samples: Vec<T>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("empirical distribution needs at least one sample"));
        }
        if samples.iter().any(|x| x.partial_cmp(x).is_none()) {
            return Err(Error::invalid("sample contains NaN"));
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(EmpiricalDistribution { sorted: samples })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[T] {
        &self.sorted
    }

    fn n(&self) -> T {
        T::from_usize(self.len()).unwrap()
    }

    pub fn mean(&self) -> T {
        self.sorted.iter().fold(T::zero(), |a, &x| a + x) / self.n()
    }

    /// Smallest `i` (1-based) with `p ≤ i/N`.
    fn left_index(&self, p: T) -> usize {
        let pn = p * self.n();
        let (mut lo, mut hi) = (1, self.sorted.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if T::from_usize(mid).unwrap() < pn {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Order-statistic `i` (1-based).
    fn at(&self, i: usize) -> T {
        self.sorted[i - 1]
    }
}

fn level<T: OrderedField>(alpha: T, conv: AlphaConvention) -> T {
    match conv {
        AlphaConvention::TailProbability => T::one() - alpha,
        AlphaConvention::LowerBound => alpha,
    }
}

fn check_open<T: OrderedField>(alpha: T) -> Result<()> {
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(Error::invalid(format!("alpha must lie in (0,1), got {alpha:?}")));
    }
    Ok(())
}

/// Left quantile of the loss at level `1 - α`.
pub fn var<T: OrderedField>(dist: &EmpiricalDistribution<T>, alpha: T) -> Result<T> {
    var_with(dist, alpha, AlphaConvention::TailProbability)
}

pub fn var_with<T: OrderedField>(dist: &EmpiricalDistribution<T>, alpha: T, conv: AlphaConvention) -> Result<T> {
    check_open(alpha)?;
    Ok(dist.at(dist.left_index(level(alpha, conv))))
}

/// Average of the quantiles above level `1 - α`.
pub fn avar<T: OrderedField>(dist: &EmpiricalDistribution<T>, alpha: T) -> Result<T> {
    avar_with(dist, alpha, AlphaConvention::TailProbability)
}

pub fn avar_with<T: OrderedField>(dist: &EmpiricalDistribution<T>, alpha: T, conv: AlphaConvention) -> Result<T> {
    let p = match conv {
        AlphaConvention::TailProbability => {
            if !(alpha > T::zero() && alpha <= T::one()) {
                return Err(Error::invalid(format!("alpha must lie in (0,1], got {alpha:?}")));
            }
            T::one() - alpha
        }
        AlphaConvention::LowerBound => {
            if !(alpha >= T::zero() && alpha < T::one()) {
                return Err(Error::invalid(format!("alpha must lie in [0,1), got {alpha:?}")));
            }
            alpha
        }
    };
    let tail = T::one() - p;
    let n = dist.n();
    if tail * n < T::one() {
        log::warn!("tail mass {tail:?} holds fewer than one of {} samples", dist.len());
    }
    let ip = dist.left_index(p);
    let head = (T::from_usize(ip).unwrap() / n - p) * dist.at(ip);
    let rest = dist.sorted[ip..].iter().fold(T::zero(), |a, &x| a + x) / n;
    Ok((head + rest) / tail)
}

/// Non-decreasing densities on `[0,1]` with closed-form distribution function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpectralDensity<T> {
    /// `h ≡ 1`: the mean.
    Uniform,
    /// `h = (1/α) 1_{[1-α, 1]}`: AV@R at tail probability `α`.
    TailAverage(T),
    /// `h(p) = (k+1) p^k`.
    Power(u32),
}

impl<T: OrderedField> SpectralDensity<T> {
    /// `H(p) = ∫_0^p h`.
    fn cdf(&self, p: T) -> T {
        match *self {
            SpectralDensity::Uniform => p,
            SpectralDensity::TailAverage(alpha) => {
                let start = T::one() - alpha;
                if p > start {
                    (p - start) / alpha
                } else {
                    T::zero()
                }
            }
            SpectralDensity::Power(k) => (0..=k).fold(T::one(), |acc, _| acc * p),
        }
    }

    fn validate(&self) -> Result<()> {
        if let SpectralDensity::TailAverage(alpha) = *self {
            if !(alpha > T::zero() && alpha <= T::one()) {
                return Err(Error::invalid(format!("tail-average density needs alpha in (0,1], got {alpha:?}")));
            }
        }
        Ok(())
    }
}

/// `Σ_i x_(i) ∫_{(i-1)/N}^{i/N} h`.
pub fn spectral<T: OrderedField>(dist: &EmpiricalDistribution<T>, h: &SpectralDensity<T>) -> Result<T> {
    h.validate()?;
    let n = dist.n();
    let mut prev = T::zero();
    let mut acc = T::zero();
    for (i, &x) in dist.sorted.iter().enumerate() {
        let next = h.cdf(T::from_usize(i + 1).unwrap() / n);
        acc = acc + x * (next - prev);
        prev = next;
    }
    Ok(acc)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
    }
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (l, r) = (simpson(f, a, m), simpson(f, m, b));
        if depth == 0 || (l + r - whole).abs() <= 15.0 * tol {
            l + r + (l + r - whole) / 15.0
        } else {
            rec(f, a, m, l, tol / 2.0, depth - 1) + rec(f, m, b, r, tol / 2.0, depth - 1)
        }
    }
    rec(f, a, b, simpson(f, a, b), tol, 40)
}

/// Spectral measure for an arbitrary density, integrated numerically per
/// order-statistic cell. The density must be non-decreasing with unit mass.
pub fn spectral_quadrature(dist: &EmpiricalDistribution<f64>, h: &dyn Fn(f64) -> f64) -> Result<f64> {
    let grid = 1000;
    let mut prev = h(0.0);
    for k in 0..=grid {
        let v = h(k as f64 / grid as f64);
        if !(v >= 0.0) || v < prev - 1e-12 {
            return Err(Error::invalid("spectral density must be nonnegative and non-decreasing"));
        }
        prev = v;
    }
    let n = dist.len() as f64;
    let mut total = 0.0;
    let mut acc = 0.0;
    for (i, &x) in dist.sorted.iter().enumerate() {
        let w = adaptive_simpson(h, i as f64 / n, (i + 1) as f64 / n, 1e-13 / n);
        total += w;
        acc += x * w;
    }
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::invalid(format!("spectral density integrates to {total}, not 1")));
    }
    Ok(acc)
}

/// `√((1/N) Σ (x_(i) - y_(i))²)` for samples of equal size.
pub fn wasserstein2<T: OrderedField + Float>(a: &EmpiricalDistribution<T>, b: &EmpiricalDistribution<T>) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch { left: a.len(), right: b.len() });
    }
    let s = a.sorted.iter().zip(&b.sorted).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
    Ok((s / a.n()).sqrt())
}

/// One row of a risk report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub alpha: f64,
    pub var: f64,
    pub avar: f64,
}

/// Tail probabilities reported by default.
pub const REPORT_ALPHAS: [f64; 4] = [0.005, 0.01, 0.05, 0.1];

pub fn risk_table(dist: &EmpiricalDistribution<f64>, alphas: &[f64], conv: AlphaConvention) -> Result<Vec<RiskRow>> {
    alphas
        .iter()
        .map(|&alpha| {
            Ok(RiskRow {
                alpha,
                var: var_with(dist, alpha, conv)?,
                avar: avar_with(dist, alpha, conv)?,
            })
        })
        .collect()
}
