//! Gaussian dynamics of `(log S, θ1, θ2, θ3)` under the historical measure.
//!
//! Each factor is `Y^i_t = Y^i_0 + b_i t + Σ_{j≥i} c_ij W^j_t` with an
//! upper-triangular loading matrix, calibrated so that `Y_1` has a target
//! mean and covariance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::Theta;
use crate::error::{Error, Result};
use crate::rng::StreamFamily;
use crate::scalar::Real;
use crate::sparse_grid::DomainBox;

pub type Vec4<S> = [S; 4];
pub type Mat4<S> = [[S; 4]; 4];

/// Target law of `(X_1, Θ_1)` and the starting point `(X_0, Θ_0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentSpec<S> {
    pub mean: Vec4<S>,
    pub cov: Mat4<S>,
    /// Initial log price.
    pub x0: S,
    pub theta0: Theta<S>,
}

impl<S: Real> MomentSpec<S> {
    pub fn initial(&self) -> Vec4<S> {
        [self.x0, self.theta0[0], self.theta0[1], self.theta0[2]]
    }

    /// Box `μ ± width·σ` of the law at `t = 1`, with the first coordinate
    /// mapped to price space.
    pub fn truncation_box(&self, width: S) -> Result<DomainBox<S>> {
        let mut lower = Vec::with_capacity(4);
        let mut upper = Vec::with_capacity(4);
        for p in 0..4 {
            let sd = self.cov[p][p].max(S::zero()).sqrt();
            lower.push(self.mean[p] - width * sd);
            upper.push(self.mean[p] + width * sd);
        }
        lower[0] = lower[0].exp();
        upper[0] = upper[0].exp();
        DomainBox::new(lower, upper)
    }
}

/// Reference calibration target: one-year law of the log price and the curve
/// factors, started from `S_0 = 1` and `Θ_0` equal to the target curve mean.
pub fn reference_spec() -> MomentSpec<f64> {
    MomentSpec {
        mean: [4.1e-5, 0.01, 0.03, 0.01],
        cov: [
            [0.004, 3.2e-5, 6.76e-6, 8e-6],
            [3.2e-5, 3.1e-5, 1.82e-5, 1.5e-5],
            [6.76e-6, 1.82e-5, 7.5e-5, 8.1e-6],
            [8e-6, 1.5e-5, 8.1e-6, 2.7e-5],
        ],
        x0: 0.0,
        theta0: Theta::new(0.01, 0.03, 0.01),
    }
}

/// Drift and loadings of the factor dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealWorldDriver<S> {
    pub initial: Vec4<S>,
    pub drift: Vec4<S>,
    /// Upper triangular: `loading[i][j] = 0` for `i > j`.
    pub loading: Mat4<S>,
}

/// Smallest accepted radicand in the back-substitution.
pub const MIN_RADICAND: f64 = 1e-14;

/// Finds the unique upper-triangular `C` with `C Cᵀ = V`, working upwards
/// from the last factor, and the drift `b = μ - Y_0`.
pub fn calibrate<S: Real>(spec: &MomentSpec<S>) -> Result<RealWorldDriver<S>> {
    let v = &spec.cov;
    for i in 0..4 {
        for j in 0..i {
            let scale = v[i][j].abs().max(v[j][i].abs()).max(S::min_positive_value());
            if (v[i][j] - v[j][i]).abs() > S::epsilon() * scale {
                return Err(Error::invalid(format!("target covariance is not symmetric at ({i},{j})")));
            }
        }
    }
    let mut c = [[S::zero(); 4]; 4];
    for l in (0..4).rev() {
        let radicand = (l + 1..4).fold(v[l][l], |acc, j| acc - c[l][j] * c[l][j]);
        if !(radicand.to_f64_lossy() > MIN_RADICAND) {
            return Err(Error::Calibration { dimension: l, radicand: radicand.to_f64_lossy() });
        }
        c[l][l] = radicand.sqrt();
        for i in 0..l {
            let s = (l + 1..4).fold(v[i][l], |acc, j| acc - c[i][j] * c[l][j]);
            c[i][l] = s / c[l][l];
        }
    }
    let y0 = spec.initial();
    Ok(RealWorldDriver {
        initial: y0,
        drift: [0, 1, 2, 3].map(|i| spec.mean[i] - y0[i]),
        loading: c,
    })
}

/// Scales the target mean by `mean_factor` and the covariance by `cov_factor`.
pub fn scale_moments_by<S: Real>(spec: &MomentSpec<S>, mean_factor: S, cov_factor: S) -> Result<MomentSpec<S>> {
    if !(mean_factor > S::zero() && cov_factor > S::zero()) {
        return Err(Error::invalid("moment scaling factors must be positive"));
    }
    let mut out = *spec;
    out.mean = spec.mean.map(|m| m * mean_factor);
    out.cov = spec.cov.map(|row| row.map(|v| v * cov_factor));
    Ok(out)
}

/// Multiplies every entry of the target mean and covariance by `factor`.
pub fn scale_moments<S: Real>(spec: &MomentSpec<S>, factor: S) -> Result<MomentSpec<S>> {
    scale_moments_by(spec, factor, factor)
}

/// Factor values on a date grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorPath<S> {
    pub states: Vec<Vec4<S>>,
}

impl<S: Real> FactorPath<S> {
    pub fn price(&self, k: usize) -> S {
        self.states[k][0].exp()
    }

    pub fn theta(&self, k: usize) -> Theta<S> {
        let s = &self.states[k];
        Theta::new(s[1], s[2], s[3])
    }
}

/// `n` paths sampled exactly on `dates` (ascending, starting at 0).
/// Path `k` uses stream `k` of `family`.
pub fn simulate_paths<S: Real>(
    driver: &RealWorldDriver<S>,
    dates: &[S],
    n: usize,
    family: &StreamFamily,
) -> Result<Vec<FactorPath<S>>> {
    if dates.first() != Some(&S::zero()) || dates.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("real-world dates must start at 0 and increase"));
    }
    let steps: Vec<(S, S)> = dates.windows(2).map(|w| (w[1] - w[0], (w[1] - w[0]).sqrt())).collect();
    Ok((0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = family.path(k as u64);
            let mut y = driver.initial;
            let mut states = Vec::with_capacity(dates.len());
            states.push(y);
            for &(dt, sq) in &steps {
                let z: Vec4<S> = [0; 4].map(|_| S::lit(rng.normal()));
                for i in 0..4 {
                    let noise = (i..4).fold(S::zero(), |acc, j| acc + driver.loading[i][j] * z[j]);
                    y[i] = y[i] + driver.drift[i] * dt + sq * noise;
                }
                states.push(y);
            }
            FactorPath { states }
        })
        .collect())
}
