//! Hull-White short rate with a Black-Scholes stock under the pricing measure.
//!
//! Given an observation `(t, x, Θ)`, the short rate is `r = ξ + α` where
//! `ξ` is an Ornstein-Uhlenbeck factor started at zero and `α` is the
//! deterministic shift that makes the model reprice the observed curve.
//! Over any interval `[s, u]` the triplet `(ξ_u, ∫_s^u ξ, log S_u)` is
//! Gaussian given the state at `s`, so paths are sampled exactly on any date
//! grid.

use serde::{Deserialize, Serialize};

use crate::curve::{TenorBasis, Theta};
use crate::error::{Error, Result};
use crate::linalg::{gaussian_factor3, Mat3, Vec3};
use crate::rng::PathRng;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HwParams<S> {
    /// Mean-reversion speed.
    pub a: S,
    /// Short-rate volatility.
    pub b: S,
}

impl<S: Real> HwParams<S> {
    pub fn new(a: S, b: S) -> Result<Self> {
        if !(a > S::zero() && b >= S::zero()) {
            return Err(Error::invalid(format!("Hull-White needs a > 0 and b >= 0, got a={a}, b={b}")));
        }
        Ok(HwParams { a, b })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BsParams<S> {
    pub sigma: S,
    /// Correlation between the stock and short-rate Brownian motions.
    pub rho: S,
}

impl<S: Real> BsParams<S> {
    /// `sigma = 0` is accepted for deterministic test configurations.
    pub fn new(sigma: S, rho: S) -> Result<Self> {
        if !(sigma >= S::zero() && rho >= -S::one() && rho <= S::one()) {
            return Err(Error::invalid(format!(
                "stock model needs sigma >= 0 and rho in [-1, 1], got sigma={sigma}, rho={rho}"
            )));
        }
        Ok(BsParams { sigma, rho })
    }
}

/// Observation `(t, x, Θ)`: time, stock price and curve coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketState<S> {
    pub t: S,
    pub x: S,
    pub theta: Theta<S>,
}

impl<S: Real> MarketState<S> {
    pub fn new(t: S, x: S, theta: Theta<S>) -> Result<Self> {
        if !(x > S::zero() && x.is_finite() && t >= S::zero() && theta.is_finite()) {
            return Err(Error::invalid(format!("market state needs x > 0 and t >= 0, got t={t}, x={x}")));
        }
        Ok(MarketState { t, x, theta })
    }
}

/// Conditional mean and covariance of `(ξ_u, A_u, X_u)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripletMoments<S> {
    pub mean: Vec3<S>,
    pub cov: Mat3<S>,
}

/// `1 - e^{-x}` without cancellation.
#[inline]
fn one_minus_exp<S: Real>(x: S) -> S {
    -(-x).exp_m1()
}

/// `x - (1 - e^{-x})`.
fn q_fn<S: Real>(x: S) -> S {
    if x.abs() < S::lit(0.5) {
        // Σ_{k≥2} (-x)^k / k!
        let mut term = x * x / S::lit(2.0);
        let mut sum = S::zero();
        for k in 2..30 {
            sum = sum + term;
            term = -term * x / S::from_usize_lossy(k + 1);
        }
        sum
    } else {
        x - one_minus_exp(x)
    }
}

/// `x - 2(1 - e^{-x}) + (1 - e^{-2x})/2`, i.e. `a ∫_0^τ (1 - e^{-av})² dv` at `x = aτ`.
fn g_fn<S: Real>(x: S) -> S {
    if x.abs() < S::lit(0.5) {
        // Σ_{k≥3} (-1)^k (2 - 2^{k-1}) x^k / k!
        let mut sum = S::zero();
        let mut pow_over_fact = x * x * x / S::lit(6.0);
        let mut two_pow = S::lit(4.0);
        let mut sign = -S::one();
        for k in 3..40 {
            sum = sum + sign * (S::lit(2.0) - two_pow) * pow_over_fact;
            pow_over_fact = pow_over_fact * x / S::from_usize_lossy(k + 1);
            two_pow = two_pow * S::lit(2.0);
            sign = -sign;
        }
        sum
    } else {
        x - S::lit(2.0) * one_minus_exp(x) + one_minus_exp(S::lit(2.0) * x) / S::lit(2.0)
    }
}

/// The hybrid pricing model: curve basis, short-rate and stock parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridModel<S> {
    pub basis: TenorBasis<S>,
    pub hw: HwParams<S>,
    pub bs: BsParams<S>,
}

impl<S: Real> HybridModel<S> {
    pub fn new(basis: TenorBasis<S>, hw: HwParams<S>, bs: BsParams<S>) -> Self {
        HybridModel { basis, hw, bs }
    }

    pub fn horizon(&self) -> S {
        self.basis.horizon
    }

    /// Deterministic shift `α_s = f^Θ(t,s) + (b²/2a²)(1 - e^{-a(s-t)})²`.
    pub fn alpha(&self, t: S, theta: &Theta<S>, s: S) -> S {
        let HwParams { a, b } = self.hw;
        let e = one_minus_exp(a * (s - t));
        self.basis.forward_unchecked(t, s, theta) + b * b / (S::lit(2.0) * a * a) * e * e
    }

    /// `∫_s^u α_r dr` for `t ≤ s ≤ u`, in closed form.
    pub fn alpha_integral(&self, t: S, theta: &Theta<S>, s: S, u: S) -> S {
        let HwParams { a, b } = self.hw;
        let curve = self.basis.forward_integral(t, u, theta) - self.basis.forward_integral(t, s, theta);
        let vol = b * b / (S::lit(2.0) * a * a * a) * (g_fn(a * (u - t)) - g_fn(a * (s - t)));
        curve + vol
    }

    /// Mean-reversion level that calibrates the short rate to the curve.
    /// Uses the right derivative of the curve at the block knots.
    pub fn mu_calibrated(&self, t: S, theta: &Theta<S>, s: S) -> S {
        let HwParams { a, b } = self.hw;
        self.basis.forward_unchecked(t, s, theta)
            + self.basis.forward_slope(t, s, theta) / a
            + b * b / (S::lit(2.0) * a * a) * one_minus_exp(S::lit(2.0) * a * (s - t))
    }

    /// Covariance of `(ξ_u, ∫_s^u ξ, X_u)` given the state at `s`, for `τ = u - s`.
    pub fn triplet_covariance(&self, tau: S) -> Mat3<S> {
        let HwParams { a, b } = self.hw;
        let BsParams { sigma, rho } = self.bs;
        let x = a * tau;
        let one_e = one_minus_exp(x);
        let b2 = b * b;
        let var_xi = b2 / (S::lit(2.0) * a) * one_minus_exp(S::lit(2.0) * x);
        let cov_xi_a = b2 / (S::lit(2.0) * a * a) * one_e * one_e;
        let var_a = b2 / (a * a * a) * g_fn(x);
        let cov_xi_x = b * rho * sigma / a * one_e + cov_xi_a;
        let cov_a_x = b * rho * sigma / (a * a) * q_fn(x) + var_a;
        let var_x = sigma * sigma * tau + var_a + S::lit(2.0) * rho * sigma * b / (a * a) * q_fn(x);
        [
            [var_xi, cov_xi_a, cov_xi_x],
            [cov_xi_a, var_a, cov_a_x],
            [cov_xi_x, cov_a_x, var_x],
        ]
    }

    /// Conditional moments of `(ξ_u, A^{s}_u, X_u)` given `(ξ_s, X_s)`.
    pub fn triplet_moments(
        &self,
        state: &MarketState<S>,
        s: S,
        u: S,
        xi_s: S,
        log_price_s: S,
    ) -> Result<TripletMoments<S>> {
        if !(state.t <= s && s <= u && u <= self.horizon()) {
            return Err(Error::invalid(format!(
                "triplet moments need t <= s <= u <= T, got t={}, s={s}, u={u}",
                state.t
            )));
        }
        let tau = u - s;
        let a = self.hw.a;
        let growth = one_minus_exp(a * tau) / a;
        let drift = self.alpha_integral(state.t, &state.theta, s, u)
            - self.bs.sigma * self.bs.sigma * tau / S::lit(2.0);
        Ok(TripletMoments {
            mean: [
                xi_s * (-a * tau).exp(),
                xi_s * growth,
                log_price_s + drift + xi_s * growth,
            ],
            cov: self.triplet_covariance(tau),
        })
    }
}

/// One interval of a sampling plan with everything that does not depend on
/// the path precomputed.
#[derive(Clone, Debug)]
pub struct IntervalStep<S> {
    pub from: S,
    pub to: S,
    decay: S,
    growth: S,
    /// `∫ α` over the interval.
    pub alpha_integral: S,
    drift: S,
    pub cov: Mat3<S>,
    pub factor: Mat3<S>,
}

impl<S: Real> IntervalStep<S> {
    /// Conditional mean of `(ξ, A, X)` at the end of the interval.
    #[inline]
    pub fn mean(&self, xi: S, log_price: S) -> Vec3<S> {
        [xi * self.decay, xi * self.growth, log_price + self.drift + xi * self.growth]
    }

    #[inline]
    fn correlate(&self, z: &Vec3<S>) -> Vec3<S> {
        crate::linalg::mat3_vec(&self.factor, z)
    }
}

/// A point of a simulated path.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PathPoint<S> {
    pub date: S,
    pub xi: S,
    /// `∫ ξ` over the interval ending at `date`.
    pub xi_integral: S,
    pub log_price: S,
    /// `-∫_t^date r`.
    pub log_discount: S,
}

/// Precomputed exact-sampling scheme from an observation over a date grid.
#[derive(Clone, Debug)]
pub struct PathPlan<S> {
    pub state: MarketState<S>,
    pub steps: Vec<IntervalStep<S>>,
}

impl<S: Real> PathPlan<S> {
    /// `dates` must be ascending within `[t, T]`; a leading `t` is optional.
    pub fn new(model: &HybridModel<S>, state: &MarketState<S>, dates: &[S]) -> Result<Self> {
        let t = state.t;
        let mut prev = t;
        let mut steps = Vec::with_capacity(dates.len());
        for &u in dates {
            if u < prev || u > model.horizon() {
                return Err(Error::invalid(format!(
                    "simulation dates must be ascending in [t, T], got {u} after {prev}"
                )));
            }
            if u == prev {
                continue;
            }
            let tau = u - prev;
            let a = model.hw.a;
            let alpha_integral = model.alpha_integral(t, &state.theta, prev, u);
            let cov = model.triplet_covariance(tau);
            steps.push(IntervalStep {
                from: prev,
                to: u,
                decay: (-a * tau).exp(),
                growth: one_minus_exp(a * tau) / a,
                alpha_integral,
                drift: alpha_integral - model.bs.sigma * model.bs.sigma * tau / S::lit(2.0),
                factor: gaussian_factor3(&cov),
                cov,
            });
            prev = u;
        }
        Ok(PathPlan { state: *state, steps })
    }

    /// Draws one step: returns the new point and its deviation from the
    /// conditional mean of `(ξ, A, X)`.
    #[inline]
    pub fn advance(&self, k: usize, prev: &PathPoint<S>, rng: &mut PathRng) -> (PathPoint<S>, Vec3<S>) {
        let step = &self.steps[k];
        let z = [S::lit(rng.normal()), S::lit(rng.normal()), S::lit(rng.normal())];
        let m = step.mean(prev.xi, prev.log_price);
        let e = step.correlate(&z);
        let xi_integral = m[1] + e[1];
        (
            PathPoint {
                date: step.to,
                xi: m[0] + e[0],
                xi_integral,
                log_price: m[2] + e[2],
                log_discount: prev.log_discount - step.alpha_integral - xi_integral,
            },
            e,
        )
    }

    pub fn initial_point(&self) -> PathPoint<S> {
        PathPoint {
            date: self.state.t,
            xi: S::zero(),
            xi_integral: S::zero(),
            log_price: self.state.x.ln(),
            log_discount: S::zero(),
        }
    }

    /// Samples a full path; the first entry is the initial state.
    pub fn sample(&self, rng: &mut PathRng) -> Vec<PathPoint<S>> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        let mut p = self.initial_point();
        out.push(p);
        for k in 0..self.steps.len() {
            p = self.advance(k, &p, rng).0;
            out.push(p);
        }
        out
    }
}

/// Exact path of `(ξ, ∫ξ, log S, log discount)` on `dates`, starting from `state`.
pub fn simulate_path<S: Real>(
    model: &HybridModel<S>,
    state: &MarketState<S>,
    dates: &[S],
    rng: &mut PathRng,
) -> Result<Vec<PathPoint<S>>> {
    Ok(PathPlan::new(model, state, dates)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, StreamFamily};
    use approx::assert_relative_eq;

    fn model(b: f64, sigma: f64, rho: f64) -> HybridModel<f64> {
        HybridModel::new(
            TenorBasis::default_30y(),
            HwParams::new(0.05, b).unwrap(),
            BsParams::new(sigma, rho).unwrap(),
        )
    }

    /// The covariance lines exactly as printed in closed form (no rearrangement).
    fn printed_cov(a: f64, b: f64, sigma: f64, rho: f64, tau: f64) -> Mat3<f64> {
        let e1 = 1.0 - (-a * tau).exp();
        let e2 = 1.0 - (-2.0 * a * tau).exp();
        let var_xi = b * b / (2.0 * a) * e2;
        let cov_xi_a = b * b / (a * a) * e1 - b * b / (2.0 * a * a) * e2;
        let var_a = b * b / (a * a) * tau - 2.0 * b * b / a.powi(3) * e1 + b * b / (2.0 * a.powi(3)) * e2;
        let cov_xi_x = b / a * (b / a + rho * sigma) * e1 - b * b / (2.0 * a * a) * e2;
        let cov_a_x = -cov_xi_x / a + b / a * (b / a + rho * sigma) * tau - b * b / a.powi(3) * e1;
        let var_x = (rho * sigma + b / a).powi(2) * tau + (1.0 - rho * rho) * sigma * sigma * tau
            - 2.0 * b / (a * a) * (rho * sigma + b / a) * e1
            + b * b / (2.0 * a.powi(3)) * e2;
        [
            [var_xi, cov_xi_a, cov_xi_x],
            [cov_xi_a, var_a, cov_a_x],
            [cov_xi_x, cov_a_x, var_x],
        ]
    }

    #[test]
    fn covariance_agrees_with_printed_formulas() {
        for &(b, sigma, rho, tau) in &[
            (0.01, 0.3, 0.0, 1.0),
            (0.01, 0.3, -0.4, 3.0),
            (0.02, 0.2, 0.7, 29.0),
            (0.015, 0.25, 0.3, 12.5),
        ] {
            let m = model(b, sigma, rho);
            let c = m.triplet_covariance(tau);
            let p = printed_cov(0.05, b, sigma, rho, tau);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((c[i][j] - p[i][j]).abs() <= 1e-9 * p[i][j].abs().max(1e-12),
                        "({i},{j}) {} vs {}", c[i][j], p[i][j]);
                }
            }
        }
    }

    #[test]
    fn covariance_is_symmetric_psd_on_lattice() {
        for &b in &[0.0, 0.005, 0.01, 0.03] {
            for &sigma in &[0.0, 0.1, 0.3, 0.6] {
                for &rho in &[-1.0, -0.5, 0.0, 0.5, 1.0] {
                    for &tau in &[1e-4, 0.1, 1.0, 5.0, 30.0] {
                        let c = model(b, sigma, rho).triplet_covariance(tau);
                        let (vals, _) = crate::linalg::symmetric_eigen3(&c);
                        let scale = c[0][0].max(c[1][1]).max(c[2][2]).max(1e-300);
                        for v in vals {
                            assert!(v >= -1e-10 * scale, "b={b} s={sigma} r={rho} tau={tau}: {v}");
                        }
                        for i in 0..3 {
                            for j in 0..3 {
                                assert_eq!(c[i][j], c[j][i]);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn covariance_special_cases() {
        let c = model(0.0, 0.3, 0.4).triplet_covariance(2.0);
        assert_eq!(c[0][0], 0.0);
        assert_eq!(c[0][1], 0.0);
        assert_eq!(c[1][1], 0.0);
        assert_relative_eq!(c[2][2], 0.09 * 2.0, epsilon = 1e-15);
        let st = MarketState::new(0.5, 1.0, Theta::flat(0.02)).unwrap();
        let m = model(0.01, 0.3, 0.0).triplet_moments(&st, 1.0, 1.0, 0.003, 0.2).unwrap();
        assert_eq!(m.mean, [0.003, 0.0, 0.2]);
        for row in m.cov {
            for v in row {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn alpha_cases() {
        let m = model(0.01, 0.3, 0.0);
        let th = Theta::new(0.011, 0.027, 0.019);
        assert_eq!(m.alpha(0.4, &th, 0.4), 0.011);
        let m0 = model(0.0, 0.3, 0.0);
        assert_eq!(m0.alpha(0.0, &th, 7.0), m0.basis.forward_rate(0.0, 7.0, &th).unwrap());
        let z = Theta::zero();
        let expected = 0.0001 / 0.005 * (1.0 - (-0.5f64).exp()).powi(2);
        assert_relative_eq!(m.alpha(0.0, &z, 10.0), expected, epsilon = 1e-16);
    }

    /// α solves α' + aα = aμ with α_t = f(t,t): integrate the ODE with RK4 and compare.
    #[test]
    fn alpha_solves_calibration_ode() {
        let m = model(0.01, 0.3, 0.0);
        for th in [Theta::zero(), Theta::new(0.011, 0.027, 0.019)] {
            let t = 0.25;
            let a = 0.05;
            let h = 1e-3;
            let mut y = m.basis.forward_rate(t, t, &th).unwrap();
            let mut s = t;
            // stop short of the first curve knot so μ is smooth on the path
            while s < t + 2.5 - 1e-12 {
                let f = |s: f64, y: f64| a * m.mu_calibrated(t, &th, s) - a * y;
                let k1 = f(s, y);
                let k2 = f(s + h / 2.0, y + h / 2.0 * k1);
                let k3 = f(s + h / 2.0, y + h / 2.0 * k2);
                let k4 = f(s + h, y + h * k3);
                y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                s += h;
            }
            assert!((y - m.alpha(t, &th, s)).abs() < 1e-12, "{y} vs {}", m.alpha(t, &th, s));
        }
    }

    #[test]
    fn mu_calibrated_cases() {
        let m0 = model(0.0, 0.3, 0.0);
        assert_relative_eq!(m0.mu_calibrated(0.0, &Theta::flat(0.02), 13.0), 0.02, epsilon = 1e-15);
        let m = model(0.01, 0.3, 0.0);
        let th = Theta::new(0.011, 0.027, 0.019);
        // s - t = 2 lies in the flat part of every block
        let expected = 0.011 + 0.0001 / (2.0 * 0.0025) * (1.0 - (-2.0 * 0.05 * 2.0f64).exp());
        assert_relative_eq!(m.mu_calibrated(0.0, &th, 2.0), expected, epsilon = 1e-15);
        // inside a sloped piece: compare with a finite-difference slope
        let (t, s, h) = (0.0, 6.0, 1e-5);
        let fd = (m.basis.forward_rate(t, s + h, &th).unwrap() - m.basis.forward_rate(t, s - h, &th).unwrap()) / (2.0 * h);
        let direct = m.basis.forward_rate(t, s, &th).unwrap() + fd / 0.05
            + 0.0001 / (2.0 * 0.0025) * (1.0 - (-2.0 * 0.05 * s).exp());
        assert_relative_eq!(m.mu_calibrated(t, &th, s), direct, epsilon = 1e-9);
    }

    #[test]
    fn alpha_integral_matches_quadrature() {
        let m = model(0.01, 0.3, 0.0);
        let th = Theta::new(0.011, 0.027, 0.019);
        assert_eq!(m.alpha_integral(0.0, &th, 3.0, 3.0), 0.0);
        let m0 = model(0.0, 0.3, 0.0);
        assert_relative_eq!(m0.alpha_integral(0.2, &Theta::flat(0.03), 1.0, 9.0), 0.24, epsilon = 1e-15);
        for &(t, s, u) in &[(0.0, 0.0, 30.0), (0.5, 1.0, 2.0), (1.0, 4.0, 17.5)] {
            // composite Gauss-Legendre on unit sub-intervals, breaking at the knots
            let mut knots: Vec<f64> = vec![s, u];
            for k in [3.0, 10.0, 20.0] {
                if s < t + k && t + k < u {
                    knots.push(t + k);
                }
            }
            knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let gl = [
                (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
                (-0.538_469_310_105_683, 0.478_628_670_499_366_5),
                (0.0, 0.568_888_888_888_888_9),
                (0.538_469_310_105_683, 0.478_628_670_499_366_5),
                (0.906_179_845_938_664, 0.236_926_885_056_189_1),
            ];
            let mut q = 0.0;
            for w in knots.windows(2) {
                let n = 200;
                let h = (w[1] - w[0]) / n as f64;
                for k in 0..n {
                    let c = w[0] + (k as f64 + 0.5) * h;
                    for (x, wt) in gl {
                        q += wt * h / 2.0 * m.alpha(t, &th, c + x * h / 2.0);
                    }
                }
            }
            assert!((m.alpha_integral(t, &th, s, u) - q).abs() < 1e-10);
        }
    }

    #[test]
    fn deterministic_path_when_no_volatility() {
        let m = model(0.0, 0.0, 0.0);
        let th = Theta::new(0.01, 0.03, 0.02);
        let st = MarketState::new(0.0, 100.0, th).unwrap();
        let dates: Vec<f64> = (0..=30).map(|k| k as f64).collect();
        let mut rng = StreamFamily::new(1, Purpose::Pricing, 0).path(0);
        let path = simulate_path(&m, &st, &dates, &mut rng).unwrap();
        for p in &path {
            assert_eq!(p.xi, 0.0);
            let expect = 100f64.ln() + m.alpha_integral(0.0, &th, 0.0, p.date);
            assert!((p.log_price - expect).abs() < 1e-12);
            assert!((p.log_discount + m.basis.forward_integral(0.0, p.date, &th)).abs() < 1e-12);
        }
        let single = simulate_path(&m, &st, &[0.0], &mut rng).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].log_price, 100f64.ln());
    }

    #[test]
    fn rejects_bad_dates() {
        let m = model(0.01, 0.3, 0.0);
        let st = MarketState::new(1.0, 1.0, Theta::zero()).unwrap();
        assert!(PathPlan::new(&m, &st, &[0.5, 2.0]).is_err());
        assert!(PathPlan::new(&m, &st, &[2.0, 1.5]).is_err());
        assert!(PathPlan::new(&m, &st, &[31.0]).is_err());
        assert!(m.triplet_moments(&st, 2.0, 1.5, 0.0, 0.0).is_err());
    }
}
