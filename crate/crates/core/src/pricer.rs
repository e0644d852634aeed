//! Monte Carlo value of the lookback liability and its sensitivities.
//!
//! Price, delta and the three curve sensitivities come from a single set of
//! exactly simulated paths. Sensitivities use likelihood-ratio weights built
//! from the Gaussian transition of `(ξ, ∫ξ, log S)` between observation
//! dates, so the non-smooth payoff is never differentiated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{inverse3, solve_with_condition, Mat3, Vec3};
use crate::model::{HybridModel, MarketState, PathPlan, PathPoint};
use crate::rng::StreamFamily;
use crate::scalar::Real;

/// A payoff paid at the last observation date.
pub trait Payoff<S: Real>: Sync {
    /// Observation dates, starting at 0 and ending at the horizon.
    fn dates(&self) -> &[S];

    /// Payoff and its derivative in the realized maximum, from the realized
    /// maximum (if any) and the stock prices at the remaining dates.
    fn evaluate(&self, realized_max: Option<S>, future: &[S]) -> (S, S);
}

fn validate_dates<S: Real>(dates: &[S]) -> Result<()> {
    if dates.len() < 2 || dates[0] != S::zero() {
        return Err(Error::invalid("observation dates need at least two points starting at 0"));
    }
    if dates.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("observation dates must be strictly ascending"));
    }
    Ok(())
}

/// `max_ℓ S_{τ_ℓ} - S_T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LookbackPayoff<S> {
    dates: Vec<S>,
}

impl<S: Real> LookbackPayoff<S> {
    pub fn new(dates: Vec<S>) -> Result<Self> {
        validate_dates(&dates)?;
        Ok(LookbackPayoff { dates })
    }

    /// Anniversaries `0, 1, …, years`.
    pub fn annual(years: u32) -> Result<Self> {
        Self::new((0..=years).map(|k| S::from_u32(k).unwrap()).collect())
    }

    pub fn horizon(&self) -> S {
        *self.dates.last().unwrap()
    }

    pub fn dates(&self) -> &[S] {
        &self.dates
    }
}

/// Running maximum minus last value of a full path of observations.
pub fn payoff<S: Real>(values: &[S]) -> S {
    let last = *values.last().expect("payoff of an empty path");
    values.iter().copied().fold(last, S::max) - last
}

impl<S: Real> Payoff<S> for LookbackPayoff<S> {
    fn dates(&self) -> &[S] {
        &self.dates
    }

    fn evaluate(&self, realized_max: Option<S>, future: &[S]) -> (S, S) {
        let last = *future.last().expect("no observation left after t");
        let future_max = future.iter().copied().fold(last, S::max);
        match realized_max {
            Some(y) if y > future_max => (y - last, S::one()),
            _ => (future_max - last, S::zero()),
        }
    }
}

/// Pays a fixed amount at the horizon; used to check discounting and weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantPayoff<S> {
    dates: Vec<S>,
    pub amount: S,
}

impl<S: Real> ConstantPayoff<S> {
    pub fn new(dates: Vec<S>, amount: S) -> Result<Self> {
        validate_dates(&dates)?;
        Ok(ConstantPayoff { dates, amount })
    }
}

impl<S: Real> Payoff<S> for ConstantPayoff<S> {
    fn dates(&self) -> &[S] {
        &self.dates
    }

    fn evaluate(&self, _: Option<S>, _: &[S]) -> (S, S) {
        (self.amount, S::zero())
    }
}

/// Market observation plus the maximum of the stock over observation dates
/// strictly before `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PricingState<S> {
    pub market: MarketState<S>,
    pub prior_max: Option<S>,
}

impl<S: Real> PricingState<S> {
    pub fn new(market: MarketState<S>, prior_max: Option<S>) -> Self {
        PricingState { market, prior_max }
    }

    /// Realized maximum at `t` and its derivative in `x`.
    fn realized(&self, dates: &[S]) -> Result<(Option<S>, S)> {
        let t = self.market.t;
        let x = self.market.x;
        let on_date = dates.iter().any(|&d| d == t);
        if self.prior_max.is_none() && dates.iter().any(|&d| d < t) {
            return Err(Error::invalid(format!(
                "observation dates before t={t} require the realized maximum"
            )));
        }
        Ok(match (self.prior_max, on_date) {
            (Some(p), true) if x > p => (Some(x), S::one()),
            (Some(p), _) => (Some(p), S::zero()),
            (None, true) => (Some(x), S::one()),
            (None, false) => (None, S::zero()),
        })
    }
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate<S> {
    pub mean: S,
    pub se: S,
}

impl<S: Real> Estimate<S> {
    /// Mean and `std / √M` of the samples (unbiased variance).
    pub fn from_samples(xs: impl IntoIterator<Item = S>) -> Self {
        // Welford
        let mut n = 0usize;
        let mut mean = S::zero();
        let mut m2 = S::zero();
        for x in xs {
            n += 1;
            let d = x - mean;
            mean = mean + d / S::from_usize_lossy(n);
            m2 = m2 + d * (x - mean);
        }
        let se = if n > 1 {
            (m2.max(S::zero()) / S::from_usize_lossy(n - 1) / S::from_usize_lossy(n)).sqrt()
        } else {
            S::zero()
        };
        Estimate { mean, se }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceAndGreeks<S> {
    pub price: Estimate<S>,
    pub delta: Estimate<S>,
    /// `∂ℓ/∂θ_i`.
    pub dtheta: [Estimate<S>; 3],
}

/// Per-path contributions of the five estimators.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct GreekSample<S> {
    pub price: S,
    pub delta: S,
    pub dtheta: Vec3<S>,
}

/// Row of `Σ⁻¹` belonging to `log S`, i.e. the coefficients of the score of
/// the transition density with respect to the conditional mean of `log S`.
///
/// Without short-rate volatility the rate components are deterministic and
/// the score reduces to `(X - μ_X) / Var X`.
pub fn log_price_score_row<S: Real>(cov: &Mat3<S>, from: S, to: S) -> Result<Vec3<S>> {
    let singular = || Error::SingularCovariance { from: from.to_f64_lossy(), to: to.to_f64_lossy() };
    if cov[0][0] == S::zero() && cov[1][1] == S::zero() {
        if cov[2][2] > S::zero() {
            return Ok([S::zero(), S::zero(), S::one() / cov[2][2]]);
        }
        return Err(singular());
    }
    let inv = inverse3(cov).ok_or_else(singular)?;
    Ok(inv[2])
}

#[inline]
fn dot3<S: Real>(a: &Vec3<S>, b: &Vec3<S>) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Delta weight `(1/x) [Σ⁻¹ (v - μ)]_X` from the first transition after `t`.
pub fn delta_weight<S: Real>(score_row: &Vec3<S>, residual: &Vec3<S>, x: S) -> S {
    dot3(score_row, residual) / x
}

/// Curve weight `-∫_t^T h^{t,i} + Σ_ℓ (∫_{τ_{ℓ-1}}^{τ_ℓ} h^{t,i}) [Σ_ℓ⁻¹ (v_ℓ - μ_ℓ)]_X`.
pub fn theta_weight<S: Real>(
    total_block_integral: S,
    block_integrals: &[S],
    scores: &[S],
) -> S {
    block_integrals
        .iter()
        .zip(scores)
        .fold(-total_block_integral, |acc, (&c, &s)| acc + c * s)
}

/// Everything needed to simulate and weight paths from one state.
struct Plan<'a, S: Real, P: Payoff<S>> {
    payoff: &'a P,
    paths: PathPlan<S>,
    realized: Option<S>,
    drealized: S,
    score_rows: Vec<Vec3<S>>,
    /// `∫ h^{t,i}` over each step.
    block_integrals: Vec<Vec3<S>>,
    total_block_integrals: Vec3<S>,
}

impl<'a, S: Real, P: Payoff<S>> Plan<'a, S, P> {
    fn new(model: &HybridModel<S>, state: &PricingState<S>, payoff: &'a P, weights: bool) -> Result<Self> {
        let t = state.market.t;
        let dates = payoff.dates();
        let horizon = *dates.last().unwrap();
        if horizon != model.horizon() {
            return Err(Error::invalid(format!(
                "payoff horizon {horizon} differs from model horizon {}",
                model.horizon()
            )));
        }
        if !(t < horizon) {
            return Err(Error::invalid(format!("pricing needs t < T, got t={t}")));
        }
        let (realized, drealized) = state.realized(dates)?;
        let future: Vec<S> = dates.iter().copied().filter(|&d| d > t).collect();
        let paths = PathPlan::new(model, &state.market, &future)?;
        let mut score_rows = Vec::new();
        let mut block_integrals = Vec::new();
        if weights {
            for step in &paths.steps {
                score_rows.push(log_price_score_row(&step.cov, step.from, step.to)?);
                let b = &model.basis;
                block_integrals.push([
                    b.integral_between(0, t, step.from, step.to),
                    b.integral_between(1, t, step.from, step.to),
                    b.integral_between(2, t, step.from, step.to),
                ]);
            }
        }
        Ok(Plan {
            payoff,
            paths,
            realized,
            drealized,
            score_rows,
            block_integrals,
            total_block_integrals: model.basis.integrals(t, horizon),
        })
    }

    /// Simulates path `k`; returns price sample and, if weighted, the Greek samples.
    fn sample(&self, family: &StreamFamily, k: u64, weights: bool, future: &mut Vec<S>) -> GreekSample<S> {
        let mut rng = family.path(k);
        let n = self.paths.steps.len();
        future.clear();
        let mut p: PathPoint<S> = self.paths.initial_point();
        let mut delta_w = S::zero();
        let mut theta_w = [S::zero(); 3];
        for l in 0..n {
            let (next, resid) = self.paths.advance(l, &p, &mut rng);
            if weights {
                let s = dot3(&self.score_rows[l], &resid);
                if l == 0 {
                    delta_w = s / self.paths.state.x;
                }
                for i in 0..3 {
                    theta_w[i] = theta_w[i] + self.block_integrals[l][i] * s;
                }
            }
            future.push(next.log_price.exp());
            p = next;
        }
        let beta = p.log_discount.exp();
        let (g, dg_dy) = self.payoff.evaluate(self.realized, future);
        let price = beta * g;
        if !weights {
            return GreekSample { price, ..Default::default() };
        }
        let mut dtheta = [S::zero(); 3];
        for i in 0..3 {
            dtheta[i] = price * (theta_w[i] - self.total_block_integrals[i]);
        }
        GreekSample {
            price,
            delta: price * delta_w + beta * dg_dy * self.drealized,
            dtheta,
        }
    }
}

fn check_paths(m: usize) -> Result<()> {
    if m < 2 {
        return Err(Error::invalid(format!("need at least 2 paths, got {m}")));
    }
    Ok(())
}

/// Price `(1/M) Σ β_T G` with its standard error.
pub fn price_mc<S: Real, P: Payoff<S>>(
    model: &HybridModel<S>,
    state: &PricingState<S>,
    payoff: &P,
    m: usize,
    family: &StreamFamily,
) -> Result<Estimate<S>> {
    check_paths(m)?;
    let plan = Plan::new(model, state, payoff, false)?;
    let mut buf = Vec::new();
    Ok(Estimate::from_samples((0..m as u64).map(|k| plan.sample(family, k, false, &mut buf).price)))
}

/// Per-path samples of all five estimators.
pub fn greek_samples<S: Real, P: Payoff<S>>(
    model: &HybridModel<S>,
    state: &PricingState<S>,
    payoff: &P,
    m: usize,
    family: &StreamFamily,
) -> Result<Vec<GreekSample<S>>> {
    check_paths(m)?;
    let plan = Plan::new(model, state, payoff, true)?;
    let mut buf = Vec::new();
    Ok((0..m as u64).map(|k| plan.sample(family, k, true, &mut buf)).collect())
}

/// Price, delta and curve sensitivities from one path set.
pub fn price_and_greeks_mc<S: Real, P: Payoff<S>>(
    model: &HybridModel<S>,
    state: &PricingState<S>,
    payoff: &P,
    m: usize,
    family: &StreamFamily,
) -> Result<PriceAndGreeks<S>> {
    let samples = greek_samples(model, state, payoff, m, family)?;
    Ok(PriceAndGreeks {
        price: Estimate::from_samples(samples.iter().map(|s| s.price)),
        delta: Estimate::from_samples(samples.iter().map(|s| s.delta)),
        dtheta: [0, 1, 2].map(|i| Estimate::from_samples(samples.iter().map(|s| s.dtheta[i]))),
    })
}

/// Swap notionals matching the curve sensitivities of the liability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HedgeQuantities<S> {
    pub rho: Vec3<S>,
    /// 1-norm condition number of the swap sensitivity matrix.
    pub cond: S,
}

/// Largest accepted condition number of the swap sensitivity matrix.
pub const MAX_HEDGE_CONDITION: f64 = 1e12;

/// Solves `Σ_j ρ_j ∂SW_j/∂θ_i = ∂ℓ/∂θ_i`; `swap_sens[j]` holds `∂SW_j/∂θ`.
/// `date` only labels the error.
pub fn solve_rho<S: Real>(dtheta: &Vec3<S>, swap_sens: &[Vec3<S>; 3], date: S) -> Result<HedgeQuantities<S>> {
    let a: Vec<Vec<S>> = (0..3).map(|i| (0..3).map(|j| swap_sens[j][i]).collect()).collect();
    let fail = |cond: f64| Error::SingularHedgeMatrix { date: date.to_f64_lossy(), cond };
    let (x, cond) = solve_with_condition(&a, dtheta).ok_or_else(|| fail(f64::INFINITY))?;
    if !(cond.to_f64_lossy() <= MAX_HEDGE_CONDITION) {
        return Err(fail(cond.to_f64_lossy()));
    }
    Ok(HedgeQuantities { rho: [x[0], x[1], x[2]], cond })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::{TenorBasis, Theta};
    use crate::model::{BsParams, HwParams};
    use crate::rng::Purpose;

    fn model(b: f64, sigma: f64, rho: f64) -> HybridModel<f64> {
        HybridModel::new(
            TenorBasis::default_30y(),
            HwParams::new(0.05, b).unwrap(),
            BsParams::new(sigma, rho).unwrap(),
        )
    }

    fn state(t: f64, x: f64, prior: Option<f64>) -> PricingState<f64> {
        PricingState::new(MarketState::new(t, x, Theta::new(0.011, 0.027, 0.019)).unwrap(), prior)
    }

    #[test]
    fn payoff_cases() {
        assert_eq!(payoff(&[5.0, 5.0, 5.0]), 0.0);
        assert_eq!(payoff(&[100.0, 120.0, 90.0]), 30.0);
        assert_eq!(payoff(&[1.0, 2.0, 3.0, 4.0]), 0.0);
        let lb = LookbackPayoff::<f64>::annual(2).unwrap();
        assert_eq!(lb.evaluate(Some(100.0), &[120.0, 90.0]), (30.0, 0.0));
        assert_eq!(lb.evaluate(Some(130.0), &[120.0, 90.0]), (40.0, 1.0));
        assert_eq!(lb.evaluate(None, &[120.0, 90.0]), (30.0, 0.0));
    }

    #[test]
    fn payoff_dates_validated() {
        assert!(LookbackPayoff::new(vec![0.0]).is_err());
        assert!(LookbackPayoff::new(vec![1.0, 2.0]).is_err());
        assert!(LookbackPayoff::new(vec![0.0, 2.0, 2.0]).is_err());
        assert_eq!(LookbackPayoff::<f64>::annual(30).unwrap().horizon(), 30.0);
    }

    #[test]
    fn realized_max_convention() {
        let d = [0.0, 1.0, 2.0];
        assert_eq!(state(0.0, 1.0, None).realized(&d).unwrap(), (Some(1.0), 1.0));
        assert_eq!(state(0.5, 1.0, None).realized(&d).is_err(), true);
        assert_eq!(state(0.5, 1.3, Some(1.0)).realized(&d).unwrap(), (Some(1.0), 0.0));
        assert_eq!(state(1.0, 1.3, Some(1.0)).realized(&d).unwrap(), (Some(1.3), 1.0));
        assert_eq!(state(1.0, 0.7, Some(1.0)).realized(&d).unwrap(), (Some(1.0), 0.0));
    }

    #[test]
    fn deterministic_price_is_exact() {
        let m = model(0.0, 0.0, 0.0);
        let th = Theta::new(0.011, 0.027, 0.019);
        let st = PricingState::new(MarketState::new(0.0, 100.0, th).unwrap(), None);
        let lb = LookbackPayoff::annual(30).unwrap();
        let fam = StreamFamily::new(3, Purpose::Pricing, 0);
        let got = price_mc(&m, &st, &lb, 8, &fam).unwrap();
        let path: Vec<f64> = (0..=30)
            .map(|k| 100.0 * m.alpha_integral(0.0, &th, 0.0, k as f64).exp())
            .collect();
        let expected = m.basis.zc_price(0.0, &th, 30.0) * payoff(&path);
        assert!((got.mean - expected).abs() < 1e-9 * expected.max(1.0));
        assert!(got.se < 1e-9);
    }

    #[test]
    fn flat_deterministic_path_has_zero_delta() {
        // zero curve, no rate volatility and a vanishing stock volatility:
        // the stock is flat up to O(σ), so price and delta are O(σ); the weight
        // estimator stays unbiased but its spread does not shrink with σ
        let m = model(0.0, 1e-8, 0.0);
        let st = PricingState::new(MarketState::new(0.0, 100.0, Theta::zero()).unwrap(), None);
        let lb = LookbackPayoff::annual(30).unwrap();
        let fam = StreamFamily::new(3, Purpose::Pricing, 0);
        let g = price_and_greeks_mc(&m, &st, &lb, 2000, &fam).unwrap();
        assert!(g.price.mean.abs() < 1e-4);
        assert!(g.delta.mean.abs() < 3.0 * g.delta.se, "{:?}", g.delta);
    }

    #[test]
    fn singular_covariance_is_refused() {
        let m = model(0.0, 0.0, 0.0);
        let lb = LookbackPayoff::annual(30).unwrap();
        let fam = StreamFamily::new(3, Purpose::Pricing, 0);
        let err = price_and_greeks_mc(&m, &state(0.0, 1.0, None), &lb, 4, &fam).unwrap_err();
        assert!(matches!(err, Error::SingularCovariance { .. }));
        assert!(err.is_numerical());
    }

    #[test]
    fn price_component_is_bit_identical() {
        let m = model(0.01, 0.3, 0.0);
        let lb = LookbackPayoff::annual(30).unwrap();
        let fam = StreamFamily::new(11, Purpose::Pricing, 4);
        let st = state(0.4, 1.1, Some(1.0));
        let a = price_mc(&m, &st, &lb, 200, &fam).unwrap();
        let b = price_and_greeks_mc(&m, &st, &lb, 200, &fam).unwrap();
        assert_eq!(a, b.price);
        assert_eq!(b, price_and_greeks_mc(&m, &st, &lb, 200, &fam).unwrap());
        assert!(a.mean > 0.0 && a.se > 0.0);
    }

    #[test]
    fn needs_two_paths_and_matching_horizon() {
        let m = model(0.01, 0.3, 0.0);
        let fam = StreamFamily::new(1, Purpose::Pricing, 0);
        let lb = LookbackPayoff::annual(30).unwrap();
        assert!(price_mc(&m, &state(0.0, 1.0, None), &lb, 1, &fam).is_err());
        let short = LookbackPayoff::annual(20).unwrap();
        assert!(price_mc(&m, &state(0.0, 1.0, None), &short, 10, &fam).is_err());
    }

    /// At ρ = 0 the full score equals the 2×2 form built on `(A, X)` only.
    #[test]
    fn delta_score_reduces_to_two_by_two_without_correlation() {
        let m = model(0.01, 0.3, 0.0);
        let cov = m.triplet_covariance(1.0);
        let row = log_price_score_row(&cov, 0.0, 1.0).unwrap();
        let (saa, sax, sxx) = (cov[1][1], cov[1][2], cov[2][2]);
        let det = saa * sxx - sax * sax;
        let (i12, i22) = (-sax / det, saa / det);
        for resid in [[0.01, -0.02, 0.3], [-0.004, 0.05, -0.1], [0.0, 0.0, 1.0]] {
            let full = delta_weight(&row, &resid, 1.7);
            let two = (i12 * resid[1] + i22 * resid[2]) / 1.7;
            assert!((full - two).abs() < 1e-10 * two.abs().max(1.0), "{full} vs {two}");
        }
        let mc = model(0.01, 0.3, 0.5);
        let row = log_price_score_row(&mc.triplet_covariance(1.0), 0.0, 1.0).unwrap();
        assert!(row[0].abs() > 1e-3);
    }

    #[test]
    fn theta_weight_vanishes_for_unused_blocks() {
        assert_eq!(theta_weight(0.0, &[0.0, 0.0], &[1.3, -2.0]), 0.0);
        assert_eq!(theta_weight(2.0, &[1.0, 1.0], &[0.5, 0.25]), -1.25);
    }

    #[test]
    fn solve_rho_cases() {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(solve_rho(&[0.0, 0.0, 0.0], &id, 1.0).unwrap().rho, [0.0, 0.0, 0.0]);
        assert_eq!(solve_rho(&[1.5, -2.0, 0.25], &id, 1.0).unwrap().rho, [1.5, -2.0, 0.25]);
        let sing = [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]];
        match solve_rho(&[1.0, 1.0, 1.0], &sing, 7.0) {
            Err(Error::SingularHedgeMatrix { date, .. }) => assert_eq!(date, 7.0),
            other => panic!("{other:?}"),
        }
        let near = [[1.0, 0.0, 0.0], [1.0, 1e-14, 0.0], [0.0, 0.0, 1.0]];
        assert!(solve_rho(&[1.0, 1.0, 1.0], &near, 2.0).is_err());
    }

    #[test]
    fn solve_rho_reference_swaps_residual() {
        let b = TenorBasis::default_30y();
        let th0 = Theta::new(0.011, 0.027, 0.019);
        let swaps = [5, 15, 30].map(|m| crate::curve::SwapSpec::at_par(&b, &th0, m).unwrap());
        let th = Theta::new(0.013, 0.024, 0.021);
        let sens = swaps.map(|s| b.swap_dtheta(1.0, &th, &th0, &s));
        let rhs = [-3.1, 12.0, 0.7];
        let h = solve_rho(&rhs, &sens, 1.0).unwrap();
        let norm: f64 = rhs.iter().map(|v: &f64| v.abs()).sum();
        for i in 0..3 {
            let lhs: f64 = (0..3).map(|j| h.rho[j] * sens[j][i]).sum();
            assert!((lhs - rhs[i]).abs() < 1e-10 * norm);
        }
    }
}
