//! Hedged balance-sheet loss along real-world paths.
//!
//! The book is short the lookback claim and rebalances a stock position and
//! three swaps on a grid `0 = t_0 < … < t_n = 1`. The loss on a path is
//!
//! `ℓ(t_n) - Σ_i Δ_i (x_{i+1} - x_i) - Σ_i Σ_j ρ_ij (SW_j(t_{i+1}) - SW_j(t_i))`
//!
//! where `Δ_i` and the curve sensitivities come from a [`SurfaceProvider`]
//! and the swap notionals `ρ_ij` match the curve sensitivities.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::{SwapSpec, TenorBasis, Theta};
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::model::{HybridModel, MarketState};
use crate::pricer::{price_and_greeks_mc, price_mc, solve_rho, LookbackPayoff, PricingState};
use crate::real_world::FactorPath;
use crate::rng::{Purpose, StreamFamily};
use crate::scalar::Real;

/// Rebalancing dates `0 = t_0 < … < t_n = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RebalanceGrid<S> {
    dates: Vec<S>,
}

impl<S: Real> RebalanceGrid<S> {
    pub fn new(dates: Vec<S>) -> Result<Self> {
        if dates.len() < 2 || dates[0] != S::zero() || *dates.last().unwrap() != S::one() {
            return Err(Error::invalid("rebalance grid must run from exactly 0 to exactly 1"));
        }
        if dates.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("rebalance dates must be strictly ascending"));
        }
        Ok(RebalanceGrid { dates })
    }

    /// `n` equal steps.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("rebalance grid needs at least one step"));
        }
        let mut dates: Vec<S> = (0..=n).map(|k| S::from_usize_lossy(k) / S::from_usize_lossy(n)).collect();
        dates[n] = S::one();
        Self::new(dates)
    }

    pub fn dates(&self) -> &[S] {
        &self.dates
    }

    /// Number of steps `n`.
    pub fn steps(&self) -> usize {
        self.dates.len() - 1
    }
}

/// The three hedging swaps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HedgeSet<S> {
    pub swaps: [SwapSpec<S>; 3],
}

impl<S: Real> HedgeSet<S> {
    pub fn new(swaps: [SwapSpec<S>; 3], horizon: S) -> Result<Self> {
        for (k, s) in swaps.iter().enumerate() {
            if S::from_u32(s.maturity).unwrap() > horizon {
                return Err(Error::invalid(format!("swap maturity {} beyond horizon {horizon}", s.maturity)));
            }
            if swaps[..k].iter().any(|o| o.maturity == s.maturity) {
                return Err(Error::invalid(format!("duplicate swap maturity {}", s.maturity)));
            }
        }
        Ok(HedgeSet { swaps })
    }

    /// Swaps struck at par at time 0 under `theta0`.
    pub fn at_par(basis: &TenorBasis<S>, theta0: &Theta<S>, maturities: [u32; 3]) -> Result<Self> {
        let mut swaps = [SwapSpec { maturity: 1, rate: S::zero() }; 3];
        for (s, &m) in swaps.iter_mut().zip(&maturities) {
            *s = SwapSpec::at_par(basis, theta0, m)?;
        }
        Self::new(swaps, basis.horizon)
    }
}

/// Everything defining the hedged position.
#[derive(Clone, Debug)]
pub struct HedgedBook<S> {
    pub model: HybridModel<S>,
    pub payoff: LookbackPayoff<S>,
    pub rebalance: RebalanceGrid<S>,
    pub hedges: HedgeSet<S>,
    /// Curve at issue of the swaps.
    pub theta0: Theta<S>,
    /// Stock price at 0, the realized maximum for pricing in `(0, 1]`.
    pub s0: S,
    /// With hedging off the loss is the liability value at `t_n`.
    pub hedging: bool,
}

impl<S: Real> HedgedBook<S> {
    /// Pricing state at rebalance date `t` (with the realized maximum).
    pub fn pricing_state(&self, t: S, x: S, theta: Theta<S>) -> Result<PricingState<S>> {
        let prior = if t > S::zero() { Some(self.s0) } else { None };
        Ok(PricingState::new(MarketState::new(t, x, theta)?, prior))
    }

    fn check_observation_convention(&self) -> Result<()> {
        // the realized maximum before t in (0, 1] must be S_0 alone
        let d = self.payoff.dates();
        if d.len() < 2 || d[1] < S::one() {
            return Err(Error::invalid("the first observation after 0 must not precede the end of the rebalance grid"));
        }
        Ok(())
    }
}

/// Sensitivities returned by a provider at one rebalance date.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Surfaces<S> {
    pub delta: S,
    pub dtheta: Vec3<S>,
}

/// Source of the liability value and sensitivities along a path.
pub trait SurfaceProvider<S: Real>: Sync {
    /// `Δ` and `∂ℓ/∂θ` at rebalance date `date_index < n`.
    fn sensitivities(&self, path: u64, date_index: usize, x: S, theta: &Theta<S>) -> Result<Surfaces<S>>;

    /// `ℓ` at the last rebalance date.
    fn terminal_price(&self, path: u64, x: S, theta: &Theta<S>) -> Result<S>;

    /// Risk-neutral paths simulated so far.
    fn inner_simulations(&self) -> u64 {
        0
    }
}

/// Loss on one factor path (dates aligned with the rebalance grid).
pub fn pnl_path<S: Real, P: SurfaceProvider<S> + ?Sized>(
    book: &HedgedBook<S>,
    path: &FactorPath<S>,
    path_id: u64,
    provider: &P,
) -> Result<S> {
    let dates = book.rebalance.dates();
    let n = book.rebalance.steps();
    if path.states.len() != dates.len() {
        return Err(Error::SizeMismatch { left: path.states.len(), right: dates.len() });
    }
    let liability = provider.terminal_price(path_id, path.price(n), &path.theta(n))?;
    if !book.hedging {
        return Ok(liability);
    }
    let basis = &book.model.basis;
    let swap_values = |i: usize| -> [S; 3] {
        let th = path.theta(i);
        book.hedges.swaps.map(|s| basis.swap_price(dates[i], &th, &book.theta0, &s))
    };
    let mut hedge_gain = S::zero();
    let mut sw_now = swap_values(0);
    for i in 0..n {
        let (t, x, th) = (dates[i], path.price(i), path.theta(i));
        let s = provider.sensitivities(path_id, i, x, &th)?;
        let sens = book.hedges.swaps.map(|sw| basis.swap_dtheta(t, &th, &book.theta0, &sw));
        let rho = solve_rho(&s.dtheta, &sens, t)?.rho;
        let sw_next = swap_values(i + 1);
        hedge_gain = hedge_gain + s.delta * (path.price(i + 1) - x);
        for j in 0..3 {
            hedge_gain = hedge_gain + rho[j] * (sw_next[j] - sw_now[j]);
        }
        sw_now = sw_next;
    }
    Ok(liability - hedge_gain)
}

/// Losses of a run with its instrumentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub losses: Vec<f64>,
    pub inner_simulations: u64,
    pub clamped_evaluations: u64,
}

/// Fresh risk-neutral simulations at every `(path, date)`.
pub struct NestedProvider<'a, S: Real> {
    book: &'a HedgedBook<S>,
    m: usize,
    seed: u64,
    counter: AtomicU64,
    initial: OnceLock<Surfaces<S>>,
}

impl<'a, S: Real> NestedProvider<'a, S> {
    pub fn new(book: &'a HedgedBook<S>, m: usize, seed: u64) -> Self {
        NestedProvider { book, m, seed, counter: AtomicU64::new(0), initial: OnceLock::new() }
    }

    fn family(&self, path: u64, date_index: usize) -> StreamFamily {
        let slot = path.wrapping_mul(self.book.rebalance.dates().len() as u64).wrapping_add(date_index as u64);
        StreamFamily::new(self.seed, Purpose::Nested, slot)
    }

    fn compute(&self, family: &StreamFamily, date_index: usize, x: S, theta: &Theta<S>) -> Result<Surfaces<S>> {
        let t = self.book.rebalance.dates()[date_index];
        let st = self.book.pricing_state(t, x, *theta)?;
        let g = price_and_greeks_mc(&self.book.model, &st, &self.book.payoff, self.m, family)?;
        self.counter.fetch_add(self.m as u64, Ordering::Relaxed);
        Ok(Surfaces { delta: g.delta.mean, dtheta: g.dtheta.map(|e| e.mean) })
    }
}

impl<S: Real> SurfaceProvider<S> for NestedProvider<'_, S> {
    fn sensitivities(&self, path: u64, date_index: usize, x: S, theta: &Theta<S>) -> Result<Surfaces<S>> {
        if date_index == 0 {
            // every path starts from the same observed state: price it once
            if let Some(s) = self.initial.get() {
                return Ok(*s);
            }
            let s = self.compute(&StreamFamily::new(self.seed, Purpose::Nested, u64::MAX), 0, x, theta)?;
            return Ok(*self.initial.get_or_init(|| s));
        }
        self.compute(&self.family(path, date_index), date_index, x, theta)
    }

    fn terminal_price(&self, path: u64, x: S, theta: &Theta<S>) -> Result<S> {
        let n = self.book.rebalance.steps();
        let st = self.book.pricing_state(self.book.rebalance.dates()[n], x, *theta)?;
        let p = price_mc(&self.book.model, &st, &self.book.payoff, self.m, &self.family(path, n))?;
        self.counter.fetch_add(self.m as u64, Ordering::Relaxed);
        Ok(p.mean)
    }

    fn inner_simulations(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }
}

fn check_paths<S: Real>(book: &HedgedBook<S>, paths: &[FactorPath<S>]) -> Result<()> {
    book.check_observation_convention()?;
    let x0 = book.s0.ln();
    for p in paths {
        let first = p.states.first().ok_or_else(|| Error::invalid("empty factor path"))?;
        if first[0] != x0 || Theta::new(first[1], first[2], first[3]) != book.theta0 {
            return Err(Error::invalid("factor paths must start from the book's initial state"));
        }
    }
    Ok(())
}

/// Nested estimator: `m` inner paths per outer path and rebalance date.
pub fn run_nested<S: Real>(book: &HedgedBook<S>, paths: &[FactorPath<S>], m: usize, seed: u64) -> Result<RunOutput> {
    check_paths(book, paths)?;
    let n = book.rebalance.steps() as f64;
    log::info!(
        "nested run: about {:.3e} inner paths (n·N·M with n={n}, N={}, M={m})",
        n * paths.len() as f64 * m as f64,
        paths.len()
    );
    let provider = NestedProvider::new(book, m, seed);
    provider.sensitivities(0, 0, book.s0, &book.theta0)?;
    let losses = paths
        .par_iter()
        .enumerate()
        .map(|(k, p)| pnl_path(book, p, k as u64, &provider).map(|v| v.to_f64_lossy()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(RunOutput { losses, inner_simulations: provider.inner_simulations(), clamped_evaluations: 0 })
}

/// Losses from stored sparse-grid surfaces; no risk-neutral simulation.
pub fn run_sparse(
    book: &HedgedBook<f64>,
    tables: &crate::grid_file::GridTables,
    paths: &[FactorPath<f64>],
) -> Result<RunOutput> {
    check_paths(book, paths)?;
    tables.check_compatible(book)?;
    let before = tables.grid().clamped_count();
    let losses = paths
        .par_iter()
        .enumerate()
        .map(|(k, p)| pnl_path(book, p, k as u64, tables))
        .collect::<Result<Vec<f64>>>()?;
    Ok(RunOutput {
        losses,
        inner_simulations: 0,
        clamped_evaluations: tables.grid().clamped_count() - before,
    })
}
