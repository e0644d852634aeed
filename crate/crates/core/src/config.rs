//! Engine configuration (JSON) and run summaries.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curve::{SwapSpec, TenorBasis};
use crate::error::{Error, Result};
use crate::grid_file::GridSpec;
use crate::model::{BsParams, HwParams, HybridModel};
use crate::pnl::{HedgeSet, HedgedBook, RebalanceGrid};
use crate::pricer::LookbackPayoff;
use crate::real_world::{calibrate, simulate_paths, FactorPath, MomentSpec, RealWorldDriver};
use crate::risk::{AlphaConvention, RiskRow};
use crate::rng::{Purpose, StreamFamily};
use crate::sparse_grid::LevelConvention;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    pub rho: f64,
    /// Maturity in whole years.
    pub horizon: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { a: 0.05, b: 0.01, sigma: 0.3, rho: 0.0, horizon: 30 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TenorConfig {
    pub breakpoints: [f64; 4],
}

impl Default for TenorConfig {
    fn default() -> Self {
        TenorConfig { breakpoints: [1.0, 5.0, 15.0, 25.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HedgeConfig {
    pub maturities: [u32; 3],
    /// Fixed rates; par rates at 0 when absent.
    pub rates: Option<[f64; 3]>,
    pub enabled: bool,
}

impl Default for HedgeConfig {
    fn default() -> Self {
        HedgeConfig { maturities: [5, 15, 30], rates: None, enabled: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub kappa: u32,
    /// Risk-neutral paths per node and date.
    pub paths: usize,
    /// Half-width of the box in standard deviations of the one-year law.
    pub box_width: f64,
    pub level_convention: LevelConvention,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { kappa: 3, paths: 5000, box_width: 5.0, level_convention: LevelConvention::Standard }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub tenor: TenorConfig,
    /// Lookback observation dates; anniversaries `0..=horizon` when absent.
    #[serde(default)]
    pub observation_dates: Option<Vec<f64>>,
    #[serde(default)]
    pub hedges: HedgeConfig,
    /// Explicit rebalance dates; `rebalance_steps` equal steps when absent.
    #[serde(default)]
    pub rebalance_dates: Option<Vec<f64>>,
    #[serde(default = "default_steps")]
    pub rebalance_steps: usize,
    /// Required: the target law and the initial state.
    pub real_world: MomentSpec<f64>,
    #[serde(default = "default_outer")]
    pub outer_paths: usize,
    #[serde(default = "default_nested")]
    pub nested_paths: usize,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub alpha_convention: AlphaConvention,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_steps() -> usize {
    12
}
fn default_outer() -> usize {
    2000
}
fn default_nested() -> usize {
    500
}
fn default_alphas() -> Vec<f64> {
    crate::risk::REPORT_ALPHAS.to_vec()
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn cfg<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidInput(m) => Error::Config(m),
        other => other,
    })
}

impl EngineConfig {
    /// Defaults around a given real-world specification.
    pub fn with_real_world(real_world: MomentSpec<f64>) -> Self {
        serde_json::from_value(serde_json::json!({ "real_world": real_world })).expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: EngineConfig = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.book()?;
        if self.outer_paths == 0 {
            return Err(Error::Config("outer_paths must be positive".into()));
        }
        if self.nested_paths < 2 || self.grid.paths < 2 {
            return Err(Error::Config("risk-neutral path counts must be at least 2".into()));
        }
        if !(self.grid.box_width > 0.0) {
            return Err(Error::Config("grid.box_width must be positive".into()));
        }
        if self.alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::Config("alphas must lie in (0,1)".into()));
        }
        cfg(self.domain().map(|_| ()))
    }

    /// SHA-256 of the canonical JSON of the resolved configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn model(&self) -> Result<HybridModel<f64>> {
        let m = &self.model;
        let [t1, t2, t3, t4] = self.tenor.breakpoints;
        cfg((|| {
            Ok(HybridModel::new(
                TenorBasis::new(t1, t2, t3, t4, m.horizon as f64)?,
                HwParams::new(m.a, m.b)?,
                BsParams::new(m.sigma, m.rho)?,
            ))
        })())
    }

    pub fn book(&self) -> Result<HedgedBook<f64>> {
        let model = self.model()?;
        let rw = &self.real_world;
        cfg((|| {
            let payoff = match &self.observation_dates {
                Some(d) => LookbackPayoff::new(d.clone())?,
                None => LookbackPayoff::annual(self.model.horizon)?,
            };
            if payoff.horizon() != model.horizon() {
                return Err(Error::invalid("last observation date must equal the horizon"));
            }
            let rebalance = match &self.rebalance_dates {
                Some(d) => RebalanceGrid::new(d.clone())?,
                None => RebalanceGrid::uniform(self.rebalance_steps)?,
            };
            let hedges = match self.hedges.rates {
                Some(r) => {
                    let m = self.hedges.maturities;
                    HedgeSet::new(
                        [SwapSpec::new(m[0], r[0])?, SwapSpec::new(m[1], r[1])?, SwapSpec::new(m[2], r[2])?],
                        model.horizon(),
                    )?
                }
                None => HedgeSet::at_par(&model.basis, &rw.theta0, self.hedges.maturities)?,
            };
            Ok(HedgedBook {
                model,
                payoff,
                rebalance,
                hedges,
                theta0: rw.theta0,
                s0: rw.x0.exp(),
                hedging: self.hedges.enabled,
            })
        })())
    }

    pub fn driver(&self) -> Result<RealWorldDriver<f64>> {
        calibrate(&self.real_world)
    }

    pub fn domain(&self) -> Result<crate::sparse_grid::DomainBox<f64>> {
        self.real_world.truncation_box(self.grid.box_width)
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        Ok(GridSpec {
            domain: self.domain()?,
            kappa: self.grid.kappa,
            convention: self.grid.level_convention,
            paths: self.grid.paths,
            seed: self.seed,
            config_hash: self.hash(),
        })
    }

    /// Outer paths on the rebalance grid under `spec` (the configured law by default).
    pub fn outer_paths_for(&self, spec: &MomentSpec<f64>) -> Result<Vec<FactorPath<f64>>> {
        let book = self.book()?;
        let driver = calibrate(spec)?;
        simulate_paths(
            &driver,
            book.rebalance.dates(),
            self.outer_paths,
            &StreamFamily::new(self.seed, Purpose::RealWorld, 0),
        )
    }
}

/// Wall-clock of a pipeline phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTime {
    pub phase: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub inner_simulations: u64,
    pub clamped_evaluations: u64,
    pub outer_paths: u64,
}

/// Summary written next to every run's artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub phases: Vec<PhaseTime>,
    pub counters: Counters,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub risk: Vec<RiskRow>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wasserstein: Option<f64>,
    pub artifacts: Vec<PathBuf>,
}
