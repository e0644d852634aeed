//! Loss distributions of a hedged variable annuity book, computed by nested
//! Monte Carlo or by sparse-grid interpolation of price sensitivities.

pub mod config;
pub mod curve;
pub mod error;
pub mod grid_file;
pub mod linalg;
pub mod model;
pub mod pnl;
pub mod pricer;
pub mod real_world;
pub mod risk;
pub mod rng;
pub mod scalar;
pub mod sparse_grid;

pub use error::{Error, Result};
pub use scalar::{OrderedField, Real};

pub type Theta = curve::Theta<f64>;
pub type TenorBasis = curve::TenorBasis<f64>;
pub type SwapSpec = curve::SwapSpec<f64>;
pub type HybridModel = model::HybridModel<f64>;
pub type MarketState = model::MarketState<f64>;
