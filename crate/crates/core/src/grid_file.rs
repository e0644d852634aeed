//! Stored sparse-grid surfaces and their file format.
//!
//! Layout: the bytes `SGRT`, a little-endian `u32` header length, a JSON
//! header, then one block of little-endian `f64` surpluses per
//! `(surface, date)` in header order, each in canonical node order.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::Theta;
use crate::error::{Error, Result};
use crate::model::HybridModel;
use crate::pnl::{HedgedBook, SurfaceProvider, Surfaces};
use crate::pricer::{price_and_greeks_mc, price_mc};
use crate::rng::{Purpose, StreamFamily};
use crate::sparse_grid::{DomainBox, LevelConvention, SparseGrid, ORDERING_TAG};

pub const MAGIC: &[u8; 4] = b"SGRT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKind {
    Price,
    Delta,
    Dtheta1,
    Dtheta2,
    Dtheta3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockInfo {
    pub surface: SurfaceKind,
    pub date_index: usize,
}

/// How the surfaces were produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    /// Risk-neutral paths per node and date.
    pub paths: usize,
    pub config_hash: String,
    pub model: HybridModel<f64>,
    pub observation_dates: Vec<f64>,
    pub s0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridHeader {
    pub version: u32,
    pub dim: usize,
    pub kappa: u32,
    pub level_convention: LevelConvention,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub dates: Vec<f64>,
    pub node_count: usize,
    pub ordering: String,
    pub blocks: Vec<BlockInfo>,
    pub provenance: Provenance,
}

/// Surfaces `Δ`, `∂ℓ/∂θ_i` at `t_0 … t_{n-1}` and `ℓ` at `t_n`, as surpluses.
#[derive(Clone, Debug)]
pub struct GridTables {
    header: GridHeader,
    grid: Arc<SparseGrid<f64>>,
    blocks: Vec<Vec<f64>>,
}

fn block_layout(n: usize) -> Vec<BlockInfo> {
    let mut out = Vec::with_capacity(4 * n + 1);
    for date_index in 0..n {
        for surface in [SurfaceKind::Delta, SurfaceKind::Dtheta1, SurfaceKind::Dtheta2, SurfaceKind::Dtheta3] {
            out.push(BlockInfo { surface, date_index });
        }
    }
    out.push(BlockInfo { surface: SurfaceKind::Price, date_index: n });
    out
}

/// Build settings for [`build_grid_tables`].
#[derive(Clone, Debug)]
pub struct GridSpec {
    pub domain: DomainBox<f64>,
    pub kappa: u32,
    pub convention: LevelConvention,
    pub paths: usize,
    pub seed: u64,
    pub config_hash: String,
}

/// Prices every node at every rebalance date and hierarchizes the surfaces.
/// All nodes of a date share the same random numbers. Returns the tables and
/// the number of risk-neutral paths simulated.
pub fn build_grid_tables(book: &HedgedBook<f64>, spec: &GridSpec) -> Result<(GridTables, u64)> {
    if spec.domain.dim() != 4 {
        return Err(Error::invalid("grid box must have four dimensions (x, θ1, θ2, θ3)"));
    }
    let grid = Arc::new(SparseGrid::new(spec.domain.clone(), spec.kappa, spec.convention)?);
    let coords = grid.coordinates();
    let dates = book.rebalance.dates().to_vec();
    let n = book.rebalance.steps();
    let jobs: Vec<(usize, usize)> = (0..=n).flat_map(|i| (0..coords.len()).map(move |k| (i, k))).collect();
    let values: Vec<[f64; 4]> = jobs
        .par_iter()
        .map(|&(i, k)| {
            let y = &coords[k];
            let fam = StreamFamily::new(spec.seed, Purpose::GridBuild, i as u64);
            let wrap = |e: Error| Error::NodePricing { node: k, date_index: i, source: Box::new(e) };
            let st = book.pricing_state(dates[i], y[0], Theta::new(y[1], y[2], y[3])).map_err(wrap)?;
            if i == n {
                let p = price_mc(&book.model, &st, &book.payoff, spec.paths, &fam).map_err(wrap)?;
                Ok([p.mean, 0.0, 0.0, 0.0])
            } else {
                let g = price_and_greeks_mc(&book.model, &st, &book.payoff, spec.paths, &fam).map_err(wrap)?;
                Ok([g.delta.mean, g.dtheta[0].mean, g.dtheta[1].mean, g.dtheta[2].mean])
            }
        })
        .collect::<Result<_>>()?;
    let layout = block_layout(n);
    let blocks = layout
        .par_iter()
        .map(|b| {
            let slot = match b.surface {
                SurfaceKind::Price | SurfaceKind::Delta => 0,
                SurfaceKind::Dtheta1 => 1,
                SurfaceKind::Dtheta2 => 2,
                SurfaceKind::Dtheta3 => 3,
            };
            let nodal: Vec<f64> = (0..coords.len()).map(|k| values[b.date_index * coords.len() + k][slot]).collect();
            grid.hierarchize(&nodal)
        })
        .collect::<Result<Vec<_>>>()?;
    let header = GridHeader {
        version: FORMAT_VERSION,
        dim: 4,
        kappa: spec.kappa,
        level_convention: spec.convention,
        lower: spec.domain.lower.clone(),
        upper: spec.domain.upper.clone(),
        dates,
        node_count: grid.len(),
        ordering: ORDERING_TAG.to_string(),
        blocks: layout,
        provenance: Provenance {
            seed: spec.seed,
            paths: spec.paths,
            config_hash: spec.config_hash.clone(),
            model: book.model,
            observation_dates: book.payoff.dates().to_vec(),
            s0: book.s0,
        },
    };
    let count = (jobs.len() * spec.paths) as u64;
    Ok((GridTables { header, grid, blocks }, count))
}

impl GridTables {
    pub fn header(&self) -> &GridHeader {
        &self.header
    }

    pub fn grid(&self) -> &SparseGrid<f64> {
        &self.grid
    }

    pub fn block(&self, surface: SurfaceKind, date_index: usize) -> Option<&[f64]> {
        self.header
            .blocks
            .iter()
            .position(|b| b.surface == surface && b.date_index == date_index)
            .map(|k| self.blocks[k].as_slice())
    }

    /// Rejects tables built for another model, payoff, date grid or spot.
    pub fn check_compatible(&self, book: &HedgedBook<f64>) -> Result<()> {
        let p = &self.header.provenance;
        if self.header.dates != book.rebalance.dates() {
            return Err(Error::invalid("grid tables were built on a different rebalance grid"));
        }
        if p.model != book.model || p.observation_dates != book.payoff.dates() || p.s0 != book.s0 {
            return Err(Error::invalid("grid tables were built for a different model, payoff or initial price"));
        }
        Ok(())
    }

    fn dot(&self, basis: &[(usize, f64)], surface: SurfaceKind, date_index: usize) -> Result<f64> {
        let b = self
            .block(surface, date_index)
            .ok_or_else(|| Error::invalid(format!("no {surface:?} surface at date index {date_index}")))?;
        Ok(basis.iter().map(|&(i, w)| b[i] * w).sum())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(8 + header.len() + 8 * self.header.node_count * self.blocks.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for b in &self.blocks {
            for v in b {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::GridFormat(m.to_string());
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("missing SGRT signature"));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header"))?;
        let raw: serde_json::Value = serde_json::from_slice(body).map_err(|e| bad(&format!("header: {e}")))?;
        match raw.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => return Err(bad(&format!("unsupported format version {v}"))),
            None => return Err(bad("header has no version")),
        }
        let header: GridHeader = serde_json::from_value(raw).map_err(|e| bad(&format!("header: {e}")))?;
        if header.ordering != ORDERING_TAG {
            return Err(bad(&format!("unknown node ordering {}", header.ordering)));
        }
        if header.dim != 4 || header.lower.len() != 4 || header.upper.len() != 4 {
            return Err(bad("grid tables must be four-dimensional"));
        }
        let n = header.dates.len().checked_sub(1).ok_or_else(|| bad("empty date grid"))?;
        if header.blocks != block_layout(n) {
            return Err(bad("unexpected block layout"));
        }
        let domain = DomainBox::new(header.lower.clone(), header.upper.clone()).map_err(|e| bad(&e.to_string()))?;
        let grid = SparseGrid::new(domain, header.kappa, header.level_convention).map_err(|e| bad(&e.to_string()))?;
        if grid.len() != header.node_count {
            return Err(bad("node count does not match the grid level"));
        }
        let data = &bytes[8 + hlen..];
        let expected = 8 * header.node_count * header.blocks.len();
        if data.len() != expected {
            return Err(bad(&format!("surplus data has {} bytes, expected {expected}", data.len())));
        }
        let blocks = data
            .chunks_exact(8 * header.node_count)
            .map(|c| c.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
            .collect();
        Ok(GridTables { header, grid: Arc::new(grid), blocks })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl SurfaceProvider<f64> for GridTables {
    fn sensitivities(&self, _: u64, date_index: usize, x: f64, theta: &Theta<f64>) -> Result<Surfaces<f64>> {
        let mut basis = Vec::new();
        self.grid.basis_at(&[x, theta[0], theta[1], theta[2]], &mut basis);
        Ok(Surfaces {
            delta: self.dot(&basis, SurfaceKind::Delta, date_index)?,
            dtheta: [
                self.dot(&basis, SurfaceKind::Dtheta1, date_index)?,
                self.dot(&basis, SurfaceKind::Dtheta2, date_index)?,
                self.dot(&basis, SurfaceKind::Dtheta3, date_index)?,
            ],
        })
    }

    fn terminal_price(&self, _: u64, x: f64, theta: &Theta<f64>) -> Result<f64> {
        let mut basis = Vec::new();
        self.grid.basis_at(&[x, theta[0], theta[1], theta[2]], &mut basis);
        self.dot(&basis, SurfaceKind::Price, self.header.dates.len() - 1)
    }
}
