//! Sparse-grid interpolation with piecewise-linear hat functions and
//! boundary nodes.
//!
//! Level 0 in a dimension holds both endpoints; level `λ ≥ 1` holds the odd
//! positions `j/2^λ`. A level vector belongs to the grid when its levels sum
//! to at most `κ` (or under the alternative [`LevelConvention`]). Nodes are
//! ordered by level vector (lexicographic), then by position within the
//! level's tensor block (row-major).

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Tag identifying the node ordering of persisted surpluses.
pub const ORDERING_TAG: &str = "lex-level-position-v1";

/// Which level vectors make up the grid of level `κ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelConvention {
    /// `Σ λ_i ≤ κ`.
    #[default]
    Standard,
    /// Boundary and midpoint share level one: `Σ max(λ_i - 1, 0) ≤ κ - 1`.
    /// Gives 81, 297 and 945 nodes in dimension four at levels 1, 2, 3.
    BoundaryAsLevelOne,
}

impl LevelConvention {
    fn admits(self, levels: &[u8], kappa: u32) -> bool {
        match self {
            LevelConvention::Standard => levels.iter().map(|&l| l as u32).sum::<u32>() <= kappa,
            LevelConvention::BoundaryAsLevelOne => {
                kappa >= 1 && levels.iter().map(|&l| (l as u32).saturating_sub(1)).sum::<u32>() < kappa
            }
        }
    }
}

/// Axis-aligned box `Π [m_p, M_p]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox<S> {
    pub lower: Vec<S>,
    pub upper: Vec<S>,
}

impl<S: Real> DomainBox<S> {
    pub fn new(lower: Vec<S>, upper: Vec<S>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::invalid("box needs matching, non-empty bounds"));
        }
        if lower.iter().zip(&upper).any(|(m, mm)| !(m < mm) || !m.is_finite() || !mm.is_finite()) {
            return Err(Error::invalid("box needs finite bounds with lower < upper"));
        }
        Ok(DomainBox { lower, upper })
    }

    pub fn unit(d: usize) -> Self {
        DomainBox { lower: vec![S::zero(); d], upper: vec![S::one(); d] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Maps into `[0,1]^d`, clamping; the flag tells whether clamping occurred.
    pub fn to_unit(&self, y: &[S], out: &mut [S]) -> bool {
        let mut clamped = false;
        for p in 0..self.dim() {
            let u = (y[p] - self.lower[p]) / (self.upper[p] - self.lower[p]);
            let c = u.max(S::zero()).min(S::one());
            clamped |= c != u;
            out[p] = c;
        }
        clamped
    }

    pub fn from_unit(&self, u: &[S]) -> Vec<S> {
        (0..self.dim())
            .map(|p| self.lower[p] + u[p] * (self.upper[p] - self.lower[p]))
            .collect()
    }
}

/// Level and position of a node: coordinate `j / 2^λ` per dimension.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GridIndex {
    pub level: Vec<u8>,
    pub position: Vec<u32>,
}

#[derive(Clone, Debug)]
struct Subspace {
    level: Vec<u8>,
    offset: usize,
    /// Nodes per dimension: 2 at level 0, `2^{λ-1}` otherwise.
    shape: Vec<usize>,
}

impl Subspace {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[inline]
fn level_width(level: u8) -> usize {
    if level == 0 {
        2
    } else {
        1usize << (level - 1)
    }
}

/// Position `j` at level `λ` from the local index within the level.
#[inline]
fn position_of(level: u8, local: usize) -> u32 {
    if level == 0 {
        local as u32
    } else {
        (2 * local + 1) as u32
    }
}

/// Canonical `(level, local index)` of position `p` on the dyadic grid of level `λ`.
fn canonical(mut level: u8, mut p: u32) -> (u8, usize) {
    if p == 0 {
        return (0, 0);
    }
    if p == 1u32 << level {
        return (0, 1);
    }
    while p % 2 == 0 {
        p /= 2;
        level -= 1;
    }
    (level, ((p - 1) / 2) as usize)
}

/// Node structure of a sparse grid on a box.
#[derive(Debug)]
pub struct SparseGrid<S> {
    dim: usize,
    kappa: u32,
    convention: LevelConvention,
    domain: DomainBox<S>,
    subspaces: Vec<Subspace>,
    lookup: HashMap<Vec<u8>, usize>,
    len: usize,
    clamped: AtomicU64,
}

impl<S: Real> Clone for SparseGrid<S> {
    fn clone(&self) -> Self {
        SparseGrid {
            dim: self.dim,
            kappa: self.kappa,
            convention: self.convention,
            domain: self.domain.clone(),
            subspaces: self.subspaces.clone(),
            lookup: self.lookup.clone(),
            len: self.len,
            clamped: AtomicU64::new(self.clamped.load(Ordering::Relaxed)),
        }
    }
}

fn level_vectors(d: usize, kappa: u32, convention: LevelConvention) -> Vec<Vec<u8>> {
    fn rec(d: usize, kappa: u32, conv: LevelConvention, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if cur.len() == d {
            if conv.admits(cur, kappa) {
                out.push(cur.clone());
            }
            return;
        }
        for l in 0..=kappa as u8 {
            cur.push(l);
            // prune: padding the rest with zeros is the cheapest completion
            let mut probe = cur.clone();
            probe.resize(d, 0);
            if conv.admits(&probe, kappa) {
                rec(d, kappa, conv, cur, out);
            }
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, kappa, convention, &mut Vec::with_capacity(d), &mut out);
    out
}

impl<S: Real> SparseGrid<S> {
    pub fn new(domain: DomainBox<S>, kappa: u32, convention: LevelConvention) -> Result<Self> {
        let dim = domain.dim();
        if kappa > 30 {
            return Err(Error::invalid(format!("sparse-grid level {kappa} is too large")));
        }
        if convention == LevelConvention::BoundaryAsLevelOne && kappa == 0 {
            return Err(Error::invalid("boundary-as-level-one grids start at level 1"));
        }
        let mut subspaces = Vec::new();
        let mut lookup = HashMap::new();
        let mut offset = 0;
        for level in level_vectors(dim, kappa, convention) {
            let shape: Vec<usize> = level.iter().map(|&l| level_width(l)).collect();
            let sub = Subspace { level: level.clone(), offset, shape };
            offset += sub.len();
            lookup.insert(level, subspaces.len());
            subspaces.push(sub);
        }
        Ok(SparseGrid {
            dim,
            kappa,
            convention,
            domain,
            subspaces,
            lookup,
            len: offset,
            clamped: AtomicU64::new(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kappa(&self) -> u32 {
        self.kappa
    }

    pub fn convention(&self) -> LevelConvention {
        self.convention
    }

    pub fn domain(&self) -> &DomainBox<S> {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of evaluations that fell outside the box and were clamped.
    pub fn clamped_count(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    fn local_to_multi(sub: &Subspace, mut local: usize, out: &mut [usize]) {
        for p in (0..sub.shape.len()).rev() {
            out[p] = local % sub.shape[p];
            local /= sub.shape[p];
        }
    }

    fn node_id(&self, level: &[u8], local: &[usize]) -> usize {
        let sub = &self.subspaces[self.lookup[level]];
        let mut idx = 0;
        for p in 0..self.dim {
            idx = idx * sub.shape[p] + local[p];
        }
        sub.offset + idx
    }

    /// All nodes in canonical order with their coordinates in the box.
    pub fn nodes(&self) -> Vec<(GridIndex, Vec<S>)> {
        let mut out = Vec::with_capacity(self.len);
        let mut local = vec![0; self.dim];
        for sub in &self.subspaces {
            for k in 0..sub.len() {
                Self::local_to_multi(sub, k, &mut local);
                let position: Vec<u32> = (0..self.dim).map(|p| position_of(sub.level[p], local[p])).collect();
                let unit: Vec<S> = (0..self.dim)
                    .map(|p| S::from_u32(position[p]).unwrap() / S::from_u64(1u64 << sub.level[p]).unwrap())
                    .collect();
                out.push((GridIndex { level: sub.level.clone(), position }, self.domain.from_unit(&unit)));
            }
        }
        out
    }

    /// Node coordinates only.
    pub fn coordinates(&self) -> Vec<Vec<S>> {
        self.nodes().into_iter().map(|(_, y)| y).collect()
    }

    /// Surpluses from nodal values (in canonical order).
    pub fn hierarchize(&self, values: &[S]) -> Result<Vec<S>> {
        if values.len() != self.len {
            return Err(Error::SizeMismatch { left: values.len(), right: self.len });
        }
        let mut v = values.to_vec();
        let half = S::lit(0.5);
        let mut local = vec![0; self.dim];
        let mut nb = vec![0; self.dim];
        let mut nb_level = vec![0u8; self.dim];
        for k in 0..self.dim {
            let mut order: Vec<&Subspace> = self.subspaces.iter().filter(|s| s.level[k] > 0).collect();
            order.sort_by(|a, b| b.level[k].cmp(&a.level[k]));
            for sub in order {
                let lk = sub.level[k];
                for idx in 0..sub.len() {
                    Self::local_to_multi(sub, idx, &mut local);
                    let j = position_of(lk, local[k]);
                    let mut acc = S::zero();
                    for p in [j - 1, j + 1] {
                        let (l2, loc2) = canonical(lk, p);
                        nb_level.copy_from_slice(&sub.level);
                        nb_level[k] = l2;
                        nb.copy_from_slice(&local);
                        nb[k] = loc2;
                        acc = acc + v[self.node_id(&nb_level, &nb)];
                    }
                    let id = sub.offset + idx;
                    v[id] = v[id] - half * acc;
                }
            }
        }
        Ok(v)
    }

    /// Nonzero basis functions at `y`: `(node, φ(y))` pairs.
    pub fn basis_at(&self, y: &[S], out: &mut Vec<(usize, S)>) {
        debug_assert_eq!(y.len(), self.dim);
        let mut u = vec![S::zero(); self.dim];
        if self.domain.to_unit(y, &mut u) {
            let n = self.clamped.fetch_add(1, Ordering::Relaxed);
            if n == 0 {
                log::warn!("sparse-grid query outside the box was clamped: {y:?}");
            } else {
                log::debug!("clamped sparse-grid query {y:?}");
            }
        }
        self.basis_at_unit(&u, out);
    }

    fn basis_at_unit(&self, u: &[S], out: &mut Vec<(usize, S)>) {
        out.clear();
        let d = self.dim;
        let max_level = self.kappa as usize + 1;
        // per dimension and level: (local index, weight) of the active functions
        let mut table: Vec<Vec<[(usize, S); 2]>> = Vec::with_capacity(d);
        for &up in u.iter().take(d) {
            let mut per_level = Vec::with_capacity(max_level + 1);
            per_level.push([(0, S::one() - up), (1, up)]);
            for l in 1..=max_level {
                let scale = S::from_u64(1u64 << l).unwrap();
                let half_cells = S::from_u64(1u64 << (l - 1)).unwrap();
                let cell = (up * half_cells).floor().to_usize().unwrap_or(0).min((1usize << (l - 1)) - 1);
                let j = S::from_usize(2 * cell + 1).unwrap();
                let w = (S::one() - (up * scale - j).abs()).max(S::zero());
                per_level.push([(cell, w), (0, S::zero())]);
            }
            table.push(per_level);
        }
        let mut choice = vec![0usize; d];
        for sub in &self.subspaces {
            let counts: Vec<usize> = sub.level.iter().map(|&l| if l == 0 { 2 } else { 1 }).collect();
            choice.iter_mut().for_each(|c| *c = 0);
            'product: loop {
                let mut w = S::one();
                let mut idx = 0;
                for p in 0..d {
                    let (loc, wp) = table[p][sub.level[p] as usize][choice[p]];
                    w = w * wp;
                    idx = idx * sub.shape[p] + loc;
                }
                if w != S::zero() {
                    out.push((sub.offset + idx, w));
                }
                // mixed-radix increment over the level-0 dimensions
                let mut p = d;
                loop {
                    if p == 0 {
                        break 'product;
                    }
                    p -= 1;
                    choice[p] += 1;
                    if choice[p] < counts[p] {
                        continue 'product;
                    }
                    choice[p] = 0;
                }
            }
        }
    }

    /// Interpolant value `Σ θ_{l,j} φ_{l,j}(y)`.
    pub fn evaluate(&self, surpluses: &[S], y: &[S]) -> S {
        let mut basis = Vec::new();
        self.basis_at(y, &mut basis);
        basis.iter().fold(S::zero(), |acc, &(i, w)| acc + surpluses[i] * w)
    }
}

/// Exact node count of the grid.
pub fn cardinality(d: usize, kappa: u32, convention: LevelConvention) -> u64 {
    level_vectors(d, kappa, convention)
        .iter()
        .map(|lv| lv.iter().map(|&l| level_width(l) as u64).product::<u64>())
        .sum()
}

/// A hierarchized surface: grid plus one surplus per node.
#[derive(Clone, Debug)]
pub struct SparseInterpolant<S> {
    pub grid: std::sync::Arc<SparseGrid<S>>,
    pub surpluses: Vec<S>,
    pub name: String,
    pub date: S,
}

impl<S: Real> SparseInterpolant<S> {
    pub fn from_values(
        grid: std::sync::Arc<SparseGrid<S>>,
        values: &[S],
        name: impl Into<String>,
        date: S,
    ) -> Result<Self> {
        let surpluses = grid.hierarchize(values)?;
        Ok(SparseInterpolant { grid, surpluses, name: name.into(), date })
    }

    pub fn evaluate(&self, y: &[S]) -> S {
        self.grid.evaluate(&self.surpluses, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(d: usize, k: u32) -> SparseGrid<f64> {
        SparseGrid::new(DomainBox::unit(d), k, LevelConvention::Standard).unwrap()
    }

    #[test]
    fn small_enumerations() {
        let g = SparseGrid::new(DomainBox::new(vec![2.0], vec![6.0]).unwrap(), 0, LevelConvention::Standard).unwrap();
        assert_eq!(g.coordinates(), vec![vec![2.0], vec![6.0]]);
        let g = SparseGrid::new(DomainBox::new(vec![2.0], vec![6.0]).unwrap(), 2, LevelConvention::Standard).unwrap();
        assert_eq!(g.coordinates(), vec![vec![2.0], vec![6.0], vec![4.0], vec![3.0], vec![5.0]]);
        let g = unit_grid(2, 1);
        let nodes = g.nodes();
        assert_eq!(nodes.len(), 8);
        assert_eq!(nodes[0].0.level, vec![0, 0]);
        assert_eq!(nodes[4].0.level, vec![0, 1]);
        assert_eq!(nodes[6].0.level, vec![1, 0]);
        assert_eq!(nodes[1].1, vec![0.0, 1.0]);
    }

    #[test]
    fn cardinalities() {
        assert_eq!(cardinality(1, 0, LevelConvention::Standard), 2);
        for k in 0..10 {
            assert_eq!(cardinality(1, k, LevelConvention::Standard), (1u64 << k) + 1);
        }
        let std4: Vec<u64> = (0..4).map(|k| cardinality(4, k, LevelConvention::Standard)).collect();
        assert_eq!(std4, vec![16, 48, 136, 368]);
        let alt4: Vec<u64> = (1..4).map(|k| cardinality(4, k, LevelConvention::BoundaryAsLevelOne)).collect();
        assert_eq!(alt4, vec![81, 297, 945]);
        assert_eq!(unit_grid(4, 3).len(), 368);
    }

    #[test]
    fn canonical_neighbours() {
        assert_eq!(canonical(2, 0), (0, 0));
        assert_eq!(canonical(2, 4), (0, 1));
        assert_eq!(canonical(2, 2), (1, 0));
        assert_eq!(canonical(3, 6), (2, 1));
        assert_eq!(canonical(3, 5), (3, 2));
    }

    #[test]
    fn constant_and_linear_in_one_dimension() {
        let g = unit_grid(1, 2);
        let s = g.hierarchize(&[3.0; 5]).unwrap();
        assert_eq!(s, vec![3.0, 3.0, 0.0, 0.0, 0.0]);
        let lin: Vec<f64> = g.coordinates().iter().map(|y| 2.0 * y[0] - 1.0).collect();
        let s = g.hierarchize(&lin).unwrap();
        assert!(s[2..].iter().all(|v| v.abs() < 1e-15));
        for k in 0..=50 {
            let y = k as f64 / 50.0;
            assert!((g.evaluate(&s, &[y]) - (2.0 * y - 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn interpolates_nodes_in_dimension_four() {
        let g = unit_grid(4, 3);
        let vals: Vec<f64> = g.coordinates().iter().map(|y| (y[0] + 2.0 * y[1]).sin() * y[2].exp() - y[3] * y[3]).collect();
        let s = g.hierarchize(&vals).unwrap();
        for (y, v) in g.coordinates().iter().zip(&vals) {
            assert!((g.evaluate(&s, y) - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn clamps_outside_points() {
        let g = SparseGrid::new(DomainBox::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap(), 2, LevelConvention::Standard).unwrap();
        let vals: Vec<f64> = g.coordinates().iter().map(|y| y[0] + y[1]).collect();
        let s = g.hierarchize(&vals).unwrap();
        assert_eq!(g.clamped_count(), 0);
        assert!((g.evaluate(&s, &[1.5, -1.0]) - 1.0).abs() < 1e-14);
        assert_eq!(g.clamped_count(), 1);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(DomainBox::new(vec![1.0], vec![1.0]).is_err());
        assert!(DomainBox::<f64>::new(vec![], vec![]).is_err());
        assert!(unit_grid(2, 1).hierarchize(&[1.0; 3]).is_err());
        assert!(SparseGrid::new(DomainBox::<f64>::unit(2), 0, LevelConvention::BoundaryAsLevelOne).is_err());
    }

    #[test]
    fn f32_grid() {
        let g = SparseGrid::<f32>::new(DomainBox::unit(2), 3, LevelConvention::Standard).unwrap();
        let vals: Vec<f32> = g.coordinates().iter().map(|y| y[0] * y[1]).collect();
        let s = g.hierarchize(&vals).unwrap();
        assert!((g.evaluate(&s, &[0.5, 0.5]) - 0.25).abs() < 1e-6);
    }
}
