//! Assignment-based optimal transport between equal-size point sets.
//!
//! With uniform weights on both sides the optimal coupling is a permutation, so
//! transport reduces to a linear assignment problem over squared distances.

mod auction;
mod hungarian;

pub use auction::{auction_match, auction_on_costs, AuctionStats};
pub use hungarian::hungarian_match;

use crate::error::{Error, Result};
use crate::geometry::{dist, dist2, PointCloud};

/// Default final auction slack, in squared normalized units.
pub const DEFAULT_EPSILON: f64 = 1e-4;

/// Square matrix of nonnegative assignment costs, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::invalid(format!(
                "cost matrix of {} entries is not {n}x{n}",
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(Error::invalid(format!("cost entry {bad} is not a finite nonnegative value")));
        }
        Ok(Self { n, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("cost matrix rows must all have length equal to the row count"));
        }
        Self::new(n, rows.iter().flatten().copied().collect())
    }

    /// `c[i][j] = |source_i - target_j|^2`.
    pub fn squared_euclidean(source: &PointCloud, target: &PointCloud) -> Result<Self> {
        check_equal_sizes(source, target)?;
        let n = source.len();
        let mut entries = Vec::with_capacity(n * n);
        for s in source.points() {
            for t in target.points() {
                entries.push(dist2(*s, *t));
            }
        }
        Ok(Self { n, entries })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }

    pub fn assignment_cost(&self, phi: &[usize]) -> f64 {
        phi.iter().enumerate().map(|(i, &j)| self.get(i, j)).sum()
    }
}

/// A bijective assignment `source i -> target phi[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matching {
    pub phi: Vec<usize>,
    pub total_cost: f64,
    /// Final auction slack; 0 for exact solvers.
    pub epsilon: f64,
}

impl Matching {
    pub fn is_permutation(&self) -> bool {
        let mut seen = vec![false; self.phi.len()];
        self.phi.iter().all(|&j| j < seen.len() && !std::mem::replace(&mut seen[j], true))
    }
}

pub(crate) fn check_equal_sizes(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "point sets must have equal sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::invalid("point sets must be nonempty"));
    }
    Ok(())
}

/// Reorders `dense` so that row `i` is the auction partner of `interpolated_sparse[i]`.
pub fn align_pair(interpolated_sparse: &PointCloud, dense: &PointCloud, epsilon_final: f64) -> Result<PointCloud> {
    let m = auction_match(interpolated_sparse, dense, epsilon_final)?;
    Ok(dense.select(&m.phi))
}

/// Mean unsquared distance between matched points (uniform weights).
pub fn emd_value(source: &PointCloud, target: &PointCloud, matching: &Matching) -> Result<f64> {
    check_equal_sizes(source, target)?;
    if matching.phi.len() != source.len() || !matching.is_permutation() {
        return Err(Error::invalid("matching is not a permutation of the point indices"));
    }
    let total: f64 = matching
        .phi
        .iter()
        .enumerate()
        .map(|(i, &j)| dist(source.get(i), target.get(j)))
        .sum();
    Ok(total / source.len() as f64)
}
