use super::{CostMatrix, Matching};
use crate::error::{Error, Result};

/// Exact minimum-cost perfect matching (shortest augmenting paths with
/// potentials, O(n^3)).
pub fn hungarian_match(costs: &CostMatrix) -> Result<Matching> {
    let n = costs.size();
    if n == 0 {
        return Err(Error::invalid("hungarian matching needs a nonempty matrix"));
    }
    // 1-based rows/columns; column 0 is the virtual start.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = costs.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut phi = vec![0usize; n];
    for j in 1..=n {
        phi[row_of_col[j] - 1] = j - 1;
    }
    let total_cost = costs.assignment_cost(&phi);
    Ok(Matching {
        phi,
        total_cost,
        epsilon: 0.0,
    })
}
