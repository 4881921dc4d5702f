use std::cmp::Ordering;

use super::{add, dist2, scale, Point3, PointCloud};
use crate::error::{Error, Result};

/// Farthest point sampling.
///
/// Greedy max-min selection starting at `start`; ties go to the lowest index.
pub fn fps(cloud: &PointCloud, m: usize, start: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(Error::invalid(format!(
            "fps: requested {m} samples from a cloud of {n} points"
        )));
    }
    if start >= n {
        return Err(Error::invalid(format!(
            "fps: start index {start} out of range for {n} points"
        )));
    }
    let pts = cloud.points();
    let mut selected = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = start;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == m {
            break;
        }
        let c = pts[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in pts.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = dist2(*p, c);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > best_d {
                best_d = min_d2[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(selected)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

fn by_dist_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Exact k nearest neighbours of `query`, nearest first, ties to the lowest index.
pub fn knn(cloud: &PointCloud, query: Point3, k: usize) -> Result<Vec<Neighbor>> {
    let n = cloud.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "knn: k = {k} must lie in 1..={n}"
        )));
    }
    let mut all: Vec<(f64, usize)> = cloud
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| (dist2(*p, query), i))
        .collect();
    if k < n {
        all.select_nth_unstable_by(k - 1, by_dist_then_index);
        all.truncate(k);
    }
    all.sort_unstable_by(by_dist_then_index);
    Ok(all
        .into_iter()
        .map(|(d2, index)| Neighbor {
            index,
            distance: d2.sqrt(),
        })
        .collect())
}

/// Neighbour indices of point `i`, excluding `i` itself.
pub(crate) fn neighbors_excluding_self(
    cloud: &PointCloud,
    i: usize,
    count: usize,
) -> Result<Vec<usize>> {
    let k = (count + 1).min(cloud.len());
    let mut out: Vec<usize> = knn(cloud, cloud.get(i), k)?
        .into_iter()
        .map(|nb| nb.index)
        .filter(|&j| j != i)
        .collect();
    out.truncate(count);
    Ok(out)
}

/// Densifies `cloud` by `rate` using midpoints to each point's nearest neighbours.
///
/// Every point contributes the midpoints to its `min(rate - 1, n - 1)` nearest
/// neighbours. The candidates (originals first) are reduced to `rate * n` by
/// FPS when there are too many; when there are too few the midpoint
/// candidates are repeated in order until the target is reached.
pub fn midpoint_interpolate(cloud: &PointCloud, rate: usize) -> Result<PointCloud> {
    let n = cloud.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "midpoint interpolation needs at least 2 points, got {n}"
        )));
    }
    if rate < 2 {
        return Err(Error::invalid(format!(
            "upsampling rate must be at least 2, got {rate}"
        )));
    }
    let eta = (rate - 1).min(n - 1);
    let target = rate * n;
    let pts = cloud.points();
    let mut mids: Vec<Point3> = Vec::with_capacity(n * eta);
    for i in 0..n {
        for j in neighbors_excluding_self(cloud, i, eta)? {
            mids.push(scale(add(pts[i], pts[j]), 0.5));
        }
    }
    let mut candidates: Vec<Point3> = Vec::with_capacity(target.max(n + mids.len()));
    candidates.extend_from_slice(pts);
    candidates.extend_from_slice(&mids);
    if candidates.len() > target {
        let union = PointCloud::from_points_unchecked(candidates);
        let keep = fps(&union, target, 0)?;
        return Ok(union.select(&keep));
    }
    let mut cursor = 0;
    while candidates.len() < target {
        candidates.push(mids[cursor % mids.len()]);
        cursor += 1;
    }
    Ok(PointCloud::from_points_unchecked(candidates))
}
