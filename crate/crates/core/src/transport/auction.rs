use super::{check_equal_sizes, CostMatrix, Matching};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;

const UNASSIGNED: usize = usize::MAX;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AuctionStats {
    pub rounds: usize,
    pub bids: usize,
}

/// ε-approximate assignment between `source` (bidders) and `target` (items) on
/// squared Euclidean costs.
///
/// The returned cost is within `n * epsilon_final` of the optimum.
pub fn auction_match(source: &PointCloud, target: &PointCloud, epsilon_final: f64) -> Result<Matching> {
    check_equal_sizes(source, target)?;
    let costs = CostMatrix::squared_euclidean(source, target)?;
    auction_on_costs(&costs, epsilon_final).map(|(m, _)| m)
}

/// Auction with ε-scaling: ε starts at `max_cost / 4` and halves each round
/// down to `epsilon_final`; prices carry over between rounds.
pub fn auction_on_costs(costs: &CostMatrix, epsilon_final: f64) -> Result<(Matching, AuctionStats)> {
    if !(epsilon_final > 0.0 && epsilon_final.is_finite()) {
        return Err(Error::invalid(format!("auction epsilon must be positive, got {epsilon_final}")));
    }
    let n = costs.size();
    if n == 0 {
        return Err(Error::invalid("auction needs at least one bidder"));
    }
    let max_cost = costs.max_entry();
    let mut prices = vec![0.0; n];
    let mut owner = vec![UNASSIGNED; n];
    let mut assigned = vec![UNASSIGNED; n];
    let mut stats = AuctionStats::default();
    let mut eps = (max_cost / 4.0).max(epsilon_final);
    loop {
        stats.rounds += 1;
        owner.fill(UNASSIGNED);
        assigned.fill(UNASSIGNED);
        // Prices are bounded by max_cost + eps above their round-start level,
        // so each item takes at most that many ε-increments per round.
        let bid_cap = n
            .saturating_mul(n)
            .saturating_mul(((max_cost / eps).ceil() as usize).saturating_add(2));
        let mut round_bids = 0usize;
        let mut queue: Vec<usize> = (0..n).collect();
        while !queue.is_empty() {
            let mut displaced = Vec::new();
            for &i in &queue {
                let row = costs.row(i);
                let (mut best, mut best_v, mut second_v) = (0usize, f64::NEG_INFINITY, f64::NEG_INFINITY);
                for (j, (&c, &p)) in row.iter().zip(&prices).enumerate() {
                    let v = -c - p;
                    if v > best_v {
                        second_v = best_v;
                        best_v = v;
                        best = j;
                    } else if v > second_v {
                        second_v = v;
                    }
                }
                let increment = if second_v.is_finite() { best_v - second_v + eps } else { eps };
                prices[best] += increment;
                let prev = std::mem::replace(&mut owner[best], i);
                if prev != UNASSIGNED {
                    assigned[prev] = UNASSIGNED;
                    displaced.push(prev);
                }
                assigned[i] = best;
                round_bids += 1;
            }
            if round_bids > bid_cap {
                return Err(Error::numeric(format!(
                    "auction exceeded its bid bound ({bid_cap}) at epsilon {eps}"
                )));
            }
            displaced.sort_unstable();
            queue = displaced;
        }
        stats.bids += round_bids;
        if eps <= epsilon_final {
            break;
        }
        eps = (eps / 2.0).max(epsilon_final);
    }
    let total_cost = costs.assignment_cost(&assigned);
    Ok((
        Matching {
            phi: assigned,
            total_cost,
            epsilon: epsilon_final,
        },
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::hungarian_match;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two_prefers_diagonal() {
        let c = CostMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let (m, _) = auction_on_costs(&c, 1e-4).unwrap();
        assert_eq!(m.phi, vec![0, 1]);
        assert_eq!(m.total_cost, 0.0);
    }

    #[test]
    fn identical_clouds_cost_below_slack() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<[f64; 3]> = (0..30).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let c = PointCloud::new(pts).unwrap();
        let m = auction_match(&c, &c, 1e-4).unwrap();
        assert!(m.total_cost < 30.0 * 1e-4);
        assert!(m.is_permutation());
    }

    #[test]
    fn single_bidder_and_bad_inputs() {
        let c = CostMatrix::new(1, vec![2.5]).unwrap();
        let (m, _) = auction_on_costs(&c, 1e-3).unwrap();
        assert_eq!(m.phi, vec![0]);
        assert_eq!(m.total_cost, 2.5);
        assert!(auction_on_costs(&c, 0.0).is_err());
        let a = PointCloud::new(vec![[0.0; 3]]).unwrap();
        let b = PointCloud::new(vec![[0.0; 3], [1.0; 3]]).unwrap();
        assert!(auction_match(&a, &b, 1e-4).is_err());
    }

    #[test]
    fn all_zero_costs() {
        let c = CostMatrix::new(5, vec![0.0; 25]).unwrap();
        let (m, _) = auction_on_costs(&c, 1e-4).unwrap();
        assert!(m.is_permutation());
        assert_eq!(m.total_cost, 0.0);
    }

    #[test]
    fn within_slack_of_hungarian_and_bid_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..30 {
            let n = 4 + trial % 20;
            let entries: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..3.0)).collect();
            let c = CostMatrix::new(n, entries).unwrap();
            let eps = 1e-4;
            let (m, stats) = auction_on_costs(&c, eps).unwrap();
            let exact = hungarian_match(&c).unwrap();
            assert!(m.is_permutation());
            assert!(m.total_cost <= exact.total_cost + n as f64 * eps + 1e-12);
            assert!(m.total_cost + 1e-12 >= exact.total_cost);
            let bound = (n * n) as f64 * (c.max_entry() / eps + 1.0);
            assert!((stats.bids as f64) <= bound);
        }
    }
}
