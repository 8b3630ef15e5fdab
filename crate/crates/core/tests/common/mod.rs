//! Instances shared by the integration tests.
#![allow(dead_code)]

use qcontrib::model::{DiscreteSN, GroupPartition, Obligor, Portfolio};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Three obligors with exposures 3, 5, 7, default probabilities 0.1, 0.2,
/// 0.3 and loading 0.5, one group each.
pub fn golden_portfolio() -> Portfolio {
    golden_grouped(GroupPartition::singletons(3).unwrap())
}

/// The golden obligors split into groups {3} and {5, 7}.
pub fn golden_two_groups() -> Portfolio {
    golden_grouped(GroupPartition::new(vec![1, 2]).unwrap())
}

fn golden_grouped(partition: GroupPartition) -> Portfolio {
    let obl = [(3.0, 0.1), (5.0, 0.2), (7.0, 0.3)]
        .iter()
        .map(|&(e, pd)| Obligor::from_pd(e, 0.5, pd).unwrap())
        .collect();
    Portfolio::new(obl, partition).unwrap()
}

pub fn golden_grid() -> DiscreteSN {
    DiscreteSN::new(16, 4.0).unwrap()
}

pub const GOLDEN_THRESHOLD: f64 = 7.0;

/// Random portfolio with `n_obl` obligors in a random contiguous grouping:
/// exposures in [0.5, 10], default probabilities in [0.01, 0.3], loadings
/// in [0.1, 0.8].
pub fn random_portfolio(rng: &mut ChaCha8Rng, n_obl: usize) -> Portfolio {
    let obl = (0..n_obl)
        .map(|_| {
            Obligor::from_pd(
                rng.random_range(0.5..10.0),
                rng.random_range(0.1..0.8),
                rng.random_range(0.01..0.3),
            )
            .unwrap()
        })
        .collect();
    let mut sizes = Vec::new();
    let mut left = n_obl;
    while left > 0 {
        let s = rng.random_range(1..=left);
        sizes.push(s);
        left -= s;
    }
    Portfolio::new(obl, GroupPartition::new(sizes).unwrap()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A threshold strictly inside the loss support with tail probability
/// roughly in `[lo, hi]` when such a support point exists: the smallest
/// support point whose exceedance probability is at most `hi`.
pub fn threshold_for(dist: &[(f64, f64)], hi: f64) -> f64 {
    let mut tail = 0.0;
    let mut pick = dist.last().unwrap().0;
    for &(x, m) in dist.iter().rev() {
        tail += m;
        if tail > hi {
            break;
        }
        pick = x;
    }
    if pick <= 0.0 {
        dist.iter().map(|d| d.0).find(|&x| x > 0.0).unwrap()
    } else {
        pick
    }
}

/// Like [`threshold_for`], but halfway between the chosen support point and
/// the one below it, so the tail event does not hinge on a tie that the
/// register rounding of non-dyadic exposures could break either way.
pub fn interior_threshold(dist: &[(f64, f64)], hi: f64) -> f64 {
    let v = threshold_for(dist, hi);
    let below = dist.iter().map(|d| d.0).filter(|&x| x < v).fold(0.0, f64::max);
    0.5 * (below + v)
}
