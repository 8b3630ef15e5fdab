//! Brute-force enumeration of the discretized model law.
//!
//! Every pair `(i, y)` of grid index and default vector is weighted by
//! `p_i · Π_k [P_k(x_i) if y_k else 1 − P_k(x_i)]`. Risk measures and
//! contributions are then exact conditional expectations under that finite
//! law, accumulated with compensated summation.
//!
//! Default vectors are bitmasks: bit `k` of `y` is obligor `k`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DiscreteSN, Portfolio};
use crate::sum::{csum, CompensatedSum};

/// Largest `N_SN · 2^N_obl` the enumerator accepts.
pub const MAX_ENUMERATED_STATES: u128 = 1 << 24;

/// The joint law of `(X₀ grid index, Y)` together with per-scenario losses.
#[derive(Debug, Clone)]
pub struct ScenarioLaw {
    n_obl: usize,
    grid_size: usize,
    /// `probs[i << n_obl | y]`
    probs: Vec<f64>,
    /// marginal of `y`
    marginal: Vec<f64>,
    losses: Vec<f64>,
    group_losses: Vec<Vec<f64>>,
}

pub fn check_state_guard(grid_size: usize, n_obl: usize, extra_bits: u32, what: &'static str) -> Result<()> {
    let size = if n_obl as u32 + extra_bits >= 100 {
        u128::MAX
    } else {
        (grid_size as u128) << (n_obl as u32 + extra_bits)
    };
    if size > MAX_ENUMERATED_STATES {
        return Err(Error::Guard { what, size, limit: MAX_ENUMERATED_STATES });
    }
    Ok(())
}

impl ScenarioLaw {
    pub fn new(portfolio: &Portfolio, disc: &DiscreteSN) -> Result<Self> {
        let n_obl = portfolio.obligor_count();
        let grid_size = disc.count();
        check_state_guard(grid_size, n_obl, 0, "enumerated scenario count")?;
        let dim = 1usize << n_obl;
        let obligors = portfolio.obligors();

        let per_grid: Vec<Vec<f64>> = disc
            .points()
            .par_iter()
            .zip(disc.probs())
            .map(|(&x, &w)| {
                let mut row = Vec::with_capacity(dim);
                row.push(w);
                for o in obligors {
                    let pd = o.conditional_default_prob(x);
                    let len = row.len();
                    row.extend_from_within(..len);
                    let (lo, hi) = row.split_at_mut(len);
                    for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                        *b *= pd;
                        *a *= 1.0 - pd;
                    }
                }
                row
            })
            .collect();
        let probs: Vec<f64> = per_grid.into_iter().flatten().collect();

        let marginal: Vec<f64> = (0..dim)
            .into_par_iter()
            .map(|y| csum((0..grid_size).map(|i| probs[(i << n_obl) | y])))
            .collect();

        let losses = subset_sums(obligors.iter().map(|o| o.exposure()));
        let partition = portfolio.partition();
        let group_losses = (0..partition.group_count())
            .map(|g| {
                let r = partition.range(g);
                subset_sums(
                    obligors
                        .iter()
                        .enumerate()
                        .map(|(k, o)| if r.contains(&k) { o.exposure() } else { 0.0 }),
                )
            })
            .collect();

        Ok(Self { n_obl, grid_size, probs, marginal, losses, group_losses })
    }

    pub fn obligor_count(&self) -> usize {
        self.n_obl
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn group_count(&self) -> usize {
        self.group_losses.len()
    }

    /// Number of default vectors, `2^N_obl`.
    pub fn default_vectors(&self) -> usize {
        1 << self.n_obl
    }

    /// `𝒫(i; y)`.
    pub fn joint_prob(&self, i: usize, y: usize) -> f64 {
        self.probs[(i << self.n_obl) | y]
    }

    /// `Pr(Y = y)`, summed over the grid.
    pub fn marginal(&self, y: usize) -> f64 {
        self.marginal[y]
    }

    pub fn loss(&self, y: usize) -> f64 {
        self.losses[y]
    }

    pub fn group_loss(&self, k: usize, y: usize) -> f64 {
        self.group_losses[k][y]
    }

    /// `Pr(L ≥ v)`.
    pub fn tail_prob(&self, v: f64) -> f64 {
        csum(self.tail_vectors(v).map(|y| self.marginal[y]))
    }

    fn tail_vectors(&self, v: f64) -> impl Iterator<Item = usize> + '_ {
        (0..self.default_vectors()).filter(move |&y| self.losses[y] >= v)
    }

    /// Moments of every group loss conditional on `L ≥ v`.
    pub fn tail_stats(&self, v: f64) -> Result<TailStats> {
        let p = self.tail_prob(v);
        if p <= 0.0 {
            return Err(Error::ZeroTail {
                threshold: v,
                detail: format!("no scenario has loss ≥ {v}; maximum loss is {}", self.max_loss()),
            });
        }
        let cond = |f: &dyn Fn(usize) -> f64| csum(self.tail_vectors(v).map(|y| self.marginal[y] * f(y))) / p;
        let cvar = cond(&|y| self.losses[y]);
        let mean: Vec<f64> = (0..self.group_count()).map(|k| cond(&|y| self.group_losses[k][y])).collect();
        let second: Vec<f64> = (0..self.group_count())
            .map(|k| cond(&|y| self.group_losses[k][y].powi(2)))
            .collect();
        // central second moment computed directly, not as m2 − m1², to avoid cancellation
        let variance: Vec<f64> = (0..self.group_count())
            .map(|k| cond(&|y| (self.group_losses[k][y] - mean[k]).powi(2)))
            .collect();
        Ok(TailStats { threshold: v, tail_prob: p, cvar, mean, second, variance })
    }

    pub fn max_loss(&self) -> f64 {
        self.losses.iter().copied().fold(0.0, f64::max)
    }

    /// Distinct realized loss values with positive probability, ascending,
    /// each with its probability mass.
    pub fn loss_distribution(&self) -> Vec<(f64, f64)> {
        let mut ys: Vec<usize> = (0..self.default_vectors()).filter(|&y| self.marginal[y] > 0.0).collect();
        ys.sort_by(|&a, &b| self.losses[a].total_cmp(&self.losses[b]));
        let mut out: Vec<(f64, CompensatedSum)> = Vec::new();
        for y in ys {
            let l = self.losses[y];
            match out.last_mut() {
                Some((last, acc)) if *last == l => acc.add(self.marginal[y]),
                _ => {
                    let mut acc = CompensatedSum::new();
                    acc.add(self.marginal[y]);
                    out.push((l, acc));
                }
            }
        }
        out.into_iter().map(|(l, acc)| (l, acc.value())).collect()
    }

    /// `V_α`: the smallest realized loss `x` with `Pr(L ≥ x) ≤ α`. When even
    /// the largest loss carries more than `α` of mass, that largest loss.
    pub fn value_at_risk(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!("VaR level must lie in (0, 1), got {alpha}")));
        }
        let dist = self.loss_distribution();
        let mut tail = CompensatedSum::new();
        let mut var = dist.last().map(|d| d.0).unwrap_or(0.0);
        // scan from the top: tail accumulates Pr(L ≥ l_j)
        for &(l, mass) in dist.iter().rev() {
            tail.add(mass);
            if tail.value() <= alpha {
                var = l;
            } else {
                break;
            }
        }
        Ok(var)
    }

    /// `E[L_K | L = x]` for every group, plus `Pr(L = x)`.
    pub fn contributions_at(&self, x: f64) -> Result<(f64, Vec<f64>)> {
        let at: Vec<usize> = (0..self.default_vectors()).filter(|&y| self.losses[y] == x).collect();
        let mass = csum(at.iter().map(|&y| self.marginal[y]));
        if mass <= 0.0 {
            return Err(Error::invalid(format!("loss level {x} has zero probability")));
        }
        let contribs = (0..self.group_count())
            .map(|k| csum(at.iter().map(|&y| self.marginal[y] * self.group_losses[k][y])) / mass)
            .collect();
        Ok((mass, contribs))
    }
}

/// Loss of every subset, `s[y] = Σ_{k ∈ y} w_k`, built by doubling so each
/// sum is accumulated in increasing obligor order.
fn subset_sums(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut s = vec![0.0];
    for w in weights {
        let len = s.len();
        s.extend_from_within(..len);
        s[len..].iter_mut().for_each(|x| *x += w);
    }
    s
}

/// Conditional moments of the group losses given `L ≥ v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailStats {
    pub threshold: f64,
    pub tail_prob: f64,
    /// `C_v`
    pub cvar: f64,
    /// `C^K_v = E[L_K | L ≥ v]`
    pub mean: Vec<f64>,
    /// `E[L_K² | L ≥ v]`
    pub second: Vec<f64>,
    /// `σ_K²`
    pub variance: Vec<f64>,
}

impl TailStats {
    /// `C_max`, the largest contribution.
    pub fn c_max(&self) -> f64 {
        self.mean.iter().copied().fold(0.0, f64::max)
    }

    /// `σ_max`, the largest conditional standard deviation.
    pub fn sigma_max(&self) -> f64 {
        self.variance.iter().copied().fold(0.0, f64::max).sqrt()
    }
}

/// What `enumerate_exact` should compute: VaR at a level, CVaR at a threshold,
/// or both. With only a level, the CVaR threshold is `V_α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskQuery {
    pub alpha: Option<f64>,
    pub threshold: Option<f64>,
}

impl RiskQuery {
    pub fn level(alpha: f64) -> Self {
        Self { alpha: Some(alpha), threshold: None }
    }

    pub fn threshold(v: f64) -> Self {
        Self { alpha: None, threshold: Some(v) }
    }

    pub fn both(alpha: f64, v: f64) -> Self {
        Self { alpha: Some(alpha), threshold: Some(v) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub var_level: Option<f64>,
    pub var: Option<f64>,
    pub cvar_threshold: f64,
    pub tail_prob: f64,
    pub cvar: f64,
    pub cvar_contribs: Vec<f64>,
    pub var_contribs: Option<Vec<f64>>,
    /// `E_K` for each group.
    pub group_exposures: Vec<f64>,
    /// `σ_K`, conditional standard deviations of `L_K` given the tail.
    pub tail_sigmas: Vec<f64>,
}

pub fn enumerate_exact(portfolio: &Portfolio, disc: &DiscreteSN, query: RiskQuery) -> Result<RiskReport> {
    let law = ScenarioLaw::new(portfolio, disc)?;
    risk_report(&law, portfolio, query)
}

/// [`enumerate_exact`] on an already-built law.
pub fn risk_report(law: &ScenarioLaw, portfolio: &Portfolio, query: RiskQuery) -> Result<RiskReport> {
    let (var, var_contribs) = match query.alpha {
        Some(alpha) => {
            let var = law.value_at_risk(alpha)?;
            let (_, contribs) = law.contributions_at(var)?;
            (Some(var), Some(contribs))
        }
        None => (None, None),
    };
    let v = match (query.threshold, var) {
        (Some(v), _) => v,
        (None, Some(var)) => var,
        (None, None) => return Err(Error::invalid("risk query needs a VaR level or a CVaR threshold")),
    };
    if !v.is_finite() {
        return Err(Error::invalid(format!("CVaR threshold must be finite, got {v}")));
    }
    let stats = law.tail_stats(v)?;
    Ok(RiskReport {
        var_level: query.alpha,
        var,
        cvar_threshold: v,
        tail_prob: stats.tail_prob,
        cvar: stats.cvar,
        cvar_contribs: stats.mean.clone(),
        var_contribs,
        group_exposures: (0..portfolio.group_count()).map(|k| portfolio.group_exposure(k)).collect(),
        tail_sigmas: stats.variance.iter().map(|s| s.sqrt()).collect(),
    })
}
