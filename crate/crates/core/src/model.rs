//! Single-factor Merton credit model.
//!
//! Obligor `k` defaults when `a_k·X₀ + √(1−a_k²)·X_k < z_k`, with `X₀` the
//! systematic factor and `X_k` idiosyncratic. Given `X₀ = x₀` the default is
//! Bernoulli with probability `Φ((z_k − a_k·x₀)/√(1−a_k²))`.
//!
//! Group indices are 0-based throughout the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal::{std_normal_cdf, std_normal_quantile};
use crate::sum::csum;

/// Admissible range for factor loadings, keeping `√(1−a²)` away from zero.
pub const MIN_LOADING: f64 = 1e-9;
pub const MAX_LOADING: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obligor {
    exposure: f64,
    loading: f64,
    threshold: f64,
}

impl Obligor {
    /// `threshold` may be `±∞` (certain survival / certain default) but not NaN.
    pub fn new(exposure: f64, loading: f64, threshold: f64) -> Result<Self> {
        if !(exposure.is_finite() && exposure > 0.0) {
            return Err(Error::invalid(format!("exposure must be positive and finite, got {exposure}")));
        }
        if !(MIN_LOADING..=MAX_LOADING).contains(&loading) {
            return Err(Error::invalid(format!(
                "loading must lie in [{MIN_LOADING}, 1-{MIN_LOADING}], got {loading}"
            )));
        }
        if threshold.is_nan() {
            return Err(Error::invalid("threshold is NaN"));
        }
        Ok(Self { exposure, loading, threshold })
    }

    /// Builds the obligor from an unconditional default probability,
    /// `z = Φ⁻¹(pd)`.
    pub fn from_pd(exposure: f64, loading: f64, pd: f64) -> Result<Self> {
        let threshold = std_normal_quantile(pd)
            .ok_or_else(|| Error::invalid(format!("default probability must lie in [0, 1], got {pd}")))?;
        Self::new(exposure, loading, threshold)
    }

    pub fn exposure(&self) -> f64 {
        self.exposure
    }

    pub fn loading(&self) -> f64 {
        self.loading
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Unconditional default probability Φ(z).
    pub fn default_prob(&self) -> f64 {
        std_normal_cdf(self.threshold)
    }

    /// Default probability conditional on the systematic factor `x0`.
    pub fn conditional_default_prob(&self, x0: f64) -> f64 {
        let a = self.loading;
        std_normal_cdf((self.threshold - a * x0) / (1.0 - a * a).sqrt())
    }
}

/// Free-function form of [`Obligor::conditional_default_prob`].
pub fn conditional_default_prob(obligor: &Obligor, x0: f64) -> f64 {
    obligor.conditional_default_prob(x0)
}

/// Contiguous partition of the obligors into groups of sizes `n_1, …, n_G`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct GroupPartition {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl GroupPartition {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::invalid("partition needs at least one group"));
        }
        if sizes.contains(&0) {
            return Err(Error::invalid("group sizes must be positive"));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        for &n in &sizes {
            offsets.push(offsets.last().unwrap() + n);
        }
        Ok(Self { sizes, offsets })
    }

    /// One group per obligor.
    pub fn singletons(n_obl: usize) -> Result<Self> {
        Self::new(vec![1; n_obl])
    }

    /// All obligors in one group.
    pub fn single(n_obl: usize) -> Result<Self> {
        Self::new(vec![n_obl])
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn group_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn obligor_count(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Obligor index range of group `k`.
    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    /// Group that owns obligor `j`.
    pub fn group_of(&self, j: usize) -> usize {
        self.offsets.partition_point(|&o| o <= j) - 1
    }
}

impl TryFrom<Vec<usize>> for GroupPartition {
    type Error = Error;
    fn try_from(sizes: Vec<usize>) -> Result<Self> {
        Self::new(sizes)
    }
}

impl From<GroupPartition> for Vec<usize> {
    fn from(p: GroupPartition) -> Self {
        p.sizes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    obligors: Vec<Obligor>,
    partition: GroupPartition,
}

impl Portfolio {
    pub fn new(obligors: Vec<Obligor>, partition: GroupPartition) -> Result<Self> {
        if obligors.is_empty() {
            return Err(Error::invalid("portfolio needs at least one obligor"));
        }
        if partition.obligor_count() != obligors.len() {
            return Err(Error::invalid(format!(
                "group sizes sum to {} but the portfolio has {} obligors",
                partition.obligor_count(),
                obligors.len()
            )));
        }
        Ok(Self { obligors, partition })
    }

    pub fn obligors(&self) -> &[Obligor] {
        &self.obligors
    }

    pub fn partition(&self) -> &GroupPartition {
        &self.partition
    }

    pub fn obligor_count(&self) -> usize {
        self.obligors.len()
    }

    pub fn group_count(&self) -> usize {
        self.partition.group_count()
    }

    /// Same obligors under a different grouping.
    pub fn regrouped(&self, partition: GroupPartition) -> Result<Self> {
        Self::new(self.obligors.clone(), partition)
    }

    pub fn total_exposure(&self) -> f64 {
        self.obligors.iter().map(Obligor::exposure).sum()
    }

    /// `E_K`, the largest possible loss of group `k`.
    pub fn group_exposure(&self, k: usize) -> f64 {
        self.obligors[self.partition.range(k)].iter().map(Obligor::exposure).sum()
    }

    /// `E_max = max_K E_K`.
    pub fn max_group_exposure(&self) -> f64 {
        (0..self.group_count()).map(|k| self.group_exposure(k)).fold(0.0, f64::max)
    }

    pub fn portfolio_loss(&self, defaults: &[bool]) -> Result<f64> {
        self.check_len(defaults)?;
        Ok(self
            .obligors
            .iter()
            .zip(defaults)
            .filter(|(_, &d)| d)
            .map(|(o, _)| o.exposure)
            .sum())
    }

    pub fn group_loss(&self, defaults: &[bool], k: usize) -> Result<f64> {
        self.check_len(defaults)?;
        if k >= self.group_count() {
            return Err(Error::invalid(format!(
                "group index {k} out of range for {} groups",
                self.group_count()
            )));
        }
        let r = self.partition.range(k);
        Ok(self.obligors[r.clone()]
            .iter()
            .zip(&defaults[r])
            .filter(|(_, &d)| d)
            .map(|(o, _)| o.exposure)
            .sum())
    }

    fn check_len(&self, defaults: &[bool]) -> Result<()> {
        if defaults.len() != self.obligor_count() {
            return Err(Error::invalid(format!(
                "default vector has length {} but the portfolio has {} obligors",
                defaults.len(),
                self.obligor_count()
            )));
        }
        Ok(())
    }
}

/// Discretized standard normal on the grid `x_i = −D + 2D·i/(N−1)`.
///
/// Cell `i` collects the mass between the midpoints to its neighbours; the
/// two outer cells absorb the tails and the last cell takes the complement
/// so the weights sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSN {
    halfwidth: f64,
    points: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscreteSN {
    pub fn new(count: usize, halfwidth: f64) -> Result<Self> {
        discretize_std_normal(count, halfwidth)
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }

    pub fn halfwidth(&self) -> f64 {
        self.halfwidth
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        csum(self.points.iter().zip(&self.probs).map(|(x, p)| x * p))
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        csum(self.points.iter().zip(&self.probs).map(|(x, p)| p * (x - m) * (x - m)))
    }
}

pub fn discretize_std_normal(count: usize, halfwidth: f64) -> Result<DiscreteSN> {
    if count < 2 {
        return Err(Error::invalid(format!("grid needs at least 2 points, got {count}")));
    }
    if !(halfwidth.is_finite() && halfwidth > 0.0) {
        return Err(Error::invalid(format!("grid half-width must be positive, got {halfwidth}")));
    }
    let denom = (count - 1) as f64;
    // integer numerator keeps the grid exactly antisymmetric
    let points: Vec<f64> = (0..count)
        .map(|i| halfwidth * (2.0 * i as f64 - denom) / denom)
        .collect();
    let cuts: Vec<f64> = points.windows(2).map(|w| std_normal_cdf(0.5 * (w[0] + w[1]))).collect();
    let mut probs = Vec::with_capacity(count);
    probs.push(cuts[0]);
    for w in cuts.windows(2) {
        probs.push(w[1] - w[0]);
    }
    let head = csum(probs.iter().copied());
    probs.push(1.0 - head);
    Ok(DiscreteSN { halfwidth, points, probs })
}
