//! Classical Monte Carlo baseline: plain scenario sampling with rejection on
//! the tail, no variance reduction.
//!
//! Samples are drawn in fixed-size batches. Batch `b` owns the ChaCha8
//! stream `b` of the run seed, so the result depends only on the seed and
//! the batch size, never on the number of worker threads. Batch
//! accumulators are merged in a fixed pairwise tree.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::QueryLedger;
use crate::model::{DiscreteSN, Portfolio};
use crate::normal::std_normal_quantile;
use crate::sum::CompensatedSum;

/// How the systematic factor `X₀` is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FactorSampling {
    /// Exact standard normal draws (ziggurat).
    Exact,
    /// Inverse-CDF draws through the same normal approximation the quantum
    /// oracles use.
    InverseCdf,
    /// Draws from the discretized factor the oracles load, for comparisons
    /// free of discretization error.
    Discrete(DiscreteSN),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub seed: u64,
    pub samples_requested: u64,
    pub batch: u64,
    pub target_accuracy: f64,
    pub confidence: f64,
    pub sampling: FactorSampling,
}

impl McConfig {
    /// `samples` exact-factor scenarios in batches of 65 536, reporting at
    /// ε = 0.01 with 99 % confidence.
    pub fn new(seed: u64, samples: u64) -> Self {
        Self {
            seed,
            samples_requested: samples,
            batch: 1 << 16,
            target_accuracy: 0.01,
            confidence: 0.99,
            sampling: FactorSampling::Exact,
        }
    }

    pub fn with_sampling(mut self, sampling: FactorSampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn with_batch(mut self, batch: u64) -> Self {
        self.batch = batch;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_requested < 1 {
            return Err(Error::invalid("at least one sample is required"));
        }
        if self.batch < 1 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.target_accuracy > 0.0) {
            return Err(Error::invalid(format!("target accuracy must be positive, got {}", self.target_accuracy)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::invalid(format!("confidence must lie in (0, 1), got {}", self.confidence)));
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        1.0 - self.confidence
    }

    fn batches(&self) -> impl IndexedParallelIterator<Item = (u64, u64)> + '_ {
        let n = self.samples_requested.div_ceil(self.batch) as usize;
        (0..n).into_par_iter().map(move |b| {
            let b = b as u64;
            (b, self.batch.min(self.samples_requested - b * self.batch))
        })
    }

    fn rng(&self, batch: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(batch);
        rng
    }
}

/// Arithmetic calls per scenario and obligor: one conditional-probability
/// evaluation and one loss accumulation.
pub const SCENARIO_OPS_PER_OBLIGOR: u64 = 2;

/// Precomputed sampler for one portfolio and factor mode.
struct ScenarioSampler<'a> {
    portfolio: &'a Portfolio,
    sampling: &'a FactorSampling,
    /// Discrete mode: grid index → conditional default probabilities.
    table: Vec<Vec<f64>>,
    weights: Option<WeightedIndex<f64>>,
}

impl<'a> ScenarioSampler<'a> {
    fn new(portfolio: &'a Portfolio, sampling: &'a FactorSampling) -> Result<Self> {
        let (table, weights) = match sampling {
            FactorSampling::Discrete(d) => {
                let table = d
                    .points()
                    .iter()
                    .map(|&x| portfolio.obligors().iter().map(|o| o.conditional_default_prob(x)).collect())
                    .collect();
                let w = WeightedIndex::new(d.probs()).map_err(|e| Error::invalid(e.to_string()))?;
                (table, Some(w))
            }
            _ => (Vec::new(), None),
        };
        Ok(Self { portfolio, sampling, table, weights })
    }

    /// Fills `defaults` and returns `(x₀, loss)`.
    fn draw<R: Rng>(&self, rng: &mut R, defaults: &mut [bool], ledger: &mut QueryLedger) -> (f64, f64) {
        let obligors = self.portfolio.obligors();
        let n = obligors.len() as u64;
        ledger.classical_samples += 1;
        ledger.normal_draws += 1;
        ledger.bernoulli_draws += n;
        ledger.arithmetic_calls += SCENARIO_OPS_PER_OBLIGOR * n;
        let mut loss = 0.0;
        let x0 = match self.sampling {
            FactorSampling::Discrete(d) => {
                let i = self.weights.as_ref().expect("discrete sampler").sample(rng);
                for ((o, &p), y) in obligors.iter().zip(&self.table[i]).zip(defaults.iter_mut()) {
                    *y = rng.random::<f64>() < p;
                    if *y {
                        loss += o.exposure();
                    }
                }
                return (d.points()[i], loss);
            }
            FactorSampling::Exact => rng.sample(StandardNormal),
            FactorSampling::InverseCdf => {
                // `random` lies in [0, 1); map to the open interval.
                let u = (rng.random::<u64>() >> 11) as f64 * f64::EPSILON / 2.0 + f64::EPSILON / 4.0;
                std_normal_quantile(u).expect("u in (0, 1)")
            }
        };
        for (o, y) in obligors.iter().zip(defaults.iter_mut()) {
            *y = rng.random::<f64>() < o.conditional_default_prob(x0);
            if *y {
                loss += o.exposure();
            }
        }
        (x0, loss)
    }
}

/// One scenario `(x₀, y)` of the model, charging the ledger with one normal
/// draw, `N_obl` Bernoulli draws and `2·N_obl` arithmetic calls.
pub fn sample_scenario<R: Rng>(
    rng: &mut R,
    portfolio: &Portfolio,
    sampling: &FactorSampling,
    ledger: &mut QueryLedger,
) -> Result<(f64, Vec<bool>)> {
    let sampler = ScenarioSampler::new(portfolio, sampling)?;
    let mut y = vec![false; portfolio.obligor_count()];
    let (x0, _) = sampler.draw(rng, &mut y, ledger);
    Ok((x0, y))
}

/// Merges `items` along a fixed balanced binary tree.
fn pairwise_reduce<T>(mut items: Vec<T>, merge: impl Fn(T, T) -> T) -> Option<T> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => merge(a, b),
                None => a,
            });
        }
        items = next;
    }
    items.pop()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McVar {
    pub alpha: f64,
    pub value: f64,
    pub samples: u64,
    pub ledger: QueryLedger,
}

/// Empirical VaR: the `⌈(1−α)·N⌉`-th smallest of `N` sampled losses.
pub fn estimate_var(portfolio: &Portfolio, alpha: f64, config: &McConfig) -> Result<McVar> {
    config.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("VaR level must lie in (0, 1), got {alpha}")));
    }
    let n = config.samples_requested;
    if n < 100 {
        return Err(Error::invalid(format!("VaR estimation needs at least 100 samples, got {n}")));
    }
    if (n as f64) * alpha < 10.0 {
        return Err(Error::invalid(format!(
            "{n} samples leave fewer than 10 expected tail points at alpha = {alpha}; need N·alpha ≥ 10"
        )));
    }
    let sampler = ScenarioSampler::new(portfolio, &config.sampling)?;
    let parts: Vec<(Vec<f64>, QueryLedger)> = config
        .batches()
        .map(|(b, size)| {
            let mut rng = config.rng(b);
            let mut ledger = QueryLedger::new();
            let mut y = vec![false; portfolio.obligor_count()];
            let losses = (0..size).map(|_| sampler.draw(&mut rng, &mut y, &mut ledger).1).collect();
            (losses, ledger)
        })
        .collect();
    let mut ledger = QueryLedger::new();
    let mut losses = Vec::with_capacity(n as usize);
    for (l, g) in parts {
        losses.extend(l);
        ledger += g;
    }
    let x = (1.0 - alpha) * n as f64;
    let rank = ((x - 1e-9 * x).ceil() as usize).clamp(1, n as usize);
    let (_, value, _) = losses.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(McVar { alpha, value: *value, samples: n, ledger })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub threshold: f64,
    /// Tail means of `L_K`, one per group.
    pub estimates: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// Tail mean of the total loss.
    pub cvar: f64,
    pub tail_hits: u64,
    pub samples: u64,
    pub ledger: QueryLedger,
}

impl McEstimate {
    pub fn tail_fraction(&self) -> f64 {
        self.tail_hits as f64 / self.samples as f64
    }
}

#[derive(Debug, Clone)]
struct TailAccumulator {
    samples: u64,
    hits: u64,
    total: CompensatedSum,
    sums: Vec<CompensatedSum>,
    squares: Vec<CompensatedSum>,
    ledger: QueryLedger,
}

impl TailAccumulator {
    fn new(groups: usize) -> Self {
        Self {
            samples: 0,
            hits: 0,
            total: CompensatedSum::new(),
            sums: vec![CompensatedSum::new(); groups],
            squares: vec![CompensatedSum::new(); groups],
            ledger: QueryLedger::new(),
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.samples += other.samples;
        self.hits += other.hits;
        self.total.merge(&other.total);
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            a.merge(b);
        }
        for (a, b) in self.squares.iter_mut().zip(&other.squares) {
            a.merge(b);
        }
        self.ledger += other.ledger;
        self
    }
}

/// Tail means `E[L_K | L ≥ v]` by plain rejection: every sampled scenario
/// counts toward the cost, only those with `L ≥ v` toward the estimate.
pub fn estimate_cvar_contribs(portfolio: &Portfolio, v: f64, config: &McConfig) -> Result<McEstimate> {
    config.validate()?;
    if v.is_nan() {
        return Err(Error::invalid("threshold is NaN"));
    }
    let sampler = ScenarioSampler::new(portfolio, &config.sampling)?;
    let partition = portfolio.partition();
    let groups = partition.group_count();
    let exposures: Vec<f64> = portfolio.obligors().iter().map(|o| o.exposure()).collect();
    let parts: Vec<TailAccumulator> = config
        .batches()
        .map(|(b, size)| {
            let mut rng = config.rng(b);
            let mut acc = TailAccumulator::new(groups);
            let mut y = vec![false; portfolio.obligor_count()];
            for _ in 0..size {
                let (_, loss) = sampler.draw(&mut rng, &mut y, &mut acc.ledger);
                acc.samples += 1;
                if loss >= v {
                    acc.hits += 1;
                    acc.total.add(loss);
                    for k in 0..groups {
                        let lk: f64 = partition.range(k).filter(|&j| y[j]).map(|j| exposures[j]).sum();
                        acc.sums[k].add(lk);
                        acc.squares[k].add(lk * lk);
                    }
                }
            }
            acc
        })
        .collect();
    let acc = pairwise_reduce(parts, TailAccumulator::merge).expect("at least one batch");
    if acc.hits == 0 {
        return Err(Error::ZeroTail {
            threshold: v,
            detail: format!(
                "no tail hits in {} scenarios; the tail probability is likely below 3/N = {:.3e}",
                acc.samples,
                3.0 / acc.samples as f64
            ),
        });
    }
    let h = acc.hits as f64;
    let estimates: Vec<f64> = acc.sums.iter().map(|s| s.value() / h).collect();
    let standard_errors = estimates
        .iter()
        .zip(&acc.squares)
        .map(|(&m, sq)| {
            if acc.hits < 2 {
                return f64::INFINITY;
            }
            let var = ((sq.value() - h * m * m) / (h - 1.0)).max(0.0);
            (var / h).sqrt()
        })
        .collect();
    Ok(McEstimate {
        threshold: v,
        estimates,
        standard_errors,
        cvar: acc.total.value() / h,
        tail_hits: acc.hits,
        samples: acc.samples,
        ledger: acc.ledger,
    })
}

/// Classical scenario budget `σ_max²·ln(N_gr/δ)/(ε²·p)`, constant 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalBudget {
    /// The real-valued figure.
    pub figure: f64,
    /// Scenarios to generate, the figure rounded up.
    pub samples: u64,
}

impl ClassicalBudget {
    /// Bernoulli draws (equivalently, per-obligor arithmetic) for `n_obl`
    /// obligors.
    pub fn bernoulli_draws(&self, n_obl: usize) -> u64 {
        self.samples.saturating_mul(n_obl as u64)
    }
}

/// Rounds up, forgiving relative rounding noise of order 1e-12 so that
/// exact integers in exact arithmetic stay put.
pub(crate) fn ceil_count(x: f64) -> u64 {
    let c = (x * (1.0 - 1e-12)).ceil();
    if c >= u64::MAX as f64 { u64::MAX } else { c.max(0.0) as u64 }
}

pub fn classical_sample_budget(sigma_max: f64, eps: f64, p: f64, n_gr: usize, delta: f64) -> Result<ClassicalBudget> {
    if !(sigma_max > 0.0 && sigma_max.is_finite()) {
        return Err(Error::invalid(format!("sigma_max must be positive, got {sigma_max}")));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive, got {eps}")));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("tail probability must lie in (0, 1], got {p}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if n_gr == 0 {
        return Err(Error::invalid("at least one group is required"));
    }
    let log = (n_gr as f64 / delta).ln().max(0.0);
    let figure = sigma_max * sigma_max * log / (eps * eps * p);
    Ok(ClassicalBudget { figure, samples: ceil_count(figure) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{enumerate_exact, RiskQuery};
    use crate::model::{GroupPartition, Obligor};

    fn golden() -> Portfolio {
        let obl = [(3.0, 0.1), (5.0, 0.2), (7.0, 0.3)]
            .iter()
            .map(|&(e, pd)| Obligor::from_pd(e, 0.5, pd).unwrap())
            .collect();
        Portfolio::new(obl, GroupPartition::singletons(3).unwrap()).unwrap()
    }

    fn uniform(n: usize, pd: f64) -> Portfolio {
        Portfolio::new(
            vec![Obligor::from_pd(1.0, 0.3, pd).unwrap(); n],
            GroupPartition::singletons(n).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn certain_and_impossible_defaults() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ledger = QueryLedger::new();
        for mode in [FactorSampling::Exact, FactorSampling::InverseCdf] {
            for _ in 0..1000 {
                let (_, y) = sample_scenario(&mut rng, &uniform(4, 0.0), &mode, &mut ledger).unwrap();
                assert!(y.iter().all(|&b| !b));
                let (_, y) = sample_scenario(&mut rng, &uniform(4, 1.0), &mode, &mut ledger).unwrap();
                assert!(y.iter().all(|&b| b));
            }
        }
        assert_eq!(ledger.normal_draws, 4000);
        assert_eq!(ledger.bernoulli_draws, 16000);
    }

    #[test]
    fn high_loading_default_rate() {
        let o = Obligor::from_pd(1.0, 0.999, 0.3).unwrap();
        let x0 = -4.0;
        let p = o.conditional_default_prob(x0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let hits = (0..n).filter(|_| rng.random::<f64>() < o.conditional_default_prob(x0)).count();
        let se = (p * (1.0 - p) / n as f64).sqrt().max(1.0 / n as f64);
        assert!(p > 0.999);
        assert!((hits as f64 / n as f64 - p).abs() <= 3.0 * se + 1e-12);
    }

    #[test]
    fn var_of_point_mass() {
        let p = uniform(3, 1.0);
        for alpha in [0.05, 0.3, 0.9] {
            let v = estimate_var(&p, alpha, &McConfig::new(3, 1000)).unwrap();
            assert_eq!(v.value, 3.0);
        }
    }

    #[test]
    fn var_preconditions() {
        let p = golden();
        assert!(estimate_var(&p, 0.05, &McConfig::new(1, 99)).is_err());
        assert!(estimate_var(&p, 0.001, &McConfig::new(1, 1000)).is_err());
        assert!(estimate_var(&p, 0.01, &McConfig::new(1, 1000)).is_ok());
    }

    #[test]
    fn var_near_one_is_minimum() {
        let p = golden();
        let v = estimate_var(&p, 1.0 - 1e-9, &McConfig::new(4, 1000)).unwrap();
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn zero_threshold_gives_unconditional_means() {
        let p = golden();
        let est = estimate_cvar_contribs(&p, 0.0, &McConfig::new(5, 200_000)).unwrap();
        assert_eq!(est.tail_hits, est.samples);
        for (k, o) in p.obligors().iter().enumerate() {
            let mean = o.exposure() * o.default_prob();
            assert!((est.estimates[k] - mean).abs() < 4.0 * est.standard_errors[k]);
        }
    }

    #[test]
    fn golden_contributions_within_three_se() {
        let p = golden();
        let d = DiscreteSN::new(16, 4.0).unwrap();
        let exact = enumerate_exact(&p, &d, RiskQuery::threshold(7.0)).unwrap();
        let cfg = McConfig::new(6, 1_000_000).with_sampling(FactorSampling::Discrete(d));
        let est = estimate_cvar_contribs(&p, 7.0, &cfg).unwrap();
        for k in 0..3 {
            assert!(
                (est.estimates[k] - exact.cvar_contribs[k]).abs() < 3.0 * est.standard_errors[k],
                "group {k}: {} vs {} ± {}",
                est.estimates[k],
                exact.cvar_contribs[k],
                est.standard_errors[k]
            );
        }
        assert_eq!(est.ledger.classical_samples, 1_000_000);
        assert_eq!(est.ledger.normal_draws, 1_000_000);
        assert_eq!(est.ledger.bernoulli_draws, 3_000_000);
    }

    #[test]
    fn standard_errors_shrink_by_root_two() {
        let p = golden();
        let a = estimate_cvar_contribs(&p, 7.0, &McConfig::new(7, 200_000)).unwrap();
        let b = estimate_cvar_contribs(&p, 7.0, &McConfig::new(7, 400_000)).unwrap();
        for k in 0..3 {
            let r = b.standard_errors[k] / a.standard_errors[k];
            assert!((r * 2f64.sqrt() - 1.0).abs() < 0.15, "ratio {r}");
        }
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let p = golden();
        let cfg = McConfig::new(8, 50_000).with_batch(1000);
        let a = estimate_cvar_contribs(&p, 7.0, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| estimate_cvar_contribs(&p, 7.0, &cfg)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_hits_name_the_bound() {
        let p = golden();
        match estimate_cvar_contribs(&p, 100.0, &McConfig::new(9, 1000)) {
            Err(Error::ZeroTail { detail, .. }) => assert!(detail.contains("3/N")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn budget_scalings() {
        // N_gr / δ = e makes the log term 1.
        let b = classical_sample_budget(1.0, 1.0, 1.0, 1, 1.0 / std::f64::consts::E).unwrap();
        assert_eq!(b.samples, 1);
        let base = classical_sample_budget(2.0, 0.1, 1.0, 8, 0.01).unwrap();
        let half = classical_sample_budget(2.0, 0.05, 1.0, 8, 0.01).unwrap();
        let rare = classical_sample_budget(2.0, 0.1, 0.01, 8, 0.01).unwrap();
        assert!((half.figure / base.figure - 4.0).abs() < 1e-12);
        assert!((rare.figure / base.figure - 100.0).abs() < 1e-9);
        assert_eq!(base.bernoulli_draws(10), base.samples * 10);
        assert!(classical_sample_budget(1.0, 1.0, 0.0, 1, 0.1).is_err());
        assert!(classical_sample_budget(1.0, 1.0, 0.5, 1, 1.0).is_err());
    }
}
