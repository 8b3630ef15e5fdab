//! Estimation of the group payload means `E[ξ_K]` under the amplified
//! preparation.
//!
//! Three modes:
//! * **exact** reads the means off the amplitudes;
//! * **surrogate** stands in for a multivariate mean estimator with the
//!   guarantee `‖μ′ − μ‖_∞ ≤ √(Tr Σ̃)·ln(N_gr/δ)/n` after `Õ(n)` calls: it
//!   perturbs the exact means by independent draws inside that bound and
//!   charges the ledger for the calls;
//! * **per-group AE** runs maximum-likelihood amplitude estimation once per
//!   group, the sequential baseline whose cost grows like `N_gr/ε`.
//!
//! Logarithms are natural throughout, except the base-2 logarithms of the
//! surrogate's polylog call-count convention.

use std::fmt;

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amplify::AmplifiedPreparation;
use crate::error::{Error, Result};
use crate::exact::ScenarioLaw;
use crate::ledger::QueryLedger;
use crate::mc::ceil_count;
use crate::normal::std_normal_quantile;
use crate::oracles::{apply_u_xi, PayloadSpec, PayloadView};
use crate::qsim::StateVector;

/// `2√2·σ_max·√N_gr·ln(N_gr/δ)/ε`, rounded up, without checking the
/// accuracy hypothesis.
pub fn n_formula(sigma_max: f64, n_gr: usize, delta: f64, eps: f64) -> u64 {
    let n = n_gr as f64;
    ceil_count(2.0 * 2f64.sqrt() * sigma_max * n.sqrt() * (n / delta).ln() / eps)
}

/// The estimation parameter `n` for accuracy `ε`, requiring
/// `ε ≤ σ_max·√N_gr` and checking `n ≥ ln(N_gr/δ)`.
pub fn derive_n(sigma_max: f64, n_gr: usize, delta: f64, eps: f64) -> Result<u64> {
    if !(sigma_max > 0.0 && eps > 0.0 && n_gr > 0 && delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!(
            "derive_n needs sigma_max > 0, eps > 0, N_gr ≥ 1 and delta in (0, 1); got {sigma_max}, {eps}, {n_gr}, {delta}"
        )));
    }
    let bound = sigma_max * (n_gr as f64).sqrt();
    if eps > bound {
        return Err(Error::Hypothesis(format!(
            "eps = {eps} exceeds sigma_max·sqrt(N_gr) = {bound} (ratio {:.6})",
            eps / bound
        )));
    }
    let n = n_formula(sigma_max, n_gr, delta, eps);
    check_n(n, n_gr, delta)?;
    Ok(n)
}

fn check_n(n: u64, n_gr: usize, delta: f64) -> Result<()> {
    let floor = (n_gr as f64 / delta).ln();
    if (n as f64) < floor {
        return Err(Error::Hypothesis(format!("n = {n} is below ln(N_gr/delta) = {floor:.6}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    Exact,
    Surrogate,
    PerGroupAe,
}

impl fmt::Display for EstimatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Exact => "exact",
            Self::Surrogate => "surrogate",
            Self::PerGroupAe => "per-group-ae",
        })
    }
}

/// Distribution of the surrogate's perturbation inside `[−B, B]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Perturbation {
    #[default]
    Uniform,
    /// Normal with standard deviation `B/2`, redrawn until inside `[−B, B]`.
    TruncatedGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub mode: EstimatorMode,
    pub n: u64,
    pub delta: f64,
    pub eps: f64,
    pub sigma_max: f64,
    pub n_gr: usize,
}

impl EstimatorConfig {
    /// Configuration with `n` from [`derive_n`].
    pub fn derived(mode: EstimatorMode, eps: f64, delta: f64, sigma_max: f64, n_gr: usize) -> Result<Self> {
        let n = derive_n(sigma_max, n_gr, delta, eps)?;
        Ok(Self { mode, n, delta, eps, sigma_max, n_gr })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionEstimate {
    pub mode: EstimatorMode,
    /// Reported estimates `c_K`: raw payload-mean estimates, biased by the
    /// factor `1 − ε′`.
    pub values: Vec<f64>,
    /// The same estimates divided by `1 − ε′`.
    pub corrected: Vec<f64>,
    pub eps_prime: f64,
    pub error_budget: f64,
    pub ledger: QueryLedger,
}

/// Exact payload means read from the amplitudes of `state`.
pub fn estimate_exact(
    state: &StateVector,
    spec: &PayloadSpec,
    eps: f64,
    ledger: &mut QueryLedger,
) -> Result<ContributionEstimate> {
    let view = apply_u_xi(state, spec, ledger)?;
    let eps_prime = (1.0 - state.marked_probability()).max(0.0);
    let values = view.means();
    let corrected = values.iter().map(|&m| m / (1.0 - eps_prime)).collect();
    Ok(ContributionEstimate { mode: EstimatorMode::Exact, values, corrected, eps_prime, error_budget: eps, ledger: *ledger })
}

/// Calls charged for one surrogate estimation:
/// `n·⌈log₂ n⌉·⌈log₂(N_gr/δ)⌉`, each factor at least 1.
pub fn surrogate_calls(n: u64, n_gr: usize, delta: f64) -> u64 {
    let l1 = (n as f64).log2().ceil().max(1.0) as u64;
    let l2 = (n_gr as f64 / delta).log2().ceil().max(1.0) as u64;
    n.saturating_mul(l1).saturating_mul(l2)
}

/// The surrogate's error bound `B = √(Tr Σ̃)·ln(N_gr/δ)/n`.
pub fn surrogate_bound(sigma_tilde2: &[f64], n: u64, delta: f64) -> f64 {
    let trace: f64 = sigma_tilde2.iter().sum();
    trace.sqrt() * (sigma_tilde2.len() as f64 / delta).ln() / n as f64
}

/// Surrogate multivariate mean estimation.
///
/// `means` and `sigma_tilde2` are the exact payload means and variances
/// under the amplified law; `per_call` is the ledger of one application of
/// the amplified preparation together with one payload-oracle call, charged
/// [`surrogate_calls`] times.
pub fn estimate_surrogate<R: Rng>(
    means: &[f64],
    sigma_tilde2: &[f64],
    eps_prime: f64,
    config: &EstimatorConfig,
    perturbation: Perturbation,
    per_call: &QueryLedger,
    rng: &mut R,
) -> Result<ContributionEstimate> {
    if means.len() != sigma_tilde2.len() || means.len() != config.n_gr {
        return Err(Error::invalid(format!(
            "expected {} groups, got {} means and {} variances",
            config.n_gr,
            means.len(),
            sigma_tilde2.len()
        )));
    }
    check_n(config.n, config.n_gr, config.delta)?;
    let trace: f64 = sigma_tilde2.iter().sum();
    let ceiling = 2.0 * config.n_gr as f64 * config.sigma_max * config.sigma_max;
    if trace > ceiling {
        return Err(Error::Hypothesis(format!(
            "Tr Σ̃ = {trace} exceeds 2·N_gr·sigma_max² = {ceiling}; sigma_max is too small for this state"
        )));
    }
    let b = surrogate_bound(sigma_tilde2, config.n, config.delta);
    let normal = Normal::new(0.0, b / 2.0).map_err(|e| Error::invalid(e.to_string()))?;
    let values: Vec<f64> = means
        .iter()
        .map(|&m| {
            if b == 0.0 {
                return m;
            }
            let d = match perturbation {
                Perturbation::Uniform => rng.random_range(-b..=b),
                Perturbation::TruncatedGaussian => loop {
                    let x: f64 = normal.sample(rng);
                    if x.abs() <= b {
                        break x;
                    }
                },
            };
            m + d
        })
        .collect();
    let corrected = values.iter().map(|&m| m / (1.0 - eps_prime)).collect();
    let ledger = per_call.scaled(surrogate_calls(config.n, config.n_gr, config.delta));
    Ok(ContributionEstimate {
        mode: EstimatorMode::Surrogate,
        values,
        corrected,
        eps_prime,
        error_budget: config.eps,
        ledger,
    })
}

/// Exact second-order statistics of the payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceStats {
    /// `σ_K²`: variance of `L_K` given `L ≥ v` under the model law.
    pub sigma2: Vec<f64>,
    /// `σ̃_K²`: variance of `ξ_K` under the amplified law.
    pub sigma_tilde2: Vec<f64>,
    /// Tail moments `E[L_K | L ≥ v]` and `E[L_K² | L ≥ v]`.
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub eps_prime: f64,
}

impl VarianceStats {
    pub fn sigma_max2(&self) -> f64 {
        self.sigma2.iter().copied().fold(0.0, f64::max)
    }

    pub fn sigma_tilde_max2(&self) -> f64 {
        self.sigma_tilde2.iter().copied().fold(0.0, f64::max)
    }

    /// `(1−ε′)·m₂ − (1−ε′)²·m₁²`, the amplified variance predicted from the
    /// tail moments when the flag-1 branch carries the model's tail law.
    pub fn predicted_sigma_tilde2(&self) -> Vec<f64> {
        let q = 1.0 - self.eps_prime;
        self.m1.iter().zip(&self.m2).map(|(&a, &b)| q * b - q * q * a * a).collect()
    }
}

pub fn variance_stats(law: &ScenarioLaw, v: f64, view: &PayloadView) -> Result<VarianceStats> {
    let tail = law.tail_stats(v)?;
    if tail.mean.len() != view.group_count() {
        return Err(Error::invalid(format!(
            "law has {} groups, payload has {}",
            tail.mean.len(),
            view.group_count()
        )));
    }
    Ok(VarianceStats {
        sigma2: tail.variance,
        sigma_tilde2: view.variances(),
        m1: tail.mean,
        m2: tail.second,
        eps_prime: (1.0 - view.state().marked_probability()).max(0.0),
    })
}

/// Per-group amplitude estimation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeEstimate {
    pub group: usize,
    /// `E_K·â`, biased by `1 − ε′`.
    pub raw: f64,
    /// `E_K·â/(1 − ε′)`.
    pub value: f64,
    /// Estimated probability `â` of the estimation qubit reading 1.
    pub amplitude: f64,
    pub powers: Vec<u64>,
    pub shots: u64,
    pub ledger: QueryLedger,
}

/// Shots per Grover power and number of widenings for degenerate data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeSettings {
    pub shots: u64,
    pub max_widenings: u32,
}

impl Default for AeSettings {
    fn default() -> Self {
        Self { shots: 100, max_widenings: 4 }
    }
}

/// Grover powers `0, 1, 2, 4, …` up to the first prefix whose Fisher
/// information `4·shots·Σ(2m+1)²` resolves the amplitude angle to
/// `ε/(z·E_K)`, `z` the two-sided normal quantile for `δ`.
pub fn ae_powers(eps: f64, e_k: f64, delta: f64, shots: u64) -> Result<Vec<u64>> {
    if !(eps > 0.0 && e_k > 0.0 && delta > 0.0 && delta < 1.0 && shots > 0) {
        return Err(Error::invalid("amplitude estimation needs eps, E_K, shots > 0 and delta in (0, 1)"));
    }
    let z = std_normal_quantile(1.0 - delta / 2.0).expect("delta in (0, 1)");
    // Angle error σ_θ = 1/(2·√(shots·Σ(2m+1)²)); value error ≤ E_K·σ_θ.
    let need = (z * e_k / (2.0 * eps)).powi(2) / shots as f64;
    let mut powers = vec![0u64];
    let mut info = 1.0;
    while info < need {
        let m = if powers.len() == 1 { 1 } else { 2 * powers[powers.len() - 1] };
        powers.push(m);
        info += ((2 * m + 1) as f64).powi(2);
    }
    Ok(powers)
}

/// Probability of reading 1 after `m` Grover iterations.
pub fn grover_probability(a: f64, m: u64) -> f64 {
    let theta = a.clamp(0.0, 1.0).sqrt().asin();
    ((2 * m + 1) as f64 * theta).sin().powi(2)
}

/// Maximum-likelihood angle for `hits[j]` ones in `shots` at power
/// `powers[j]`: grid search followed by golden-section refinement.
pub fn mle_amplitude(powers: &[u64], hits: &[u64], shots: u64) -> f64 {
    use std::f64::consts::FRAC_PI_2;
    let loglik = |theta: f64| -> f64 {
        powers
            .iter()
            .zip(hits)
            .map(|(&m, &h)| {
                let p = ((2 * m + 1) as f64 * theta).sin().powi(2).clamp(1e-300, 1.0 - 1e-16);
                h as f64 * p.ln() + (shots - h) as f64 * (1.0 - p).ln()
            })
            .sum()
    };
    let m_max = powers.iter().copied().max().unwrap_or(0);
    let grid = (100 * (2 * m_max + 1)).max(2000) as usize;
    let step = FRAC_PI_2 / grid as f64;
    let best = (0..=grid)
        .map(|i| i as f64 * step)
        .max_by(|&a, &b| loglik(a).total_cmp(&loglik(b)))
        .unwrap_or(0.0);
    let (mut lo, mut hi) = ((best - step).max(0.0), (best + step).min(FRAC_PI_2));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let x1 = hi - g * (hi - lo);
        let x2 = lo + g * (hi - lo);
        if loglik(x1) >= loglik(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    let theta = 0.5 * (lo + hi);
    let theta = [0.0, FRAC_PI_2, theta].into_iter().max_by(|&a, &b| loglik(a).total_cmp(&loglik(b))).unwrap();
    theta.sin().powi(2)
}

/// Per-group maximum-likelihood amplitude estimation.
///
/// An estimation qubit is rotated by `arcsin(√(ξ_K/E_K))` on every label of
/// `U_ℙ|0⟩`, so it reads 1 with probability `a = E[ξ_K]/E_K`. The Grover
/// iterate on the joint state acts on the two-dimensional span of its good
/// and bad components, so `m` iterations read 1 with probability
/// `sin²((2m+1)·asin √a)`; counts are drawn from that law. Each shot at
/// power `m` is charged `2m + 1` applications of the augmented preparation
/// (one `U_ℙ` and one payload call each).
pub fn estimate_per_group_ae<R: Rng>(
    up: &AmplifiedPreparation,
    spec: &PayloadSpec,
    group: usize,
    eps: f64,
    delta: f64,
    settings: AeSettings,
    rng: &mut R,
) -> Result<AeEstimate> {
    if group >= spec.group_count() {
        return Err(Error::invalid(format!("group {group} out of range")));
    }
    let mut per_call = QueryLedger::new();
    let state = up.prepare(&mut per_call);
    let view = apply_u_xi(&state, spec, &mut per_call)?;
    let e_k = spec.group_exposure(group);
    let a = (view.mean(group) / e_k).clamp(0.0, 1.0);
    let eps_prime = (1.0 - state.marked_probability()).max(0.0);

    let mut powers = ae_powers(eps, e_k, delta, settings.shots)?;
    let mut shots = settings.shots;
    let mut widenings = 0;
    let (hits, applications) = loop {
        let hits: Vec<u64> = powers
            .iter()
            .map(|&m| Binomial::new(shots, grover_probability(a, m)).expect("valid binomial").sample(rng))
            .collect();
        let applications: u64 = powers.iter().map(|&m| shots * (2 * m + 1)).sum();
        let degenerate = hits.iter().all(|&h| h == 0) || hits.iter().all(|&h| h == shots);
        if !degenerate || widenings >= settings.max_widenings {
            break (hits, applications);
        }
        widenings += 1;
        let last = *powers.last().expect("nonempty");
        powers.push(if last == 0 { 1 } else { 2 * last });
        shots *= 2;
    };
    let amplitude = mle_amplitude(&powers, &hits, shots);
    let raw = e_k * amplitude;
    Ok(AeEstimate {
        group,
        raw,
        value: raw / (1.0 - eps_prime),
        amplitude,
        powers,
        shots,
        ledger: per_call.scaled(applications),
    })
}

/// Runs [`estimate_per_group_ae`] for every group in parallel, group `K`
/// drawing from ChaCha8 stream `K` of `seed`. `eps_of(K)` gives each
/// group's accuracy target.
pub fn estimate_all_groups_ae(
    up: &AmplifiedPreparation,
    spec: &PayloadSpec,
    eps_of: impl Fn(usize) -> f64 + Sync,
    delta: f64,
    settings: AeSettings,
    seed: u64,
) -> Result<Vec<AeEstimate>> {
    (0..spec.group_count())
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            estimate_per_group_ae(up, spec, k, eps_of(k), delta, settings, &mut rng)
        })
        .collect()
}

impl ContributionEstimate {
    /// Collects per-group AE results into one estimate.
    pub fn from_ae(results: &[AeEstimate], eps_prime: f64, eps: f64) -> Self {
        let mut ledger = QueryLedger::new();
        for r in results {
            ledger += r.ledger;
        }
        Self {
            mode: EstimatorMode::PerGroupAe,
            values: results.iter().map(|r| r.raw).collect(),
            corrected: results.iter().map(|r| r.value).collect(),
            eps_prime,
            error_budget: eps,
            ledger,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amplify::{build_u_p, with_flag0_mass, EpsPrimeBudget, DEFAULT_MAX_LENGTH};
    use crate::exact::{enumerate_exact, RiskQuery};
    use crate::fixed::FixedPointFormat;
    use crate::model::{DiscreteSN, GroupPartition, Obligor, Portfolio};
    use crate::oracles::{build_u_gev, TailOracle, TailOracleSpec};
    use crate::qsim::Operator;
    use num_complex::Complex64;

    fn golden() -> (Portfolio, DiscreteSN) {
        let obl = [(3.0, 0.1), (5.0, 0.2), (7.0, 0.3)]
            .iter()
            .map(|&(e, pd)| Obligor::from_pd(e, 0.5, pd).unwrap())
            .collect();
        (
            Portfolio::new(obl, GroupPartition::singletons(3).unwrap()).unwrap(),
            DiscreteSN::new(16, 4.0).unwrap(),
        )
    }

    fn oracle(p: &Portfolio, d: &DiscreteSN, v: f64) -> TailOracle {
        build_u_gev(&TailOracleSpec::new(p.clone(), d.clone(), v, FixedPointFormat::default()).unwrap()).unwrap()
    }

    #[test]
    fn derive_n_examples() {
        assert_eq!(n_formula(1.0, 1, 1.0 / std::f64::consts::E, 2.0 * 2f64.sqrt()), 1);
        match derive_n(1.0, 1, 1.0 / std::f64::consts::E, 2.0 * 2f64.sqrt()) {
            Err(Error::Hypothesis(msg)) => assert!(msg.contains("2.828427")),
            other => panic!("{other:?}"),
        }
        assert_eq!(derive_n(1.0, 4, 0.01, 0.1).unwrap(), 339);
        let a = derive_n(1.0, 4, 0.01, 0.1).unwrap() as i64;
        let b = derive_n(1.0, 4, 0.01, 0.05).unwrap() as i64;
        assert!((b - 2 * a).abs() <= 1);
    }

    #[test]
    fn exact_mode_on_low_threshold_gives_expected_loss() {
        let (p, d) = golden();
        let single = p.regrouped(GroupPartition::single(3).unwrap()).unwrap();
        let o = oracle(&single, &d, 1.0);
        let s = o.prepare(&mut QueryLedger::new());
        // Rescale onto the tail branch only: ε′ = 0.
        let s = with_flag0_mass(&s, 0.0).unwrap();
        let spec = PayloadSpec::new(&single, FixedPointFormat::default()).unwrap();
        let est = estimate_exact(&s, &spec, 0.1, &mut QueryLedger::new()).unwrap();
        let exact = enumerate_exact(&single, &d, RiskQuery::threshold(1.0)).unwrap();
        assert!(est.eps_prime < 1e-15);
        assert!((est.values[0] - exact.cvar).abs() < 1e-10);
    }

    #[test]
    fn exact_mode_after_amplification() {
        let (p, d) = golden();
        let o = oracle(&p, &d, 7.0);
        let exact = enumerate_exact(&p, &d, RiskQuery::threshold(7.0)).unwrap();
        let eps = 0.1;
        let budget = EpsPrimeBudget::new(
            eps,
            exact.cvar_contribs.iter().copied().fold(0.0, f64::max),
            7.0,
            exact.tail_sigmas.iter().copied().fold(0.0, f64::max),
            3,
        )
        .unwrap();
        let up = build_u_p(&o, exact.tail_prob, &budget, DEFAULT_MAX_LENGTH).unwrap();
        let s = up.prepare(&mut QueryLedger::new());
        let spec = PayloadSpec::new(&p, FixedPointFormat::default()).unwrap();
        let est = estimate_exact(&s, &spec, eps, &mut QueryLedger::new()).unwrap();
        for k in 0..3 {
            let c = exact.cvar_contribs[k];
            assert!((est.values[k] - (1.0 - est.eps_prime) * c).abs() < 1e-10);
            assert!((est.corrected[k] - c).abs() < 1e-9);
            assert!((est.corrected[k] - est.values[k]).abs() <= eps / 2.0);
        }
    }

    #[test]
    fn surrogate_bounds_and_limits() {
        let means = [1.0, 2.0, 3.0];
        let s2 = [0.5, 0.25, 1.0];
        let cfg = EstimatorConfig { mode: EstimatorMode::Surrogate, n: 50, delta: 0.05, eps: 0.5, sigma_max: 1.0, n_gr: 3 };
        let b = surrogate_bound(&s2, 50, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for pert in [Perturbation::Uniform, Perturbation::TruncatedGaussian] {
            for _ in 0..200 {
                let e = estimate_surrogate(&means, &s2, 0.0, &cfg, pert, &QueryLedger::new(), &mut rng).unwrap();
                for (x, m) in e.values.iter().zip(means) {
                    assert!((x - m).abs() <= b);
                }
            }
        }
        let big = EstimatorConfig { n: 1 << 40, ..cfg };
        let e = estimate_surrogate(&means, &s2, 0.0, &big, Perturbation::Uniform, &QueryLedger::new(), &mut rng).unwrap();
        for (x, m) in e.values.iter().zip(means) {
            assert!((x - m).abs() < 1e-9);
        }
        let small = EstimatorConfig { n: 1, ..cfg };
        assert!(matches!(
            estimate_surrogate(&means, &s2, 0.0, &small, Perturbation::Uniform, &QueryLedger::new(), &mut rng),
            Err(Error::Hypothesis(_))
        ));
        let tight = EstimatorConfig { sigma_max: 0.5, ..cfg };
        assert!(estimate_surrogate(&means, &s2, 0.0, &tight, Perturbation::Uniform, &QueryLedger::new(), &mut rng).is_err());
    }

    #[test]
    fn surrogate_call_convention() {
        assert_eq!(surrogate_calls(339, 4, 0.01), 339 * 9 * 9);
        assert_eq!(surrogate_calls(1, 1, 0.9), 1);
        let per = QueryLedger { usn_calls: 3, uxi_calls: 1, ..QueryLedger::new() };
        let cfg = EstimatorConfig { mode: EstimatorMode::Surrogate, n: 339, delta: 0.01, eps: 0.1, sigma_max: 1.0, n_gr: 4 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = estimate_surrogate(&[0.0; 4], &[0.1; 4], 0.0, &cfg, Perturbation::Uniform, &per, &mut rng).unwrap();
        assert_eq!(e.ledger.usn_calls, 3 * 339 * 81);
        assert_eq!(e.ledger.uxi_calls, 339 * 81);
    }

    #[test]
    fn variance_stats_identities() {
        let (p, d) = golden();
        let o = oracle(&p, &d, 7.0);
        let law = ScenarioLaw::new(&p, &d).unwrap();
        let spec = PayloadSpec::new(&p, FixedPointFormat::default()).unwrap();
        let base = o.prepare(&mut QueryLedger::new());
        for eps_prime in [0.0, 1e-3, 0.2] {
            let s = with_flag0_mass(&base, eps_prime).unwrap();
            let view = apply_u_xi(&s, &spec, &mut QueryLedger::new()).unwrap();
            let st = variance_stats(&law, 7.0, &view).unwrap();
            for (a, b) in st.sigma_tilde2.iter().zip(st.predicted_sigma_tilde2()) {
                assert!((a - b).abs() < 1e-10);
            }
            if eps_prime == 0.0 {
                for (a, b) in st.sigma_tilde2.iter().zip(&st.sigma2) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn deterministic_tail_group_has_zero_sigma() {
        // Total exposure is 15, so L ≥ 15 forces every default.
        let (p, d) = golden();
        let law = ScenarioLaw::new(&p, &d).unwrap();
        let o = oracle(&p, &d, 15.0);
        let s = o.prepare(&mut QueryLedger::new());
        let spec = PayloadSpec::new(&p, FixedPointFormat::default()).unwrap();
        let view = apply_u_xi(&s, &spec, &mut QueryLedger::new()).unwrap();
        let st = variance_stats(&law, 15.0, &view).unwrap();
        assert!(st.sigma2.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn ae_schedule_doubles_as_eps_halves() {
        let a = ae_powers(0.1, 7.0, 0.05, 100).unwrap();
        let b = ae_powers(0.05, 7.0, 0.05, 100).unwrap();
        let (ma, mb) = (*a.last().unwrap() as f64, *b.last().unwrap() as f64);
        let r = mb / ma;
        assert!((1.0..=4.0).contains(&r), "{ma} -> {mb}");
        assert_eq!(a[..2], [0, 1]);
    }

    #[test]
    fn mle_recovers_amplitude_from_expected_counts() {
        let powers = [0, 1, 2, 4, 8];
        for a in [0.01, 0.2, 0.5, 0.93] {
            let hits: Vec<u64> = powers.iter().map(|&m| (grover_probability(a, m) * 1e6).round() as u64).collect();
            let est = mle_amplitude(&powers, &hits, 1_000_000);
            assert!((est - a).abs() < 1e-4, "{a} -> {est}");
        }
    }

    /// Simulates the Grover iterate on `U_ℙ|0⟩` with an explicit estimation
    /// qubit and compares the read-out probability with the closed form.
    #[test]
    fn grover_closed_form_matches_joint_simulation() {
        let (p, d) = golden();
        let o = oracle(&p, &d, 7.0);
        let exact = enumerate_exact(&p, &d, RiskQuery::threshold(7.0)).unwrap();
        let budget = EpsPrimeBudget::new(0.2, 5.0, 7.0, exact.tail_sigmas[2], 3).unwrap();
        let up = build_u_p(&o, exact.tail_prob, &budget, DEFAULT_MAX_LENGTH).unwrap();
        let spec = PayloadSpec::new(&p, FixedPointFormat::default()).unwrap();
        let k = 2;
        let e_k = spec.group_exposure(k);
        let basis = *o.basis();
        let angle: Vec<f64> = basis.labels().map(|l| (spec.payload(l)[k] / e_k).sqrt().asin()).collect();
        let mut ledger = QueryLedger::new();

        // (s0, s1): system amplitudes with the estimation qubit at 0 / 1.
        let rotate = |s0: &mut StateVector, s1: &mut StateVector, sign: f64| {
            for j in 0..basis.dim() {
                let (c, s) = (angle[j].cos(), sign * angle[j].sin());
                let (a0, a1) = (s0.amplitudes()[j], s1.amplitudes()[j]);
                s0.amplitudes_mut()[j] = a0 * c - a1 * s;
                s1.amplitudes_mut()[j] = a0 * s + a1 * c;
            }
        };
        let mut s0 = up.prepare(&mut ledger);
        let mut s1 = StateVector::from_amplitudes(basis, vec![Complex64::new(0.0, 0.0); basis.dim()]).unwrap();
        rotate(&mut s0, &mut s1, 1.0);
        let a = s1.norm().powi(2);
        let prepared = up.prepare(&mut ledger);
        let view = apply_u_xi(&prepared, &spec, &mut ledger).unwrap();
        assert!((a - view.mean(k) / e_k).abs() < 1e-12);

        for m in 1..=3u64 {
            // Q = A·S_0·A†·S_χ
            s1.scale(Complex64::new(-1.0, 0.0));
            rotate(&mut s0, &mut s1, -1.0);
            up.apply_adjoint(&mut s0, &mut ledger);
            up.apply_adjoint(&mut s1, &mut ledger);
            s0.phase_zero(Complex64::new(-1.0, 0.0));
            up.apply(&mut s0, &mut ledger);
            up.apply(&mut s1, &mut ledger);
            rotate(&mut s0, &mut s1, 1.0);
            let read = s1.norm().powi(2);
            assert!((read - grover_probability(a, m)).abs() < 1e-9, "m={m}: {read}");
        }
    }

    #[test]
    fn ae_constant_payload_converges() {
        // With v = 15 every tail scenario defaults all obligors, so each
        // group's payload is constant on the tail.
        let (p, d) = golden();
        let o = oracle(&p, &d, 15.0);
        let exact = enumerate_exact(&p, &d, RiskQuery::threshold(15.0)).unwrap();
        let budget = EpsPrimeBudget::new(1e-3, 7.0, 7.0, 1e-3, 3).unwrap();
        let up = build_u_p(&o, exact.tail_prob, &budget, DEFAULT_MAX_LENGTH).unwrap();
        let spec = PayloadSpec::new(&p, FixedPointFormat::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let coarse = estimate_per_group_ae(&up, &spec, 1, 0.5, 0.05, AeSettings::default(), &mut rng).unwrap();
        let fine = estimate_per_group_ae(&up, &spec, 1, 0.01, 0.05, AeSettings::default(), &mut rng).unwrap();
        assert!((fine.value - 5.0).abs() < 0.01 + 1e-9);
        assert!(fine.ledger.up_calls > coarse.ledger.up_calls);
    }
}
