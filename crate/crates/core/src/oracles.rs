//! Composite oracles of the risk-contribution pipeline.
//!
//! [`TailOracle`] prepares
//! `√p |Ψ≥v⟩|1⟩ + √(1−p) |Ψ_gar⟩|0⟩` from `|0⟩` in three stages: load the
//! discretized systematic factor, rotate each obligor qubit so its default
//! amplitude squares to the conditional default probability, then flip the
//! flag on every label whose loss reaches the threshold.
//!
//! [`PayloadView`] is the payload oracle: it attaches to every label the
//! vector of flag-weighted group losses, `ξ_K = w · L_K`.
//!
//! Arithmetic-call constants charged to the ledger:
//! * angle register for obligor `k`: one CDF evaluation and one arccos-sqrt (2);
//! * loss accumulation: one multiply and one add per obligor, plus one
//!   comparison (`2·N_obl + 1`);
//! * payload: one multiply and one add per obligor (`2·N_obl`).
//!
//! One tail-marking preparation therefore costs `4·N_obl + 1` arithmetic
//! calls, `N_obl` controlled rotations and one grid load.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed::{FixedPointFormat, Raw};
use crate::ledger::QueryLedger;
use crate::model::{DiscreteSN, GroupPartition, Portfolio};
use crate::qsim::{BasisPermutation, ControlledRotation, GridLoader, Operator, ScenarioBasis, ScenarioLabel, StateVector};
use crate::sum::csum;

pub const ANGLE_COST: u64 = 2;

/// Arithmetic calls of the loss-sum-and-compare stage.
pub fn marker_cost(n_obl: usize) -> u64 {
    2 * n_obl as u64 + 1
}

/// Arithmetic calls of one payload evaluation.
pub fn payload_cost(n_obl: usize) -> u64 {
    2 * n_obl as u64
}

/// Arithmetic calls of one tail-marking preparation: `4·N_obl + 1`.
pub fn tail_oracle_cost(n_obl: usize) -> u64 {
    ANGLE_COST * n_obl as u64 + marker_cost(n_obl)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailOracleSpec {
    pub portfolio: Portfolio,
    pub disc: DiscreteSN,
    pub threshold: f64,
    pub format: FixedPointFormat,
}

impl TailOracleSpec {
    pub fn new(portfolio: Portfolio, disc: DiscreteSN, threshold: f64, format: FixedPointFormat) -> Result<Self> {
        if !(threshold.is_finite() && threshold > 0.0) {
            return Err(Error::invalid(format!("loss threshold must be positive, got {threshold}")));
        }
        Ok(Self::new_permissive(portfolio, disc, threshold, format))
    }

    /// Skips the `v > 0` check. Thresholds at or below zero mark every
    /// scenario; useful only as a test configuration.
    pub fn new_permissive(portfolio: Portfolio, disc: DiscreteSN, threshold: f64, format: FixedPointFormat) -> Self {
        Self { portfolio, disc, threshold, format }
    }
}

/// Rounds every exposure onto the register grid and tabulates subset losses
/// as raw register sums.
fn raw_subset_losses(exposures: &[Raw], format: &FixedPointFormat) -> Result<Vec<Raw>> {
    let mut s: Vec<Raw> = vec![0];
    for &e in exposures {
        let len = s.len();
        for j in 0..len {
            let v = format.add(s[j], e)?;
            s.push(v);
        }
    }
    Ok(s)
}

/// The tail-marking preparation `U≥v`.
#[derive(Debug, Clone)]
pub struct TailOracle {
    basis: ScenarioBasis,
    loader: GridLoader,
    rotations: Vec<ControlledRotation>,
    marker: BasisPermutation,
    tail: Vec<bool>,
    spec: TailOracleSpec,
}

pub fn build_u_gev(spec: &TailOracleSpec) -> Result<TailOracle> {
    let portfolio = &spec.portfolio;
    let disc = &spec.disc;
    let format = &spec.format;
    let n_obl = portfolio.obligor_count();
    let basis = ScenarioBasis::new(disc.count(), n_obl)?;
    let loader = GridLoader::new(&basis, disc.probs())?;

    let rotations = portfolio
        .obligors()
        .iter()
        .enumerate()
        .map(|(k, o)| {
            let angles = disc
                .points()
                .iter()
                .map(|&x| format.round((1.0 - o.conditional_default_prob(x)).sqrt().acos()))
                .collect::<Result<Vec<f64>>>()?;
            ControlledRotation::new(&basis, k, &angles, ANGLE_COST)
        })
        .collect::<Result<Vec<_>>>()?;

    let exposures = portfolio
        .obligors()
        .iter()
        .map(|o| format.quantize(o.exposure()))
        .collect::<Result<Vec<Raw>>>()?;
    let losses = raw_subset_losses(&exposures, format)?;
    let v = format.quantize(spec.threshold)?;
    let tail = losses
        .iter()
        .map(|&l| format.compare_ge(l, v))
        .collect::<Result<Vec<bool>>>()?;
    let marker = BasisPermutation::new(
        &basis,
        |l| ScenarioLabel { flag: l.flag ^ tail[l.defaults as usize], ..l },
        marker_cost(n_obl),
    )?;

    let oracle = TailOracle { basis, loader, rotations, marker, tail, spec: spec.clone() };
    let p = oracle.prepare(&mut QueryLedger::new()).marked_probability();
    if p <= 0.0 {
        return Err(Error::ZeroTail {
            threshold: spec.threshold,
            detail: "no scenario with positive probability reaches the threshold".into(),
        });
    }
    Ok(oracle)
}

impl TailOracle {
    pub fn basis(&self) -> &ScenarioBasis {
        &self.basis
    }

    pub fn spec(&self) -> &TailOracleSpec {
        &self.spec
    }

    /// Whether default vector `y` reaches the threshold, as the register
    /// comparator decides it.
    pub fn is_tail(&self, y: u64) -> bool {
        self.tail[y as usize]
    }

    /// `U≥v|0⟩`.
    pub fn prepare(&self, ledger: &mut QueryLedger) -> StateVector {
        let mut s = StateVector::zero(self.basis);
        self.apply(&mut s, ledger);
        s
    }
}

impl Operator for TailOracle {
    fn apply(&self, state: &mut StateVector, ledger: &mut QueryLedger) {
        self.loader.apply(state, ledger);
        for r in &self.rotations {
            r.apply(state, ledger);
        }
        self.marker.apply(state, ledger);
        ledger.ugev_calls += 1;
    }

    fn apply_adjoint(&self, state: &mut StateVector, ledger: &mut QueryLedger) {
        self.marker.apply_adjoint(state, ledger);
        for r in self.rotations.iter().rev() {
            r.apply_adjoint(state, ledger);
        }
        self.loader.apply_adjoint(state, ledger);
        ledger.ugev_calls += 1;
    }
}

/// Group structure and register-rounded exposures for the payload oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadSpec {
    pub partition: GroupPartition,
    exposures: Vec<f64>,
    pub format: FixedPointFormat,
}

impl PayloadSpec {
    pub fn new(portfolio: &Portfolio, format: FixedPointFormat) -> Result<Self> {
        let exposures = portfolio
            .obligors()
            .iter()
            .map(|o| format.round(o.exposure()))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self { partition: portfolio.partition().clone(), exposures, format })
    }

    pub fn group_count(&self) -> usize {
        self.partition.group_count()
    }

    /// `E_K` on the register grid.
    pub fn group_exposure(&self, k: usize) -> f64 {
        self.exposures[self.partition.range(k)].iter().sum()
    }

    /// `ξ(label)`: `w · L_K` for every group.
    pub fn payload(&self, label: ScenarioLabel) -> Vec<f64> {
        (0..self.group_count())
            .map(|k| {
                if !label.flag {
                    return 0.0;
                }
                self.partition.range(k).filter(|&j| label.defaulted(j)).map(|j| self.exposures[j]).sum()
            })
            .collect()
    }
}

/// A state with the payload registers logically attached.
#[derive(Debug, Clone)]
pub struct PayloadView<'a> {
    state: &'a StateVector,
    /// `payloads[k][label index]`
    payloads: Vec<Vec<f64>>,
}

/// Attaches `ξ` to every label of `state`. One payload-oracle call.
pub fn apply_u_xi<'a>(state: &'a StateVector, spec: &PayloadSpec, ledger: &mut QueryLedger) -> Result<PayloadView<'a>> {
    let basis = state.basis();
    if spec.partition.obligor_count() != basis.obligor_count() {
        return Err(Error::invalid(format!(
            "partition covers {} obligors but the state has {}",
            spec.partition.obligor_count(),
            basis.obligor_count()
        )));
    }
    let mut payloads = vec![Vec::with_capacity(basis.dim()); spec.group_count()];
    for label in basis.labels() {
        for (k, x) in spec.payload(label).into_iter().enumerate() {
            payloads[k].push(x);
        }
    }
    ledger.uxi_calls += 1;
    ledger.arithmetic_calls += payload_cost(basis.obligor_count());
    Ok(PayloadView { state, payloads })
}

impl PayloadView<'_> {
    pub fn state(&self) -> &StateVector {
        self.state
    }

    pub fn group_count(&self) -> usize {
        self.payloads.len()
    }

    pub fn payload(&self, k: usize, index: usize) -> f64 {
        self.payloads[k][index]
    }

    /// `E[ξ_K]` under the Born law.
    pub fn mean(&self, k: usize) -> f64 {
        self.moment(k, |x| x)
    }

    /// `E[ξ_K²]` under the Born law.
    pub fn second_moment(&self, k: usize) -> f64 {
        self.moment(k, |x| x * x)
    }

    /// `Var[ξ_K]` under the Born law.
    pub fn variance(&self, k: usize) -> f64 {
        let m = self.mean(k);
        self.moment(k, |x| (x - m) * (x - m))
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.group_count()).map(|k| self.mean(k)).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        (0..self.group_count()).map(|k| self.variance(k)).collect()
    }

    fn moment(&self, k: usize, f: impl Fn(f64) -> f64) -> f64 {
        csum(self.state.amplitudes().iter().zip(&self.payloads[k]).map(|(a, &x)| a.norm_sqr() * f(x)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{RiskQuery, ScenarioLaw, enumerate_exact};
    use crate::model::Obligor;

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

    fn oracle(v: f64) -> TailOracle {
        let (p, d) = golden();
        build_u_gev(&TailOracleSpec::new_permissive(p, d, v, FixedPointFormat::default())).unwrap()
    }

    #[test]
    fn nonpositive_threshold_marks_everything() {
        let s = oracle(-1.0).prepare(&mut QueryLedger::new());
        assert!((s.marked_probability() - 1.0).abs() < 1e-12);
        let (p, d) = golden();
        assert!(TailOracleSpec::new(p, d, -1.0, FixedPointFormat::default()).is_err());
    }

    #[test]
    fn marked_probability_matches_exact_tail() {
        let (p, d) = golden();
        let exact = enumerate_exact(&p, &d, RiskQuery::threshold(7.0)).unwrap();
        let s = oracle(7.0).prepare(&mut QueryLedger::new());
        assert!((s.marked_probability() - exact.tail_prob).abs() < 1e-10);
        assert!((1.0 - s.marked_probability() - (1.0 - exact.tail_prob)).abs() < 1e-12);
    }

    #[test]
    fn ledger_of_one_preparation() {
        let mut ledger = QueryLedger::new();
        oracle(7.0).prepare(&mut ledger);
        assert_eq!(ledger.usn_calls, 1);
        assert_eq!(ledger.cry_calls, 3);
        assert_eq!(ledger.ugev_calls, 1);
        assert_eq!(ledger.arithmetic_calls, tail_oracle_cost(3));
        assert_eq!(tail_oracle_cost(3), 13);
    }

    #[test]
    fn adjoint_undoes_preparation() {
        let o = oracle(7.0);
        let mut ledger = QueryLedger::new();
        let mut s = o.prepare(&mut ledger);
        o.apply_adjoint(&mut s, &mut ledger);
        assert!((s.amplitudes()[0].re - 1.0).abs() < 1e-13);
        assert!((s.norm() - 1.0).abs() < 1e-12);
        assert_eq!(ledger.ugev_calls, 2);
    }

    #[test]
    fn unreachable_threshold_is_rejected() {
        let (p, d) = golden();
        let spec = TailOracleSpec::new(p, d, 16.0, FixedPointFormat::default()).unwrap();
        assert!(matches!(build_u_gev(&spec), Err(Error::ZeroTail { .. })));
    }

    #[test]
    fn narrow_format_overflows_at_construction() {
        let (p, d) = golden();
        let narrow = FixedPointFormat::new(8, 4, true).unwrap();
        let spec = TailOracleSpec::new(p, d, 7.0, narrow).unwrap();
        assert!(matches!(build_u_gev(&spec), Err(Error::Overflow(_))));
    }

    #[test]
    fn payload_is_zero_off_tail_and_sums_to_loss() {
        let (p, d) = golden();
        let o = oracle(7.0);
        let s = o.prepare(&mut QueryLedger::new());
        let spec = PayloadSpec::new(&p, FixedPointFormat::default()).unwrap();
        let mut ledger = QueryLedger::new();
        let view = apply_u_xi(&s, &spec, &mut ledger).unwrap();
        assert_eq!((ledger.uxi_calls, ledger.arithmetic_calls), (1, 6));
        let law = ScenarioLaw::new(&p, &d).unwrap();
        for (j, l) in s.basis().labels().enumerate() {
            let total: f64 = (0..3).map(|k| view.payload(k, j)).sum();
            if l.flag {
                assert_eq!(total, law.loss(l.defaults as usize));
            } else {
                assert_eq!(total, 0.0);
            }
        }

        let single = p.regrouped(GroupPartition::single(3).unwrap()).unwrap();
        let spec1 = PayloadSpec::new(&single, FixedPointFormat::default()).unwrap();
        let view1 = apply_u_xi(&s, &spec1, &mut ledger).unwrap();
        for (j, l) in s.basis().labels().enumerate() {
            let expected = if l.flag { law.loss(l.defaults as usize) } else { 0.0 };
            assert_eq!(view1.payload(0, j), expected);
        }
    }

    #[test]
    fn payload_conditional_means_are_contributions() {
        let (p, d) = golden();
        let exact = enumerate_exact(&p, &d, RiskQuery::threshold(7.0)).unwrap();
        let s = oracle(7.0).prepare(&mut QueryLedger::new());
        let spec = PayloadSpec::new(&p, FixedPointFormat::default()).unwrap();
        let view = apply_u_xi(&s, &spec, &mut QueryLedger::new()).unwrap();
        let pm = s.marked_probability();
        for k in 0..3 {
            assert!((view.mean(k) / pm - exact.cvar_contribs[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn payload_partition_mismatch() {
        let s = oracle(7.0).prepare(&mut QueryLedger::new());
        let other = Portfolio::new(
            vec![Obligor::from_pd(1.0, 0.5, 0.1).unwrap(); 2],
            GroupPartition::single(2).unwrap(),
        )
        .unwrap();
        let spec = PayloadSpec::new(&other, FixedPointFormat::default()).unwrap();
        assert!(apply_u_xi(&s, &spec, &mut QueryLedger::new()).is_err());
    }
}
