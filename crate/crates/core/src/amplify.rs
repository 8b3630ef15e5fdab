//! Fixed-point amplitude amplification of the tail flag.
//!
//! The schedule follows Yoder, Low and Chuang's fixed-point search. With
//! `L = 2l + 1` applications of the preparation `U` and
//! `γ⁻¹ = T_{1/L}(1/δ) = cosh(acosh(1/δ)/L)`, the phases
//!
//! ```text
//! α_j = −β_{l−j+1} = 2·cot⁻¹(tan(2πj/L)·√(1−γ²)),   j = 1…l
//! ```
//!
//! drive the marked probability to `1 − δ²·T_L(T_{1/L}(1/δ)·√(1−p))²`,
//! which is at least `1 − δ²` for every `p ≥ w` once
//! `L ≥ acosh(1/δ)/acosh(1/√(1−w))`. The iterate is
//! `G(α, β) = −S_s(α)·S_t(β)` with `S_t(β)` multiplying flag-1 amplitudes by
//! `e^{iβ}` and `S_s(α) = U·S_0(α)·U†`, where `S_0(α)` multiplies the
//! all-zero amplitude by `e^{−iα}`.
//!
//! The minimal `L` above behaves like `log(2/δ)/√w` for small `w` and
//! reaches 1 when `δ → 1` or `w ≥ 1 − δ²`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::QueryLedger;
use crate::oracles::TailOracle;
use crate::qsim::{Operator, StateVector};

/// Default ceiling on the number of preparation calls per amplified
/// preparation.
pub const DEFAULT_MAX_LENGTH: usize = 100_001;

/// Chebyshev polynomial of the first kind, `T_n(x)`, for real `x ≥ −1`.
pub fn chebyshev_t(n: f64, x: f64) -> f64 {
    if x.abs() <= 1.0 {
        (n * x.acos()).cos()
    } else {
        (n * x.acosh()).cosh()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpaaSchedule {
    /// Number of applications of the preparation or its inverse.
    pub length: usize,
    /// `(α_j, β_j)` for `j = 1…(L−1)/2`, in application order.
    pub phases: Vec<(f64, f64)>,
    /// Amplitude tolerance `δ`; `1` for schedules without a guarantee.
    pub delta: f64,
    /// Assumed lower bound `w` on the marked probability.
    pub lower_bound: f64,
}

impl FpaaSchedule {
    /// Guaranteed marked-probability floor `1 − δ²`.
    pub fn target_floor(&self) -> f64 {
        1.0 - self.delta * self.delta
    }

    pub fn iterations(&self) -> usize {
        self.phases.len()
    }

    /// Plain Grover search with `iterations` rounds: every phase `π`. Used as
    /// a control that over-rotates.
    pub fn grover(iterations: usize) -> Self {
        use std::f64::consts::PI;
        Self { length: 2 * iterations + 1, phases: vec![(PI, PI); iterations], delta: 1.0, lower_bound: 0.0 }
    }

    /// Marked probability after running the schedule on a preparation with
    /// marked probability `p`, simulated on the two-dimensional invariant
    /// subspace spanned by the marked and unmarked components.
    pub fn success_probability(&self, p: f64) -> f64 {
        let s = [Complex64::new(p.sqrt(), 0.0), Complex64::new((1.0 - p).max(0.0).sqrt(), 0.0)];
        let mut v = s;
        for &(alpha, beta) in &self.phases {
            v[0] *= Complex64::from_polar(1.0, beta);
            let overlap = s[0].conj() * v[0] + s[1].conj() * v[1];
            let k = (Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, -alpha)) * overlap;
            v[0] = -(v[0] - k * s[0]);
            v[1] = -(v[1] - k * s[1]);
        }
        v[0].norm_sqr()
    }

    /// Closed-form marked probability of the fixed-point schedule,
    /// `1 − δ²·T_L(T_{1/L}(1/δ)·√(1−p))²`.
    pub fn closed_form(&self, p: f64) -> f64 {
        let l = self.length as f64;
        let t = chebyshev_t(1.0 / l, 1.0 / self.delta);
        let c = chebyshev_t(l, t * (1.0 - p).max(0.0).sqrt());
        1.0 - self.delta * self.delta * c * c
    }
}

/// Smallest odd `L` with `L ≥ acosh(1/δ)/acosh(1/√(1−w))`.
pub fn minimal_length(delta: f64, w: f64) -> f64 {
    if w >= 1.0 {
        return 1.0;
    }
    let ratio = (1.0 / delta).acosh() / (1.0 / (1.0 - w).sqrt()).acosh();
    let l = ratio.ceil().max(1.0);
    if l % 2.0 == 0.0 { l + 1.0 } else { l }
}

pub fn compute_phase_schedule(delta: f64, w: f64, max_length: usize) -> Result<FpaaSchedule> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(w > 0.0 && w <= 1.0) {
        return Err(Error::invalid(format!("lower bound on p must lie in (0, 1], got {w}")));
    }
    let length = minimal_length(delta, w);
    if length > max_length as f64 {
        return Err(Error::Invalid(format!(
            "amplification needs L = {length} preparation calls (delta = {delta}, w = {w:e}), above the limit {max_length}"
        )));
    }
    let length = length as usize;
    let l = (length - 1) / 2;
    let lf = length as f64;
    let gamma = 1.0 / chebyshev_t(1.0 / lf, 1.0 / delta);
    let root = (1.0 - gamma * gamma).max(0.0).sqrt();
    let alpha = |j: usize| {
        let x = (2.0 * std::f64::consts::PI * j as f64 / lf).tan() * root;
        // cot⁻¹(x) with range (0, π); the phases only enter modulo 2π.
        2.0 * (std::f64::consts::FRAC_PI_2 - x.atan())
    };
    let phases = (1..=l).map(|j| (alpha(j), -alpha(l - j + 1))).collect();
    Ok(FpaaSchedule { length, phases, delta, lower_bound: w })
}

/// Accuracy budget that bounds the residual flag-0 mass:
/// `cap = min(ε/(2·C_max), (σ_max/E_max)²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsPrimeBudget {
    pub eps: f64,
    pub c_max: f64,
    pub e_max: f64,
    pub sigma_max: f64,
    pub n_gr: usize,
}

impl EpsPrimeBudget {
    pub fn new(eps: f64, c_max: f64, e_max: f64, sigma_max: f64, n_gr: usize) -> Result<Self> {
        for (name, x) in [("eps", eps), ("c_max", c_max), ("e_max", e_max), ("sigma_max", sigma_max)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {x}")));
            }
        }
        if n_gr == 0 {
            return Err(Error::invalid("at least one group is required"));
        }
        if sigma_max > e_max {
            return Err(Error::invalid(format!("sigma_max = {sigma_max} exceeds e_max = {e_max}")));
        }
        let bound = sigma_max * (n_gr as f64).sqrt();
        if eps > bound {
            return Err(Error::Hypothesis(format!(
                "eps = {eps} exceeds sigma_max·sqrt(N_gr) = {bound} (ratio {:.6})",
                eps / bound
            )));
        }
        Ok(Self { eps, c_max, e_max, sigma_max, n_gr })
    }

    pub fn cap(&self) -> f64 {
        (self.eps / (2.0 * self.c_max)).min((self.sigma_max / self.e_max).powi(2))
    }

    /// `max(C_max/ε, E_max/σ_max)`, the argument of the logarithm in the
    /// query-count bound. Its logarithm is within a factor 2 of `log(1/cap)`.
    pub fn log_argument(&self) -> f64 {
        (self.c_max / self.eps).max(self.e_max / self.sigma_max)
    }

    /// `log(max(C_max/ε, E_max/σ_max))/√p`.
    pub fn query_bound(&self, p: f64) -> f64 {
        self.log_argument().ln() / p.sqrt()
    }
}

/// Relative margin kept between the realized flag-0 mass and the cap, so
/// rounding at `p = w` cannot cross it.
const CAP_MARGIN: f64 = 1e-6;

/// The amplified preparation `U_ℙ`.
#[derive(Debug, Clone)]
pub struct AmplifiedPreparation<'a> {
    base: &'a TailOracle,
    schedule: FpaaSchedule,
    budget: Option<EpsPrimeBudget>,
}

/// Amplifies `u_gev` so that its flag-0 mass stays below `budget.cap()`
/// whenever the true tail probability is at least `p_bound`.
pub fn build_u_p<'a>(
    u_gev: &'a TailOracle,
    p_bound: f64,
    budget: &EpsPrimeBudget,
    max_length: usize,
) -> Result<AmplifiedPreparation<'a>> {
    if !(p_bound > 0.0) {
        return Err(Error::invalid(format!("tail probability bound must be positive, got {p_bound}")));
    }
    let cap = budget.cap();
    if cap >= 1.0 {
        return Err(Error::invalid(format!("flag-0 cap {cap} is not below 1")));
    }
    let delta = (cap * (1.0 - CAP_MARGIN)).sqrt();
    let schedule = compute_phase_schedule(delta, p_bound.min(1.0), max_length)?;
    Ok(AmplifiedPreparation { base: u_gev, schedule, budget: Some(*budget) })
}

impl<'a> AmplifiedPreparation<'a> {
    /// Runs an arbitrary schedule on `base`, e.g. the Grover control.
    pub fn with_schedule(base: &'a TailOracle, schedule: FpaaSchedule) -> Self {
        Self { base, schedule, budget: None }
    }

    pub fn schedule(&self) -> &FpaaSchedule {
        &self.schedule
    }

    pub fn budget(&self) -> Option<&EpsPrimeBudget> {
        self.budget.as_ref()
    }

    pub fn base(&self) -> &TailOracle {
        self.base
    }

    /// `U_ℙ|0⟩`.
    pub fn prepare(&self, ledger: &mut QueryLedger) -> StateVector {
        let mut s = StateVector::zero(*self.base.basis());
        self.apply(&mut s, ledger);
        s
    }

    fn reflect_start(&self, state: &mut StateVector, alpha: f64, ledger: &mut QueryLedger) {
        self.base.apply_adjoint(state, ledger);
        state.phase_zero(Complex64::from_polar(1.0, -alpha));
        self.base.apply(state, ledger);
    }
}

impl Operator for AmplifiedPreparation<'_> {
    fn apply(&self, state: &mut StateVector, ledger: &mut QueryLedger) {
        self.base.apply(state, ledger);
        for &(alpha, beta) in &self.schedule.phases {
            state.phase_flagged(Complex64::from_polar(1.0, beta));
            self.reflect_start(state, alpha, ledger);
            state.scale(Complex64::new(-1.0, 0.0));
        }
        ledger.up_calls += 1;
    }

    fn apply_adjoint(&self, state: &mut StateVector, ledger: &mut QueryLedger) {
        for &(alpha, beta) in self.schedule.phases.iter().rev() {
            state.scale(Complex64::new(-1.0, 0.0));
            self.reflect_start(state, -alpha, ledger);
            state.phase_flagged(Complex64::from_polar(1.0, -beta));
        }
        self.base.apply_adjoint(state, ledger);
        ledger.up_calls += 1;
    }
}

/// Rescales `state` so the flag-1 branch carries mass `1 − ε′` and the
/// flag-0 branch `ε′`, keeping the conditional law of each branch. Used to
/// place `ε′` exactly at a chosen value, e.g. the cap.
pub fn with_flag0_mass(state: &StateVector, eps_prime: f64) -> Result<StateVector> {
    if !(0.0..=1.0).contains(&eps_prime) {
        return Err(Error::invalid(format!("flag-0 mass must lie in [0, 1], got {eps_prime}")));
    }
    let p = state.marked_probability();
    let q = 1.0 - p;
    if p <= 0.0 && eps_prime < 1.0 {
        return Err(Error::invalid("state has no flag-1 mass to keep"));
    }
    if q <= 0.0 && eps_prime > 0.0 {
        return Err(Error::invalid("state has no flag-0 branch to carry the requested mass"));
    }
    let f1 = if p > 0.0 { ((1.0 - eps_prime) / p).sqrt() } else { 0.0 };
    let f0 = if q > 0.0 { (eps_prime / q).sqrt() } else { 0.0 };
    let basis = *state.basis();
    let amps = state
        .amplitudes()
        .iter()
        .enumerate()
        .map(|(j, a)| a * if basis.label(j).flag { f1 } else { f0 })
        .collect();
    StateVector::from_amplitudes(basis, amps)
}
