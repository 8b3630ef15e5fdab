//! Closed-form query budgets of the quantum and classical methods and the
//! condition under which the quantum method needs fewer queries.
//!
//! All figures use constant 1 and natural logarithms; they are meaningful
//! up to the constants and polylogarithmic factors the asymptotic bounds
//! hide.

use std::io::Write;
use std::ops::{Div, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::classical_sample_budget;

pub const UP_TO_CONSTANTS: &str = "figures are up to constants and polylogarithmic factors";

/// Default factor by which one side must exceed the other to count as "≫".
pub const DEFAULT_ADVANTAGE_THRESHOLD: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    pub sigma_max: f64,
    pub eps: f64,
    /// Tail probability `p`.
    pub p: f64,
    pub n_gr: usize,
    pub n_obl: usize,
    pub delta: f64,
    pub c_max: f64,
    pub e_max: f64,
    /// Typical conditional default probability `p̄_def`.
    pub pbar_def: Option<f64>,
    /// Typical exposure `ē`.
    pub ebar: Option<f64>,
}

impl RegimeParams {
    pub fn validate(&self) -> Result<()> {
        for (name, x) in [
            ("sigma_max", self.sigma_max),
            ("eps", self.eps),
            ("c_max", self.c_max),
            ("e_max", self.e_max),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {x}")));
            }
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::invalid(format!("tail probability must lie in (0, 1], got {}", self.p)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.n_gr == 0 || self.n_obl == 0 {
            return Err(Error::invalid("group and obligor counts must be positive"));
        }
        if self.n_gr > self.n_obl {
            return Err(Error::invalid(format!("{} groups cannot partition {} obligors", self.n_gr, self.n_obl)));
        }
        if let Some(pb) = self.pbar_def {
            if !(pb > 0.0 && pb < 1.0) {
                return Err(Error::invalid(format!("typical default probability must lie in (0, 1), got {pb}")));
            }
        }
        if let Some(e) = self.ebar {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::invalid(format!("typical exposure must be positive, got {e}")));
            }
        }
        let bound = self.sigma_max * (self.n_gr as f64).sqrt();
        if self.eps > bound {
            return Err(Error::Hypothesis(format!(
                "eps = {} exceeds sigma_max·sqrt(N_gr) = {bound} (ratio {:.6})",
                self.eps,
                self.eps / bound
            )));
        }
        Ok(())
    }

    fn log_groups(&self) -> f64 {
        (self.n_gr as f64 / self.delta).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    /// Distribution-loading calls (quantum) or normal draws (classical).
    pub primary: f64,
    /// Arithmetic and rotation calls (quantum) or arithmetic and Bernoulli
    /// draws (classical): `primary · N_obl`.
    pub per_obligor: f64,
}

/// `σ_max·√N_gr/(ε·√p) · ln(max(C_max/ε, E_max/σ_max)) · ln(N_gr/δ)`.
pub fn quantum_budget(params: &RegimeParams) -> Result<Budget> {
    params.validate()?;
    let ratio = (params.c_max / params.eps).max(params.e_max / params.sigma_max);
    let primary = params.sigma_max * (params.n_gr as f64).sqrt() / (params.eps * params.p.sqrt())
        * ratio.ln().max(0.0)
        * params.log_groups();
    Ok(Budget { primary, per_obligor: primary * params.n_obl as f64 })
}

/// `σ_max²·ln(N_gr/δ)/(ε²·p)`.
pub fn classical_budget(params: &RegimeParams) -> Result<Budget> {
    params.validate()?;
    let b = classical_sample_budget(params.sigma_max, params.eps, params.p, params.n_gr, params.delta)?;
    Ok(Budget { primary: b.figure, per_obligor: b.figure * params.n_obl as f64 })
}

/// Arithmetic needed by the advantage formulas; implemented for `f64` and
/// usable with exact rationals.
pub trait Scalar: Copy + Mul<Output = Self> + Div<Output = Self> + Sub<Output = Self> {
    fn one() -> Self;
}

impl Scalar for f64 {
    fn one() -> Self {
        1.0
    }
}

/// `σ_max²/(ε²·p)`, the left side of the general advantage condition
/// (to be compared with `N_gr`).
pub fn general_lhs<T: Scalar>(sigma_max2: T, eps: T, p: T) -> T {
    sigma_max2 / (eps * eps * p)
}

/// `(C_max/ε)²·(1−p̄)/(p·p̄)`, the left side in the homogeneous-portfolio
/// regime (to be compared with `N_obl`).
pub fn regime_lhs<T: Scalar>(cmax_over_eps: T, pbar: T, p: T) -> T {
    cmax_over_eps * cmax_over_eps * (T::one() - pbar) / (p * pbar)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantageMode {
    /// `σ_max²/(ε²p)` against `N_gr`.
    General,
    /// `(C_max/ε)²(1−p̄)/(p·p̄)` against `N_obl`, with `σ_max² ≈ p̄(1−p̄)ē²`
    /// and `C_max ≈ p̄·ē`.
    Regime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advantage {
    pub mode: AdvantageMode,
    pub lhs: f64,
    pub rhs: f64,
    pub threshold: f64,
    pub quantum_favored: bool,
    pub note: String,
}

/// Note attached to regime-mode output: the regime is stated in terms of the
/// ratio `C_max/ε`, and reaching an `lhs` of order 1e8 needs
/// `C_max/ε ≈ 100`, i.e. `ε/C_max ≈ 0.01`.
pub const RATIO_NOTE: &str = "the regime is parametrized by C_max/eps; an lhs of order 1e8 at p = pbar = 0.01 needs C_max/eps = 100 (eps/C_max = 0.01), not C_max/eps = 0.01";

/// Compares the classical-to-quantum cost ratio with the group (or obligor)
/// count; the quantum method is favored when `lhs > threshold · rhs`.
pub fn advantage_condition(params: &RegimeParams, mode: AdvantageMode, threshold: f64) -> Result<Advantage> {
    params.validate()?;
    if !(threshold >= 1.0) {
        return Err(Error::invalid(format!("advantage threshold must be at least 1, got {threshold}")));
    }
    let (lhs, rhs, note) = match mode {
        AdvantageMode::General => (
            general_lhs(params.sigma_max * params.sigma_max, params.eps, params.p),
            params.n_gr as f64,
            UP_TO_CONSTANTS.to_string(),
        ),
        AdvantageMode::Regime => {
            let pbar = params
                .pbar_def
                .ok_or_else(|| Error::invalid("regime mode needs the typical default probability"))?;
            (
                regime_lhs(params.c_max / params.eps, pbar, params.p),
                params.n_obl as f64,
                format!("{UP_TO_CONSTANTS}; {RATIO_NOTE}"),
            )
        }
    };
    Ok(Advantage { mode, lhs, rhs, threshold, quantum_favored: lhs > threshold * rhs, note })
}

/// Regime parameters for a homogeneous portfolio with typical default
/// probability `p̄` and exposure `ē`: `σ_max² = p̄(1−p̄)ē²`, `C_max = p̄·ē`,
/// `ε = C_max / cmax_over_eps`.
pub fn homogeneous_regime(
    pbar: f64,
    ebar: f64,
    cmax_over_eps: f64,
    p: f64,
    n_gr: usize,
    n_obl: usize,
    delta: f64,
) -> RegimeParams {
    let c_max = pbar * ebar;
    RegimeParams {
        sigma_max: (pbar * (1.0 - pbar)).sqrt() * ebar,
        eps: c_max / cmax_over_eps,
        p,
        n_gr,
        n_obl,
        delta,
        c_max,
        e_max: ebar,
        pbar_def: Some(pbar),
        ebar: Some(ebar),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub n_gr: usize,
    pub quantum: Budget,
    pub classical: Budget,
    pub lhs: f64,
    pub rhs: f64,
    pub quantum_favored: bool,
}

/// Budgets and the general advantage verdict over an `(ε, N_gr)` grid.
pub fn sweep(base: &RegimeParams, eps: &[f64], n_gr: &[usize], threshold: f64) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(eps.len() * n_gr.len());
    for &e in eps {
        for &g in n_gr {
            let p = RegimeParams { eps: e, n_gr: g, ..*base };
            let adv = advantage_condition(&p, AdvantageMode::General, threshold)?;
            rows.push(SweepRow {
                eps: e,
                n_gr: g,
                quantum: quantum_budget(&p)?,
                classical: classical_budget(&p)?,
                lhs: adv.lhs,
                rhs: adv.rhs,
                quantum_favored: adv.quantum_favored,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "eps,n_gr,quantum_usn,quantum_arith_cry,classical_normal,classical_arith_bernoulli,lhs,rhs,quantum_favored")?;
    for r in rows {
        writeln!(
            out,
            "{:e},{},{:e},{:e},{:e},{:e},{:e},{},{}",
            r.eps,
            r.n_gr,
            r.quantum.primary,
            r.quantum.per_obligor,
            r.classical.primary,
            r.classical.per_obligor,
            r.lhs,
            r.rhs,
            r.quantum_favored
        )?;
    }
    Ok(())
}
