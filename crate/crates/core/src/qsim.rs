//! Reduced-basis statevector simulator.
//!
//! Basis states are scenario labels `(i, y, w)`: a grid index for the
//! systematic factor, one bit per obligor and a tail flag. Arithmetic
//! registers are not materialized. Their contents are deterministic functions
//! of the label and are uncomputed by the circuits they model, so they are
//! evaluated on the fly and only their invocation counts reach the ledger.
//!
//! Linear index layout: `((i << N_obl) | y) << 1 | w`, so the flag is bit 0
//! and obligor `k` is bit `k + 1`.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::check_state_guard;
use crate::ledger::QueryLedger;
use crate::sum::csum;

const PAR_THRESHOLD: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioBasis {
    grid_size: usize,
    obligor_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ScenarioLabel {
    pub grid: usize,
    /// Bit `k` is obligor `k`'s default indicator.
    pub defaults: u64,
    pub flag: bool,
}

impl ScenarioLabel {
    pub fn defaulted(&self, k: usize) -> bool {
        self.defaults >> k & 1 == 1
    }
}

impl ScenarioBasis {
    /// Refuses dimensions above `2^24`.
    pub fn new(grid_size: usize, obligor_count: usize) -> Result<Self> {
        if grid_size == 0 {
            return Err(Error::invalid("grid register needs at least one value"));
        }
        check_state_guard(grid_size, obligor_count, 1, "statevector dimension")?;
        Ok(Self { grid_size, obligor_count })
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn obligor_count(&self) -> usize {
        self.obligor_count
    }

    pub fn dim(&self) -> usize {
        self.grid_size << (self.obligor_count + 1)
    }

    pub fn index(&self, label: ScenarioLabel) -> usize {
        (((label.grid << self.obligor_count) | label.defaults as usize) << 1) | usize::from(label.flag)
    }

    pub fn label(&self, index: usize) -> ScenarioLabel {
        ScenarioLabel {
            grid: index >> (self.obligor_count + 1),
            defaults: ((index >> 1) & ((1 << self.obligor_count) - 1)) as u64,
            flag: index & 1 == 1,
        }
    }

    pub fn labels(&self) -> impl Iterator<Item = ScenarioLabel> + '_ {
        (0..self.dim()).map(|j| self.label(j))
    }
}

/// Dense amplitudes over a [`ScenarioBasis`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    basis: ScenarioBasis,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// `|0⟩`: grid index 0, no defaults, flag 0.
    pub fn zero(basis: ScenarioBasis) -> Self {
        let mut amps = vec![Complex64::new(0.0, 0.0); basis.dim()];
        amps[0] = Complex64::new(1.0, 0.0);
        Self { basis, amps }
    }

    /// Wraps raw amplitudes; the caller is responsible for normalization.
    pub fn from_amplitudes(basis: ScenarioBasis, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != basis.dim() {
            return Err(Error::invalid(format!(
                "{} amplitudes for a basis of dimension {}",
                amps.len(),
                basis.dim()
            )));
        }
        Ok(Self { basis, amps })
    }

    pub fn basis(&self) -> &ScenarioBasis {
        &self.basis
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn probability(&self, index: usize) -> f64 {
        self.amps[index].norm_sqr()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn norm(&self) -> f64 {
        csum(self.amps.iter().map(|a| a.norm_sqr())).sqrt()
    }

    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    /// Total Born probability of flag-1 labels.
    pub fn marked_probability(&self) -> f64 {
        csum(self.amps.iter().skip(1).step_by(2).map(|a| a.norm_sqr()))
    }

    /// Born law over flag-1 labels, renormalized.
    pub fn conditional_distribution(&self) -> Result<Vec<(ScenarioLabel, f64)>> {
        let mass = self.marked_probability();
        if mass <= 0.0 {
            return Err(Error::ZeroTail {
                threshold: f64::NAN,
                detail: "state has no flag-1 amplitude".into(),
            });
        }
        Ok((1..self.amps.len())
            .step_by(2)
            .map(|j| (self.basis.label(j), self.amps[j].norm_sqr() / mass))
            .collect())
    }

    /// Multiplies every flag-1 amplitude by `phase`.
    pub fn phase_flagged(&mut self, phase: Complex64) {
        self.amps.iter_mut().skip(1).step_by(2).for_each(|a| *a *= phase);
    }

    /// Multiplies the `|0⟩` amplitude by `phase`.
    pub fn phase_zero(&mut self, phase: Complex64) {
        self.amps[0] *= phase;
    }

    pub fn scale(&mut self, factor: Complex64) {
        self.amps.iter_mut().for_each(|a| *a *= factor);
    }

    /// `self += factor · other`.
    pub fn add_scaled(&mut self, factor: Complex64, other: &StateVector) {
        self.amps.iter_mut().zip(&other.amps).for_each(|(a, b)| *a += factor * b);
    }

    /// CSV snapshot with columns `index,grid,defaults,flag,re,im`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "index,grid,defaults,flag,re,im")?;
        let n = self.basis.obligor_count;
        for (j, a) in self.amps.iter().enumerate() {
            let l = self.basis.label(j);
            let bits: String = (0..n).map(|k| if l.defaulted(k) { '1' } else { '0' }).collect();
            writeln!(out, "{j},{},{bits},{},{:e},{:e}", l.grid, u8::from(l.flag), a.re, a.im)?;
        }
        Ok(())
    }
}

/// A unitary on the scenario basis that can also apply its inverse.
pub trait Operator {
    fn apply(&self, state: &mut StateVector, ledger: &mut QueryLedger);
    fn apply_adjoint(&self, state: &mut StateVector, ledger: &mut QueryLedger);
}

/// Reversible arithmetic at oracle level: a bijection on labels.
#[derive(Debug, Clone)]
pub struct BasisPermutation {
    forward: Vec<usize>,
    backward: Vec<usize>,
    cost: u64,
}

impl BasisPermutation {
    /// Tabulates `f` and checks that it is a bijection. `cost` is the number
    /// of arithmetic-circuit calls charged per application.
    pub fn new(basis: &ScenarioBasis, f: impl Fn(ScenarioLabel) -> ScenarioLabel, cost: u64) -> Result<Self> {
        let dim = basis.dim();
        let mut forward = Vec::with_capacity(dim);
        let mut backward = vec![usize::MAX; dim];
        for j in 0..dim {
            let image = f(basis.label(j));
            if image.grid >= basis.grid_size || image.defaults >> basis.obligor_count != 0 {
                return Err(Error::NotBijective(format!("label {j} maps outside the basis")));
            }
            let t = basis.index(image);
            if backward[t] != usize::MAX {
                return Err(Error::NotBijective(format!(
                    "labels {} and {j} both map to {t}",
                    backward[t]
                )));
            }
            backward[t] = j;
            forward.push(t);
        }
        Ok(Self { forward, backward, cost })
    }

    pub fn cost(&self) -> u64 {
        self.cost
    }

    fn permute(map: &[usize], state: &mut StateVector) {
        let mut out = vec![Complex64::new(0.0, 0.0); map.len()];
        for (j, &t) in map.iter().enumerate() {
            out[t] = state.amps[j];
        }
        state.amps = out;
    }
}

impl Operator for BasisPermutation {
    fn apply(&self, state: &mut StateVector, ledger: &mut QueryLedger) {
        Self::permute(&self.forward, state);
        ledger.arithmetic_calls += self.cost;
    }

    fn apply_adjoint(&self, state: &mut StateVector, ledger: &mut QueryLedger) {
        Self::permute(&self.backward, state);
        ledger.arithmetic_calls += self.cost;
    }
}

pub fn apply_basis_permutation(state: &mut StateVector, perm: &BasisPermutation, ledger: &mut QueryLedger) {
    perm.apply(state, ledger);
}

/// Angle-controlled Y rotation on obligor qubit `target`, with the angle a
/// function of the grid register:
/// `R_Y(θ) = [[cos θ, sin θ], [−sin θ, cos θ]]` on `(|0⟩, |1⟩)`.
#[derive(Debug, Clone)]
pub struct ControlledRotation {
    target: usize,
    angles: Vec<(f64, f64)>,
    angle_cost: u64,
}

impl ControlledRotation {
    /// `angles[i]` is the rotation angle for grid index `i`. `angle_cost` is
    /// the arithmetic charged for computing the angle register.
    pub fn new(basis: &ScenarioBasis, target: usize, angles: &[f64], angle_cost: u64) -> Result<Self> {
        if target >= basis.obligor_count {
            return Err(Error::invalid(format!("no obligor qubit {target}")));
        }
        if angles.len() != basis.grid_size {
            return Err(Error::invalid(format!(
                "{} angles for a grid of {}",
                angles.len(),
                basis.grid_size
            )));
        }
        Ok(Self {
            target,
            angles: angles.iter().map(|t| (t.cos(), t.sin())).collect(),
            angle_cost,
        })
    }

    fn rotate(&self, state: &mut StateVector, sign: f64) {
        let n = state.basis.obligor_count;
        let half = 1usize << (self.target + 1);
        let chunk = half << 1;
        let grid_shift = n + 1;
        let work = |(c, block): (usize, &mut [Complex64])| {
            let grid = (c * chunk) >> grid_shift;
            let (cos, sin) = self.angles[grid];
            let sin = sign * sin;
            let (lo, hi) = block.split_at_mut(half);
            for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x0, x1) = (*a0, *a1);
                *a0 = x0 * cos + x1 * sin;
                *a1 = x1 * cos - x0 * sin;
            }
        };
        if state.amps.len() >= PAR_THRESHOLD {
            state.amps.par_chunks_mut(chunk).enumerate().for_each(work);
        } else {
            state.amps.chunks_mut(chunk).enumerate().for_each(work);
        }
    }
}

impl Operator for ControlledRotation {
    fn apply(&self, state: &mut StateVector, ledger: &mut QueryLedger) {
        self.rotate(state, 1.0);
        ledger.cry_calls += 1;
        ledger.arithmetic_calls += self.angle_cost;
    }

    fn apply_adjoint(&self, state: &mut StateVector, ledger: &mut QueryLedger) {
        self.rotate(state, -1.0);
        ledger.cry_calls += 1;
        ledger.arithmetic_calls += self.angle_cost;
    }
}

/// Builds and applies a [`ControlledRotation`] with angles `angle_of(i)`.
pub fn apply_cry(
    state: &mut StateVector,
    target: usize,
    angle_of: impl Fn(usize) -> f64,
    angle_cost: u64,
    ledger: &mut QueryLedger,
) -> Result<()> {
    let angles: Vec<f64> = (0..state.basis.grid_size).map(angle_of).collect();
    ControlledRotation::new(&state.basis, target, &angles, angle_cost)?.apply(state, ledger);
    Ok(())
}

/// Loads `Σ_i √w_i |i⟩` into the grid register from `|0⟩`.
///
/// Realized as the Householder reflection exchanging `|0⟩` and the target
/// vector, applied independently on every `(y, w)` slice, so it is a genuine
/// (self-inverse) unitary on the whole basis.
#[derive(Debug, Clone)]
pub struct GridLoader {
    /// `u = e₀ − s`
    reflector: Vec<f64>,
    /// `2/‖u‖²`, zero when `s = e₀`.
    scale: f64,
}

impl GridLoader {
    pub fn new(basis: &ScenarioBasis, weights: &[f64]) -> Result<Self> {
        if weights.len() != basis.grid_size {
            return Err(Error::invalid(format!(
                "{} weights for a grid of {}",
                weights.len(),
                basis.grid_size
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("grid weights must be finite and nonnegative"));
        }
        let total = csum(weights.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("grid weights sum to {total}, not 1")));
        }
        let norm = total.sqrt();
        let mut reflector: Vec<f64> = weights.iter().map(|w| -w.sqrt() / norm).collect();
        reflector[0] += 1.0;
        let nsq = csum(reflector.iter().map(|u| u * u));
        let scale = if nsq < 1e-300 { 0.0 } else { 2.0 / nsq };
        Ok(Self { reflector, scale })
    }

    fn reflect(&self, state: &mut StateVector) {
        if self.scale == 0.0 {
            return;
        }
        let stride = 1usize << (state.basis.obligor_count + 1);
        let amps = &mut state.amps;
        for slot in 0..stride {
            let dot: Complex64 = self
                .reflector
                .iter()
                .enumerate()
                .map(|(i, u)| amps[i * stride + slot] * u)
                .sum();
            if dot == Complex64::new(0.0, 0.0) {
                continue;
            }
            let f = dot * self.scale;
            for (i, u) in self.reflector.iter().enumerate() {
                amps[i * stride + slot] -= f * u;
            }
        }
    }
}

impl Operator for GridLoader {
    fn apply(&self, state: &mut StateVector, ledger: &mut QueryLedger) {
        self.reflect(state);
        ledger.usn_calls += 1;
    }

    fn apply_adjoint(&self, state: &mut StateVector, ledger: &mut QueryLedger) {
        self.reflect(state);
        ledger.usn_calls += 1;
    }
}

/// Resets `state` to `|0⟩` and loads the grid weights: amplitude `√w_i` on
/// `(i, 0…0, 0)`. One grid-loading oracle call.
pub fn inject_prepared_state(state: &mut StateVector, weights: &[f64], ledger: &mut QueryLedger) -> Result<()> {
    let loader = GridLoader::new(&state.basis, weights)?;
    *state = StateVector::zero(state.basis);
    loader.apply(state, ledger);
    Ok(())
}
