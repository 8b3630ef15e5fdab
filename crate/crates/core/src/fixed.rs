//! Fixed-point register format and the two's-complement comparator.
//!
//! Registers hold `total_bits`-digit binary numbers with `fraction_bits`
//! digits after the point. Every real the simulator computes (rotation
//! angles, loss sums, payloads) is rounded to the nearest grid value before
//! use, so the format's resolution shows up in the results instead of being
//! assumed away.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedPointFormat {
    total_bits: u32,
    fraction_bits: u32,
    signed: bool,
}

impl Default for FixedPointFormat {
    /// 64 digits, 48 after the point, two's complement: resolution 3.6e-15
    /// over ±32768.
    fn default() -> Self {
        Self { total_bits: 64, fraction_bits: 48, signed: true }
    }
}

/// Raw register contents: the represented value times `2^fraction_bits`.
pub type Raw = i128;

impl FixedPointFormat {
    pub fn new(total_bits: u32, fraction_bits: u32, signed: bool) -> Result<Self> {
        if !(1..=96).contains(&total_bits) {
            return Err(Error::invalid(format!("register width must lie in 1..=96, got {total_bits}")));
        }
        if !(1..total_bits).contains(&fraction_bits) {
            return Err(Error::invalid(format!(
                "fraction bits must lie in 1..{total_bits}, got {fraction_bits}"
            )));
        }
        Ok(Self { total_bits, fraction_bits, signed })
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn fraction_bits(&self) -> u32 {
        self.fraction_bits
    }

    pub fn signed(&self) -> bool {
        self.signed
    }

    /// Grid spacing `2^-fraction_bits`.
    pub fn ulp(&self) -> f64 {
        (-(self.fraction_bits as f64)).exp2()
    }

    pub fn min_raw(&self) -> Raw {
        if self.signed {
            -(1 << (self.total_bits - 1))
        } else {
            0
        }
    }

    pub fn max_raw(&self) -> Raw {
        if self.signed {
            (1 << (self.total_bits - 1)) - 1
        } else {
            (1 << self.total_bits) - 1
        }
    }

    pub fn min_value(&self) -> f64 {
        self.to_f64(self.min_raw())
    }

    pub fn max_value(&self) -> f64 {
        self.to_f64(self.max_raw())
    }

    /// Nearest grid point to `x`.
    pub fn quantize(&self, x: f64) -> Result<Raw> {
        if !x.is_finite() {
            return Err(Error::Overflow(format!("{x} is not representable")));
        }
        let scaled = (x * (self.fraction_bits as f64).exp2()).round();
        if scaled < self.min_raw() as f64 || scaled > self.max_raw() as f64 {
            return Err(Error::Overflow(format!(
                "{x} outside the register range [{}, {}]",
                self.min_value(),
                self.max_value()
            )));
        }
        Ok(scaled as Raw)
    }

    pub fn to_f64(&self, raw: Raw) -> f64 {
        raw as f64 * self.ulp()
    }

    /// `x` rounded to the grid.
    pub fn round(&self, x: f64) -> Result<f64> {
        self.quantize(x).map(|r| self.to_f64(r))
    }

    /// Register sum, failing if the result leaves the representable range.
    pub fn add(&self, a: Raw, b: Raw) -> Result<Raw> {
        let s = a + b;
        if s < self.min_raw() || s > self.max_raw() {
            return Err(Error::Overflow(format!(
                "sum {} outside the register range",
                self.to_f64(s)
            )));
        }
        Ok(s)
    }

    /// `1_{x ≥ y}` on raw registers, read off the sign bit of the
    /// two's-complement difference `x − y`. Unsigned formats subtract in a
    /// register one digit wider. Errors when the difference does not fit.
    pub fn compare_ge(&self, x: Raw, y: Raw) -> Result<bool> {
        let width = self.total_bits + u32::from(!self.signed);
        let d = x - y;
        let (lo, hi) = (-(1i128 << (width - 1)), (1i128 << (width - 1)) - 1);
        if d < lo || d > hi {
            return Err(Error::Overflow(format!(
                "difference {} does not fit a {width}-digit comparator; widen the format",
                self.to_f64(d)
            )));
        }
        let mask: u128 = if width == 128 { u128::MAX } else { (1u128 << width) - 1 };
        let bits = (d as u128) & mask;
        Ok((bits >> (width - 1)) & 1 == 0)
    }
}

/// `1_{x ≥ y}` for reals, after rounding both onto the register grid.
pub fn comparator_semantics(x: f64, y: f64, format: &FixedPointFormat) -> Result<bool> {
    format.compare_ge(format.quantize(x)?, format.quantize(y)?)
}
