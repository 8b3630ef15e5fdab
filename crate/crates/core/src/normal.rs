//! Standard normal CDF built on the rational erf approximation
//! `erf(x) ≈ 1 − 1/(1 + a₁x + … + a₆x⁶)¹⁶` (absolute error below 3e-7).
//!
//! This is the only CDF in the crate. The exact enumerator, the Monte Carlo
//! baseline and the simulated CDF oracle all call it, so classical ground
//! truth and the quantum path see bit-identical default probabilities.

/// Coefficients a₁…a₆ of the erf approximation.
pub const ERF_COEFFS: [f64; 6] = [
    0.0705230784,
    0.0422820123,
    0.0092705272,
    0.0001520143,
    0.0002765672,
    0.0000430638,
];

/// `1/(1 + a₁u + … + a₆u⁶)¹⁶` for `u ≥ 0`, i.e. `1 − erf(u)`.
fn erfc_tail(u: f64) -> f64 {
    let poly = ERF_COEFFS
        .iter()
        .rev()
        .fold(0.0, |acc, &a| (acc + a) * u)
        + 1.0;
    // poly^16 by repeated squaring
    let p2 = poly * poly;
    let p4 = p2 * p2;
    let p8 = p4 * p4;
    1.0 / (p8 * p8)
}

/// Approximate erf, odd by construction.
pub fn erf(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 - erfc_tail(x)
    } else {
        erfc_tail(-x) - 1.0
    }
}

/// Φ(x) for the standard normal law.
///
/// The lower tail is evaluated directly as `½·erfc(|x|/√2)` rather than as
/// `1 − Φ(|x|)`, so small probabilities keep full relative precision and
/// `Φ(x) + Φ(−x) = 1` up to one rounding. NaN maps to NaN; ±∞ map to 1 and 0.
pub fn std_normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let u = x.abs() * std::f64::consts::FRAC_1_SQRT_2;
    let tail = 0.5 * erfc_tail(u);
    let p = if x < 0.0 { tail } else { 1.0 - tail };
    p.clamp(0.0, 1.0)
}

/// Inverse of [`std_normal_cdf`] by bisection, to 1e-12 in the argument.
///
/// `p = 0` and `p = 1` map to `−∞` and `+∞`. Returns `None` outside `[0, 1]`.
pub fn std_normal_quantile(p: f64) -> Option<f64> {
    if !(0.0..=1.0).contains(&p) {
        return None;
    }
    if p == 0.0 {
        return Some(f64::NEG_INFINITY);
    }
    if p == 1.0 {
        return Some(f64::INFINITY);
    }
    let (mut lo, mut hi) = (-8.0_f64, 8.0_f64);
    while std_normal_cdf(lo) > p {
        lo *= 2.0;
    }
    while std_normal_cdf(hi) < p {
        hi *= 2.0;
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if std_normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}
