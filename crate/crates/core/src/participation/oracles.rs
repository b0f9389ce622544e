//! Closed-form references: coax and coplanar-strip capacitance, and the
//! stacked-dielectric parallel plate.

use std::f64::consts::{E, PI};

use crate::error::{Error, Result};
use crate::geometry::{parallel_plate_fixture, Interface, LayerSpec};
use crate::EPS0;

fn check_modulus(k: f64) -> Result<()> {
    if k > 0.0 && k < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "elliptic modulus must lie in (0, 1), got {k}"
        )))
    }
}

/// Arithmetic-geometric mean iteration. Returns the mean and the sum
/// `sum_n 2^(n-1) c_n^2` needed for E(k).
fn agm(a0: f64, b0: f64, c0: f64) -> (f64, f64) {
    let (mut a, mut b) = (a0, b0);
    let mut sum = 0.5 * c0 * c0;
    let mut pow = 0.5;
    for _ in 0..64 {
        if (a - b).abs() <= 4.0 * f64::EPSILON * a {
            break;
        }
        let c = 0.5 * (a - b);
        let (an, bn) = (0.5 * (a + b), (a * b).sqrt());
        pow *= 2.0;
        sum += pow * c * c;
        a = an;
        b = bn;
    }
    (0.5 * (a + b), sum)
}

/// Complete elliptic integral of the first kind, modulus `k`.
pub fn ellip_k(k: f64) -> Result<f64> {
    check_modulus(k)?;
    let kp = (1.0 - k * k).sqrt();
    Ok(PI / (2.0 * agm(1.0, kp, k).0))
}

/// Complete elliptic integral of the second kind, modulus `k`.
pub fn ellip_e(k: f64) -> Result<f64> {
    check_modulus(k)?;
    let kp = (1.0 - k * k).sqrt();
    let (m, sum) = agm(1.0, kp, k);
    Ok(PI / (2.0 * m) * (1.0 - sum))
}

/// `K(k') / K(k)` with `k' = sqrt(1 - k^2)`.
pub fn elliptic_ratio(k: f64) -> Result<f64> {
    check_modulus(k)?;
    let kp = (1.0 - k * k).sqrt();
    Ok(ellip_k(kp)? / ellip_k(k)?)
}

/// Residual of Legendre's relation `E K' + E' K - K K' - pi/2`.
pub fn legendre_residual(k: f64) -> Result<f64> {
    let kp = (1.0 - k * k).sqrt();
    let (kk, ek) = (ellip_k(k)?, ellip_e(k)?);
    let (kkp, ekp) = (ellip_k(kp)?, ellip_e(kp)?);
    Ok(ek * kkp + ekp * kk - kk * kkp - PI / 2.0)
}

/// Capacitance per unit length (F/m) of a vacuum coax with radii `a < b`.
pub fn coax_capacitance(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > a) {
        return Err(Error::InvalidArgument(format!(
            "coax needs 0 < a < b, got a = {a}, b = {b}"
        )));
    }
    Ok(2.0 * PI * EPS0 / (b / a).ln())
}

/// Capacitance per unit length (F/m) of two zero-thickness strips of width
/// `w` separated by `s` on a half-space substrate of permittivity `eps_sub`.
pub fn coplanar_strips_capacitance(w: f64, s: f64, eps_sub: f64) -> Result<f64> {
    if !(w > 0.0 && s > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "strip width and gap must be positive, got w = {w}, s = {s}"
        )));
    }
    let k = s / (s + 2.0 * w);
    Ok(EPS0 * (1.0 + eps_sub) / 2.0 * elliptic_ratio(k)?)
}

/// Exact film participation for a film of thickness `t` and permittivity
/// `eps_layer` on one plate of a parallel-plate gap `d`.
pub fn parallel_plate_participation(d: f64, t: f64, eps_layer: f64) -> Result<f64> {
    let layer = LayerSpec::new(Interface::MetalVacuum, t, eps_layer)?;
    Ok(parallel_plate_fixture(d, &layer)?.exact_participation())
}

/// Reference values for the three standard fixtures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticOracles {
    /// Coax with `b / a = e`: `2 pi eps0` (F/m).
    pub coax_unit_log: f64,
    /// `K(k') / K(k)` at `k = 0.5` (strips with `s = 2 w`).
    pub strips_ratio_half: f64,
    /// Film participation, `d = 1 um`, `t = 3 nm`, `eps_layer = 6.2`.
    pub plate_participation: f64,
}

pub fn analytic_oracles() -> AnalyticOracles {
    AnalyticOracles {
        coax_unit_log: coax_capacitance(1e-3, E * 1e-3).expect("valid radii"),
        strips_ratio_half: elliptic_ratio(0.5).expect("valid modulus"),
        plate_participation: parallel_plate_participation(1e-6, 3e-9, 6.2).expect("valid fixture"),
    }
}
