//! Closed-form XoR dynamics of the four-pathway network.
//!
//! Each pathway sees one example with input norm √2 and target ±1, giving a
//! single mode with `s = √2/4` and `d = 1/2`. With balanced layers the path
//! strength a = b1·b2 follows `τ ȧ = 2a(s − d a)`.

use crate::error::{Error, Result};

pub const XOR_S: f64 = std::f64::consts::SQRT_2 / 4.0;
pub const XOR_D: f64 = 0.5;

/// Loss of the four-pathway network when every pathway has strength `a`:
/// `1/2 − √2·a + a²`, written as the equal square `(a − √2/2)²` so the
/// fixed point evaluates to exactly zero.
pub fn xor_analytic_loss(a: f64) -> f64 {
    let e = a - std::f64::consts::FRAC_1_SQRT_2;
    e * e
}

/// Path strength of a balanced decoupled start with layer values `b0`.
pub fn xor_effective_a0(b0: f64) -> f64 {
    b0 * b0
}

/// `a(t) = (s/d) / (1 − (1 − s/(d a0)) e^{−2st/τ})` and the loss along it.
pub fn xor_analytic(a0: f64, tau: f64, t_grid: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(a0 > 0.0) {
        return Err(Error::InvalidA0(a0));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("tau must be positive, got {tau}")));
    }
    let fixed = XOR_S / XOR_D;
    let a: Vec<f64> = t_grid
        .iter()
        .map(|&t| fixed / (1.0 - (1.0 - fixed / a0) * (-2.0 * XOR_S * t / tau).exp()))
        .collect();
    let l = a.iter().map(|&x| xor_analytic_loss(x)).collect();
    Ok((a, l))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_values() {
        let a0 = 0.01;
        let (a, l) = xor_analytic(a0, 2.5, &[0.0, 1e4]).unwrap();
        assert!((a[0] - a0).abs() < 1e-15);
        assert!((l[0] - (0.5 - std::f64::consts::SQRT_2 * a0 + a0 * a0)).abs() < 1e-15);
        assert_eq!(l[1], 0.0);
        assert!((a[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(xor_analytic_loss(XOR_S / XOR_D), 0.0);
        let (a, _) = xor_analytic(XOR_S / XOR_D, 1.0, &[0.0, 1.0, 10.0]).unwrap();
        assert!(a.iter().all(|&x| (x - XOR_S / XOR_D).abs() < 1e-15));
        assert!(matches!(xor_analytic(0.0, 1.0, &[0.0]), Err(Error::InvalidA0(_))));
        assert!(matches!(xor_analytic(-1.0, 1.0, &[0.0]), Err(Error::InvalidA0(_))));
    }

    #[test]
    fn loss_is_non_increasing() {
        let grid: Vec<f64> = (0..2000).map(|i| i as f64 * 0.05).collect();
        for a0 in [1e-6, 1e-3, 0.1, 0.5, 0.7] {
            let (_, l) = xor_analytic(a0, 2.5, &grid).unwrap();
            for w in l.windows(2) {
                assert!(w[1] <= w[0] + 1e-15, "a0 {a0}");
            }
        }
    }
}
