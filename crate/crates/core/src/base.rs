//! Base dynamics: the ε-dependent rotation `σ_ε(ω) = ω + α₀ + βε mod 1`
//! and quadrature for integrals against the base measure.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::circle::{circle_distance, wrap, CirclePoint};

/// Circle rotation whose angle moves linearly with ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationBase {
    pub alpha0: f64,
    pub beta: f64,
}

impl Default for RotationBase {
    fn default() -> Self {
        RotationBase {
            alpha0: (5f64.sqrt() - 1.0) / 2.0,
            beta: 1.0,
        }
    }
}

impl RotationBase {
    pub fn new(alpha0: f64, beta: f64) -> Self {
        RotationBase {
            alpha0: wrap(alpha0),
            beta,
        }
    }

    /// A base that does not move with ε.
    pub fn fixed(alpha0: f64) -> Self {
        RotationBase::new(alpha0, 0.0)
    }

    #[inline]
    pub fn angle(&self, eps: f64) -> f64 {
        self.alpha0 + self.beta * eps
    }

    /// `σ_ε^n ω` for any signed `n`.
    #[inline]
    pub fn advance(&self, eps: f64, omega: CirclePoint, n: i64) -> CirclePoint {
        let shift = wrap(n as f64 * wrap(self.angle(eps)));
        CirclePoint::new(omega.value() + shift)
    }

    /// `d/dε σ_ε^n ω` at ε = 0. Exact for the rotation family: `n·β`.
    #[inline]
    pub fn orbit_eps_derivative(&self, n: i64) -> f64 {
        n as f64 * self.beta
    }

    /// C⁰ distance between `σ⁻¹` and `σ_ε⁻¹`: the circle distance of `βε` from 0.
    pub fn c0_distance(&self, eps: f64) -> f64 {
        circle_distance(self.beta * eps, 0.0)
    }
}

/// Equispaced Haar quadrature: nodes `k/N`, weights `1/N`. Exact for
/// trigonometric polynomials of degree `< N`.
pub fn haar_quadrature(n: usize) -> Vec<(CirclePoint, f64)> {
    assert!(n >= 1, "quadrature needs at least one node");
    let w = 1.0 / n as f64;
    (0..n)
        .map(|k| (CirclePoint::new(k as f64 * w), w))
        .collect()
}

/// The family of base measures `ε ↦ P_ε`, described through its density at
/// ε = 0 and the density of the signed derivative `P₀′`.
///
/// The derivative density must integrate to zero; `P₀′(1) = 0`.
pub trait BaseMeasureFamily: Send + Sync {
    fn density_at_zero(&self, _omega: CirclePoint) -> f64 {
        1.0
    }

    fn derivative_density(&self, _omega: CirclePoint) -> f64 {
        0.0
    }

    /// Density of `P_ε` to first order, `p₀ + ε·p₀′`.
    fn density(&self, eps: f64, omega: CirclePoint) -> f64 {
        self.density_at_zero(omega) + eps * self.derivative_density(omega)
    }

    /// True when `P₀′` vanishes identically, letting callers skip its terms.
    fn derivative_vanishes(&self) -> bool {
        false
    }

    /// Quadrature weights for `P₀` on the given Haar nodes.
    fn weights_at_zero(&self, nodes: &[(CirclePoint, f64)]) -> Vec<f64> {
        nodes
            .iter()
            .map(|&(w, q)| q * self.density_at_zero(w))
            .collect()
    }

    /// Quadrature weights for `P₀′` on the given Haar nodes.
    fn derivative_weights(&self, nodes: &[(CirclePoint, f64)]) -> Vec<f64> {
        nodes
            .iter()
            .map(|&(w, q)| q * self.derivative_density(w))
            .collect()
    }
}

/// Haar measure for every ε, which is what every rotation preserves.
#[derive(Debug, Clone, Copy, Default)]
pub struct HaarFamily;

impl BaseMeasureFamily for HaarFamily {
    fn derivative_vanishes(&self) -> bool {
        true
    }
}

/// `dP_ε = (1 + ε·amplitude·cos 2π(ω − phase)) dω`. Not invariant under the
/// rotation; useful for exercising the `P₀′` terms of the chain rule.
#[derive(Debug, Clone, Copy)]
pub struct TiltedFamily {
    pub amplitude: f64,
    pub phase: f64,
}

impl BaseMeasureFamily for TiltedFamily {
    fn derivative_density(&self, omega: CirclePoint) -> f64 {
        self.amplitude * (TAU * (omega.value() - self.phase)).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cp(v: f64) -> CirclePoint {
        CirclePoint::new(v)
    }

    #[test]
    fn advance_examples() {
        let b = RotationBase::new(0.25, 0.0);
        assert!((b.advance(0.7, cp(0.0), 2).value() - 0.5).abs() < 1e-15);
        let b = RotationBase::default();
        assert_eq!(b.advance(0.03, cp(0.4), 0), cp(0.4));
        let b = RotationBase::new(0.618034, 1.0);
        let p = b.advance(0.01, cp(0.1), -3).value();
        assert!((p - 0.215898).abs() < 1e-12, "{p}");
    }

    #[test]
    fn orbit_derivative_and_distance() {
        let b = RotationBase::new(0.3, 1.0);
        assert_eq!(b.orbit_eps_derivative(3), 3.0);
        assert_eq!(b.orbit_eps_derivative(-4), -4.0);
        assert_eq!(RotationBase::new(0.3, 0.5).orbit_eps_derivative(-1), -0.5);
        assert!((b.c0_distance(0.01) - 0.01).abs() < 1e-16);
        assert_eq!(RotationBase::fixed(0.3).c0_distance(0.07), 0.0);
        let d: Vec<f64> = [0.1, 0.05, 0.025].iter().map(|&e| b.c0_distance(e)).collect();
        assert!((d[0] / d[1] - 2.0).abs() < 1e-12 && (d[1] / d[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cocycle_and_isometry() {
        let b = RotationBase::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let eps: f64 = rng.random_range(-0.1..0.1);
            let w1 = cp(rng.random());
            let w2 = cp(rng.random());
            let n: i64 = rng.random_range(-50..=50);
            let m: i64 = rng.random_range(-50..=50);
            let direct = b.advance(eps, w1, n + m);
            let composed = b.advance(eps, b.advance(eps, w1, m), n);
            assert!(direct.distance(composed) < 1e-13);
            let d0 = w1.distance(w2);
            let d1 = b.advance(eps, w1, n).distance(b.advance(eps, w2, n));
            assert!((d0 - d1).abs() < 1e-13);
        }
    }

    #[test]
    fn orbit_drift_is_linear_in_eps() {
        let b = RotationBase::default();
        let w = cp(0.123);
        for j in 0..40i64 {
            for eps in [0.1, 0.01, 1e-3] {
                let drift = b.advance(eps, w, -j).distance(b.advance(0.0, w, -j));
                assert!(drift <= j as f64 * (b.beta * eps).abs() + 1e-13);
            }
        }
        for n in [-7i64, -1, 1, 5] {
            let eps = 1e-6;
            let diff = b.advance(eps, w, n).value() - b.advance(0.0, w, n).value();
            let diff = wrap(diff + 0.5) - 0.5;
            assert!((diff / eps - b.orbit_eps_derivative(n)).abs() < 1e-8);
        }
    }

    #[test]
    fn quadrature_examples() {
        let q = haar_quadrature(1);
        assert_eq!(q, vec![(cp(0.0), 1.0)]);
        let s: f64 = haar_quadrature(8)
            .iter()
            .map(|&(w, q)| q * (TAU * w.value()).sin())
            .sum();
        assert!(s.abs() < 1e-15);

        let f = |w: f64| (TAU * w).sin().exp();
        let coarse: f64 = haar_quadrature(64).iter().map(|&(w, q)| q * f(w.value())).sum();
        let m = 1_000_000;
        let fine: f64 = (0..m).map(|k| f(k as f64 / m as f64)).sum::<f64>() / m as f64;
        assert!((coarse - fine).abs() < 1e-12);
    }

    #[test]
    fn measure_families() {
        let nodes = haar_quadrature(16);
        let haar = HaarFamily;
        assert!(haar.derivative_vanishes());
        assert!((haar.weights_at_zero(&nodes).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let tilt = TiltedFamily {
            amplitude: 0.4,
            phase: 0.1,
        };
        // P₀′ applied to the constant 1
        assert!(tilt.derivative_weights(&nodes).iter().sum::<f64>().abs() < 1e-15);
    }
}
