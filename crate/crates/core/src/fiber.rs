//! The fiber maps: a degree-2 family of analytic expanding circle maps
//!
//! ```text
//! T_{ω,ε}(x) = 2x + (a + bε)/(2π)·sin(2πx) + c/(2π)·sin(2π(x − ω))   mod 1
//! ```
//!
//! Both branches of `T_{ω,ε}` are onto, so the transfer operator is a sum
//! over exactly two inverse branches. The expansion rate is bounded below by
//! `γ = 2 − |a| − |b|·eps_max − |c|`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::circle::{wrap, CirclePoint};
use crate::error::{Error, Result};

/// Newton iteration cap for inverse branches.
pub const NEWTON_MAX_STEPS: usize = 50;
/// Accepted residual of `T(y) = x`, measured on the circle.
pub const BRANCH_TOLERANCE: f64 = 1e-13;

/// Coefficients of the fiber map family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberParams {
    /// ω-independent nonlinearity.
    pub a: f64,
    /// Coupling to the perturbation parameter ε.
    pub b: f64,
    /// Coupling to the base point ω.
    pub c: f64,
    /// Half-width of the admissible ε interval.
    pub eps_max: f64,
}

impl Default for FiberParams {
    fn default() -> Self {
        FiberParams {
            a: 0.3,
            b: 1.0,
            c: 0.3,
            eps_max: 0.1,
        }
    }
}

/// Value and first/second partial derivatives of `T_{ω,ε}` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapJet {
    pub t: CirclePoint,
    pub dt_dx: f64,
    pub d2t_dx2: f64,
    pub dt_deps: f64,
    pub dt_domega: f64,
    pub d2t_dx_deps: f64,
    pub d2t_dx_domega: f64,
}

impl FiberParams {
    pub fn new(a: f64, b: f64, c: f64, eps_max: f64) -> Result<Self> {
        let p = FiberParams { a, b, c, eps_max };
        p.validate()?;
        Ok(p)
    }

    /// The unperturbed doubling map `x ↦ 2x`.
    pub fn doubling() -> Self {
        FiberParams {
            a: 0.0,
            b: 0.0,
            c: 0.0,
            eps_max: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_max > 0.0) || !self.eps_max.is_finite() {
            return Err(Error::ParameterOutOfRange(format!(
                "eps_max must be positive, got {}",
                self.eps_max
            )));
        }
        let gamma = self.expansion_constant();
        if !(gamma > 1.0) {
            return Err(Error::ParameterOutOfRange(format!(
                "expansion constant {gamma} must exceed 1"
            )));
        }
        Ok(())
    }

    /// Uniform lower bound `2 − |a| − |b|·eps_max − |c|` on `∂T/∂x`.
    pub fn expansion_constant(&self) -> f64 {
        2.0 - self.a.abs() - self.b.abs() * self.eps_max - self.c.abs()
    }

    fn check_eps(&self, eps: f64) -> Result<()> {
        if eps.abs() > self.eps_max * (1.0 + 1e-12) {
            return Err(Error::ParameterOutOfRange(format!(
                "|ε| = {} exceeds eps_max = {}",
                eps.abs(),
                self.eps_max
            )));
        }
        self.validate()
    }

    /// The real lift `ℝ → ℝ` of `T_{ω,ε}`; satisfies `lift(x + 1) = lift(x) + 2`.
    #[inline]
    pub fn lift(&self, omega: f64, eps: f64, x: f64) -> f64 {
        let amp = self.a + self.b * eps;
        2.0 * x + amp / TAU * (TAU * x).sin() + self.c / TAU * (TAU * (x - omega)).sin()
    }

    #[inline]
    fn lift_slope(&self, omega: f64, eps: f64, x: f64) -> f64 {
        let amp = self.a + self.b * eps;
        2.0 + amp * (TAU * x).cos() + self.c * (TAU * (x - omega)).cos()
    }

    pub fn eval_map(&self, omega: CirclePoint, eps: f64, x: CirclePoint) -> Result<CirclePoint> {
        self.check_eps(eps)?;
        Ok(CirclePoint::new(self.lift(omega.value(), eps, x.value())))
    }

    pub fn eval_jet(&self, omega: CirclePoint, eps: f64, x: CirclePoint) -> Result<MapJet> {
        self.check_eps(eps)?;
        Ok(self.jet_unchecked(omega.value(), eps, x.value()))
    }

    /// Jet without the parameter-range check; callers validate once up front.
    pub(crate) fn jet_unchecked(&self, omega: f64, eps: f64, x: f64) -> MapJet {
        let amp = self.a + self.b * eps;
        let (s0, c0) = (TAU * x).sin_cos();
        let (s1, c1) = (TAU * (x - omega)).sin_cos();
        MapJet {
            t: CirclePoint::new(2.0 * x + amp / TAU * s0 + self.c / TAU * s1),
            dt_dx: 2.0 + amp * c0 + self.c * c1,
            d2t_dx2: -TAU * (amp * s0 + self.c * s1),
            dt_deps: self.b / TAU * s0,
            dt_domega: -self.c * c1,
            d2t_dx_deps: self.b * c0,
            d2t_dx_domega: TAU * self.c * s1,
        }
    }

    /// The two preimages of `x`, ordered by the integer offset of the lift
    /// equation `lift(y) = x + i`, `i ∈ {0, 1}`.
    pub fn inverse_branches(
        &self,
        omega: CirclePoint,
        eps: f64,
        x: CirclePoint,
    ) -> Result<[CirclePoint; 2]> {
        self.check_eps(eps)?;
        let y0 = self.solve_lift(omega.value(), eps, x.value())?;
        let y1 = self.solve_lift(omega.value(), eps, x.value() + 1.0)?;
        Ok([CirclePoint::new(y0), CirclePoint::new(y1)])
    }

    /// Solves `lift(y) = target` for the real `y`, Newton with bisection
    /// safeguard. The lift is increasing with slope in `[γ, 4 − γ]`.
    pub(crate) fn solve_lift(&self, omega: f64, eps: f64, target: f64) -> Result<f64> {
        // |lift(y) − 2y| ≤ p, so the root lies in [(t − p)/2, (t + p)/2]
        let p = ((self.a + self.b * eps).abs() + self.c.abs()) / TAU;
        let mut lo = 0.5 * (target - p) - 1e-12;
        let mut hi = 0.5 * (target + p) + 1e-12;
        let mut y = 0.5 * target;
        let mut residual = f64::INFINITY;
        for _ in 0..NEWTON_MAX_STEPS {
            residual = self.lift(omega, eps, y) - target;
            if residual == 0.0 {
                return Ok(y);
            }
            if residual > 0.0 {
                hi = hi.min(y);
            } else {
                lo = lo.max(y);
            }
            let step = residual / self.lift_slope(omega, eps, y);
            let mut next = y - step;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - y).abs() <= 4e-16 * (1.0 + y.abs()) {
                y = next;
                residual = self.lift(omega, eps, y) - target;
                break;
            }
            y = next;
        }
        let circle_residual = wrap(residual + 0.5) - 0.5;
        if circle_residual.abs() > BRANCH_TOLERANCE || !y.is_finite() {
            return Err(Error::NewtonDivergence {
                x: target,
                residual: residual.abs(),
                iterations: NEWTON_MAX_STEPS,
            });
        }
        Ok(y)
    }
}
