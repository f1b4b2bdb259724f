//! Quenched stability and linear response of `h_{ω,ε}`, the telescoping
//! identity, and the annealed counterparts.
//!
//! The response is `Γ_ω = Σ_{j≥0} L^j_{σ^{−j}ω} Λ_{ω,j} h_{σ^{−(j+1)}ω}` with
//! `Λ_{ω,j} = ∂_εL + (−(j+1)β)·∂_ωL` evaluated at `θ_j = σ^{−(j+1)}ω`, ε = 0.
//! The second addend comes from the base orbit drifting with ε.

use serde::Serialize;

use crate::base::{haar_quadrature, BaseMeasureFamily};
use crate::circle::CirclePoint;
use crate::equivariant::{backward_series, orbit_densities, pullback_field, unit_seed, DecayEstimate, DepthCalibration};
use crate::error::{Error, Result};
use crate::fit::fit_loglog;
use crate::spectral::{analyze, BranchTable, GridFunction, OperatorKind, OperatorMatrix, SpectralField};
use crate::system::SkewSystem;

/// An observable `Φ(ω, x)` on the skew product.
pub type Observable<'a> = &'a dyn Fn(CirclePoint, f64) -> f64;

/// Truncated response series at one base point.
#[derive(Debug, Clone)]
pub struct ResponseTerm {
    pub omega: CirclePoint,
    pub field: SpectralField,
    pub j_max: usize,
    pub tail_bound: f64,
    pub warning: Option<String>,
}

/// `‖h_{ω,ε} − h_ω‖_w` over a grid of ε with its log-log slope.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityCurve {
    pub eps_grid: Vec<f64>,
    pub errors: Vec<f64>,
    /// `None` when some error is exactly zero and no slope exists.
    pub fitted_slope: Option<f64>,
}

/// `r(ε) = ‖h_{ω,ε} − h_ω − εΓ_ω‖_w` over a grid of ε.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualCurve {
    pub eps_grid: Vec<f64>,
    pub residuals: Vec<f64>,
    pub fitted_slope: Option<f64>,
}

/// Annealed derivative split into its quenched and base-measure parts.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AnnealedResponse {
    pub value: f64,
    pub quenched: f64,
    pub measure: f64,
}

/// `θ_j = σ^{−(j+1)}ω` at ε = 0.
fn theta(sys: &SkewSystem, omega: CirclePoint, j: usize) -> CirclePoint {
    sys.orbit(0.0, omega, -(j as i64 + 1))
}

/// Drift coefficient of `∂_ωL` inside `Λ_{ω,j}`.
fn drift(sys: &SkewSystem, j: usize) -> f64 {
    sys.base.orbit_eps_derivative(-(j as i64 + 1))
}

/// Dense matrix of `Λ_{ω,j}`.
pub fn lambda_operator(sys: &SkewSystem, omega: CirclePoint, j: usize) -> Result<OperatorMatrix> {
    let table = BranchTable::build(&sys.fiber, theta(sys, omega, j), 0.0, sys.grid())?;
    table.derivative_matrix(sys.k_max(), 1.0, drift(sys, j), OperatorKind::Lambda)
}

/// `h_{ω,ε}` pulled back over the calibrated depth for ε.
pub fn density(sys: &SkewSystem, depths: &DepthCalibration, omega: CirclePoint, eps: f64) -> Result<SpectralField> {
    let n = depths.depth(sys, eps)?;
    pullback_field(sys, omega, eps, n, &unit_seed(sys.k_max()))
}

/// `C·(J+2)·e^{−λJ}/(1 − e^{−λ})`.
pub fn response_tail_bound(decay: &DecayEstimate, j_max: usize) -> f64 {
    let q = (-decay.lambda_hat).exp();
    decay.c_hat * (j_max as f64 + 2.0) * q.powi(j_max as i32) / (1.0 - q)
}

/// Partial sum `j = 0..=J` of the response series.
pub fn gamma_series(
    sys: &SkewSystem,
    depths: &DepthCalibration,
    omega: CirclePoint,
    j_max: usize,
    decay: &DecayEstimate,
    tolerance: f64,
) -> Result<ResponseTerm> {
    if j_max == 0 {
        return Err(Error::ParameterOutOfRange("series needs J ≥ 1".into()));
    }
    let depth = depths.depth(sys, 0.0)?;
    let jm = j_max as i64;
    // hs[i] = h at σ^{−(J+1)+i} ω
    let hs = orbit_densities(sys, omega, 0.0, -(jm + 1), -1, depth)?;
    let field = backward_series(
        sys,
        j_max,
        |j| (theta(sys, omega, j), 0.0),
        |j| sys.apply_derivative(theta(sys, omega, j), 0.0, 1.0, drift(sys, j), &hs[(jm - j as i64) as usize]),
    )?;
    let tail_bound = response_tail_bound(decay, j_max);
    let warning = (tail_bound > tolerance)
        .then(|| format!("response tail bound {tail_bound:.3e} exceeds {tolerance:.1e} at J = {j_max}"));
    Ok(ResponseTerm {
        omega,
        field,
        j_max,
        tail_bound,
        warning,
    })
}

/// `‖Σ_{j≤J} L^j_{σ_ε^{−j}ω,ε}(L_{σ_ε^{−(j+1)}ω,ε} − L_{σ^{−(j+1)}ω}) h_{σ^{−(j+1)}ω} − (h_{ω,ε} − h_ω)‖_w`.
pub fn telescoping_check(sys: &SkewSystem, depths: &DepthCalibration, omega: CirclePoint, eps: f64, j_max: usize) -> Result<f64> {
    if j_max == 0 {
        return Err(Error::ParameterOutOfRange("series needs J ≥ 1".into()));
    }
    let depth = depths.depth(sys, 0.0)?;
    let jm = j_max as i64;
    let hs = orbit_densities(sys, omega, 0.0, -(jm + 1), -1, depth)?;
    let phi = |j: usize| sys.orbit(eps, omega, -(j as i64 + 1));
    let partial = backward_series(
        sys,
        j_max,
        |j| (phi(j), eps),
        |j| {
            let h = &hs[(jm - j as i64) as usize];
            let perturbed = sys.apply_transfer(phi(j), eps, h)?;
            Ok(&perturbed - &sys.apply_transfer(theta(sys, omega, j), 0.0, h)?)
        },
    )?;
    let lhs = &density(sys, depths, omega, eps)? - &density(sys, depths, omega, 0.0)?;
    (&partial - &lhs).w_norm(sys.grid())
}

fn slope_if_positive(eps_grid: &[f64], values: &[f64]) -> Result<Option<f64>> {
    if values.contains(&0.0) {
        return Ok(None);
    }
    let xs: Vec<f64> = eps_grid.iter().map(|e| e.abs()).collect();
    Ok(Some(fit_loglog(&xs, values)?.slope))
}

pub fn statstab_curve(sys: &SkewSystem, depths: &DepthCalibration, omega: CirclePoint, eps_grid: &[f64]) -> Result<StabilityCurve> {
    check_grid(sys, eps_grid)?;
    let h0 = density(sys, depths, omega, 0.0)?;
    let errors = eps_grid
        .iter()
        .map(|&e| (&density(sys, depths, omega, e)? - &h0).w_norm(sys.grid()))
        .collect::<Result<Vec<_>>>()?;
    Ok(StabilityCurve {
        eps_grid: eps_grid.to_vec(),
        fitted_slope: slope_if_positive(eps_grid, &errors)?,
        errors,
    })
}

pub fn response_residual_curve(
    sys: &SkewSystem,
    depths: &DepthCalibration,
    omega: CirclePoint,
    gamma: &SpectralField,
    eps_grid: &[f64],
) -> Result<ResidualCurve> {
    check_grid(sys, eps_grid)?;
    let h0 = density(sys, depths, omega, 0.0)?;
    let residuals = eps_grid
        .iter()
        .map(|&e| {
            let mut d = &density(sys, depths, omega, e)? - &h0;
            d.axpy(-e, gamma);
            d.w_norm(sys.grid())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualCurve {
        eps_grid: eps_grid.to_vec(),
        fitted_slope: slope_if_positive(eps_grid, &residuals)?,
        residuals,
    })
}

/// `(h_{ω,ε} − h_{ω,−ε})/2ε`.
pub fn central_difference(sys: &SkewSystem, depths: &DepthCalibration, omega: CirclePoint, eps: f64) -> Result<SpectralField> {
    let plus = density(sys, depths, omega, eps)?;
    let minus = density(sys, depths, omega, -eps)?;
    Ok((&plus - &minus).scaled(0.5 / eps))
}

fn check_grid(sys: &SkewSystem, eps_grid: &[f64]) -> Result<()> {
    for &e in eps_grid {
        if e == 0.0 || e.abs() > sys.fiber.eps_max + 1e-12 {
            return Err(Error::ParameterOutOfRange(format!(
                "ε = {e} outside 0 < |ε| ≤ {}",
                sys.fiber.eps_max
            )));
        }
    }
    Ok(())
}

/// `Φ(ω, ·)` as a field.
pub fn fiber_section(sys: &SkewSystem, phi: Observable, omega: CirclePoint) -> Result<SpectralField> {
    analyze(&GridFunction::from_fn(sys.grid(), |x| phi(omega, x)), sys.k_max())
}

/// `μ_ε(Φ) = ∫ h_{ω,ε}(Φ(ω,·)) dP_ε(ω)` by quadrature on `n_omega` Haar nodes.
pub fn annealed_value(
    sys: &SkewSystem,
    depths: &DepthCalibration,
    measure: &dyn BaseMeasureFamily,
    phi: Observable,
    eps: f64,
    n_omega: usize,
) -> Result<f64> {
    Ok(annealed_values(sys, depths, measure, &[phi], eps, n_omega)?[0])
}

/// [`annealed_value`] for several observables sharing the densities.
pub fn annealed_values(
    sys: &SkewSystem,
    depths: &DepthCalibration,
    measure: &dyn BaseMeasureFamily,
    phis: &[Observable],
    eps: f64,
    n_omega: usize,
) -> Result<Vec<f64>> {
    check_nodes(n_omega)?;
    let mut total = vec![0.0; phis.len()];
    for (w, q) in haar_quadrature(n_omega) {
        let h = density(sys, depths, w, eps)?;
        let weight = q * measure.density(eps, w);
        for (t, phi) in total.iter_mut().zip(phis) {
            *t += weight * h.pair(&fiber_section(sys, *phi, w)?);
        }
    }
    Ok(total)
}

/// `∫ Γ_ω(Φ(ω,·)) dP₀ + P₀′(ω ↦ h_ω(Φ(ω,·)))`.
pub fn annealed_response(
    sys: &SkewSystem,
    depths: &DepthCalibration,
    measure: &dyn BaseMeasureFamily,
    phi: Observable,
    n_omega: usize,
    j_max: usize,
    decay: &DecayEstimate,
) -> Result<AnnealedResponse> {
    Ok(annealed_responses(sys, depths, measure, &[phi], n_omega, j_max, decay)?[0])
}

/// [`annealed_response`] for several observables sharing the series.
pub fn annealed_responses(
    sys: &SkewSystem,
    depths: &DepthCalibration,
    measure: &dyn BaseMeasureFamily,
    phis: &[Observable],
    n_omega: usize,
    j_max: usize,
    decay: &DecayEstimate,
) -> Result<Vec<AnnealedResponse>> {
    check_nodes(n_omega)?;
    let nodes = haar_quadrature(n_omega);
    let w0 = measure.weights_at_zero(&nodes);
    let w1 = measure.derivative_weights(&nodes);
    let mut quenched = vec![0.0; phis.len()];
    let mut tilt = vec![0.0; phis.len()];
    for (i, &(w, _)) in nodes.iter().enumerate() {
        let gamma = gamma_series(sys, depths, w, j_max, decay, f64::INFINITY)?;
        let h = if measure.derivative_vanishes() {
            None
        } else {
            Some(density(sys, depths, w, 0.0)?)
        };
        for (k, phi) in phis.iter().enumerate() {
            let section = fiber_section(sys, *phi, w)?;
            quenched[k] += w0[i] * gamma.field.pair(&section);
            if let Some(h) = &h {
                tilt[k] += w1[i] * h.pair(&section);
            }
        }
    }
    Ok(quenched
        .into_iter()
        .zip(tilt)
        .map(|(q, t)| AnnealedResponse {
            value: q + t,
            quenched: q,
            measure: t,
        })
        .collect())
}

fn check_nodes(n_omega: usize) -> Result<()> {
    if n_omega < 8 {
        return Err(Error::ParameterOutOfRange(format!("n_omega = {n_omega} < 8")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::{HaarFamily, RotationBase};
    use crate::equivariant::estimate_decay;
    use crate::fiber::FiberParams;
    use crate::spectral::{assemble_transfer, SpectralConfig};

    fn small(fiber: FiberParams, base: RotationBase) -> SkewSystem {
        SkewSystem::new(fiber, base, SpectralConfig::with_degree(32)).unwrap()
    }

    #[test]
    fn lambda_matches_orbit_difference() {
        let sys = SkewSystem::new(FiberParams::default(), RotationBase::default(), SpectralConfig::with_degree(16)).unwrap();
        let w = CirclePoint::new(0.37);
        let err = |j: usize, h: f64| {
            let at = |e: f64| assemble_transfer(&sys.fiber, sys.orbit(e, w, -(j as i64 + 1)), e, 16, 64).unwrap();
            lambda_operator(&sys, w, j).unwrap().relative_error(&at(h).difference(&at(-h), 2.0 * h))
        };
        assert!(err(0, 1e-4) < 1e-6, "{}", err(0, 1e-4));
        // deeper j: the drift scales the third derivative by (j+1)³, the gap is h² truncation only
        let ratio = err(3, 1e-4) / err(3, 5e-5);
        assert!((ratio - 4.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn unperturbed_family_has_no_response() {
        let sys = small(FiberParams { b: 0.0, ..FiberParams::default() }, RotationBase::fixed(0.3));
        let depths = DepthCalibration::default();
        let lam = lambda_operator(&sys, CirclePoint::new(0.1), 5).unwrap();
        assert_eq!(lam.max_entry(), 0.0);
        let decay = estimate_decay(&sys, CirclePoint::ZERO, 0.0, 30, 2).unwrap();
        let g = gamma_series(&sys, &depths, CirclePoint::new(0.1), 10, &decay, 1e-6).unwrap();
        assert_eq!(g.field.w_norm(128).unwrap(), 0.0);
        let curve = statstab_curve(&sys, &depths, CirclePoint::new(0.1), &[0.1, 0.05, 0.01]).unwrap();
        assert!(curve.errors.iter().all(|&e| e <= 1e-12));
        assert_eq!(sys.audit().d_omega_applications, 0);
    }

    #[test]
    fn telescoping_is_trivial_at_zero() {
        let sys = small(FiberParams::default(), RotationBase::default());
        let r = telescoping_check(&sys, &DepthCalibration::default(), CirclePoint::new(0.4), 0.0, 5).unwrap();
        assert!(r < 1e-14, "{r}");
    }

    #[test]
    fn annealed_constants() {
        let sys = small(FiberParams::default(), RotationBase::default());
        let depths = DepthCalibration::default();
        let one = |_: CirclePoint, _: f64| 1.0;
        let v = annealed_value(&sys, &depths, &HaarFamily, &one, 0.02, 8).unwrap();
        assert!((v - 1.0).abs() < 1e-13);
        let decay = estimate_decay(&sys, CirclePoint::ZERO, 0.0, 30, 2).unwrap();
        let d = annealed_response(&sys, &depths, &HaarFamily, &one, 8, 20, &decay).unwrap();
        assert!(d.value.abs() < 1e-13);
        let sys = small(FiberParams::doubling(), RotationBase::default());
        let cos = |_: CirclePoint, x: f64| (std::f64::consts::TAU * x).cos();
        assert!(annealed_value(&sys, &DepthCalibration::default(), &HaarFamily, &cos, 0.0, 8).unwrap().abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_grids() {
        let sys = small(FiberParams::default(), RotationBase::default());
        let depths = DepthCalibration::default();
        assert!(statstab_curve(&sys, &depths, CirclePoint::ZERO, &[0.2, 0.1, 0.05]).is_err());
        assert!(statstab_curve(&sys, &depths, CirclePoint::ZERO, &[0.0, 0.1, 0.05]).is_err());
        let one = |_: CirclePoint, _: f64| 1.0;
        assert!(annealed_value(&sys, &depths, &HaarFamily, &one, 0.0, 4).is_err());
    }
}
