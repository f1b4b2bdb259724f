//! Equivariant densities `h_{ω,ε}` with `L_{ω,ε} h_{ω,ε} = h_{σ_ε ω,ε}`,
//! the fiber decay rate, the ω-derivative of `h_ω` and empirical
//! admissibility checks.
//!
//! Densities are obtained by pull-back: `h_{ω,ε} = lim_n L^n_{σ_ε^{−n}ω,ε} u`
//! for any seed `u` of unit mass.

use std::collections::HashMap;
use std::sync::Mutex;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::circle::CirclePoint;
use crate::error::{Error, Result};
use crate::fit::fit_line;
use crate::spectral::{synthesize, SpectralField};
use crate::system::SkewSystem;

/// Stop the adaptive pull-back once successive iterates agree to this.
pub const PULLBACK_TOLERANCE: f64 = 1e-12;
/// Hard cap on the pull-back depth.
pub const MAX_PULLBACK_DEPTH: usize = 200;
/// Extra steps added to a calibrated depth before it is reused.
const DEPTH_MARGIN: usize = 10;

/// An equivariant density at one `(ω, ε)`.
#[derive(Debug, Clone)]
pub struct EquivariantDensity {
    pub omega: CirclePoint,
    pub eps: f64,
    pub field: SpectralField,
    pub n_pullback: usize,
    /// `‖L_{ω,ε} h_{ω,ε} − h_{σ_ε ω,ε}‖_w` against an independently pulled-back target.
    pub residual: f64,
}

/// Fitted `‖L^n g‖_w ≲ C·e^{−λn}` over mean-zero trial fields.
#[derive(Debug, Clone, Serialize)]
pub struct DecayEstimate {
    pub lambda_hat: f64,
    pub c_hat: f64,
    pub n_range: (usize, usize),
    /// RMS deviation of the log-envelope from the fitted line.
    pub fit_residual: f64,
    pub envelope: Vec<f64>,
}

impl DecayEstimate {
    /// `C·e^{−λn}`.
    pub fn bound(&self, n: usize) -> f64 {
        self.c_hat * (-self.lambda_hat * n as f64).exp()
    }
}

/// Seed of unit mass, `u ≡ 1`.
pub fn unit_seed(k_max: usize) -> SpectralField {
    SpectralField::constant(k_max, 1.0)
}

/// `L^n_{σ_ε^{−n}ω,ε} seed`.
pub fn pullback_field(sys: &SkewSystem, omega: CirclePoint, eps: f64, n: usize, seed: &SpectralField) -> Result<SpectralField> {
    sys.cocycle_apply(sys.orbit(eps, omega, -(n as i64)), eps, n, seed)
}

/// Pull-back of depth `n`, with its equivariance residual.
pub fn pullback_density(
    sys: &SkewSystem,
    omega: CirclePoint,
    eps: f64,
    n: usize,
    seed: &SpectralField,
) -> Result<EquivariantDensity> {
    if n == 0 {
        return Err(Error::ParameterOutOfRange("pull-back depth must be positive".into()));
    }
    if (seed.mass() - 1.0).abs() > 1e-12 {
        return Err(Error::ParameterOutOfRange(format!("seed mass {} is not 1", seed.mass())));
    }
    let field = pullback_field(sys, omega, eps, n, seed)?;
    let target = pullback_field(sys, sys.orbit(eps, omega, 1), eps, n, seed)?;
    let image = sys.apply_transfer(omega, eps, &field)?;
    let residual = (&image - &target).w_norm(sys.grid())?;
    Ok(EquivariantDensity {
        omega,
        eps,
        field,
        n_pullback: n,
        residual,
    })
}

/// Smallest depth on the schedule 10, 20, … at which the depth-`n` and
/// depth-`n+1` pull-backs of the unit seed agree to [`PULLBACK_TOLERANCE`].
pub fn adaptive_depth(sys: &SkewSystem, omega: CirclePoint, eps: f64) -> Result<usize> {
    let seed = unit_seed(sys.k_max());
    let mut last = f64::INFINITY;
    for n in (10..=MAX_PULLBACK_DEPTH).step_by(10) {
        let a = pullback_field(sys, omega, eps, n, &seed)?;
        let b = pullback_field(sys, omega, eps, n + 1, &seed)?;
        last = (&a - &b).w_norm(sys.grid())?;
        if last <= PULLBACK_TOLERANCE {
            return Ok(n);
        }
    }
    Err(Error::NonConvergence {
        difference: last,
        depth: MAX_PULLBACK_DEPTH,
    })
}

/// Depth calibrated once per ε at the reference point ω = 0 and reused for
/// every orbit computation at that ε.
pub struct DepthCalibration {
    depths: Mutex<HashMap<i64, usize>>,
}

impl Default for DepthCalibration {
    fn default() -> Self {
        DepthCalibration {
            depths: Mutex::new(HashMap::new()),
        }
    }
}

impl DepthCalibration {
    pub fn depth(&self, sys: &SkewSystem, eps: f64) -> Result<usize> {
        let key = (eps * 1e15).round() as i64;
        if let Some(&d) = self.depths.lock().expect("poisoned").get(&key) {
            return Ok(d);
        }
        let d = (adaptive_depth(sys, CirclePoint::ZERO, eps)? + DEPTH_MARGIN).min(MAX_PULLBACK_DEPTH + DEPTH_MARGIN);
        self.depths.lock().expect("poisoned").insert(key, d);
        Ok(d)
    }
}

/// Adaptive equivariant density with its residual.
pub fn equivariant_density(sys: &SkewSystem, omega: CirclePoint, eps: f64) -> Result<EquivariantDensity> {
    let n = adaptive_depth(sys, omega, eps)?;
    pullback_density(sys, omega, eps, n, &unit_seed(sys.k_max()))
}

/// `h_{σ_ε^m ω,ε}` for `m = from..=to`, all from one forward sweep that starts
/// `depth` steps before `from`.
pub fn orbit_densities(
    sys: &SkewSystem,
    omega: CirclePoint,
    eps: f64,
    from: i64,
    to: i64,
    depth: usize,
) -> Result<Vec<SpectralField>> {
    assert!(to >= from, "empty orbit range");
    let start = from - depth as i64;
    let mut h = unit_seed(sys.k_max());
    let mut out = Vec::with_capacity((to - from + 1) as usize);
    for m in start..=to {
        if m >= from {
            out.push(h.clone());
        }
        if m < to {
            h = sys.apply_transfer(sys.orbit(eps, omega, m), eps, &h)?;
        }
    }
    Ok(out)
}

/// Evaluates `Σ_{j=0}^{J} L_{p_0} ∘ … ∘ L_{p_{j−1}} X_j` by Horner's rule,
/// where `point(j) = p_j` gives the `(ω, ε)` of the operator composed at
/// depth `j + 1`.
pub(crate) fn backward_series(
    sys: &SkewSystem,
    depth: usize,
    point: impl Fn(usize) -> (CirclePoint, f64),
    mut term: impl FnMut(usize) -> Result<SpectralField>,
) -> Result<SpectralField> {
    let mut acc = term(depth)?;
    for j in (0..depth).rev() {
        let (w, e) = point(j);
        let mut next = sys.apply_transfer(w, e, &acc)?;
        next += &term(j)?;
        acc = next;
    }
    Ok(acc)
}

/// `∂_ω h_ω` at ε = 0 from the series
/// `Σ_{j≤J} L^j_{σ^{−j}ω} (∂_ωL)_{σ^{−(j+1)}ω} h_{σ^{−(j+1)}ω}`.
pub fn omega_derivative(sys: &SkewSystem, depths: &DepthCalibration, omega: CirclePoint, terms: usize) -> Result<SpectralField> {
    if terms == 0 {
        return Err(Error::ParameterOutOfRange("series needs J ≥ 1".into()));
    }
    if sys.fiber.c == 0.0 {
        // the only ω-dependence of the family is through c
        return Ok(SpectralField::zeros(sys.k_max()));
    }
    let depth = depths.depth(sys, 0.0)?;
    let j_max = terms as i64;
    // hs[i] = h at σ^{−(J+1)+i} ω
    let hs = orbit_densities(sys, omega, 0.0, -(j_max + 1), -1, depth)?;
    let h_at = |j: usize| &hs[(j_max - j as i64) as usize];
    let theta = |j: usize| sys.orbit(0.0, omega, -(j as i64 + 1));
    backward_series(
        sys,
        terms,
        |j| (theta(j), 0.0),
        |j| sys.apply_derivative(theta(j), 0.0, 0.0, 1.0, h_at(j)),
    )
}

/// Mean-zero trial fields with `|c_k| ~ k⁻²`, normalized to unit sup-norm.
pub fn decay_trials(k_max: usize, grid: usize, count: usize, seed: u64) -> Result<Vec<SpectralField>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut g = SpectralField::random_real(k_max, &mut rng, |k| 1.0 / (k * k) as f64);
            g.set(0, Complex64::new(0.0, 0.0));
            let n = g.w_norm(grid)?;
            Ok(g.scaled(1.0 / n))
        })
        .collect()
}

/// Envelope values below this are treated as roundoff and left out of the fit.
const DECAY_FLOOR: f64 = 1e-12;
/// Equispaced base starting points the decay envelope is taken over.
const DECAY_STARTS: usize = 32;
/// First step of the fit window; earlier steps are transient.
const FIT_START: usize = 6;

/// Fits the exponential decay of `max_g ‖L^n_{ω,ε} g‖_w` over mean-zero trials.
pub fn estimate_decay(sys: &SkewSystem, omega: CirclePoint, eps: f64, n_max: usize, trial_count: usize) -> Result<DecayEstimate> {
    if n_max < 10 {
        return Err(Error::ParameterOutOfRange("decay fit needs n_max ≥ 10".into()));
    }
    let trials = decay_trials(sys.k_max(), sys.grid(), trial_count.max(1), 0xdeca7)?;
    let mut envelope = vec![0.0f64; n_max + 1];
    // the bound is uniform in ω, so the envelope runs over shifted starts too
    for s in 0..DECAY_STARTS {
        let start = omega.shifted(s as f64 / DECAY_STARTS as f64);
        for g in &trials {
            let mut f = g.clone();
            for (n, e) in envelope.iter_mut().enumerate() {
                *e = e.max(f.w_norm(sys.grid())?);
                if n < n_max {
                    f = sys.apply_transfer(sys.orbit(eps, start, n as i64), eps, &f)?;
                }
            }
        }
    }
    let last = envelope
        .iter()
        .enumerate()
        .skip(1)
        .take_while(|(_, &e)| e > DECAY_FLOOR)
        .map(|(n, _)| n)
        .last()
        .unwrap_or(0);
    if last < 3 {
        return Err(Error::FitUnstable(format!(
            "only {last} envelope points above the roundoff floor"
        )));
    }
    for n in 1..last {
        if envelope[n + 1] > 10.0 * envelope[n] {
            return Err(Error::FitUnstable(format!(
                "envelope grows from {:e} to {:e} at n = {n}",
                envelope[n],
                envelope[n + 1]
            )));
        }
    }
    let first = FIT_START.min(last - 2);
    let ns: Vec<f64> = (first..=last).map(|n| n as f64).collect();
    let logs: Vec<f64> = (first..=last).map(|n| envelope[n].ln()).collect();
    let fit = fit_line(&ns, &logs)?;
    Ok(DecayEstimate {
        lambda_hat: -fit.slope,
        c_hat: fit.intercept.exp(),
        n_range: (first, last),
        fit_residual: fit.residual,
        envelope,
    })
}

/// Thresholds the admissibility report is judged against.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AdmissibilityThresholds {
    /// Upper bound for `sup ‖Lf‖_s / ‖f‖_s`.
    pub norm_bound: f64,
    /// Upper bound for the derivative-seminorm contraction ratio under `Lⁿ`.
    pub contraction: f64,
    /// Lower bound for `min Lⁿ f / ‖f‖_{L¹}` over cone samples.
    pub positivity: f64,
}

impl Default for AdmissibilityThresholds {
    fn default() -> Self {
        AdmissibilityThresholds {
            norm_bound: 50.0,
            contraction: 1.0,
            positivity: 0.0,
        }
    }
}

/// Empirical checks of the uniform norm bound, the Lasota–Yorke type
/// contraction and positivity on the cone.
#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilityReport {
    pub eps: f64,
    pub n: usize,
    pub samples: usize,
    pub norm_ratio_max: f64,
    pub contraction_ratio: f64,
    pub positivity_min: f64,
    pub norm_pass: bool,
    pub contraction_pass: bool,
    pub positivity_pass: bool,
}

impl AdmissibilityReport {
    pub fn pass(&self) -> bool {
        self.norm_pass && self.contraction_pass && self.positivity_pass
    }
}

pub fn admissibility_diagnostics(
    sys: &SkewSystem,
    eps: f64,
    n: usize,
    sample_count: usize,
    thresholds: AdmissibilityThresholds,
) -> Result<AdmissibilityReport> {
    let grid = sys.grid();
    let k = sys.k_max();
    let samples = sample_count.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(0xad515);
    let mut norm_ratio_max = 0.0f64;
    let mut contraction_ratio = 0.0f64;
    let mut positivity_min = f64::INFINITY;
    for _ in 0..samples {
        let omega = CirclePoint::new(rand::Rng::random::<f64>(&mut rng));
        let f = SpectralField::random_real(k, &mut rng, |j| 1.0 / (j * j) as f64);
        let lf = sys.apply_transfer(omega, eps, &f)?;
        norm_ratio_max = norm_ratio_max.max(lf.s_norm(grid)? / f.s_norm(grid)?);

        let mut g = f.clone();
        g.set(0, Complex64::new(0.0, 0.0));
        let lng = sys.cocycle_apply(omega, eps, n, &g)?;
        contraction_ratio = contraction_ratio.max(lng.derivative().w_norm(grid)? / g.derivative().w_norm(grid)?);

        // cone element: 1 + 0.9·g/‖g‖_∞ is positive with unit mass
        let cone = &SpectralField::constant(k, 1.0) + &g.scaled(0.9 / g.w_norm(grid)?);
        let l1 = synthesize(&cone, grid)?.values.iter().map(|v| v.abs()).sum::<f64>() / grid as f64;
        let image = synthesize(&sys.cocycle_apply(omega, eps, n, &cone)?, grid)?;
        positivity_min = positivity_min.min(image.min() / l1);
    }
    Ok(AdmissibilityReport {
        eps,
        n,
        samples,
        norm_ratio_max,
        contraction_ratio,
        positivity_min,
        norm_pass: norm_ratio_max <= thresholds.norm_bound,
        contraction_pass: contraction_ratio < thresholds.contraction,
        positivity_pass: positivity_min > thresholds.positivity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::RotationBase;
    use crate::fiber::FiberParams;
    use crate::spectral::SpectralConfig;

    fn small(fiber: FiberParams) -> SkewSystem {
        SkewSystem::new(fiber, RotationBase::default(), SpectralConfig::with_degree(32)).unwrap()
    }

    #[test]
    fn doubling_density_is_lebesgue() {
        let sys = small(FiberParams::doubling());
        let d = pullback_density(&sys, CirclePoint::new(0.4), 0.05, 5, &unit_seed(32)).unwrap();
        assert!(d.field.max_abs_diff(&unit_seed(32)) < 1e-13);
        assert!(d.residual <= 1e-13);
    }

    #[test]
    fn rejects_bad_seed_and_depth() {
        let sys = small(FiberParams::doubling());
        assert!(pullback_density(&sys, CirclePoint::ZERO, 0.0, 0, &unit_seed(32)).is_err());
        assert!(pullback_density(&sys, CirclePoint::ZERO, 0.0, 3, &SpectralField::constant(32, 2.0)).is_err());
    }

    #[test]
    fn orbit_sweep_matches_individual_pullbacks() {
        let sys = small(FiberParams::default());
        let w = CirclePoint::new(0.2);
        let hs = orbit_densities(&sys, w, 0.03, -2, 1, 40).unwrap();
        for (i, m) in (-2i64..=1).enumerate() {
            let direct = pullback_field(&sys, sys.orbit(0.03, w, m), 0.03, 40, &unit_seed(32)).unwrap();
            assert!(hs[i].max_abs_diff(&direct) < 1e-13);
        }
    }

    #[test]
    fn no_omega_dependence_gives_zero_derivative() {
        let sys = small(FiberParams { c: 0.0, ..FiberParams::default() });
        let d = omega_derivative(&sys, &DepthCalibration::default(), CirclePoint::new(0.3), 10).unwrap();
        assert_eq!(d.w_norm(128).unwrap(), 0.0);
    }

    #[test]
    fn doubling_decay_rate() {
        let sys = SkewSystem::new(FiberParams::doubling(), RotationBase::default(), SpectralConfig::with_degree(16)).unwrap();
        let d = estimate_decay(&sys, CirclePoint::ZERO, 0.0, 12, 8).unwrap();
        assert!(d.lambda_hat >= std::f64::consts::LN_2 - 0.05, "{d:?}");
    }

    #[test]
    fn doubling_cone_is_fixed() {
        let sys = small(FiberParams::doubling());
        let r = admissibility_diagnostics(&sys, 0.0, 6, 4, AdmissibilityThresholds::default()).unwrap();
        assert!(r.pass(), "{r:?}");
    }
}
