//! Green–Kubo variance of Birkhoff sums, its ε-derivative at 0 summand by
//! summand, and a Monte Carlo oracle for the variance and the Gaussian moment
//! ratios.
//!
//! With `f̄_{ω,ε} = f_{ω,ε} − h_{ω,ε}(f_{ω,ε})` the correlations are
//! `C_n(ε) = ∫ ⟨L^n_{ω,ε}(f̄_{ω,ε} h_{ω,ε}), f̄_{σ_ε^n ω,ε}⟩ dP_ε(ω)` and
//! `Σ_ε² = C₀ + 2Σ_{n≥1} C_n`.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::base::{haar_quadrature, BaseMeasureFamily};
use crate::circle::{wrap, CirclePoint};
use crate::equivariant::{omega_derivative, orbit_densities, DecayEstimate, DepthCalibration, EquivariantDensity};
use crate::error::{Error, Result};
use crate::response::gamma_series;
use crate::spectral::{analyze, multiply, synthesize, GridFunction, SpectralField};
use crate::system::SkewSystem;

/// Points of the grid the initial law is inverted on.
const SAMPLING_GRID: usize = 1 << 12;
/// Amplitude of the per-step jitter that keeps floating-point orbits of
/// dyadic-like maps from collapsing onto 0.
const JITTER: f64 = 1.0 / (1u64 << 48) as f64;

/// An ε-family of observables `f_ε(ω, x)` with its partial derivatives.
pub trait ObservableFamily: Send + Sync {
    fn value(&self, eps: f64, omega: f64, x: f64) -> f64;
    fn d_eps(&self, eps: f64, omega: f64, x: f64) -> f64;
    fn d_omega(&self, eps: f64, omega: f64, x: f64) -> f64;
    fn d_x(&self, eps: f64, omega: f64, x: f64) -> f64;
    /// True when `∂_ε f ≡ 0`.
    fn eps_independent(&self) -> bool {
        false
    }
}

/// `cos 2πx + ε·sin 2π(x + ω)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultObservable;

impl ObservableFamily for DefaultObservable {
    fn value(&self, eps: f64, omega: f64, x: f64) -> f64 {
        (TAU * x).cos() + eps * (TAU * (x + omega)).sin()
    }
    fn d_eps(&self, _eps: f64, omega: f64, x: f64) -> f64 {
        (TAU * (x + omega)).sin()
    }
    fn d_omega(&self, eps: f64, omega: f64, x: f64) -> f64 {
        eps * TAU * (TAU * (x + omega)).cos()
    }
    fn d_x(&self, eps: f64, omega: f64, x: f64) -> f64 {
        -TAU * (TAU * x).sin() + eps * TAU * (TAU * (x + omega)).cos()
    }
}

/// `cos 2πx`, the same for every ε and ω.
#[derive(Debug, Clone, Copy, Default)]
pub struct FiberCosine;

impl ObservableFamily for FiberCosine {
    fn value(&self, _eps: f64, _omega: f64, x: f64) -> f64 {
        (TAU * x).cos()
    }
    fn d_eps(&self, _eps: f64, _omega: f64, _x: f64) -> f64 {
        0.0
    }
    fn d_omega(&self, _eps: f64, _omega: f64, _x: f64) -> f64 {
        0.0
    }
    fn d_x(&self, _eps: f64, _omega: f64, x: f64) -> f64 {
        -TAU * (TAU * x).sin()
    }
    fn eps_independent(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantObservable(pub f64);

impl ObservableFamily for ConstantObservable {
    fn value(&self, _eps: f64, _omega: f64, _x: f64) -> f64 {
        self.0
    }
    fn d_eps(&self, _eps: f64, _omega: f64, _x: f64) -> f64 {
        0.0
    }
    fn d_omega(&self, _eps: f64, _omega: f64, _x: f64) -> f64 {
        0.0
    }
    fn d_x(&self, _eps: f64, _omega: f64, _x: f64) -> f64 {
        0.0
    }
    fn eps_independent(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub eps: f64,
    pub sigma2: f64,
    pub n_corr: usize,
    pub tail_estimate: f64,
    /// `C_n(ε)` for `n = 0..=N_corr`.
    pub correlations: Vec<f64>,
    pub warning: Option<String>,
}

/// `dΣ_ε²/dε` at 0 with its pieces. `i1..i3` make up the derivative of `C₀`;
/// `d1..d4` are the sums over `1 ≤ n ≤ N_corr` of the four families.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceDerivative {
    pub value: f64,
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
    /// Last summand `d_{i,N_corr}` of each family.
    pub last_terms: [f64; 4],
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloReport {
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    /// `n^{−1/2}·S̄_n`, one per trial.
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MomentReport {
    pub k: u32,
    pub m_k_empirical: f64,
    pub ratio_to_gaussian: f64,
    /// Jackknife standard error of the ratio.
    pub std_error: f64,
}

/// `x ↦ g(ε, ω, x)` analyzed at the system resolution.
fn section(sys: &SkewSystem, g: impl Fn(f64) -> f64) -> Result<SpectralField> {
    analyze(&GridFunction::from_fn(sys.grid(), g), sys.k_max())
}

fn minus_constant(f: &SpectralField, c: f64) -> SpectralField {
    let mut out = f.clone();
    out.set(0, f.get(0) - Complex64::new(c, 0.0));
    out
}

/// `f_ε(ω,·) − h_{ω,ε}(f_ε(ω,·))`.
pub fn centered_observable(sys: &SkewSystem, obs: &dyn ObservableFamily, h: &EquivariantDensity) -> Result<SpectralField> {
    centered(sys, obs, h.omega, h.eps, &h.field)
}

fn centered(sys: &SkewSystem, obs: &dyn ObservableFamily, omega: CirclePoint, eps: f64, h: &SpectralField) -> Result<SpectralField> {
    let f = section(sys, |x| obs.value(eps, omega.value(), x))?;
    Ok(minus_constant(&f, h.pair(&f)))
}

/// `C_n(ω, ε)` for `n = 0..=n_corr` at one base point.
fn node_correlations(
    sys: &SkewSystem,
    depths: &DepthCalibration,
    obs: &dyn ObservableFamily,
    omega: CirclePoint,
    eps: f64,
    n_corr: usize,
) -> Result<Vec<f64>> {
    let hs = orbit_densities(sys, omega, eps, 0, n_corr as i64, depths.depth(sys, eps)?)?;
    let fbar = |m: usize| centered(sys, obs, sys.orbit(eps, omega, m as i64), eps, &hs[m]);
    let f0 = fbar(0)?;
    let mut u = multiply(&f0, &hs[0], sys.grid())?;
    let mut out = Vec::with_capacity(n_corr + 1);
    out.push(u.pair(&f0));
    for n in 1..=n_corr {
        u = sys.apply_transfer(sys.orbit(eps, omega, n as i64 - 1), eps, &u)?;
        out.push(u.pair(&fbar(n)?));
    }
    Ok(out)
}

/// `C_n(ε)` integrated over `P_ε` on `n_omega` Haar nodes.
pub fn correlation_terms(
    sys: &SkewSystem,
    depths: &DepthCalibration,
    obs: &dyn ObservableFamily,
    measure: &dyn BaseMeasureFamily,
    eps: f64,
    n_corr: usize,
    n_omega: usize,
) -> Result<Vec<f64>> {
    let mut total = vec![0.0; n_corr + 1];
    for (w, q) in haar_quadrature(n_omega) {
        let weight = q * measure.density(eps, w);
        for (t, c) in total.iter_mut().zip(node_correlations(sys, depths, obs, w, eps, n_corr)?) {
            *t += weight * c;
        }
    }
    Ok(total)
}

/// A single `C_n(ε)`.
pub fn correlation_term(
    sys: &SkewSystem,
    depths: &DepthCalibration,
    obs: &dyn ObservableFamily,
    measure: &dyn BaseMeasureFamily,
    eps: f64,
    n: usize,
    n_omega: usize,
) -> Result<f64> {
    Ok(correlation_terms(sys, depths, obs, measure, eps, n, n_omega)?[n])
}

/// `2·scale·Σ_{n>N} C·e^{−λn}`.
fn correlation_tail(decay: &DecayEstimate, scale: f64, n_corr: usize) -> f64 {
    let q = (-decay.lambda_hat).exp();
    2.0 * scale * decay.c_hat * q.powi(n_corr as i32 + 1) / (1.0 - q)
}

#[allow(clippy::too_many_arguments)]
pub fn green_kubo_variance(
    sys: &SkewSystem,
    depths: &DepthCalibration,
    obs: &dyn ObservableFamily,
    measure: &dyn BaseMeasureFamily,
    eps: f64,
    n_corr: usize,
    n_omega: usize,
    decay: &DecayEstimate,
) -> Result<VarianceReport> {
    if n_corr == 0 {
        return Err(Error::ParameterOutOfRange("N_corr must be ≥ 1".into()));
    }
    let correlations = correlation_terms(sys, depths, obs, measure, eps, n_corr, n_omega)?;
    let sigma2 = correlations[0] + 2.0 * correlations[1..].iter().sum::<f64>();
    let tail_estimate = correlation_tail(decay, correlations[0].abs(), n_corr);
    let warning = (tail_estimate > 1e-6 * sigma2.abs())
        .then(|| format!("correlation tail {tail_estimate:.3e} exceeds 1e-6·Σ² at N_corr = {n_corr}"));
    Ok(VarianceReport {
        eps,
        sigma2,
        n_corr,
        tail_estimate,
        correlations,
        warning,
    })
}

/// Per-node contributions `[i1, i2, i3, d1, d2, d3, d4]` plus the last
/// summand of each `d` family.
fn node_derivative(
    sys: &SkewSystem,
    depths: &DepthCalibration,
    obs: &dyn ObservableFamily,
    omega: CirclePoint,
    n_corr: usize,
    j_max: usize,
    decay: &DecayEstimate,
) -> Result<([f64; 7], [f64; 4])> {
    let grid = sys.grid();
    let beta = sys.base.beta;
    let at = |m: usize| sys.orbit(0.0, omega, m as i64);
    let hs = orbit_densities(sys, omega, 0.0, 0, n_corr as i64, depths.depth(sys, 0.0)?)?;

    // Γ and ∂_ωh along the orbit: series at the start, then the exact
    // forward relations obtained by differentiating L_{ω,ε}h_{ω,ε} = h_{σ_εω,ε}
    //   η_{σω} = L_ω η_ω + ∂_ωL_ω h_ω
    //   Γ_{σω} = L_ω Γ_ω + ∂_εL_ω h_ω − β η_{σω}
    let drifting = beta != 0.0;
    let mut gamma = gamma_series(sys, depths, omega, j_max, decay, f64::INFINITY)?.field;
    let mut eta = if drifting {
        omega_derivative(sys, depths, omega, j_max)?
    } else {
        SpectralField::zeros(sys.k_max())
    };
    let mut gammas = vec![gamma.clone()];
    let mut etas = vec![eta.clone()];
    for m in 0..n_corr {
        if drifting {
            let mut next = sys.apply_transfer(at(m), 0.0, &eta)?;
            next += &sys.apply_derivative(at(m), 0.0, 0.0, 1.0, &hs[m])?;
            eta = next;
        }
        let mut next = sys.apply_transfer(at(m), 0.0, &gamma)?;
        next += &sys.apply_derivative(at(m), 0.0, 1.0, 0.0, &hs[m])?;
        next.axpy(-beta, &eta);
        gamma = next;
        gammas.push(gamma.clone());
        etas.push(eta.clone());
    }

    // f̄, its ε-derivative at fixed ω, and its ω-derivative along the orbit
    let mut fbar = Vec::with_capacity(n_corr + 1);
    let mut fbar_eps = Vec::with_capacity(n_corr + 1);
    let mut fbar_omega = Vec::with_capacity(n_corr + 1);
    for m in 0..=n_corr {
        let w = at(m).value();
        let f = section(sys, |x| obs.value(0.0, w, x))?;
        let fe = section(sys, |x| obs.d_eps(0.0, w, x))?;
        let fw = section(sys, |x| obs.d_omega(0.0, w, x))?;
        fbar.push(minus_constant(&f, hs[m].pair(&f)));
        fbar_eps.push(minus_constant(&fe, gammas[m].pair(&f) + hs[m].pair(&fe)));
        fbar_omega.push(minus_constant(&fw, etas[m].pair(&f) + hs[m].pair(&fw)));
    }

    let sq = multiply(&fbar[0], &fbar[0], grid)?;
    let i1 = gammas[0].pair(&sq);
    let i2 = 2.0 * hs[0].pair(&multiply(&fbar[0], &fbar_eps[0], grid)?);
    let i3 = hs[0].pair(&sq);

    let mut u = multiply(&fbar[0], &hs[0], grid)?;
    let mut v = multiply(&fbar_eps[0], &hs[0], grid)?;
    v += &multiply(&fbar[0], &gammas[0], grid)?;
    let mut w = SpectralField::zeros(sys.k_max());
    let (mut d1, mut d2, mut d3, mut d4) = (0.0, 0.0, 0.0, 0.0);
    let mut last = [0.0; 4];
    for n in 1..=n_corr {
        let p = at(n - 1);
        // derivative of the cocycle: the k-th factor sits at σ_ε^kω, drifting by kβ
        let mut next = sys.apply_transfer(p, 0.0, &w)?;
        next += &sys.apply_derivative(p, 0.0, 1.0, sys.base.orbit_eps_derivative(n as i64 - 1), &u)?;
        w = next;
        u = sys.apply_transfer(p, 0.0, &u)?;
        v = sys.apply_transfer(p, 0.0, &v)?;
        let mut drift = fbar_eps[n].clone();
        drift.axpy(sys.base.orbit_eps_derivative(n as i64), &fbar_omega[n]);
        let terms = [u.pair(&drift), v.pair(&fbar[n]), w.pair(&fbar[n]), u.pair(&fbar[n])];
        d1 += terms[0];
        d2 += terms[1];
        d3 += terms[2];
        d4 += terms[3];
        last = terms;
    }
    // i3 and d4 are returned unweighted; the caller applies the P₀′ weights
    Ok(([i1, i2, i3, d1, d2, d3, d4], last))
}

/// `dΣ_ε²/dε` at ε = 0 with `Σ²` truncated at `N_corr`, differentiated
/// summand by summand.
#[allow(clippy::too_many_arguments)]
pub fn variance_derivative(
    sys: &SkewSystem,
    depths: &DepthCalibration,
    obs: &dyn ObservableFamily,
    measure: &dyn BaseMeasureFamily,
    n_corr: usize,
    n_omega: usize,
    j_max: usize,
    decay: &DecayEstimate,
) -> Result<VarianceDerivative> {
    if n_corr == 0 {
        return Err(Error::ParameterOutOfRange("N_corr must be ≥ 1".into()));
    }
    let nodes = haar_quadrature(n_omega);
    let w0 = measure.weights_at_zero(&nodes);
    let w1 = measure.derivative_weights(&nodes);
    let mut acc = [0.0; 7];
    let mut last = [0.0; 4];
    for (i, &(w, _)) in nodes.iter().enumerate() {
        let (parts, tail) = node_derivative(sys, depths, obs, w, n_corr, j_max, decay)?;
        let weights = [w0[i], w0[i], w1[i], w0[i], w0[i], w0[i], w1[i]];
        for (a, (p, q)) in acc.iter_mut().zip(parts.iter().zip(weights)) {
            *a += p * q;
        }
        for (l, (t, q)) in last.iter_mut().zip(tail.iter().zip([w0[i], w0[i], w0[i], w1[i]])) {
            *l += t * q;
        }
    }
    let [i1, i2, i3, d1, d2, d3, d4] = acc;
    let value = i1 + i2 + i3 + 2.0 * (d1 + d2 + d3 + d4);
    let q = (-decay.lambda_hat).exp();
    let worst = last.iter().fold(0.0f64, |m, t| m.max(t.abs())) * q / (1.0 - q);
    let warning = (worst > 1e-6 * value.abs().max(1e-6))
        .then(|| format!("derivative summands still {worst:.3e} at N_corr = {n_corr}"));
    Ok(VarianceDerivative {
        value,
        i1,
        i2,
        i3,
        d1,
        d2,
        d3,
        d4,
        last_terms: last,
        warning,
    })
}

/// Inverse CDF of a density given by its values on a uniform grid, with
/// linear interpolation of the CDF between nodes.
pub struct InverseCdf {
    cdf: Vec<f64>,
}

impl InverseCdf {
    pub fn new(density: &GridFunction) -> Result<Self> {
        let n = density.len();
        if density.min() <= 0.0 {
            return Err(Error::NumericalFailure(format!(
                "density minimum {} is not positive",
                density.min()
            )));
        }
        let mut cdf = Vec::with_capacity(n + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for i in 0..n {
            let next = density.values[(i + 1) % n];
            acc += 0.5 * (density.values[i] + next) / n as f64;
            cdf.push(acc);
        }
        for c in &mut cdf {
            *c /= acc;
        }
        Ok(InverseCdf { cdf })
    }

    pub fn sample(&self, u: f64) -> f64 {
        let n = self.cdf.len() - 1;
        let i = self.cdf.partition_point(|&c| c <= u).clamp(1, n);
        let (lo, hi) = (self.cdf[i - 1], self.cdf[i]);
        let t = if hi > lo { (u - lo) / (hi - lo) } else { 0.0 };
        ((i - 1) as f64 + t) / n as f64
    }
}

/// Empirical law of `n^{−1/2} Σ_{i<n} f̄_{σ_ε^iω,ε}(x_i)` with `x₀ ~ h_{ω,ε}`.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_variance(
    sys: &SkewSystem,
    depths: &DepthCalibration,
    obs: &dyn ObservableFamily,
    omega: CirclePoint,
    eps: f64,
    n_steps: usize,
    trials: usize,
    rng_seed: u64,
) -> Result<MonteCarloReport> {
    if n_steps == 0 || trials < 2 {
        return Err(Error::ParameterOutOfRange("need n_steps ≥ 1 and trials ≥ 2".into()));
    }
    let depth = depths.depth(sys, eps)?;
    // quenched means h_{σ^iω}(f) from one sweep along the orbit
    let mut h = orbit_densities(sys, omega, eps, 0, 0, depth)?.remove(0);
    let sampler = InverseCdf::new(&synthesize(&h, SAMPLING_GRID)?)?;
    let points: Vec<f64> = (0..n_steps).map(|i| sys.orbit(eps, omega, i as i64).value()).collect();
    let mut means = Vec::with_capacity(n_steps);
    for (i, &w) in points.iter().enumerate() {
        means.push(h.pair(&section(sys, |x| obs.value(eps, w, x))?));
        if i + 1 < n_steps {
            h = sys.apply_transfer(CirclePoint::new(w), eps, &h)?;
        }
    }
    let norm = (n_steps as f64).sqrt();
    let samples: Vec<f64> = (0..trials)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed.wrapping_add(t as u64));
            let mut x = sampler.sample(rng.random());
            let mut sum = 0.0;
            for (&w, &m) in points.iter().zip(&means) {
                sum += obs.value(eps, w, x) - m;
                x = wrap(sys.fiber.lift(w, eps, x) + JITTER * (rng.random::<f64>() - 0.5));
            }
            sum / norm
        })
        .collect();
    let t = trials as f64;
    let mean = samples.iter().sum::<f64>() / t;
    let m2 = samples.iter().map(|z| z * z).sum::<f64>() / t;
    let m4 = samples.iter().map(|z| z.powi(4)).sum::<f64>() / t;
    // the CLT law is centered exactly, so moments are taken about 0
    let std_error = ((m4 - m2 * m2).max(0.0) / t).sqrt();
    Ok(MonteCarloReport {
        mean,
        variance: m2,
        std_error,
        samples,
    })
}

/// `(k − 1)!!`.
pub fn gaussian_moment(k: u32) -> f64 {
    (1..k).step_by(2).map(|j| j as f64).product()
}

/// `M̂_k / (M̂₂^{k/2}·(k−1)!!)` with a delete-one jackknife error.
pub fn moment_ratio(samples: &[f64], k: u32) -> Result<MomentReport> {
    if !matches!(k, 2 | 4 | 6) {
        return Err(Error::ParameterOutOfRange(format!("moment order {k} not in {{2, 4, 6}}")));
    }
    let t = samples.len();
    if t < 3 {
        return Err(Error::DegenerateInput("need at least three samples".into()));
    }
    let s2: f64 = samples.iter().map(|z| z * z).sum();
    let sk: f64 = samples.iter().map(|z| z.powi(k as i32)).sum();
    let g = gaussian_moment(k);
    let ratio = |s2: f64, sk: f64, n: f64| (sk / n) / ((s2 / n).powi(k as i32 / 2) * g);
    let full = ratio(s2, sk, t as f64);
    if k == 2 {
        return Ok(MomentReport {
            k,
            m_k_empirical: s2 / t as f64,
            ratio_to_gaussian: 1.0,
            std_error: 0.0,
        });
    }
    let loo: Vec<f64> = samples
        .iter()
        .map(|z| ratio(s2 - z * z, sk - z.powi(k as i32), (t - 1) as f64))
        .collect();
    let mean = loo.iter().sum::<f64>() / t as f64;
    let var = loo.iter().map(|r| (r - mean).powi(2)).sum::<f64>() * (t - 1) as f64 / t as f64;
    Ok(MomentReport {
        k,
        m_k_empirical: sk / t as f64,
        ratio_to_gaussian: full,
        std_error: var.sqrt(),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn moment_ratio_check(
    sys: &SkewSystem,
    depths: &DepthCalibration,
    obs: &dyn ObservableFamily,
    omega: CirclePoint,
    eps: f64,
    k: u32,
    n_steps: usize,
    trials: usize,
    rng_seed: u64,
) -> Result<MomentReport> {
    let mc = monte_carlo_variance(sys, depths, obs, omega, eps, n_steps, trials, rng_seed)?;
    moment_ratio(&mc.samples, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::{HaarFamily, RotationBase};
    use crate::equivariant::{equivariant_density, estimate_decay};
    use crate::fiber::FiberParams;
    use crate::spectral::SpectralConfig;

    fn doubling() -> SkewSystem {
        SkewSystem::new(FiberParams::doubling(), RotationBase::fixed(0.3), SpectralConfig::with_degree(16)).unwrap()
    }

    #[test]
    fn observable_partials_match_differences() {
        let f = DefaultObservable;
        let h = 1e-5;
        for &(e, w, x) in &[(0.03, 0.2, 0.7), (-0.05, 0.9, 0.1), (0.0, 0.4, 0.33)] {
            let de = (f.value(e + h, w, x) - f.value(e - h, w, x)) / (2.0 * h);
            let dw = (f.value(e, w + h, x) - f.value(e, w - h, x)) / (2.0 * h);
            let dx = (f.value(e, w, x + h) - f.value(e, w, x - h)) / (2.0 * h);
            assert!((de - f.d_eps(e, w, x)).abs() < 1e-6);
            assert!((dw - f.d_omega(e, w, x)).abs() < 1e-6);
            assert!((dx - f.d_x(e, w, x)).abs() < 1e-6);
        }
    }

    #[test]
    fn centering() {
        let sys = SkewSystem::new(FiberParams::default(), RotationBase::default(), SpectralConfig::with_degree(32)).unwrap();
        let h = equivariant_density(&sys, CirclePoint::new(0.2), 0.04).unwrap();
        let fbar = centered_observable(&sys, &DefaultObservable, &h).unwrap();
        assert!(h.field.pair(&fbar).abs() < 1e-12);
        let c = centered_observable(&sys, &ConstantObservable(2.5), &h).unwrap();
        assert!(c.w_norm(128).unwrap() < 1e-14);
        let sys = doubling();
        let h = equivariant_density(&sys, CirclePoint::new(0.2), 0.0).unwrap();
        let fbar = centered_observable(&sys, &FiberCosine, &h).unwrap();
        assert!(fbar.max_abs_diff(&SpectralField::cosine(16, 1, 1.0)) < 1e-15);
    }

    #[test]
    fn doubling_correlations() {
        let sys = doubling();
        let depths = DepthCalibration::default();
        let c = correlation_terms(&sys, &depths, &FiberCosine, &HaarFamily, 0.0, 5, 8).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-14);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-15), "{c:?}");
    }

    #[test]
    fn inverse_cdf_of_uniform_and_tilted() {
        let inv = InverseCdf::new(&GridFunction::from_fn(64, |_| 1.0)).unwrap();
        for u in [0.0, 0.13, 0.5, 0.999] {
            assert!((inv.sample(u) - u).abs() < 1e-12);
        }
        let inv = InverseCdf::new(&GridFunction::from_fn(4096, |x| 1.0 + 0.5 * (TAU * x).cos())).unwrap();
        // F(x) = x + sin(2πx)/(4π)
        for u in [0.1, 0.4, 0.8] {
            let x = inv.sample(u);
            assert!((x + (TAU * x).sin() / (2.0 * TAU) - u).abs() < 1e-6);
        }
        assert!(InverseCdf::new(&GridFunction::from_fn(16, |x| x - 0.5)).is_err());
    }

    #[test]
    fn moment_ratios() {
        assert_eq!(gaussian_moment(4), 3.0);
        assert_eq!(gaussian_moment(6), 15.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z: Vec<f64> = (0..20000)
            .map(|_| {
                let (u, v): (f64, f64) = (rng.random(), rng.random());
                (-2.0 * (1.0 - u).ln()).sqrt() * (TAU * v).cos()
            })
            .collect();
        assert_eq!(moment_ratio(&z, 2).unwrap().ratio_to_gaussian, 1.0);
        for k in [4, 6] {
            let r = moment_ratio(&z, k).unwrap();
            assert!((r.ratio_to_gaussian - 1.0).abs() < 3.0 * r.std_error, "{r:?}");
        }
        assert!(moment_ratio(&z, 3).is_err());
    }

    #[test]
    fn constant_observable_has_no_fluctuations() {
        let sys = doubling();
        let depths = DepthCalibration::default();
        let mc = monte_carlo_variance(&sys, &depths, &ConstantObservable(1.0), CirclePoint::ZERO, 0.0, 1000, 10, 1).unwrap();
        assert!(mc.variance < 1e-20);
        let decay = estimate_decay(&sys, CirclePoint::ZERO, 0.0, 12, 4).unwrap();
        let gk = green_kubo_variance(&sys, &depths, &ConstantObservable(1.0), &HaarFamily, 0.0, 5, 8, &decay).unwrap();
        assert!(gk.sigma2.abs() < 1e-20);
    }

    #[test]
    fn unperturbed_family_has_zero_variance_derivative() {
        let sys = SkewSystem::new(
            FiberParams { b: 0.0, ..FiberParams::default() },
            RotationBase::fixed(0.3),
            SpectralConfig::with_degree(32),
        )
        .unwrap();
        let depths = DepthCalibration::default();
        let decay = estimate_decay(&sys, CirclePoint::ZERO, 0.0, 30, 2).unwrap();
        let d = variance_derivative(&sys, &depths, &FiberCosine, &HaarFamily, 10, 8, 20, &decay).unwrap();
        assert!(d.value.abs() < 1e-10, "{d:?}");
        assert_eq!(sys.audit().d_omega_applications, 0);
    }
}
