use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{check_alias, GridFunction, SpectralField};
use crate::error::Result;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn forward_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

fn inverse_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// Coefficients `k = −K..K` of the trigonometric interpolant of `values`
/// sampled at the nodes `m/N`.
pub fn analyze_complex(values: &[Complex64], k_max: usize) -> Result<SpectralField> {
    let n = values.len();
    check_alias(n, k_max)?;
    let mut buf = values.to_vec();
    forward_plan(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    let coeffs = (-(k_max as i64)..=k_max as i64)
        .map(|k| buf[k.rem_euclid(n as i64) as usize] * scale)
        .collect();
    Ok(SpectralField::from_coeffs(k_max, coeffs))
}

pub fn analyze(grid: &GridFunction, k_max: usize) -> Result<SpectralField> {
    let values: Vec<Complex64> = grid.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut f = analyze_complex(&values, k_max)?;
    f.make_hermitian();
    Ok(f)
}

/// Complex values of `f` at the `n` nodes `m/n`.
pub fn synthesize_complex(f: &SpectralField, n: usize) -> Result<Vec<Complex64>> {
    check_alias(n, f.k_max())?;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (k, c) in f.modes() {
        buf[k.rem_euclid(n as i64) as usize] = c;
    }
    inverse_plan(n).process(&mut buf);
    Ok(buf)
}

/// Real values of `f` at the `n` nodes `m/n`.
pub fn synthesize(f: &SpectralField, n: usize) -> Result<GridFunction> {
    let values = synthesize_complex(f, n)?;
    Ok(GridFunction::new(values.into_iter().map(|z| z.re).collect()))
}

/// Pointwise product projected back to degree `max(K_f, K_g)`, computed on an
/// `n`-point grid. Exact when `n ≥ 3·max(K) + 1`.
pub fn multiply(f: &SpectralField, g: &SpectralField, n: usize) -> Result<SpectralField> {
    let k = f.k_max().max(g.k_max());
    let fv = synthesize_complex(f, n)?;
    let gv = synthesize_complex(g, n)?;
    let prod: Vec<Complex64> = fv.iter().zip(&gv).map(|(a, b)| a * b).collect();
    analyze_complex(&prod, k)
}
