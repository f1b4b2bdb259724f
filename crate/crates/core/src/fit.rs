//! Least-squares rate fits shared by the convergence experiments.

use crate::error::{Error, Result};

/// Result of an ordinary least-squares line fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square deviation of the data from the line.
    pub residual: f64,
}

/// Fits `y = slope·x + intercept`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() {
        return Err(Error::DegenerateInput(format!(
            "{} abscissae vs {} ordinates",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateInput("need at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateInput("all abscissae coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    Ok(LineFit {
        slope,
        intercept,
        residual: (ss / n).sqrt(),
    })
}

/// Least squares in log-log coordinates: `log y = slope·log x + intercept`.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() < 3 {
        return Err(Error::DegenerateInput("need at least three points".into()));
    }
    if let Some(bad) = xs.iter().chain(ys).find(|v| !(**v > 0.0)) {
        return Err(Error::DegenerateInput(format!("non-positive value {bad}")));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    fit_line(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_power_laws() {
        let xs = [0.1, 0.05, 0.025, 0.0125];
        let f = fit_loglog(&xs, &xs).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12 && f.residual < 1e-12);
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        assert!((fit_loglog(&xs, &sq).unwrap().slope - 2.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_power_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let xs: Vec<f64> = (0..8).map(|i| 0.1 * 0.5f64.powi(i)).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| 3.0 * x.powf(1.5) * (1.0 + 1e-3 * rng.random_range(-1.0..1.0)))
            .collect();
        let f = fit_loglog(&xs, &ys).unwrap();
        assert!((f.slope - 1.5).abs() <= 0.01);
        assert!((f.intercept - 3f64.ln()).abs() < 0.05);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(fit_loglog(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(matches!(
            fit_loglog(&[1.0, 2.0, 3.0], &[1.0, 0.0, 3.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(fit_line(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }
}
