use num_complex::Complex64;

use super::{analyze_complex, check_alias, SpectralField};
use crate::circle::{wrap, CirclePoint};
use crate::error::{Error, Result};
use crate::fiber::FiberParams;

/// One inverse-branch point `y` of a collocation node, with the weights the
/// transfer operator and its parameter derivatives need there.
///
/// For a parameter `p`, `∂_p [g(y)/T′(y)] = A_p·g′(y) + B_p·g(y)` with
/// `y_p = −∂_pT/T′`, `A_p = y_p/T′` and `B_p = −(∂_pT′ + T″·y_p)/T′²`.
#[derive(Debug, Clone, Copy)]
pub struct BranchPoint {
    pub y: f64,
    /// `1/T′(y)`.
    pub weight: f64,
    pub a_eps: f64,
    pub b_eps: f64,
    pub a_omega: f64,
    pub b_omega: f64,
}

/// Inverse branches of `T_{ω,ε}` at every node `m/N`, two per node in
/// branch order.
#[derive(Debug, Clone)]
pub struct BranchTable {
    pub omega: CirclePoint,
    pub eps: f64,
    grid: usize,
    points: Vec<BranchPoint>,
}

impl BranchTable {
    pub fn build(params: &FiberParams, omega: CirclePoint, eps: f64, grid: usize) -> Result<Self> {
        // range and expansion checks happen once here rather than per node
        params.inverse_branches(omega, eps, CirclePoint::ZERO)?;
        let w = omega.value();
        let mut points = Vec::with_capacity(2 * grid);
        for m in 0..grid {
            let x = m as f64 / grid as f64;
            for offset in [0.0, 1.0] {
                let y = wrap(params.solve_lift(w, eps, x + offset)?);
                let jet = params.jet_unchecked(w, eps, y);
                let inv = 1.0 / jet.dt_dx;
                let y_eps = -jet.dt_deps * inv;
                let y_omega = -jet.dt_domega * inv;
                points.push(BranchPoint {
                    y,
                    weight: inv,
                    a_eps: y_eps * inv,
                    b_eps: -(jet.d2t_dx_deps + jet.d2t_dx2 * y_eps) * inv * inv,
                    a_omega: y_omega * inv,
                    b_omega: -(jet.d2t_dx_domega + jet.d2t_dx2 * y_omega) * inv * inv,
                });
            }
        }
        Ok(BranchTable {
            omega,
            eps,
            grid,
            points,
        })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn points(&self) -> &[BranchPoint] {
        &self.points
    }

    /// `(L g)(x_m) = Σ_y g(y)/T′(y)`, projected back to the degree of `g`.
    pub fn apply_transfer(&self, g: &SpectralField) -> Result<SpectralField> {
        let values = self.collocate(g, |p| (p.weight, 0.0));
        analyze_complex(&values, g.k_max())
    }

    /// `(s_ε ∂_εL + s_ω ∂_ωL) g`, projected back to the degree of `g`.
    pub fn apply_derivative(&self, g: &SpectralField, s_eps: f64, s_omega: f64) -> Result<SpectralField> {
        let values = self.collocate(g, |p| {
            (
                s_eps * p.b_eps + s_omega * p.b_omega,
                s_eps * p.a_eps + s_omega * p.a_omega,
            )
        });
        analyze_complex(&values, g.k_max())
    }

    /// Node values `Σ_y [c_g(y)·g(y) + c_d(y)·g′(y)]` for a per-point kernel
    /// `(c_g, c_d)`.
    fn collocate(&self, g: &SpectralField, kernel: impl Fn(&BranchPoint) -> (f64, f64)) -> Vec<Complex64> {
        let mut values = vec![Complex64::new(0.0, 0.0); self.grid];
        for (m, pair) in self.points.chunks_exact(2).enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for p in pair {
                let (cv, cd) = kernel(p);
                if cd == 0.0 {
                    if cv != 0.0 {
                        acc += g.eval(p.y) * cv;
                    }
                } else {
                    let (v, d) = g.eval_with_derivative(p.y);
                    acc += v * cv + d * cd;
                }
            }
            values[m] = acc;
        }
        values
    }

    /// Dense matrix of the kernel acting on degree-`K` fields; column `k` is
    /// the projection of the operator applied to `e^{2πikx}`.
    fn assemble(&self, k_max: usize, kernel: impl Fn(&BranchPoint) -> (f64, f64)) -> Result<Vec<Complex64>> {
        check_alias(self.grid, k_max)?;
        let dim = 2 * k_max + 1;
        let mut columns = vec![Complex64::new(0.0, 0.0); dim * self.grid];
        for (m, pair) in self.points.chunks_exact(2).enumerate() {
            for p in pair {
                let (cv, cd) = kernel(p);
                let z = Complex64::from_polar(1.0, std::f64::consts::TAU * p.y);
                let mut zk = Complex64::from_polar(1.0, -std::f64::consts::TAU * p.y * k_max as f64);
                for col in 0..dim {
                    let k = col as f64 - k_max as f64;
                    let c = Complex64::new(cv, std::f64::consts::TAU * k * cd);
                    columns[col * self.grid + m] += zk * c;
                    zk *= z;
                }
            }
        }
        let mut entries = vec![Complex64::new(0.0, 0.0); dim * dim];
        for col in 0..dim {
            let field = analyze_complex(&columns[col * self.grid..(col + 1) * self.grid], k_max)?;
            for (row, &c) in field.coeffs().iter().enumerate() {
                entries[row * dim + col] = c;
            }
        }
        Ok(entries)
    }

    pub fn transfer_matrix(&self, k_max: usize) -> Result<OperatorMatrix> {
        let entries = self.assemble(k_max, |p| (p.weight, 0.0))?;
        Ok(OperatorMatrix::new(k_max, entries, OperatorKind::Transfer, self.omega, self.eps))
    }

    pub fn derivative_matrix(&self, k_max: usize, s_eps: f64, s_omega: f64, kind: OperatorKind) -> Result<OperatorMatrix> {
        let entries = self.assemble(k_max, |p| {
            (
                s_eps * p.b_eps + s_omega * p.b_omega,
                s_eps * p.a_eps + s_omega * p.a_omega,
            )
        })?;
        Ok(OperatorMatrix::new(k_max, entries, kind, self.omega, self.eps))
    }
}

/// What a dense operator discretizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Transfer,
    DEps,
    DOmega,
    /// Total ε-derivative along a drifting base orbit.
    Lambda,
}

/// A `(2K+1)×(2K+1)` operator on Fourier coefficients, row-major with rows
/// and columns indexed `k = −K..=K`.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    k_max: usize,
    entries: Vec<Complex64>,
    pub kind: OperatorKind,
    pub omega: CirclePoint,
    pub eps: f64,
}

impl OperatorMatrix {
    pub fn new(k_max: usize, entries: Vec<Complex64>, kind: OperatorKind, omega: CirclePoint, eps: f64) -> Self {
        let dim = 2 * k_max + 1;
        assert_eq!(entries.len(), dim * dim);
        OperatorMatrix {
            k_max,
            entries,
            kind,
            omega,
            eps,
        }
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn dim(&self) -> usize {
        2 * self.k_max + 1
    }

    /// Entry at row `j`, column `k` (both in `−K..=K`).
    pub fn entry(&self, j: i64, k: i64) -> Complex64 {
        let off = self.k_max as i64;
        self.entries[((j + off) as usize) * self.dim() + (k + off) as usize]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn apply(&self, f: &SpectralField) -> Result<SpectralField> {
        if f.k_max() != self.k_max {
            return Err(Error::NumericalFailure(format!(
                "operator of degree {} applied to field of degree {}",
                self.k_max,
                f.k_max()
            )));
        }
        let dim = self.dim();
        let coeffs = f.coeffs();
        let out = self
            .entries
            .chunks_exact(dim)
            .map(|row| row.iter().zip(coeffs).map(|(a, b)| a * b).sum())
            .collect();
        Ok(SpectralField::from_coeffs(self.k_max, out))
    }

    /// `(self − other)/scale`, entry-wise.
    pub fn difference(&self, other: &OperatorMatrix, scale: f64) -> OperatorMatrix {
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b) / scale)
            .collect();
        OperatorMatrix::new(self.k_max, entries, self.kind, self.omega, self.eps)
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// `max |self − other| / max |other|` over entries.
    pub fn relative_error(&self, reference: &OperatorMatrix) -> f64 {
        let diff = self
            .entries
            .iter()
            .zip(&reference.entries)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
        diff / reference.max_entry().max(f64::MIN_POSITIVE)
    }
}

/// Collocation matrix of `L_{ω,ε}` at degree `K` on an `N`-point grid.
pub fn assemble_transfer(params: &FiberParams, omega: CirclePoint, eps: f64, k_max: usize, grid: usize) -> Result<OperatorMatrix> {
    check_alias(grid, k_max)?;
    BranchTable::build(params, omega, eps, grid)?.transfer_matrix(k_max)
}

/// Collocation matrix of `∂L_{ω,ε}/∂ε`.
pub fn assemble_d_eps(params: &FiberParams, omega: CirclePoint, eps: f64, k_max: usize, grid: usize) -> Result<OperatorMatrix> {
    check_alias(grid, k_max)?;
    BranchTable::build(params, omega, eps, grid)?.derivative_matrix(k_max, 1.0, 0.0, OperatorKind::DEps)
}

/// Collocation matrix of `∂L_{ω,ε}/∂ω`.
pub fn assemble_d_omega(params: &FiberParams, omega: CirclePoint, eps: f64, k_max: usize, grid: usize) -> Result<OperatorMatrix> {
    check_alias(grid, k_max)?;
    BranchTable::build(params, omega, eps, grid)?.derivative_matrix(k_max, 0.0, 1.0, OperatorKind::DOmega)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{synthesize, GridFunction};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn cp(v: f64) -> CirclePoint {
        CirclePoint::new(v)
    }

    /// Lg(x) by summing over preimages found independently of the branch
    /// table (bisection on the lift, no Newton).
    fn branch_sum(p: &FiberParams, w: f64, e: f64, x: f64, g: impl Fn(f64) -> f64) -> f64 {
        let mut total = 0.0;
        for offset in [0.0, 1.0] {
            let (mut lo, mut hi) = (-1.0, 2.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if p.lift(w, e, mid) < x + offset {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let y = 0.5 * (lo + hi);
            let slope = (p.lift(w, e, y + 1e-6) - p.lift(w, e, y - 1e-6)) / 2e-6;
            let jet = p.jet_unchecked(w, e, y);
            assert!((slope - jet.dt_dx).abs() < 1e-6);
            total += g(y) / jet.dt_dx;
        }
        total
    }

    #[test]
    fn doubling_preserves_lebesgue() {
        let m = assemble_transfer(&FiberParams::doubling(), cp(0.0), 0.0, 8, 32).unwrap();
        let one = SpectralField::constant(8, 1.0);
        assert!(m.apply(&one).unwrap().max_abs_diff(&one) < 1e-15);
        // even modes halve their frequency, odd modes are annihilated
        let out = m.apply(&SpectralField::mode(8, 6)).unwrap();
        assert!(out.max_abs_diff(&SpectralField::mode(8, 3)) < 1e-15);
        assert!(m.apply(&SpectralField::mode(8, 5)).unwrap().max_abs_diff(&SpectralField::zeros(8)) < 1e-15);
    }

    #[test]
    fn mass_is_preserved() {
        let p = FiberParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let table = BranchTable::build(&p, cp(0.41), -0.07, 256).unwrap();
        let m = table.transfer_matrix(64).unwrap();
        for _ in 0..100 {
            let g = SpectralField::random_real(64, &mut rng, |_| 1.0);
            let lg = m.apply(&g).unwrap();
            assert!((lg.mass() - g.mass()).abs() <= 1e-12);
            let lg2 = table.apply_transfer(&g).unwrap();
            assert!(lg.max_abs_diff(&lg2) < 1e-13);
            assert!(lg2.hermitian_defect() < 1e-14);
        }
    }

    #[test]
    fn matches_direct_branch_sum() {
        let p = FiberParams::default();
        let (w, e) = (0.3, 0.05);
        let g = |x: f64| (TAU * x).cos().exp();
        let gf = super::super::analyze(&GridFunction::from_fn(128, g), 32).unwrap();
        let m = assemble_transfer(&p, cp(w), e, 32, 128).unwrap();
        let lg = synthesize(&m.apply(&gf).unwrap(), 256).unwrap();
        for (i, v) in lg.values.iter().enumerate() {
            let x = i as f64 / 256.0;
            let direct = branch_sum(&p, w, e, x, g);
            assert!((v - direct).abs() < 1e-10, "x={x}: {v} vs {direct}");
        }
    }

    #[test]
    fn derivative_operators_vanish_without_dependence() {
        let no_eps = FiberParams { b: 0.0, ..FiberParams::default() };
        let d = assemble_d_eps(&no_eps, cp(0.2), 0.03, 16, 64).unwrap();
        assert!(d.max_entry() < 1e-13);
        let no_omega = FiberParams { c: 0.0, ..FiberParams::default() };
        let d = assemble_d_omega(&no_omega, cp(0.2), 0.03, 16, 64).unwrap();
        assert!(d.max_entry() < 1e-13);
    }

    #[test]
    fn derivative_operators_match_finite_differences() {
        let p = FiberParams::default();
        let h = 1e-4;
        // at K ≥ 32 the h² truncation of the difference quotient alone exceeds 10⁻⁶
        let (k, n) = (16, 64);
        for &(w, e) in &[(0.3, 0.05), (0.77, -0.02), (0.05, 0.0)] {
            let d = assemble_d_eps(&p, cp(w), e, k, n).unwrap();
            let fd = assemble_transfer(&p, cp(w), e + h, k, n)
                .unwrap()
                .difference(&assemble_transfer(&p, cp(w), e - h, k, n).unwrap(), 2.0 * h);
            assert!(d.relative_error(&fd) < 1e-6, "d_eps: {}", d.relative_error(&fd));
            let d = assemble_d_omega(&p, cp(w), e, k, n).unwrap();
            let fd = assemble_transfer(&p, cp(w + h), e, k, n)
                .unwrap()
                .difference(&assemble_transfer(&p, cp(w - h), e, k, n).unwrap(), 2.0 * h);
            assert!(d.relative_error(&fd) < 1e-6, "d_omega: {}", d.relative_error(&fd));
        }
    }

    #[test]
    fn finite_difference_gap_is_pure_truncation() {
        // halving h must cut the discrepancy by 4 when the analytic operator is exact
        let p = FiberParams::default();
        let (w, e, k, n) = (0.3, 0.05, 64, 256);
        let d = assemble_d_omega(&p, cp(w), e, k, n).unwrap();
        let err = |h: f64| {
            let fd = assemble_transfer(&p, cp(w + h), e, k, n)
                .unwrap()
                .difference(&assemble_transfer(&p, cp(w - h), e, k, n).unwrap(), 2.0 * h);
            d.relative_error(&fd)
        };
        let ratio = err(1e-4) / err(5e-5);
        assert!((ratio - 4.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn derivative_images_have_zero_mass() {
        let p = FiberParams::default();
        let table = BranchTable::build(&p, cp(0.6), 0.02, 256).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let g = SpectralField::random_real(64, &mut rng, |_| 1.0);
            let s_eps: f64 = rng.random_range(-2.0..2.0);
            let s_omega: f64 = rng.random_range(-2.0..2.0);
            let dg = table.apply_derivative(&g, s_eps, s_omega).unwrap();
            assert!(dg.mass().abs() <= 1e-12, "{}", dg.mass());
        }
    }

    #[test]
    fn aliasing_grid_rejected() {
        assert!(matches!(
            assemble_transfer(&FiberParams::default(), cp(0.0), 0.0, 16, 33),
            Err(Error::Aliasing { .. })
        ));
    }
}
