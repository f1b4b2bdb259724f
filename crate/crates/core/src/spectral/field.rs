use std::f64::consts::TAU;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;
use rand::Rng;

use super::transform::synthesize_complex;
use crate::error::Result;

/// Samples of a real function at the nodes `m/N`, `m = 0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Self {
        GridFunction { values }
    }

    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Self {
        GridFunction {
            values: (0..n).map(|m| f(m as f64 / n as f64)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Truncated Fourier series `Σ_{|k|≤K} c_k e^{2πikx}`.
///
/// Fields representing real functions satisfy `c_{−k} = conj(c_k)`; operator
/// columns built from single complex modes do not, so the type allows both.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    k_max: usize,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(k_max: usize) -> Self {
        SpectralField {
            k_max,
            coeffs: vec![Complex64::new(0.0, 0.0); 2 * k_max + 1],
        }
    }

    pub fn constant(k_max: usize, value: f64) -> Self {
        let mut f = SpectralField::zeros(k_max);
        f.coeffs[k_max] = Complex64::new(value, 0.0);
        f
    }

    /// The single complex exponential `e^{2πikx}`.
    pub fn mode(k_max: usize, k: i64) -> Self {
        let mut f = SpectralField::zeros(k_max);
        f.set(k, Complex64::new(1.0, 0.0));
        f
    }

    /// `amplitude·cos(2πkx)` as a field.
    pub fn cosine(k_max: usize, k: i64, amplitude: f64) -> Self {
        let mut f = SpectralField::zeros(k_max);
        f.set(k, Complex64::new(0.5 * amplitude, 0.0));
        f.set(-k, Complex64::new(0.5 * amplitude, 0.0));
        f
    }

    /// Coefficients ordered `k = −K..=K`.
    pub fn from_coeffs(k_max: usize, coeffs: Vec<Complex64>) -> Self {
        assert_eq!(coeffs.len(), 2 * k_max + 1, "coefficient count must be 2K+1");
        SpectralField { k_max, coeffs }
    }

    /// Random real field with `|c_k| ≲ envelope(|k|)` for `k ≠ 0` and a
    /// random mean in `[0, 1)`.
    pub fn random_real<R: Rng + ?Sized>(
        k_max: usize,
        rng: &mut R,
        envelope: impl Fn(usize) -> f64,
    ) -> Self {
        let mut f = SpectralField::zeros(k_max);
        f.set(0, Complex64::new(rng.random::<f64>(), 0.0));
        for k in 1..=k_max {
            let c = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                * envelope(k);
            f.set(k as i64, c);
            f.set(-(k as i64), c.conj());
        }
        f
    }

    #[inline]
    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Coefficient `c_k`; zero outside the stored band.
    #[inline]
    pub fn get(&self, k: i64) -> Complex64 {
        if k.unsigned_abs() as usize > self.k_max {
            return Complex64::new(0.0, 0.0);
        }
        self.coeffs[(k + self.k_max as i64) as usize]
    }

    #[inline]
    pub fn set(&mut self, k: i64, value: Complex64) {
        let idx = (k + self.k_max as i64) as usize;
        self.coeffs[idx] = value;
    }

    /// `(k, c_k)` pairs in increasing `k`.
    pub fn modes(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        let k0 = self.k_max as i64;
        self.coeffs
            .iter()
            .enumerate()
            .map(move |(i, &c)| (i as i64 - k0, c))
    }

    /// `∫ f dm`, the zeroth coefficient.
    #[inline]
    pub fn mass(&self) -> f64 {
        self.coeffs[self.k_max].re
    }

    /// Largest violation of `c_{−k} = conj(c_k)`.
    pub fn hermitian_defect(&self) -> f64 {
        (0..=self.k_max as i64)
            .map(|k| (self.get(-k) - self.get(k).conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Replaces the field by its real part.
    pub fn make_hermitian(&mut self) {
        for k in 0..=self.k_max as i64 {
            let c = 0.5 * (self.get(k) + self.get(-k).conj());
            self.set(k, c);
            self.set(-k, c.conj());
        }
    }

    /// Same function at another truncation degree (zero-padded or cut).
    pub fn resized(&self, k_max: usize) -> SpectralField {
        let mut out = SpectralField::zeros(k_max);
        for (k, c) in self.modes() {
            if k.unsigned_abs() as usize <= k_max {
                out.set(k, c);
            }
        }
        out
    }

    /// Complex value at `x`.
    pub fn eval(&self, x: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, TAU * x);
        let mut acc = Complex64::new(0.0, 0.0);
        for &c in self.coeffs.iter().rev() {
            acc = acc * z + c;
        }
        acc * Complex64::from_polar(1.0, -TAU * x * self.k_max as f64)
    }

    pub fn eval_real(&self, x: f64) -> f64 {
        self.eval(x).re
    }

    /// Value and first derivative at `x`.
    pub fn eval_with_derivative(&self, x: f64) -> (Complex64, Complex64) {
        let z = Complex64::from_polar(1.0, TAU * x);
        let k0 = self.k_max as i64;
        let mut v = Complex64::new(0.0, 0.0);
        let mut d = Complex64::new(0.0, 0.0);
        for (i, &c) in self.coeffs.iter().enumerate().rev() {
            let k = i as i64 - k0;
            v = v * z + c;
            d = d * z + c * Complex64::new(0.0, TAU * k as f64);
        }
        let shift = Complex64::from_polar(1.0, -TAU * x * self.k_max as f64);
        (v * shift, d * shift)
    }

    /// The derivative `f′` as a field.
    pub fn derivative(&self) -> SpectralField {
        let mut out = self.clone();
        for (i, c) in out.coeffs.iter_mut().enumerate() {
            let k = i as f64 - self.k_max as f64;
            *c *= Complex64::new(0.0, TAU * k);
        }
        out
    }

    /// `∫ f·g dm = Σ_k f_k g_{−k}`, real part.
    pub fn pair(&self, other: &SpectralField) -> f64 {
        let k = self.k_max.min(other.k_max) as i64;
        (-k..=k).map(|j| (self.get(j) * other.get(-j)).re).sum()
    }

    pub fn scaled(&self, s: f64) -> SpectralField {
        SpectralField {
            k_max: self.k_max,
            coeffs: self.coeffs.iter().map(|&c| c * s).collect(),
        }
    }

    /// `self += s·other`.
    pub fn axpy(&mut self, s: f64, other: &SpectralField) {
        assert_eq!(self.k_max, other.k_max, "degree mismatch");
        for (a, &b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b * s;
        }
    }

    /// Max coefficient-wise distance.
    pub fn max_abs_diff(&self, other: &SpectralField) -> f64 {
        let k = self.k_max.max(other.k_max) as i64;
        (-k..=k)
            .map(|j| (self.get(j) - other.get(j)).norm())
            .fold(0.0, f64::max)
    }

    /// Largest coefficient magnitude among the top `count` modes `|k| > K − count`;
    /// a resolution indicator.
    pub fn tail_magnitude(&self, count: usize) -> f64 {
        let start = self.k_max.saturating_sub(count) as i64 + 1;
        (start..=self.k_max as i64)
            .map(|k| self.get(k).norm().max(self.get(-k).norm()))
            .fold(0.0, f64::max)
    }

    /// Weak norm proxy: sup-norm on an `n`-point grid.
    pub fn w_norm(&self, n: usize) -> Result<f64> {
        Ok(synthesize_complex(self, n)?
            .iter()
            .fold(0.0, |m, z| m.max(z.norm())))
    }

    /// Strong norm proxy: `sup|f′| + sup|f|` on an `n`-point grid.
    pub fn s_norm(&self, n: usize) -> Result<f64> {
        Ok(self.w_norm(n)? + self.derivative().w_norm(n)?)
    }
}

impl Add for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl AddAssign<&SpectralField> for SpectralField {
    fn add_assign(&mut self, rhs: &SpectralField) {
        self.axpy(1.0, rhs);
    }
}

impl SubAssign<&SpectralField> for SpectralField {
    fn sub_assign(&mut self, rhs: &SpectralField) {
        self.axpy(-1.0, rhs);
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;
    fn mul(self, s: f64) -> SpectralField {
        self.scaled(s)
    }
}

impl Neg for &SpectralField {
    type Output = SpectralField;
    fn neg(self) -> SpectralField {
        self.scaled(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn evaluation_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = SpectralField::random_real(12, &mut rng, |k| 1.0 / k as f64);
        for x in [0.0, 0.17, 0.5, 0.93] {
            let direct: Complex64 = f
                .modes()
                .map(|(k, c)| c * Complex64::from_polar(1.0, TAU * k as f64 * x))
                .sum();
            let (v, d) = f.eval_with_derivative(x);
            assert!((f.eval(x) - direct).norm() < 1e-13);
            assert!((v - direct).norm() < 1e-13);
            assert!((d - f.derivative().eval(x)).norm() < 1e-11);
            assert!(direct.im.abs() < 1e-13);
        }
    }

    #[test]
    fn cosine_field_and_norms() {
        let f = SpectralField::cosine(4, 1, 2.0);
        assert!((f.eval_real(0.0) - 2.0).abs() < 1e-15);
        assert!((f.w_norm(16).unwrap() - 2.0).abs() < 1e-14);
        assert!((f.s_norm(16).unwrap() - 2.0 - 2.0 * TAU).abs() < 1e-12);
        assert!((f.pair(&f) - 2.0).abs() < 1e-15);
        assert_eq!(f.hermitian_defect(), 0.0);
    }

    #[test]
    fn resize_and_tail() {
        let f = SpectralField::cosine(8, 8, 1.0);
        assert!((f.tail_magnitude(1) - 0.5).abs() < 1e-16);
        assert_eq!(f.resized(4).tail_magnitude(4), 0.0);
        assert_eq!(f.resized(10).get(8), f.get(8));
    }

    proptest! {
        #[test]
        fn pairing_is_integral_of_product(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = SpectralField::random_real(6, &mut rng, |_| 1.0);
            let g = SpectralField::random_real(6, &mut rng, |_| 1.0);
            // the trapezoid rule on 64 nodes is exact for degree-12 products
            let n = 64;
            let quad: f64 = (0..n)
                .map(|m| { let x = m as f64 / n as f64; f.eval_real(x) * g.eval_real(x) })
                .sum::<f64>() / n as f64;
            prop_assert!((quad - f.pair(&g)).abs() < 1e-13);
            prop_assert!((f.pair(&g) - g.pair(&f)).abs() < 1e-14);
        }
    }
}
