//! The skew product `(ω, x) ↦ (σ_ε ω, T_{ω,ε} x)` together with its
//! discretization, and the transfer-operator cocycle along base orbits.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::base::RotationBase;
use crate::circle::CirclePoint;
use crate::error::Result;
use crate::fiber::FiberParams;
use crate::spectral::{BranchTable, SpectralConfig, SpectralField};

/// Branch tables kept before the cache is flushed.
const CACHE_CAPACITY: usize = 4096;

type CacheKey = (i64, i64);

fn quantize(v: f64) -> i64 {
    (v * 1e15).round() as i64
}

/// Counters of derivative-operator work, used to audit which terms a
/// pipeline actually assembled.
#[derive(Debug, Default)]
pub struct OperatorAudit {
    transfer: AtomicU64,
    d_eps: AtomicU64,
    d_omega: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AuditSnapshot {
    pub transfer_applications: u64,
    pub d_eps_applications: u64,
    pub d_omega_applications: u64,
}

impl OperatorAudit {
    pub fn snapshot(&self) -> AuditSnapshot {
        AuditSnapshot {
            transfer_applications: self.transfer.load(Ordering::Relaxed),
            d_eps_applications: self.d_eps.load(Ordering::Relaxed),
            d_omega_applications: self.d_omega.load(Ordering::Relaxed),
        }
    }
}

/// Fiber family, base rotation and discretization, plus a cache of branch
/// tables keyed by `(ω, ε)` quantized to 10⁻¹⁵.
pub struct SkewSystem {
    pub fiber: FiberParams,
    pub base: RotationBase,
    pub spectral: SpectralConfig,
    cache: Mutex<HashMap<CacheKey, Arc<BranchTable>>>,
    audit: OperatorAudit,
}

impl std::fmt::Debug for SkewSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SkewSystem")
            .field("fiber", &self.fiber)
            .field("base", &self.base)
            .field("spectral", &self.spectral)
            .finish()
    }
}

impl SkewSystem {
    pub fn new(fiber: FiberParams, base: RotationBase, spectral: SpectralConfig) -> Result<Self> {
        fiber.validate()?;
        spectral.validate()?;
        Ok(SkewSystem {
            fiber,
            base,
            spectral,
            cache: Mutex::new(HashMap::new()),
            audit: OperatorAudit::default(),
        })
    }

    /// Default fiber family, golden-mean base and `K = 64`, `N = 256`.
    pub fn with_defaults() -> Self {
        SkewSystem::new(FiberParams::default(), RotationBase::default(), SpectralConfig::default())
            .expect("default parameters are admissible")
    }

    #[inline]
    pub fn k_max(&self) -> usize {
        self.spectral.k_max
    }

    #[inline]
    pub fn grid(&self) -> usize {
        self.spectral.grid
    }

    pub fn audit(&self) -> AuditSnapshot {
        self.audit.snapshot()
    }

    /// `σ_ε^n ω`.
    #[inline]
    pub fn orbit(&self, eps: f64, omega: CirclePoint, n: i64) -> CirclePoint {
        self.base.advance(eps, omega, n)
    }

    pub fn branch_table(&self, omega: CirclePoint, eps: f64) -> Result<Arc<BranchTable>> {
        let key = (quantize(omega.value()), quantize(eps));
        if let Some(t) = self.cache.lock().expect("cache poisoned").get(&key) {
            return Ok(Arc::clone(t));
        }
        let table = Arc::new(BranchTable::build(&self.fiber, omega, eps, self.grid())?);
        let mut cache = self.cache.lock().expect("cache poisoned");
        if cache.len() >= CACHE_CAPACITY {
            cache.clear();
        }
        Ok(Arc::clone(cache.entry(key).or_insert(table)))
    }

    pub fn clear_cache(&self) {
        self.cache.lock().expect("cache poisoned").clear();
    }

    /// `L_{ω,ε} f`.
    pub fn apply_transfer(&self, omega: CirclePoint, eps: f64, f: &SpectralField) -> Result<SpectralField> {
        self.audit.transfer.fetch_add(1, Ordering::Relaxed);
        self.branch_table(omega, eps)?.apply_transfer(f)
    }

    /// `(s_ε·∂_εL + s_ω·∂_ωL)_{ω,ε} f`. A zero coefficient skips that
    /// operator entirely.
    pub fn apply_derivative(
        &self,
        omega: CirclePoint,
        eps: f64,
        s_eps: f64,
        s_omega: f64,
        f: &SpectralField,
    ) -> Result<SpectralField> {
        if s_eps != 0.0 {
            self.audit.d_eps.fetch_add(1, Ordering::Relaxed);
        }
        if s_omega != 0.0 {
            self.audit.d_omega.fetch_add(1, Ordering::Relaxed);
        }
        if s_eps == 0.0 && s_omega == 0.0 {
            return Ok(SpectralField::zeros(f.k_max()));
        }
        self.branch_table(omega, eps)?.apply_derivative(f, s_eps, s_omega)
    }

    /// The cocycle `L^n_{ω,ε} = L_{σ_ε^{n−1}ω,ε} ∘ … ∘ L_{ω,ε}` applied to `f`.
    pub fn cocycle_apply(&self, omega: CirclePoint, eps: f64, n: usize, f: &SpectralField) -> Result<SpectralField> {
        let mut out = f.clone();
        for i in 0..n {
            out = self.apply_transfer(self.orbit(eps, omega, i as i64), eps, &out)?;
        }
        Ok(out)
    }

    /// Same system with different fiber parameters or base; fresh cache.
    pub fn with_fiber(&self, fiber: FiberParams) -> Result<SkewSystem> {
        SkewSystem::new(fiber, self.base, self.spectral)
    }

    pub fn with_base(&self, base: RotationBase) -> Result<SkewSystem> {
        SkewSystem::new(self.fiber, base, self.spectral)
    }

    pub fn with_spectral(&self, spectral: SpectralConfig) -> Result<SkewSystem> {
        SkewSystem::new(self.fiber, self.base, spectral)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_steps_is_identity() {
        let sys = SkewSystem::with_defaults();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = SpectralField::random_real(64, &mut rng, |_| 1.0);
        assert_eq!(sys.cocycle_apply(CirclePoint::new(0.3), 0.01, 0, &f).unwrap(), f);
    }

    #[test]
    fn composition_is_associative() {
        let sys = SkewSystem::new(FiberParams::default(), RotationBase::default(), SpectralConfig::with_degree(32)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = SpectralField::random_real(32, &mut rng, |k| 1.0 / k as f64);
        let (w, e) = (CirclePoint::new(0.71), 0.04);
        let whole = sys.cocycle_apply(w, e, 12, &f).unwrap();
        let first = sys.cocycle_apply(w, e, 5, &f).unwrap();
        let rest = sys.cocycle_apply(sys.orbit(e, w, 5), e, 7, &first).unwrap();
        assert!(whole.max_abs_diff(&rest) <= 1e-12);
        assert!((whole.mass() - f.mass()).abs() < 1e-12);
    }

    #[test]
    fn mean_zero_fields_decay_along_the_cocycle() {
        let sys = SkewSystem::new(FiberParams::default(), RotationBase::default(), SpectralConfig::with_degree(32)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = SpectralField::random_real(32, &mut rng, |k| 1.0 / (k * k) as f64);
        g.set(0, num_complex::Complex64::new(0.0, 0.0));
        let w = CirclePoint::new(0.2);
        let n0 = g.w_norm(128).unwrap();
        let n30 = sys.cocycle_apply(w, 0.0, 30, &g).unwrap().w_norm(128).unwrap();
        assert!(n30 < 1e-6 * n0, "{n30} vs {n0}");
    }

    #[test]
    fn skipped_drift_operator_is_not_counted() {
        let sys = SkewSystem::with_defaults();
        let f = SpectralField::constant(64, 1.0);
        sys.apply_derivative(CirclePoint::ZERO, 0.0, 1.0, 0.0, &f).unwrap();
        let a = sys.audit();
        assert_eq!((a.d_eps_applications, a.d_omega_applications), (1, 0));
    }
}
