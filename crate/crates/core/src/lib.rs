//! Numerical laboratory for random expanding circle maps driven by an
//! ε-dependent circle rotation.
//!
//! The fiber maps `T_{ω,ε}` form an analytic degree-2 family over the base
//! rotation `σ_ε`. Their transfer operators are discretized by Fourier
//! collocation; on top of that the crate computes equivariant densities
//! `h_{ω,ε}`, their ε-derivative (quenched linear response) and ω-derivative,
//! annealed averages and their derivatives, and the Green–Kubo asymptotic
//! variance together with its ε-derivative. Monte Carlo Birkhoff sums provide
//! an independent check of the variance and of the Gaussian moment ratios.

pub mod base;
pub mod circle;
pub mod equivariant;
pub mod error;
pub mod fiber;
pub mod fit;
pub mod harness;
pub mod moments;
pub mod response;
pub mod spectral;
pub mod system;

pub use base::{haar_quadrature, BaseMeasureFamily, HaarFamily, RotationBase, TiltedFamily};
pub use circle::CirclePoint;
pub use error::{Error, Result};
pub use fiber::{FiberParams, MapJet};
pub use spectral::{GridFunction, OperatorKind, OperatorMatrix, SpectralConfig, SpectralField};
pub use system::SkewSystem;
