//! Fourier-collocation discretization of the fiber transfer operators.
//!
//! Real functions on the circle are stored as truncated Fourier series of
//! degree `K` ([`SpectralField`]); operators are applied by collocation on an
//! `N`-point grid (evaluate at inverse-branch points, sum, project back).

mod field;
mod operator;
mod transform;

pub use field::{GridFunction, SpectralField};
pub use operator::{
    assemble_d_eps, assemble_d_omega, assemble_transfer, BranchTable, OperatorKind,
    OperatorMatrix,
};
pub use transform::{analyze, analyze_complex, multiply, synthesize, synthesize_complex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Truncation degree and collocation grid size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    #[serde(rename = "K")]
    pub k_max: usize,
    #[serde(rename = "N")]
    pub grid: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            k_max: 64,
            grid: 256,
        }
    }
}

impl SpectralConfig {
    /// Degree `K` with the recommended oversampling `N = 4K`.
    pub fn with_degree(k_max: usize) -> Self {
        SpectralConfig {
            k_max,
            grid: 4 * k_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alias(self.grid, self.k_max)
    }
}

pub(crate) fn check_alias(grid: usize, degree: usize) -> Result<()> {
    let need = 2 * degree + 2;
    if grid < need {
        return Err(Error::Aliasing {
            grid,
            degree,
            need,
        });
    }
    Ok(())
}
