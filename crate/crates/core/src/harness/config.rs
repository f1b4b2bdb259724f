//! Experiment configuration: JSON on disk, dotted `key=value` overrides,
//! validation before anything runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::base::RotationBase;
use crate::error::{Error, Result};
use crate::fiber::FiberParams;
use crate::spectral::SpectralConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridsConfig {
    pub eps_grid: Vec<f64>,
    /// Base points for the quenched experiments.
    pub omega_samples: Vec<f64>,
    /// Haar nodes for integrals over the base.
    pub n_omega: usize,
}

impl Default for GridsConfig {
    fn default() -> Self {
        GridsConfig {
            eps_grid: (0..7).map(|i| 0.1 / f64::powi(2.0, i)).collect(),
            omega_samples: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            n_omega: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResponseConfig {
    #[serde(rename = "J")]
    pub j_max: usize,
    /// Tail bound above which the response series is flagged.
    pub tolerance: f64,
}

impl Default for ResponseConfig {
    fn default() -> Self {
        ResponseConfig {
            j_max: 60,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsConfig {
    #[serde(rename = "N_corr")]
    pub n_corr: usize,
    pub n_steps: usize,
    pub trials: usize,
    pub rng_seed: u64,
    /// Number of random `(ω, ε)` pairs for the Monte Carlo comparison.
    pub mc_points: usize,
    pub observable: ObservableChoice,
}

/// Observable family used by the variance and moment experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableChoice {
    /// `cos 2πx + ε·sin 2π(x + ω)`
    Default,
    /// `cos 2πx`
    Cosine,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        MomentsConfig {
            n_corr: 40,
            n_steps: 10_000,
            trials: 200,
            rng_seed: 20_240_917,
            mc_points: 5,
            observable: ObservableChoice::Default,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub fiber: FiberParams,
    pub base: RotationBase,
    pub spectral: SpectralConfig,
    pub grids: GridsConfig,
    pub response: ResponseConfig,
    pub moments: MomentsConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            fiber: FiberParams::default(),
            base: RotationBase::default(),
            spectral: SpectralConfig::default(),
            grids: GridsConfig::default(),
            response: ResponseConfig::default(),
            moments: MomentsConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::ConfigInvalid(msg.into())
}

impl ExperimentConfig {
    /// Reads a JSON file, applies overrides and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| invalid(format!("cannot read {}: {e}", p.display())))?;
                // missing sections take their defaults before overrides address them
                let partial: ExperimentConfig =
                    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
                serde_json::to_value(partial)?
            }
            None => serde_json::to_value(ExperimentConfig::default())?,
        };
        Self::from_value(value, overrides)
    }

    pub fn from_value(mut value: Value, overrides: &[String]) -> Result<Self> {
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: ExperimentConfig = serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.fiber.validate().map_err(|e| invalid(e.to_string()))?;
        self.spectral.validate().map_err(|e| invalid(e.to_string()))?;
        if !self.base.alpha0.is_finite() || !self.base.beta.is_finite() {
            return Err(invalid("base parameters must be finite"));
        }
        let g = &self.grids;
        if g.eps_grid.len() < 3 {
            return Err(invalid("eps_grid needs at least three values"));
        }
        for &e in &g.eps_grid {
            if e == 0.0 || !e.is_finite() || e.abs() > self.fiber.eps_max {
                return Err(invalid(format!(
                    "eps_grid value {e} outside 0 < |ε| ≤ {}",
                    self.fiber.eps_max
                )));
            }
        }
        if g.eps_grid.windows(2).any(|w| w[1].abs() >= w[0].abs()) {
            return Err(invalid("eps_grid must be strictly decreasing in |ε|"));
        }
        if g.omega_samples.is_empty() || g.omega_samples.iter().any(|w| !w.is_finite()) {
            return Err(invalid("omega_samples must be a non-empty list of finite values"));
        }
        if g.n_omega < 8 {
            return Err(invalid("n_omega must be ≥ 8"));
        }
        if self.response.j_max == 0 || !(self.response.tolerance > 0.0) {
            return Err(invalid("response needs J ≥ 1 and a positive tolerance"));
        }
        let m = &self.moments;
        if m.n_corr == 0 || m.n_steps < 1000 || m.trials < 100 || m.mc_points == 0 {
            return Err(invalid("moments needs N_corr ≥ 1, n_steps ≥ 1000, trials ≥ 100, mc_points ≥ 1"));
        }
        Ok(())
    }
}

/// `a.b.c=value`; the value is parsed as JSON when possible, else kept as a string.
fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(format!("override `{assignment}` is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| invalid(format!("`{key}`: `{part}` is not inside an object")))?;
        if i + 1 == parts.len() {
            if !obj.contains_key(*part) {
                return Err(invalid(format!("unknown key `{key}`")));
            }
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj
            .get_mut(*part)
            .ok_or_else(|| invalid(format!("unknown key `{key}`")))?;
    }
    unreachable!("split always yields at least one part")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(v["spectral"]["K"], 64);
        assert_eq!(v["moments"]["N_corr"], 40);
        assert_eq!(ExperimentConfig::from_value(v, &[]).unwrap(), c);
    }

    #[test]
    fn overrides() {
        let v = serde_json::to_value(ExperimentConfig::default()).unwrap();
        let c = ExperimentConfig::from_value(v.clone(), &["fiber.b=0".into(), "base.beta=0".into(), "output_dir=/tmp/x".into()]).unwrap();
        assert_eq!((c.fiber.b, c.base.beta), (0.0, 0.0));
        assert_eq!(c.output_dir, PathBuf::from("/tmp/x"));
        let c = ExperimentConfig::from_value(v.clone(), &["moments.observable=cosine".into()]).unwrap();
        assert_eq!(c.moments.observable, ObservableChoice::Cosine);
        assert!(ExperimentConfig::from_value(v.clone(), &["fiber.zz=1".into()]).is_err());
        assert!(ExperimentConfig::from_value(v.clone(), &["fiber.b".into()]).is_err());
    }

    #[test]
    fn invalid_configs() {
        let v = serde_json::to_value(ExperimentConfig::default()).unwrap();
        for o in ["spectral.N=100", "fiber.a=0.9", "grids.eps_grid=[0.2,0.1,0.05]", "grids.n_omega=4", "moments.trials=10"] {
            assert!(
                matches!(ExperimentConfig::from_value(v.clone(), &[o.into()]), Err(Error::ConfigInvalid(_))),
                "{o}"
            );
        }
    }
}
