//! Flat TOML experiment configuration.

use std::path::Path;

use mollivi_core::estimators::CmuProposal;
use mollivi_core::{RunConfig, TargetSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable supplying the base seed when neither `seed` nor
/// `seeds` is configured.
pub const SEED_ENV: &str = "MOLLIVI_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Target atoms `N`.
    pub num_components: usize,
    pub n_particles: usize,
    /// Spread of the target atoms.
    pub sigma: f64,
    /// Spread of the initial particles.
    pub zeta: f64,
    /// Bandwidth is `epsilon0 · sqrt(d)`.
    pub epsilon0: f64,
    /// Step size is `gamma0 · d` unless `gamma` is set.
    pub gamma0: f64,
    pub gamma: Option<f64>,
    pub iterations: usize,
    pub b_grad: usize,
    pub b_diag: usize,
    pub b_kl: usize,
    pub record_every: usize,
    pub repeats: usize,
    pub dims: Vec<usize>,
    /// Base seed; seeds are `seed, seed+1, ..., seed+repeats-1`.
    pub seed: Option<u64>,
    /// Explicit seed list; overrides `seed` and `repeats`.
    pub seeds: Option<Vec<u64>>,

    pub n_grid: Vec<usize>,
    pub cmu_proposal: CmuProposal,

    /// `check-descent` uses `gamma = step_factor / M`.
    pub step_factor: f64,
    pub max_attempts: usize,

    pub rate_grid_lo: usize,
    pub rate_grid_points: usize,
    pub slope_lo: f64,
    pub slope_hi: f64,
    /// `second-moment` passes when `max_l m2 <= moment_ratio · m2(0)`.
    pub moment_ratio: f64,

    pub hessian_s: f64,
    pub hessian_a: f64,
    pub hessian_eps: Vec<f64>,
    pub hessian_dt: f64,
    pub hessian_min_ratio: f64,
    pub hessian_fd_tolerance: f64,

    pub lemma_points: usize,
    pub harmonic_n_max: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            num_components: 100,
            n_particles: 10,
            sigma: 5.0,
            zeta: 15.0,
            epsilon0: 1.0,
            gamma0: 0.01,
            gamma: None,
            iterations: 1000,
            b_grad: 100,
            b_diag: 1000,
            b_kl: 1000,
            record_every: 1,
            repeats: 50,
            dims: vec![1, 2, 4, 8],
            seed: None,
            seeds: None,
            n_grid: vec![1, 2, 5, 10, 20, 50, 100],
            cmu_proposal: CmuProposal::Target,
            step_factor: 0.5,
            max_attempts: 5,
            rate_grid_lo: 100,
            rate_grid_points: 25,
            slope_lo: -1.25,
            slope_hi: -0.75,
            moment_ratio: 3.0,
            hessian_s: 2.0,
            hessian_a: 1.0,
            hessian_eps: vec![0.5, 0.25, 0.125],
            hessian_dt: 1e-3,
            hessian_min_ratio: 3.5,
            hessian_fd_tolerance: 1e-4,
            lemma_points: 10_000,
            harmonic_n_max: 1_000_000,
        }
    }
}

impl ExperimentConfig {
    /// Every key accepted in a config file.
    pub fn known_keys() -> Vec<String> {
        match serde_json::to_value(ExperimentConfig::default()) {
            Ok(serde_json::Value::Object(map)) => map.keys().cloned().collect(),
            _ => unreachable!("config serializes to an object"),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let known = Self::known_keys();
        let unknown: Vec<String> = table.keys().filter(|k| !known.contains(k)).cloned().collect();
        if !unknown.is_empty() {
            return Err(CliError::UnknownKeys(unknown));
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.dims.is_empty() || self.dims.contains(&0) {
            return bad("dims must be a nonempty list of positive integers");
        }
        if self.repeats == 0 {
            return bad("repeats must be >= 1");
        }
        if matches!(&self.seeds, Some(s) if s.is_empty()) {
            return bad("seeds must not be empty");
        }
        if self.n_particles == 0 || self.num_components == 0 {
            return bad("n_particles and num_components must be >= 1");
        }
        if self.b_grad == 0 || self.b_diag == 0 || self.b_kl == 0 || self.record_every == 0 {
            return bad("batches and record_every must be >= 1");
        }
        if !(self.sigma > 0.0 && self.epsilon0 > 0.0 && self.zeta >= 0.0) {
            return bad("need sigma > 0, epsilon0 > 0 and zeta >= 0");
        }
        Ok(())
    }

    /// Seeds in run order, resolving `seeds`, then `seed`, then the
    /// environment, then zero as the base.
    pub fn resolve_seeds(&self, env_seed: Option<&str>) -> Result<Vec<u64>, CliError> {
        if let Some(s) = &self.seeds {
            return Ok(s.clone());
        }
        let base = match (self.seed, env_seed) {
            (Some(s), _) => s,
            (None, Some(v)) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an integer, got {v:?}")))?,
            (None, None) => 0,
        };
        Ok((0..self.repeats as u64).map(|i| base.wrapping_add(i)).collect())
    }

    pub fn target_spec(&self, dim: usize, seed: u64) -> TargetSpec {
        TargetSpec {
            num_components: self.num_components,
            sigma: self.sigma,
            epsilon0: self.epsilon0,
            dim,
            seed,
        }
    }

    pub fn run_config(&self, seed: u64) -> RunConfig {
        RunConfig {
            n_particles: self.n_particles,
            iterations: self.iterations,
            gamma0: self.gamma0,
            gamma: self.gamma,
            epsilon: None,
            b_grad: self.b_grad,
            b_diag: self.b_diag,
            zeta: self.zeta,
            seed,
            record_every: self.record_every,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_all_listed() {
        let err = ExperimentConfig::from_toml_str("iterations = 3\nfoo = 1\nbar = 2\n").unwrap_err();
        match err {
            CliError::UnknownKeys(keys) => assert_eq!(keys, vec!["bar", "foo"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = ExperimentConfig::from_toml_str("iterations = 3\ndims = [1]\n").unwrap();
        assert_eq!(c.iterations, 3);
        assert_eq!(c.dims, vec![1]);
        assert_eq!(c.num_components, 100);
    }

    #[test]
    fn seed_resolution_order() {
        let mut c = ExperimentConfig { repeats: 3, ..Default::default() };
        assert_eq!(c.resolve_seeds(None).unwrap(), vec![0, 1, 2]);
        assert_eq!(c.resolve_seeds(Some("7")).unwrap(), vec![7, 8, 9]);
        assert!(c.resolve_seeds(Some("x")).is_err());
        c.seed = Some(4);
        assert_eq!(c.resolve_seeds(Some("7")).unwrap(), vec![4, 5, 6]);
        c.seeds = Some(vec![11]);
        assert_eq!(c.resolve_seeds(Some("7")).unwrap(), vec![11]);
    }
}
