//! Wasserstein gradient descent on particle positions:
//! `x_j <- x_j - gamma · ∇_{x_j} F(X)`.
//!
//! Updates and diagnostics draw from separate RNG substreams, so measuring a
//! run never changes its trajectory.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate_diagnostics, estimate_particle_gradient, EstimatorSettings};
use crate::kernel::KernelParams;
use crate::particles::{init_particles, ParticleState};
use crate::rng::{derive_seed, substream, tag};
use crate::target::TargetModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n_particles: usize,
    /// Number of descent steps `L`.
    pub iterations: usize,
    pub gamma0: f64,
    /// Fixed step size; `gamma0 · d` when absent.
    pub gamma: Option<f64>,
    /// Kernel bandwidth of the variational family; defaults to the target
    /// mixture's bandwidth.
    pub epsilon: Option<f64>,
    pub b_grad: usize,
    pub b_diag: usize,
    pub zeta: f64,
    pub seed: u64,
    pub record_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_particles: 10,
            iterations: 1000,
            gamma0: 0.01,
            gamma: None,
            epsilon: None,
            b_grad: 100,
            b_diag: 1000,
            zeta: 15.0,
            seed: 0,
            record_every: 1,
        }
    }
}

impl RunConfig {
    pub fn step_size(&self, dim: usize) -> f64 {
        self.gamma.unwrap_or(self.gamma0 * dim as f64)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.n_particles == 0 {
            return bad("n_particles must be >= 1");
        }
        let gamma = self.step_size(dim);
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return bad("step size must be finite and nonnegative");
        }
        if self.b_grad == 0 || self.b_diag == 0 {
            return bad("Monte Carlo batches must be >= 1");
        }
        if self.record_every == 0 {
            return bad("record_every must be >= 1");
        }
        if !(self.zeta >= 0.0) {
            return bad("zeta must be >= 0");
        }
        Ok(())
    }

    fn kernel_for(&self, t: &TargetModel) -> Result<KernelParams> {
        let eps = match (self.epsilon, t.mixture()) {
            (Some(e), _) => e,
            (None, Some(gm)) => gm.kernel().epsilon(),
            (None, None) => {
                return Err(Error::InvalidParameter(
                    "epsilon is required for targets without a mixture form".into(),
                ))
            }
        };
        KernelParams::new(eps, t.dim())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub iteration: usize,
    pub objective: f64,
    pub objective_se: f64,
    pub grad_norm_sq: f64,
    pub grad_norm_sq_se: f64,
    pub second_moment: f64,
    pub gamma: f64,
}

pub const DIAGNOSTICS_HEADER: [&str; 7] = [
    "iter",
    "objective",
    "objective_se",
    "grad_norm_sq",
    "grad_norm_sq_se",
    "second_moment",
    "gamma",
];

pub fn write_diagnostics_csv<W: Write>(records: &[DiagnosticsRecord], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(DIAGNOSTICS_HEADER)?;
    for r in records {
        out.write_record([
            r.iteration.to_string(),
            r.objective.to_string(),
            r.objective_se.to_string(),
            r.grad_norm_sq.to_string(),
            r.grad_norm_sq_se.to_string(),
            r.second_moment.to_string(),
            r.gamma.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_diagnostics_csv<R: Read>(reader: R) -> Result<Vec<DiagnosticsRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != DIAGNOSTICS_HEADER {
        return Err(Error::InvalidParameter(format!(
            "unexpected diagnostics header {header:?}"
        )));
    }
    let parse = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| Error::InvalidParameter(format!("bad number {s:?}: {e}")))
    };
    rdr.records()
        .map(|row| {
            let row = row?;
            Ok(DiagnosticsRecord {
                iteration: row[0]
                    .parse()
                    .map_err(|e| Error::InvalidParameter(format!("bad iteration: {e}")))?,
                objective: parse(&row[1])?,
                objective_se: parse(&row[2])?,
                grad_norm_sq: parse(&row[3])?,
                grad_norm_sq_se: parse(&row[4])?,
                second_moment: parse(&row[5])?,
                gamma: parse(&row[6])?,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<DiagnosticsRecord>,
    pub initial_state: ParticleState,
    pub final_state: ParticleState,
    pub gamma: f64,
}

/// One descent step with a fresh gradient estimate.
pub fn step(
    ps: &ParticleState,
    t: &TargetModel,
    gamma: f64,
    es: &EstimatorSettings,
) -> Result<ParticleState> {
    if gamma == 0.0 {
        return ps.displaced(0.0, &vec![0.0; ps.positions().len()]);
    }
    let grad = estimate_particle_gradient(ps, t, es)?;
    ps.displaced(gamma, &grad.per_particle)
}

fn record(
    ps: &ParticleState,
    t: &TargetModel,
    cfg: &RunConfig,
    gamma: f64,
) -> Result<DiagnosticsRecord> {
    let es = EstimatorSettings::new(
        cfg.b_diag,
        derive_seed(cfg.seed, &[tag::DIAGNOSTICS, ps.iteration() as u64]),
    );
    let diag = estimate_diagnostics(ps, t, &es)?;
    Ok(DiagnosticsRecord {
        iteration: ps.iteration(),
        objective: diag.objective.value,
        objective_se: diag.objective.std_error,
        grad_norm_sq: diag.grad_norm_sq.value,
        grad_norm_sq_se: diag.grad_norm_sq.std_error,
        second_moment: ps.second_moment(),
        gamma,
    })
}

/// Initial particles for `cfg`: i.i.d. `N(0, zeta² I)` from the init substream.
pub fn initial_state(cfg: &RunConfig, t: &TargetModel) -> Result<ParticleState> {
    let kernel = cfg.kernel_for(t)?;
    let mut rng = substream(cfg.seed, &[tag::INIT]);
    init_particles(cfg.n_particles, cfg.zeta, kernel, &mut rng)
}

/// Runs `cfg.iterations` steps from the configured initialization.
pub fn run(cfg: &RunConfig, t: &TargetModel) -> Result<RunOutput> {
    cfg.validate(t.dim())?;
    let init = initial_state(cfg, t)?;
    run_from(cfg, t, init)
}

/// Runs from an explicit initial state. Diagnostics are recorded at
/// iteration 0, every `record_every` steps and at the last step.
pub fn run_from(cfg: &RunConfig, t: &TargetModel, init: ParticleState) -> Result<RunOutput> {
    cfg.validate(t.dim())?;
    let gamma = cfg.step_size(t.dim());
    let mut records = vec![record(&init, t, cfg, gamma)?];
    let mut ps = init.clone();
    for l in 0..cfg.iterations {
        let es = EstimatorSettings::new(cfg.b_grad, derive_seed(cfg.seed, &[tag::UPDATE, l as u64]));
        ps = step(&ps, t, gamma, &es)?;
        let last = l + 1 == cfg.iterations;
        if ps.iteration() % cfg.record_every == 0 || last {
            records.push(record(&ps, t, cfg, gamma)?);
        }
    }
    Ok(RunOutput {
        records,
        initial_state: init,
        final_state: ps,
        gamma,
    })
}

/// Empirical second-moment bound `h_hat = max_l m2(mu_l)`.
pub fn empirical_moment_bound(records: &[DiagnosticsRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InsufficientRecords { needed: 1, got: 0 });
    }
    Ok(records.iter().map(|r| r.second_moment).fold(f64::NEG_INFINITY, f64::max))
}
