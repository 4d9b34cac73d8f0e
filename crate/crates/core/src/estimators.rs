//! Monte Carlo estimators for the mollified relative entropy and its
//! Wasserstein gradient.
//!
//! Every expectation has the form `E_{y ~ N(x, eps² I)}[f(y)]` for a particle
//! or atom location `x`. Each location draws its own normals from a
//! substream keyed by `(settings.seed, location index)`, so the estimates are
//! deterministic and independent of evaluation order. Locations are
//! processed in parallel; reductions run in index order.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernel::{sq_dist, GaussianMixture, KernelParams};
use crate::particles::ParticleState;
use crate::rng::{derive_seed, substream};
use crate::stats::{pairwise_sum, RunningMoments};
use crate::target::{TargetKind, TargetModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorSettings {
    /// Monte Carlo samples per expectation.
    pub batch: usize,
    pub seed: u64,
    /// Pair every normal draw `z` with `-z`. Requires an even batch.
    pub antithetic: bool,
}

impl EstimatorSettings {
    pub fn new(batch: usize, seed: u64) -> Self {
        EstimatorSettings {
            batch,
            seed,
            antithetic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidParameter("Monte Carlo batch must be >= 1".into()));
        }
        if self.antithetic && self.batch % 2 != 0 {
            return Err(Error::InvalidParameter(
                "antithetic sampling needs an even batch".into(),
            ));
        }
        Ok(())
    }

    /// Same settings with the seed advanced along `path`.
    pub fn derived(&self, path: &[u64]) -> Self {
        EstimatorSettings {
            seed: derive_seed(self.seed, path),
            ..*self
        }
    }

    fn unit(&self) -> usize {
        if self.antithetic {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Squared-norm estimate. `value` is the plug-in estimator (squared norm of
/// the inner Monte Carlo mean); `bias` is its jackknife bias estimate, which
/// is not subtracted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradNormEstimate {
    pub value: f64,
    pub std_error: f64,
    pub bias: f64,
}

/// Mean and per-coordinate standard error of a vector expectation.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorEstimate {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

/// Estimate of `∇_{x_j} F` for every particle, row-major `n×d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub per_particle: Vec<f64>,
    pub std_error: Vec<f64>,
    dim: usize,
}

impl GradientEstimate {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.per_particle.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.per_particle.is_empty()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.per_particle[j * self.dim..(j + 1) * self.dim]
    }

    pub fn std_error_row(&self, j: usize) -> &[f64] {
        &self.std_error[j * self.dim..(j + 1) * self.dim]
    }
}

/// Objective and squared gradient norm evaluated on shared samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub objective: ScalarEstimate,
    pub grad_norm_sq: GradNormEstimate,
}

/// Which proposal `estimate_cmu_sq` integrates against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CmuProposal {
    /// `x ~ mu_star`, integrand `N Σ_i r_i(x)²` (bounded in `[1, N]`).
    #[default]
    Target,
    /// `x = m + u`, `m ~ P`, `u ~ N(0, eps²/2 I)`, integrand
    /// `(4π eps²)^{-d/2} / mu_star(x)`. Heavy-tailed.
    Narrowed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmuEstimate {
    pub value: f64,
    pub std_error: f64,
    pub proposal: CmuProposal,
    /// Largest single weight divided by the estimate; large values flag a
    /// heavy right tail.
    pub max_weight_ratio: f64,
    /// 99.9th percentile of the weights divided by the estimate.
    pub p999_weight_ratio: f64,
}

/// Draws `batch` points `center + eps·z` (row-major), honoring antithetic pairing.
fn draw_points(center: &[f64], eps: f64, es: &EstimatorSettings, stream: u64) -> Vec<f64> {
    let d = center.len();
    let mut rng = substream(es.seed, &[stream]);
    let mut out = vec![0.0; es.batch * d];
    let mut z = vec![0.0; d];
    for b in 0..es.batch {
        let row = &mut out[b * d..(b + 1) * d];
        if es.antithetic && b % 2 == 1 {
            for ((o, c), zk) in row.iter_mut().zip(center).zip(&z) {
                *o = c - eps * zk;
            }
        } else {
            for ((o, c), zk) in row.iter_mut().zip(center).zip(z.iter_mut()) {
                *zk = StandardNormal.sample(&mut rng);
                *o = c + eps * *zk;
            }
        }
    }
    out
}

/// Per-location sample statistics of a vector integrand and the scalar
/// objective integrand, grouped into antithetic units.
struct LocationSamples {
    /// Unit means, row-major `units × d`.
    vector_units: Vec<f64>,
    scalar: RunningMoments,
    dim: usize,
}

impl LocationSamples {
    fn units(&self) -> usize {
        self.vector_units.len() / self.dim
    }

    fn mean(&self) -> Vec<f64> {
        let k = self.units();
        let mut m = vec![0.0; self.dim];
        for u in self.vector_units.chunks_exact(self.dim) {
            m.iter_mut().zip(u).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|a| *a /= k as f64);
        m
    }

    fn std_error(&self, mean: &[f64]) -> Vec<f64> {
        let k = self.units();
        if k < 2 {
            return vec![0.0; self.dim];
        }
        let mut var = vec![0.0; self.dim];
        for u in self.vector_units.chunks_exact(self.dim) {
            for ((v, x), m) in var.iter_mut().zip(u).zip(mean) {
                *v += (x - m) * (x - m);
            }
        }
        var.iter()
            .map(|v| (v / ((k - 1) as f64) / k as f64).sqrt())
            .collect()
    }

    /// Plug-in `|mean|²` with its delete-one-unit jackknife bias and variance.
    fn squared_norm(&self) -> (f64, f64, f64) {
        let k = self.units();
        let mean = self.mean();
        let theta: f64 = mean.iter().map(|m| m * m).sum();
        if k < 2 {
            return (theta, 0.0, 0.0);
        }
        let kf = k as f64;
        let loo: Vec<f64> = self
            .vector_units
            .chunks_exact(self.dim)
            .map(|u| {
                mean.iter()
                    .zip(u)
                    .map(|(m, x)| {
                        let v = (kf * m - x) / (kf - 1.0);
                        v * v
                    })
                    .sum()
            })
            .collect();
        let loo_mean = pairwise_sum(&loo) / kf;
        let bias = (kf - 1.0) * (loo_mean - theta);
        let ss: Vec<f64> = loo.iter().map(|t| (t - loo_mean) * (t - loo_mean)).collect();
        let var = (kf - 1.0) / kf * pairwise_sum(&ss);
        (theta, bias, var)
    }
}

/// Evaluates `∇V(y) + ∇log ν(y)` and `V(y) + log ν(y)` at the sampled points.
fn sample_location(
    center: &[f64],
    variational: &GaussianMixture,
    target: &TargetModel,
    es: &EstimatorSettings,
    stream: u64,
) -> Result<LocationSamples> {
    let d = center.len();
    let eps = variational.kernel().epsilon();
    let points = draw_points(center, eps, es, stream);
    let unit = es.unit();
    let mut vector_units = vec![0.0; (es.batch / unit) * d];
    let mut scalar = RunningMoments::default();
    let mut grad_v = vec![0.0; d];
    let mut score = vec![0.0; d];
    let mut unit_scalar = 0.0;
    for (b, y) in points.chunks_exact(d).enumerate() {
        let v = target.potential_and_grad(y, &mut grad_v);
        let logq = variational.log_density_and_score(y, &mut score);
        let obj = v + logq;
        if !obj.is_finite() || grad_v.iter().chain(&score).any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteSample(format!(
                "integrand is not finite at {y:?} (stream {stream})"
            )));
        }
        let slot = &mut vector_units[(b / unit) * d..(b / unit + 1) * d];
        for ((s, g), sc) in slot.iter_mut().zip(&grad_v).zip(&score) {
            *s += (g + sc) / unit as f64;
        }
        unit_scalar += obj / unit as f64;
        if (b + 1) % unit == 0 {
            scalar.push(unit_scalar);
            unit_scalar = 0.0;
        }
    }
    Ok(LocationSamples {
        vector_units,
        scalar,
        dim: d,
    })
}

fn check_compatible(ps: &ParticleState, t: &TargetModel) -> Result<()> {
    check_dim(t.dim(), ps.dim())?;
    if let Some(gm) = t.mixture() {
        let (a, b) = (gm.kernel().epsilon(), ps.kernel().epsilon());
        if a != b {
            return Err(Error::InvalidParameter(format!(
                "mixture target epsilon {a} differs from variational epsilon {b}"
            )));
        }
    }
    Ok(())
}

fn sample_all(
    ps: &ParticleState,
    t: &TargetModel,
    es: &EstimatorSettings,
) -> Result<Vec<LocationSamples>> {
    es.validate()?;
    check_compatible(ps, t)?;
    let nu = ps.as_mixture();
    (0..ps.len())
        .into_par_iter()
        .map(|j| sample_location(ps.particle(j), &nu, t, es, j as u64))
        .collect()
}

/// `∇_{x_j} F = E_{y~N(x_j, eps² I)}[∇V(y) + ∇log(k_eps * mu_n)(y)]` for every
/// particle. This is the ascent direction; descent subtracts it.
pub fn estimate_particle_gradient(
    ps: &ParticleState,
    t: &TargetModel,
    es: &EstimatorSettings,
) -> Result<GradientEstimate> {
    let samples = sample_all(ps, t, es)?;
    let d = ps.dim();
    let mut per_particle = Vec::with_capacity(ps.len() * d);
    let mut std_error = Vec::with_capacity(ps.len() * d);
    for s in &samples {
        let m = s.mean();
        std_error.extend(s.std_error(&m));
        per_particle.extend(m);
    }
    Ok(GradientEstimate {
        per_particle,
        std_error,
        dim: d,
    })
}

/// The Wasserstein gradient field `w ↦ k_eps * ∇V(w) + k_eps * ∇log(k_eps * mu)(w)`
/// at a single point, for the variational mixture `nu = k_eps * mu`.
pub fn grad_first_variation(
    nu: &GaussianMixture,
    t: &TargetModel,
    w: &[f64],
    es: &EstimatorSettings,
) -> Result<VectorEstimate> {
    es.validate()?;
    check_dim(nu.dim(), w.len())?;
    check_dim(t.dim(), w.len())?;
    let s = sample_location(w, nu, t, es, 0)?;
    let mean = s.mean();
    let std_error = s.std_error(&mean);
    Ok(VectorEstimate { mean, std_error })
}

/// Objective and `|∇F'(mu)|²_{L²(mu)}` from one set of samples per particle.
pub fn estimate_diagnostics(
    ps: &ParticleState,
    t: &TargetModel,
    es: &EstimatorSettings,
) -> Result<Diagnostics> {
    let samples = sample_all(ps, t, es)?;
    let n = samples.len() as f64;
    let obj_means: Vec<f64> = samples.iter().map(|s| s.scalar.mean()).collect();
    let obj_vars: Vec<f64> = samples
        .iter()
        .map(|s| s.scalar.std_error().powi(2))
        .collect();
    let norms: Vec<(f64, f64, f64)> = samples.iter().map(|s| s.squared_norm()).collect();
    let thetas: Vec<f64> = norms.iter().map(|x| x.0).collect();
    let biases: Vec<f64> = norms.iter().map(|x| x.1).collect();
    let vars: Vec<f64> = norms.iter().map(|x| x.2).collect();
    Ok(Diagnostics {
        objective: ScalarEstimate {
            value: pairwise_sum(&obj_means) / n,
            std_error: pairwise_sum(&obj_vars).sqrt() / n,
        },
        grad_norm_sq: GradNormEstimate {
            value: pairwise_sum(&thetas) / n,
            std_error: pairwise_sum(&vars).sqrt() / n,
            bias: pairwise_sum(&biases) / n,
        },
    })
}

/// `F_eps(mu_n) = E[V(y) + log(k_eps * mu_n)(y)]`, `y ~ k_eps * mu_n`.
pub fn estimate_objective(
    ps: &ParticleState,
    t: &TargetModel,
    es: &EstimatorSettings,
) -> Result<ScalarEstimate> {
    Ok(estimate_diagnostics(ps, t, es)?.objective)
}

/// `(1/n) Σ_i |(1/B) Σ_b ∇log(nu/mu_star)(y_b^i)|²`.
pub fn estimate_grad_norm_sq(
    ps: &ParticleState,
    t: &TargetModel,
    es: &EstimatorSettings,
) -> Result<GradNormEstimate> {
    Ok(estimate_diagnostics(ps, t, es)?.grad_norm_sq)
}

/// `KL(nu | mu_star) ≈ (1/(nB)) Σ_{i,b} log(nu(y_b^i)/mu_star(y_b^i))` with
/// `y_b^i ~ N(x_i, eps² I)` around the atoms of `nu`.
pub fn estimate_kl(
    nu: &GaussianMixture,
    t: &TargetModel,
    es: &EstimatorSettings,
) -> Result<ScalarEstimate> {
    es.validate()?;
    if !t.is_normalized() {
        return Err(Error::NotNormalized);
    }
    check_dim(t.dim(), nu.dim())?;
    let eps = nu.kernel().epsilon();
    let d = nu.dim();
    let unit = es.unit();
    let per_atom: Vec<RunningMoments> = (0..nu.num_atoms())
        .into_par_iter()
        .map(|i| {
            let points = draw_points(nu.atom(i), eps, es, i as u64);
            let mut acc = RunningMoments::default();
            let mut unit_sum = 0.0;
            for (b, y) in points.chunks_exact(d).enumerate() {
                let v = nu.log_density_unchecked(y) + t.potential_unchecked(y);
                if !v.is_finite() {
                    return Err(Error::NonFiniteSample(format!("log ratio at {y:?}")));
                }
                unit_sum += v / unit as f64;
                if (b + 1) % unit == 0 {
                    acc.push(unit_sum);
                    unit_sum = 0.0;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(combine_strata(&per_atom))
}

fn combine_strata(strata: &[RunningMoments]) -> ScalarEstimate {
    let n = strata.len() as f64;
    let means: Vec<f64> = strata.iter().map(|s| s.mean()).collect();
    let vars: Vec<f64> = strata.iter().map(|s| s.std_error().powi(2)).collect();
    ScalarEstimate {
        value: pairwise_sum(&means) / n,
        std_error: pairwise_sum(&vars).sqrt() / n,
    }
}

/// `C²_{mu_star} = ∫ [∫ k_eps^m(x)² dP(m)] / [∫ k_eps^w(x) dP(w)] dx` for a
/// mixture target, stratified over the atoms of `P` with `es.batch`
/// samples per atom.
pub fn estimate_cmu_sq(
    t: &TargetModel,
    es: &EstimatorSettings,
    proposal: CmuProposal,
) -> Result<CmuEstimate> {
    es.validate()?;
    let gm = t.mixture().ok_or(Error::NotMixture)?;
    let kp = *gm.kernel();
    let n_atoms = gm.num_atoms();
    let d = gm.dim();
    let (scale, log_const) = match proposal {
        CmuProposal::Target => (kp.epsilon(), 0.0),
        CmuProposal::Narrowed => {
            let eps2 = kp.epsilon() * kp.epsilon();
            (
                kp.epsilon() / std::f64::consts::SQRT_2,
                -0.5 * d as f64 * (4.0 * std::f64::consts::PI * eps2).ln(),
            )
        }
    };
    let strata: Vec<(RunningMoments, Vec<f64>)> = (0..n_atoms)
        .into_par_iter()
        .map(|i| {
            let points = draw_points(gm.atom(i), scale, es, i as u64);
            let mut acc = RunningMoments::default();
            let mut weights = Vec::with_capacity(es.batch);
            let unit = es.unit();
            let mut unit_sum = 0.0;
            for (b, x) in points.chunks_exact(d).enumerate() {
                let w = match proposal {
                    CmuProposal::Target => n_atoms as f64 * sum_sq_responsibilities(gm, &kp, x),
                    CmuProposal::Narrowed => (log_const - gm.log_density_unchecked(x)).exp(),
                };
                if !w.is_finite() {
                    return Err(Error::NonFiniteSample(format!("C² weight at {x:?}")));
                }
                weights.push(w);
                unit_sum += w / unit as f64;
                if (b + 1) % unit == 0 {
                    acc.push(unit_sum);
                    unit_sum = 0.0;
                }
            }
            Ok((acc, weights))
        })
        .collect::<Result<_>>()?;
    let moments: Vec<RunningMoments> = strata.iter().map(|s| s.0).collect();
    let est = combine_strata(&moments);
    let mut all: Vec<f64> = strata.into_iter().flat_map(|s| s.1).collect();
    all.sort_by(f64::total_cmp);
    let max = all.last().copied().unwrap_or(0.0);
    let p999 = all[((all.len() as f64 * 0.999).ceil() as usize).clamp(1, all.len()) - 1];
    Ok(CmuEstimate {
        value: est.value,
        std_error: est.std_error,
        proposal,
        max_weight_ratio: max / est.value,
        p999_weight_ratio: p999 / est.value,
    })
}

/// `Σ_i r_i(x)²` for the softmax responsibilities of the mixture atoms.
fn sum_sq_responsibilities(gm: &GaussianMixture, kp: &KernelParams, x: &[f64]) -> f64 {
    let half_inv = 0.5 / (kp.epsilon() * kp.epsilon());
    let mut max = f64::NEG_INFINITY;
    let (mut s1, mut s2) = (0.0, 0.0);
    for atom in gm.atoms() {
        let e = -sq_dist(x, atom) * half_inv;
        if e > max {
            let scale = (max - e).exp();
            s1 = s1 * scale + 1.0;
            s2 = s2 * scale * scale + 1.0;
            max = e;
        } else {
            let w = (e - max).exp();
            s1 += w;
            s2 += w * w;
        }
    }
    s2 / (s1 * s1)
}

/// Kind check shared by callers that need an explicit mixing measure.
pub fn require_mixture(t: &TargetModel) -> Result<&GaussianMixture> {
    match t.kind() {
        TargetKind::GaussianMixture => Ok(t.mixture().expect("mixture kind")),
        _ => Err(Error::NotMixture),
    }
}
