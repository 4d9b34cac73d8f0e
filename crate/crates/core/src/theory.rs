//! Executable checks of the analytic guarantees: the descent-lemma constant,
//! the averaged-gradient and quantization rates, Hessian formulas for the
//! Gaussian family, and the scalar inequalities used along the way.
//!
//! Every statistical comparison allows three combined standard errors.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::estimators::{
    estimate_cmu_sq, estimate_kl, require_mixture, CmuEstimate, CmuProposal, EstimatorSettings,
};
use crate::optimizer::{empirical_moment_bound, initial_state, run_from, DiagnosticsRecord, RunConfig, RunOutput};
use crate::particles::ParticleState;
use crate::stats::log_log_slope;
use crate::target::{TargetKind, TargetModel};

/// Number of standard errors allowed in every statistical comparison.
pub const SIGMA_ALLOWANCE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The bound is vacuous for these inputs (for example `c_gamma <= 0`).
    NotApplicable,
}

impl CheckStatus {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    }

    /// `Fail` dominates; `NotApplicable` is neutral.
    pub fn and(self, other: CheckStatus) -> CheckStatus {
        use CheckStatus::*;
        match (self, other) {
            (Fail, _) | (_, Fail) => Fail,
            (Pass, _) | (_, Pass) => Pass,
            _ => NotApplicable,
        }
    }

    pub fn is_failure(self) -> bool {
        self == CheckStatus::Fail
    }
}

// ---------------------------------------------------------------------------
// Smoothness constant

/// Which coefficient set to use for the entropy part `K` of the constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KVariant {
    /// `1/eps² + 2 sqrt(hn)/eps³ + sqrt(n)/eps² + n sqrt(h)/(2 eps³)`.
    #[default]
    Standard,
    /// Same with a single `sqrt(hn)/eps³` cross term.
    SingleCross,
    /// Sum of the two per-term bounds:
    /// `1/eps² + sqrt(2hn)/eps³` and `sqrt(n)/eps² + sqrt(nh)/eps³ + n sqrt(h)/eps³`.
    Split,
}

impl KVariant {
    pub const ALL: [KVariant; 3] = [KVariant::Standard, KVariant::SingleCross, KVariant::Split];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KComponents {
    pub inv_eps2: f64,
    pub cross_term: f64,
    pub sqrt_n_term: f64,
    pub n_sqrt_h_term: f64,
}

impl KComponents {
    pub fn sum(&self) -> f64 {
        self.inv_eps2 + self.cross_term + self.sqrt_n_term + self.n_sqrt_h_term
    }
}

/// `M = L + K` for the descent lemma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstant {
    pub l: f64,
    pub k: f64,
    pub m: f64,
    pub components: KComponents,
    pub variant: KVariant,
}

impl SmoothnessConstant {
    /// `c_gamma = gamma (1 - gamma M / 2)`.
    pub fn descent_coefficient(&self, gamma: f64) -> f64 {
        gamma * (1.0 - 0.5 * gamma * self.m)
    }
}

pub fn smoothness_constant(l: f64, eps: f64, n: usize, h: f64) -> Result<SmoothnessConstant> {
    smoothness_constant_variant(KVariant::Standard, l, eps, n, h)
}

pub fn smoothness_constant_variant(
    variant: KVariant,
    l: f64,
    eps: f64,
    n: usize,
    h: f64,
) -> Result<SmoothnessConstant> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    if !(h >= 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("h must be >= 0, got {h}")));
    }
    if !(l >= 0.0) || !l.is_finite() {
        return Err(Error::InvalidParameter(format!("L must be >= 0, got {l}")));
    }
    let nf = n as f64;
    let (e2, e3) = (eps * eps, eps * eps * eps);
    let components = match variant {
        KVariant::Standard => KComponents {
            inv_eps2: 1.0 / e2,
            cross_term: 2.0 * (h * nf).sqrt() / e3,
            sqrt_n_term: nf.sqrt() / e2,
            n_sqrt_h_term: nf * h.sqrt() / (2.0 * e3),
        },
        KVariant::SingleCross => KComponents {
            inv_eps2: 1.0 / e2,
            cross_term: (h * nf).sqrt() / e3,
            sqrt_n_term: nf.sqrt() / e2,
            n_sqrt_h_term: nf * h.sqrt() / (2.0 * e3),
        },
        KVariant::Split => KComponents {
            inv_eps2: 1.0 / e2,
            cross_term: ((2.0 * h * nf).sqrt() + (h * nf).sqrt()) / e3,
            sqrt_n_term: nf.sqrt() / e2,
            n_sqrt_h_term: nf * h.sqrt() / e3,
        },
    };
    let k = components.sum();
    Ok(SmoothnessConstant { l, k, m: l + k, components, variant })
}

/// Result of running the optimizer with `gamma = factor / M`, where `M` uses
/// the largest second moment actually visited.
#[derive(Debug, Clone)]
pub struct DescentRun {
    pub output: RunOutput,
    pub constant: SmoothnessConstant,
    pub gamma: f64,
    /// Number of runs needed before `h` covered the trajectory.
    pub attempts: usize,
}

/// Chooses `gamma = factor / M(h)` self-consistently: starts from the initial
/// second moment and reruns with `h = h_hat` until the trajectory stays
/// within `h` (at most `max_attempts` runs).
pub fn run_with_descent_step(
    cfg: &RunConfig,
    t: &TargetModel,
    factor: f64,
    max_attempts: usize,
) -> Result<DescentRun> {
    if !(factor > 0.0) {
        return Err(Error::InvalidParameter("step factor must be positive".into()));
    }
    let init = initial_state(cfg, t)?;
    let eps = init.kernel().epsilon();
    let n = init.len();
    let mut h = init.second_moment();
    let mut attempts = 0;
    loop {
        attempts += 1;
        let constant = smoothness_constant(t.smoothness_bound(), eps, n, h)?;
        let gamma = factor / constant.m;
        let run_cfg = RunConfig { gamma: Some(gamma), ..cfg.clone() };
        let output = run_from(&run_cfg, t, init.clone())?;
        let h_hat = empirical_moment_bound(&output.records)?;
        if h_hat <= h || attempts >= max_attempts.max(1) {
            return Ok(DescentRun { output, constant, gamma, attempts });
        }
        h = h_hat;
    }
}

// ---------------------------------------------------------------------------
// Descent lemma

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentPair {
    pub iteration: usize,
    pub delta: f64,
    /// `-c_gamma · g_l`.
    pub bound: f64,
    pub combined_se: f64,
    /// `(delta - bound) / combined_se`; negative when the inequality holds outright.
    pub sigma: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentReport {
    pub gamma: f64,
    pub c_gamma: f64,
    pub pairs: Vec<DescentPair>,
    pub pass_fraction: f64,
    pub worst_violation_sigma: f64,
    pub min_pass_fraction: f64,
    pub pass: bool,
    /// `NotApplicable` when `c_gamma < 0`: the right side is then positive
    /// and the inequality no longer describes a decrease.
    pub status: CheckStatus,
}

/// Relative slack absorbing rounding in `delta` when standard errors vanish.
const ROUNDING_SLACK: f64 = 1e-12;

/// Fraction of consecutive pairs that must satisfy the inequality.
pub const DESCENT_PASS_FRACTION: f64 = 0.95;

pub fn check_descent(
    records: &[DiagnosticsRecord],
    sc: &SmoothnessConstant,
    gamma: f64,
) -> Result<DescentReport> {
    if records.len() < 2 {
        return Err(Error::InsufficientRecords { needed: 2, got: records.len() });
    }
    let c = sc.descent_coefficient(gamma);
    let mut pairs = Vec::with_capacity(records.len() - 1);
    for w in records.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.iteration != a.iteration + 1 {
            return Err(Error::InvalidParameter(format!(
                "records at iterations {} and {} are not consecutive",
                a.iteration, b.iteration
            )));
        }
        let delta = b.objective - a.objective;
        let bound = -c * a.grad_norm_sq;
        let se = (a.objective_se.powi(2)
            + b.objective_se.powi(2)
            + (c * a.grad_norm_sq_se).powi(2))
        .sqrt();
        let excess = delta - bound;
        let sigma = sigma_units(excess, se);
        pairs.push(DescentPair {
            iteration: a.iteration,
            delta,
            bound,
            combined_se: se,
            sigma,
            pass: excess <= SIGMA_ALLOWANCE * se + ROUNDING_SLACK * a.objective.abs().max(b.objective.abs()),
        });
    }
    let passed = pairs.iter().filter(|p| p.pass).count();
    let pass_fraction = passed as f64 / pairs.len() as f64;
    let worst = pairs.iter().map(|p| p.sigma).fold(f64::NEG_INFINITY, f64::max);
    let pass = pass_fraction >= DESCENT_PASS_FRACTION;
    Ok(DescentReport {
        gamma,
        c_gamma: c,
        pairs,
        pass_fraction,
        worst_violation_sigma: worst,
        min_pass_fraction: DESCENT_PASS_FRACTION,
        pass,
        status: if c < 0.0 { CheckStatus::NotApplicable } else { CheckStatus::from_bool(pass) },
    })
}

fn sigma_units(excess: f64, se: f64) -> f64 {
    if se > 0.0 {
        excess / se
    } else if excess > 0.0 {
        f64::INFINITY
    } else if excess < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Rates

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub grid: Vec<usize>,
    pub measured: Vec<f64>,
    pub measured_se: Vec<f64>,
    /// Theoretical bound per grid point; `None` where the bound is vacuous.
    pub bound: Vec<Option<f64>>,
    pub within_bound: Vec<bool>,
    /// Log-log slope of `measured` against the grid.
    pub slope: Option<f64>,
    pub bound_status: CheckStatus,
}

/// Up to `points` integers log-spaced over `[lo, hi]`, deduplicated and
/// strictly increasing.
pub fn log_grid(lo: usize, hi: usize, points: usize) -> Vec<usize> {
    if lo == 0 || hi < lo || points == 0 {
        return Vec::new();
    }
    if points == 1 || lo == hi {
        return vec![lo];
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut out: Vec<usize> = (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp().round() as usize)
        .map(|x| x.clamp(lo, hi))
        .collect();
    out.dedup();
    out
}

/// Running averages `A_L = (1/L) Σ_{l=1..L} g_l` with standard errors, for
/// `L = 1..=records.len()-1`. Requires records at iterations `0, 1, 2, ...`.
pub fn running_gradient_average(records: &[DiagnosticsRecord]) -> Result<(Vec<f64>, Vec<f64>)> {
    for (i, r) in records.iter().enumerate() {
        if r.iteration != i {
            return Err(Error::InvalidParameter(format!(
                "record {i} is at iteration {}; every iteration must be recorded",
                r.iteration
            )));
        }
    }
    let (mut sum, mut var) = (0.0, 0.0);
    let mut avg = Vec::with_capacity(records.len().saturating_sub(1));
    let mut se = Vec::with_capacity(avg.capacity());
    for (l, r) in records.iter().enumerate().skip(1) {
        sum += r.grad_norm_sq;
        var += r.grad_norm_sq_se * r.grad_norm_sq_se;
        avg.push(sum / l as f64);
        se.push(var.sqrt() / l as f64);
    }
    Ok((avg, se))
}

/// Compares the running gradient average with `F(mu_0) / (2 c_gamma L)` on
/// `grid` and fits its log-log slope.
pub fn check_avg_gradient_rate(
    records: &[DiagnosticsRecord],
    sc: &SmoothnessConstant,
    gamma: f64,
    grid: &[usize],
) -> Result<RateReport> {
    check_grid(grid)?;
    let (avg, se) = running_gradient_average(records)?;
    let last = *grid.last().expect("nonempty grid");
    if grid[0] == 0 || last > avg.len() {
        return Err(Error::InsufficientRecords { needed: last + 1, got: records.len() });
    }
    let c = sc.descent_coefficient(gamma);
    let (f0, f0_se) = (records[0].objective, records[0].objective_se);
    let mut measured = Vec::with_capacity(grid.len());
    let mut measured_se = Vec::with_capacity(grid.len());
    let mut bound = Vec::with_capacity(grid.len());
    let mut within = Vec::with_capacity(grid.len());
    for &l in grid {
        let (a, s) = (avg[l - 1], se[l - 1]);
        measured.push(a);
        measured_se.push(s);
        if c > 0.0 {
            let scale = 1.0 / (2.0 * c * l as f64);
            let b = f0 * scale;
            let combined = (s * s + (f0_se * scale).powi(2)).sqrt();
            bound.push(Some(b));
            within.push(a <= b + SIGMA_ALLOWANCE * combined);
        } else {
            bound.push(None);
            within.push(true);
        }
    }
    let bound_status = if c > 0.0 {
        CheckStatus::from_bool(within.iter().all(|&w| w))
    } else {
        CheckStatus::NotApplicable
    };
    Ok(RateReport {
        grid: grid.to_vec(),
        slope: fit_slope(grid, &measured),
        measured,
        measured_se,
        bound,
        within_bound: within,
        bound_status,
    })
}

fn check_grid(grid: &[usize]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty grid".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("grid must be strictly increasing".into()));
    }
    Ok(())
}

fn fit_slope(grid: &[usize], ys: &[f64]) -> Option<f64> {
    if grid.len() < 2 || ys.iter().any(|&y| !(y > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = grid.iter().map(|&x| x as f64).collect();
    Some(log_log_slope(&xs, ys))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationReport {
    pub rate: RateReport,
    pub c_mu_sq: CmuEstimate,
    /// Grid indices `i` where `KL(n_{i+1})` exceeds `KL(n_i)` by more than 3 SE.
    pub monotone_violations: Vec<usize>,
    /// Whether `KL` at `n = N` is within 3 SE of zero; `None` if `N` is off-grid.
    pub full_support_zero: Option<bool>,
    pub worst_violation_sigma: f64,
    pub pass: bool,
}

/// Builds `nu_n` from the first `n` target atoms for each grid point and
/// compares `KL(nu_n | mu_star)` with `C² (log n + 1) / n`.
pub fn check_quantization_rate(
    t: &TargetModel,
    n_grid: &[usize],
    es: &EstimatorSettings,
) -> Result<QuantizationReport> {
    check_quantization_rate_with(t, n_grid, es, CmuProposal::Target)
}

pub fn check_quantization_rate_with(
    t: &TargetModel,
    n_grid: &[usize],
    es: &EstimatorSettings,
    proposal: CmuProposal,
) -> Result<QuantizationReport> {
    let gm = require_mixture(t)?;
    check_grid(n_grid)?;
    let big_n = gm.num_atoms();
    if n_grid[0] == 0 || *n_grid.last().expect("nonempty") > big_n {
        return Err(Error::InvalidParameter(format!("grid must lie in [1, {big_n}]")));
    }
    let c2 = estimate_cmu_sq(t, &es.derived(&[crate::rng::tag::CMU]), proposal)?;
    let mut measured = Vec::with_capacity(n_grid.len());
    let mut measured_se = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let nu = gm.truncated(n)?;
        let kl = estimate_kl(&nu, t, &es.derived(&[crate::rng::tag::QUANTIZATION, n as u64]))?;
        measured.push(kl.value);
        measured_se.push(kl.std_error);
    }
    let mut worst = f64::NEG_INFINITY;
    let mut bound = Vec::with_capacity(n_grid.len());
    let mut within = Vec::with_capacity(n_grid.len());
    for (i, &n) in n_grid.iter().enumerate() {
        let factor = ((n as f64).ln() + 1.0) / n as f64;
        let b = c2.value * factor;
        let se = (measured_se[i].powi(2) + (c2.std_error * factor).powi(2)).sqrt();
        let excess = measured[i] - b;
        worst = worst.max(sigma_units(excess, se));
        bound.push(Some(b));
        within.push(excess <= SIGMA_ALLOWANCE * se);
    }
    let mut monotone_violations = Vec::new();
    for i in 0..n_grid.len().saturating_sub(1) {
        let se = (measured_se[i].powi(2) + measured_se[i + 1].powi(2)).sqrt();
        let excess = measured[i + 1] - measured[i];
        worst = worst.max(sigma_units(excess, se));
        if excess > SIGMA_ALLOWANCE * se {
            monotone_violations.push(i);
        }
    }
    let full_support_zero = (n_grid.last() == Some(&big_n)).then(|| {
        let (kl, se) = (*measured.last().unwrap(), *measured_se.last().unwrap());
        worst = worst.max(sigma_units(kl.abs(), se));
        kl.abs() <= SIGMA_ALLOWANCE * se
    });
    let bound_status = CheckStatus::from_bool(within.iter().all(|&w| w));
    let pass = !bound_status.is_failure()
        && monotone_violations.is_empty()
        && full_support_zero.unwrap_or(true);
    Ok(QuantizationReport {
        rate: RateReport {
            grid: n_grid.to_vec(),
            slope: fit_slope(n_grid, &measured),
            measured,
            measured_se,
            bound,
            within_bound: within,
            bound_status,
        },
        c_mu_sq: c2,
        monotone_violations,
        full_support_zero,
        worst_violation_sigma: worst,
        pass,
    })
}

// ---------------------------------------------------------------------------
// Hessians on the Gaussian family

/// Built-in test functions `psi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    /// `psi(x) = (a/2)|x|²`: `∇psi = a x`, `Hess psi = a I`.
    Quadratic { a: f64 },
    /// `psi(x) = <b, x>`: `∇psi = b`, `Hess psi = 0`.
    Linear { b: Vec<f64> },
}

impl TestFunction {
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        match self {
            TestFunction::Quadratic { a } => x.iter().map(|v| a * v).collect(),
            TestFunction::Linear { b } => b.clone(),
        }
    }

    fn hessian_hs_sq(&self, dim: usize) -> f64 {
        match self {
            TestFunction::Quadratic { a } => a * a * dim as f64,
            TestFunction::Linear { .. } => 0.0,
        }
    }
}

/// Measure at which the quadratic form is evaluated.
#[derive(Debug, Clone, Copy)]
pub enum Measure<'a> {
    /// `N(mean, std² I)`.
    Gaussian { mean: &'a [f64], std: f64 },
    /// Uniform weights on the particles.
    Particles(&'a ParticleState),
}

/// `∫ [<Hess V ∇psi, ∇psi> + |Hess psi|²_HS] dmu`.
///
/// Gaussian measures are handled in closed form and need a target with
/// constant `Hess V` (standard Gaussian or a single-atom mixture).
pub fn hessian_kl_quadratic_form(t: &TargetModel, mu: &Measure, psi: &TestFunction) -> Result<f64> {
    let d = t.dim();
    if let TestFunction::Linear { b } = psi {
        crate::error::check_dim(d, b.len())?;
    }
    let hs = psi.hessian_hs_sq(d);
    match *mu {
        Measure::Particles(ps) => {
            crate::error::check_dim(d, ps.dim())?;
            let mut acc = Vec::with_capacity(ps.len());
            for x in ps.particles() {
                let g = psi.grad(x);
                let h = t.hessian_potential(x)?;
                let mut q = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        q += g[i] * h[i * d + j] * g[j];
                    }
                }
                acc.push(q + hs);
            }
            Ok(crate::stats::pairwise_sum(&acc) / ps.len() as f64)
        }
        Measure::Gaussian { mean, std } => {
            crate::error::check_dim(d, mean.len())?;
            if !(std >= 0.0) {
                return Err(Error::InvalidParameter("std must be >= 0".into()));
            }
            let curvature = constant_hessian_scale(t)?;
            let grad_sq = match psi {
                TestFunction::Quadratic { a } => {
                    let m2: f64 = mean.iter().map(|v| v * v).sum::<f64>() + d as f64 * std * std;
                    a * a * m2
                }
                TestFunction::Linear { b } => b.iter().map(|v| v * v).sum(),
            };
            Ok(curvature * grad_sq + hs)
        }
    }
}

/// `c` such that `Hess V = c I` everywhere, for the targets where that holds.
fn constant_hessian_scale(t: &TargetModel) -> Result<f64> {
    match (t.kind(), t.mixture()) {
        (TargetKind::StandardGaussian, _) => Ok(1.0),
        (TargetKind::GaussianMixture, Some(gm)) if gm.num_atoms() == 1 => {
            let e = gm.kernel().epsilon();
            Ok(1.0 / (e * e))
        }
        _ => Err(Error::Unsupported(
            "closed-form Gaussian quadratic form needs a constant-Hessian target".into(),
        )),
    }
}

/// Path `rho_t = (Id + t ∇psi_a)_# N(0, s² I)` against `mu_star = N(0, I)`:
/// `F_eps(rho_t) = (d/2)(v_t - 1 - log v_t)` with `v_t = (1 + t a)² s² + eps²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPath {
    pub dim: usize,
    pub s: f64,
    pub a: f64,
}

impl GaussianPath {
    pub fn new(dim: usize, s: f64, a: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be >= 1".into()));
        }
        if !(s > 0.0) || !s.is_finite() || !a.is_finite() {
            return Err(Error::InvalidParameter(format!("need s > 0 and finite a, got s={s}, a={a}")));
        }
        Ok(GaussianPath { dim, s, a })
    }

    /// Path for a standard Gaussian target; other targets have no closed form.
    pub fn for_target(t: &TargetModel, s: f64, a: f64) -> Result<Self> {
        if t.kind() != TargetKind::StandardGaussian {
            return Err(Error::Unsupported("closed-form path needs the standard Gaussian target".into()));
        }
        Self::new(t.dim(), s, a)
    }

    fn variance(&self, eps: f64, t: f64) -> f64 {
        let r = 1.0 + t * self.a;
        r * r * self.s * self.s + eps * eps
    }

    pub fn objective(&self, eps: f64, t: f64) -> f64 {
        let v = self.variance(eps, t);
        0.5 * self.dim as f64 * (v - 1.0 - v.ln())
    }

    /// Exact `d²/dt² F_eps(rho_t)` at `t = 0`.
    pub fn hessian(&self, eps: f64) -> f64 {
        let s2 = self.s * self.s;
        let v = s2 + eps * eps;
        let dv = 2.0 * self.a * s2;
        let d2v = 2.0 * self.a * self.a * s2;
        0.5 * self.dim as f64 * (d2v * (1.0 - 1.0 / v) + dv * dv / (v * v))
    }

    /// Central second difference of the closed-form curve.
    pub fn hessian_fd(&self, eps: f64, dt: f64) -> Result<f64> {
        if !(1e-5..=1e-2).contains(&dt) {
            return Err(Error::InvalidParameter(format!(
                "dt = {dt} outside [1e-5, 1e-2]; the second difference loses precision"
            )));
        }
        let f = |t: f64| self.objective(eps, t);
        Ok((f(dt) - 2.0 * f(0.0) + f(-dt)) / (dt * dt))
    }

    /// Hessian of the unmollified KL along the same path: `a² d (s² + 1)`.
    pub fn kl_hessian(&self) -> f64 {
        self.a * self.a * self.dim as f64 * (self.s * self.s + 1.0)
    }
}

/// Second difference of `t -> F_eps(rho_t)` for a standard Gaussian target.
pub fn hessian_feps_fd(t: &TargetModel, s: f64, a: f64, eps: f64, dt: f64) -> Result<f64> {
    GaussianPath::for_target(t, s, a)?.hessian_fd(eps, dt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianLimitReport {
    pub path: GaussianPath,
    pub dt: f64,
    pub eps: Vec<f64>,
    pub analytic: Vec<f64>,
    pub finite_difference: Vec<f64>,
    pub fd_relative_error: Vec<f64>,
    pub kl_hessian: f64,
    pub gap: Vec<f64>,
    /// `gap(eps_i) / gap(eps_{i+1})` for consecutive grid points.
    pub gap_ratios: Vec<f64>,
    pub min_ratio: f64,
    pub fd_tolerance: f64,
    pub pass: bool,
}

/// Checks that the gap to the unmollified Hessian shrinks by at least
/// `min_ratio` between consecutive `eps` values, and that finite differences
/// agree with the analytic second derivative to `fd_tolerance` (relative).
pub fn check_hessian_limit(
    path: &GaussianPath,
    eps_grid: &[f64],
    dt: f64,
    min_ratio: f64,
    fd_tolerance: f64,
) -> Result<HessianLimitReport> {
    if eps_grid.len() < 2 || eps_grid.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidParameter("need at least two positive eps values".into()));
    }
    let kl = path.kl_hessian();
    let analytic: Vec<f64> = eps_grid.iter().map(|&e| path.hessian(e)).collect();
    let fd = eps_grid
        .iter()
        .map(|&e| path.hessian_fd(e, dt))
        .collect::<Result<Vec<_>>>()?;
    let fd_err: Vec<f64> = analytic
        .iter()
        .zip(&fd)
        .map(|(a, f)| if *a == 0.0 { f.abs() } else { ((f - a) / a).abs() })
        .collect();
    let gap: Vec<f64> = analytic.iter().map(|h| (h - kl).abs()).collect();
    let ratios: Vec<f64> = gap.windows(2).map(|w| w[0] / w[1]).collect();
    let pass = ratios.iter().all(|&r| r >= min_ratio) && fd_err.iter().all(|&e| e <= fd_tolerance);
    Ok(HessianLimitReport {
        path: *path,
        dt,
        eps: eps_grid.to_vec(),
        analytic,
        finite_difference: fd,
        fd_relative_error: fd_err,
        kl_hessian: kl,
        gap,
        gap_ratios: ratios,
        min_ratio,
        fd_tolerance,
        pass,
    })
}

// ---------------------------------------------------------------------------
// Scalar lemmas

/// `B(x) = (x log x - x + 1) / (x - 1)²`, extended by `B(0) = 1`, `B(1) = 1/2`.
pub fn b_function(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    let u = x - 1.0;
    if u.abs() < 0.1 {
        // Σ_{k>=2} (-u)^{k-2} / (k (k-1))
        let mut sum = 0.0;
        let mut p = 1.0;
        for k in 2..40 {
            let term = p / (k * (k - 1)) as f64;
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
            p *= -u;
        }
        return sum;
    }
    (x * x.ln() - x + 1.0) / (u * u)
}

/// Left side of the entropy inequality `-α + (1-α) log(1-α) + 2α sqrt(1-α) <= 0`.
pub fn lemma_alpha_lhs(alpha: f64) -> f64 {
    let q = 1.0 - alpha;
    let q_log_q = if q == 0.0 { 0.0 } else { q * q.ln() };
    -alpha + q_log_q + 2.0 * alpha * q.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub points: usize,
    pub tolerance: f64,
    /// Largest `B(x_{i+1}) - B(x_i)` over the x grid (should be <= 0).
    pub b_max_increase: f64,
    /// Largest `B(x)(x-1) - (sqrt(x) - 1)`.
    pub b_sqrt_max_excess: f64,
    /// Largest value of the alpha inequality's left side.
    pub alpha_max_excess: f64,
    /// Largest `H_n - 1 - log n` for `n <= harmonic_n_max`.
    pub harmonic_max_excess: f64,
    pub harmonic_n_max: usize,
    pub pass: bool,
}

/// x grid: `0`, `points` log-spaced values in `[1e-8, 1e3]`, and `1`, sorted.
pub fn lemma_x_grid(points: usize) -> Vec<f64> {
    let (a, b) = (1e-8f64.ln(), 1e3f64.ln());
    let mut xs: Vec<f64> = vec![0.0, 1.0];
    let steps = points.max(2) - 1;
    xs.extend((0..points).map(|i| (a + (b - a) * i as f64 / steps as f64).exp()));
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

/// Largest `H_n - 1 - log n` over `1 <= n <= n_max`.
pub fn harmonic_max_excess(n_max: usize) -> f64 {
    let mut h = 0.0;
    let mut worst = f64::NEG_INFINITY;
    for n in 1..=n_max {
        h += 1.0 / n as f64;
        worst = worst.max(h - 1.0 - (n as f64).ln());
    }
    worst
}

pub fn check_scalar_lemmas(points: usize, harmonic_n_max: usize) -> LemmaReport {
    const TOL: f64 = 1e-12;
    let xs = lemma_x_grid(points);
    let bs: Vec<f64> = xs.iter().map(|&x| b_function(x)).collect();
    let b_max_increase = bs.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let b_sqrt_max_excess = xs
        .iter()
        .zip(&bs)
        .map(|(&x, &b)| b * (x - 1.0) - (x.sqrt() - 1.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let steps = points.max(2) - 1;
    let alpha_max_excess = (0..=steps)
        .map(|i| lemma_alpha_lhs(i as f64 / steps as f64))
        .fold(f64::NEG_INFINITY, f64::max);
    let harmonic = harmonic_max_excess(harmonic_n_max);
    LemmaReport {
        points,
        tolerance: TOL,
        b_max_increase,
        b_sqrt_max_excess,
        alpha_max_excess,
        harmonic_max_excess: harmonic,
        harmonic_n_max,
        pass: b_max_increase <= TOL
            && b_sqrt_max_excess <= TOL
            && alpha_max_excess <= TOL
            && harmonic <= 0.0,
    }
}

// ---------------------------------------------------------------------------
// Reports

/// Uniform JSON report emitted by every check, with a companion series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check_name: String,
    pub params: BTreeMap<String, Value>,
    pub grid: Vec<f64>,
    pub measured: Vec<f64>,
    pub bound: Vec<Option<f64>>,
    pub pass: bool,
    pub status: CheckStatus,
    /// `None` when no finite value exists (for example an exact check).
    pub worst_violation_sigma: Option<f64>,
}

impl CheckReport {
    pub fn new(check_name: &str, status: CheckStatus) -> Self {
        CheckReport {
            check_name: check_name.to_string(),
            params: BTreeMap::new(),
            grid: Vec::new(),
            measured: Vec::new(),
            bound: Vec::new(),
            pass: !status.is_failure(),
            status,
            worst_violation_sigma: None,
        }
    }

    pub fn param(mut self, key: &str, value: impl Serialize) -> Self {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.params.insert(key.to_string(), v);
        self
    }

    pub fn with_worst_sigma(mut self, sigma: f64) -> Self {
        self.worst_violation_sigma = sigma.is_finite().then_some(sigma);
        self
    }

    pub fn write_json<W: Write>(&self, mut writer: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut writer, self)?;
        writer.write_all(b"\n")?;
        Ok(())
    }

    /// Companion CSV `x,measured,bound` (empty bound cell when vacuous).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["x", "measured", "bound"])?;
        for (i, x) in self.grid.iter().enumerate() {
            let m = self.measured.get(i).map(f64::to_string).unwrap_or_default();
            let b = self.bound.get(i).copied().flatten().map(|v| v.to_string()).unwrap_or_default();
            out.write_record([x.to_string(), m, b])?;
        }
        out.flush()?;
        Ok(())
    }
}

impl DescentReport {
    pub fn to_check_report(&self) -> CheckReport {
        let mut r = CheckReport::new("check_descent", self.status)
            .param("gamma", self.gamma)
            .param("c_gamma", self.c_gamma)
            .param("pass_fraction", self.pass_fraction)
            .param("min_pass_fraction", self.min_pass_fraction)
            .with_worst_sigma(self.worst_violation_sigma);
        r.grid = self.pairs.iter().map(|p| p.iteration as f64).collect();
        r.measured = self.pairs.iter().map(|p| p.delta).collect();
        r.bound = self.pairs.iter().map(|p| Some(p.bound)).collect();
        r
    }
}

impl QuantizationReport {
    pub fn to_check_report(&self) -> CheckReport {
        let mut r = CheckReport::new("check_quantization_rate", CheckStatus::from_bool(self.pass))
            .param("c_mu_sq", self.c_mu_sq.value)
            .param("c_mu_sq_se", self.c_mu_sq.std_error)
            .param("monotone_violations", &self.monotone_violations)
            .param("full_support_zero", self.full_support_zero)
            .param("slope", self.rate.slope)
            .with_worst_sigma(self.worst_violation_sigma);
        r.grid = self.rate.grid.iter().map(|&n| n as f64).collect();
        r.measured = self.rate.measured.clone();
        r.bound = self.rate.bound.clone();
        r
    }
}

impl HessianLimitReport {
    pub fn to_check_report(&self) -> CheckReport {
        let mut r = CheckReport::new("check_hessian", CheckStatus::from_bool(self.pass))
            .param("dim", self.path.dim)
            .param("s", self.path.s)
            .param("a", self.path.a)
            .param("dt", self.dt)
            .param("kl_hessian", self.kl_hessian)
            .param("gap_ratios", &self.gap_ratios)
            .param("min_ratio", self.min_ratio)
            .param("fd_relative_error", &self.fd_relative_error)
            .param("fd_tolerance", self.fd_tolerance);
        r.grid = self.eps.clone();
        r.measured = self.analytic.clone();
        r.bound = vec![Some(self.kl_hessian); self.eps.len()];
        r
    }
}

impl LemmaReport {
    pub fn to_check_report(&self) -> CheckReport {
        let mut r = CheckReport::new("check_lemmas", CheckStatus::from_bool(self.pass))
            .param("points", self.points)
            .param("tolerance", self.tolerance)
            .param("harmonic_n_max", self.harmonic_n_max);
        r.grid = vec![0.0, 1.0, 2.0, 3.0];
        r.measured = vec![
            self.b_max_increase,
            self.b_sqrt_max_excess,
            self.alpha_max_excess,
            self.harmonic_max_excess,
        ];
        r.bound = vec![Some(self.tolerance), Some(self.tolerance), Some(self.tolerance), Some(0.0)];
        r
    }
}
