//! Normalized isotropic Gaussian kernel and equal-weight Gaussian mixtures.
//!
//! `k_eps(u) = (2π eps²)^{-d/2} exp(-|u|² / (2 eps²))`. All mixture
//! quantities are evaluated in log space with a max-subtracted (streaming)
//! log-sum-exp, so well-separated components never underflow.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Log-weights this far below the running maximum are dropped from mixture
/// sums; their total relative contribution is below `N·e^-60`.
const NEGLIGIBLE_LOG_WEIGHT: f64 = -60.0;

/// Bandwidth and ambient dimension of the kernel `k_eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    epsilon: f64,
    dim: usize,
}

impl KernelParams {
    pub fn new(epsilon: f64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("kernel dimension must be >= 1".into()));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "kernel epsilon must be positive and finite, got {epsilon}"
            )));
        }
        let eps2 = epsilon * epsilon;
        if eps2 == 0.0 || !eps2.is_finite() || !(1.0 / eps2).is_finite() {
            return Err(Error::InvalidParameter(format!(
                "kernel epsilon {epsilon} is out of range for f64"
            )));
        }
        let kp = KernelParams { epsilon, dim };
        if !kp.log_norm_const().is_finite() {
            return Err(Error::InvalidParameter(format!(
                "log normalizing constant overflows for epsilon={epsilon}, dim={dim}"
            )));
        }
        Ok(kp)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `(d/2) log(2π eps²)`.
    pub fn log_norm_const(&self) -> f64 {
        self.dim as f64 * (0.5 * (2.0 * PI).ln() + self.epsilon.ln())
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        KernelParams::new(epsilon, self.dim)
    }
}

/// `log k_eps(u)`.
pub fn log_kernel(kp: &KernelParams, u: &[f64]) -> Result<f64> {
    check_dim(kp.dim, u.len())?;
    let sq: f64 = u.iter().map(|v| v * v).sum();
    Ok(-sq / (2.0 * kp.epsilon * kp.epsilon) - kp.log_norm_const())
}

/// `∇k_eps(u) = -(u / eps²) k_eps(u)`.
pub fn grad_kernel(kp: &KernelParams, u: &[f64]) -> Result<Vec<f64>> {
    let k = log_kernel(kp, u)?.exp();
    let inv = 1.0 / (kp.epsilon * kp.epsilon);
    Ok(u.iter().map(|&v| -v * inv * k).collect())
}

/// Draws `center + eps·z` with `z ~ N(0, I)`.
pub fn sample_component<R: Rng + ?Sized>(kp: &KernelParams, center: &[f64], rng: &mut R) -> Vec<f64> {
    center
        .iter()
        .map(|&c| {
            let z: f64 = rng.sample(StandardNormal);
            c + kp.epsilon * z
        })
        .collect()
}

/// Equal-weight mixture `(1/N) Σ_i k_eps(· - x_i)`.
///
/// Atoms are stored row-major in one contiguous buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    atoms: Vec<f64>,
    len: usize,
    kernel: KernelParams,
}

impl GaussianMixture {
    pub fn new(atoms: &[Vec<f64>], kernel: KernelParams) -> Result<Self> {
        let d = kernel.dim;
        let mut flat = Vec::with_capacity(atoms.len() * d);
        for atom in atoms {
            check_dim(d, atom.len())?;
            flat.extend_from_slice(atom);
        }
        Self::from_flat(flat, kernel)
    }

    pub fn from_flat(atoms: Vec<f64>, kernel: KernelParams) -> Result<Self> {
        let d = kernel.dim;
        if atoms.is_empty() {
            return Err(Error::InvalidParameter("mixture needs at least one atom".into()));
        }
        if atoms.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: atoms.len() % d,
            });
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("mixture atoms must be finite".into()));
        }
        let len = atoms.len() / d;
        Ok(GaussianMixture { atoms, len, kernel })
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim
    }

    pub fn num_atoms(&self) -> usize {
        self.len
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        let d = self.kernel.dim;
        &self.atoms[i * d..(i + 1) * d]
    }

    pub fn atoms(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.atoms.chunks_exact(self.kernel.dim)
    }

    pub fn flat_atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// Mixture built from the first `n` atoms.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len {
            return Err(Error::InvalidParameter(format!(
                "cannot keep {n} of {} atoms",
                self.len
            )));
        }
        Self::from_flat(self.atoms[..n * self.kernel.dim].to_vec(), self.kernel)
    }

    /// Centroid of the atoms.
    pub fn atom_mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for atom in self.atoms() {
            for (m, a) in mean.iter_mut().zip(atom) {
                *m += a;
            }
        }
        mean.iter_mut().for_each(|m| *m /= self.len as f64);
        mean
    }

    /// Largest distance from an atom to the centroid.
    pub fn atom_radius(&self) -> f64 {
        let mean = self.atom_mean();
        self.atoms()
            .map(|a| sq_dist(a, &mean))
            .fold(0.0, f64::max)
            .sqrt()
    }

    /// Log-density and score at `y` in one pass; writes `∇ log p(y)` into
    /// `score`. Dimensions are not checked.
    pub fn log_density_and_score(&self, y: &[f64], score: &mut [f64]) -> f64 {
        let eps2 = self.kernel.epsilon * self.kernel.epsilon;
        let half_inv = 0.5 / eps2;
        let mut max = f64::NEG_INFINITY;
        let mut total = 0.0;
        score.iter_mut().for_each(|s| *s = 0.0);
        for atom in self.atoms() {
            let e = -sq_dist(y, atom) * half_inv;
            let w = if e > max {
                let scale = (max - e).exp();
                total *= scale;
                score.iter_mut().for_each(|s| *s *= scale);
                max = e;
                1.0
            } else if e - max < NEGLIGIBLE_LOG_WEIGHT {
                continue;
            } else {
                (e - max).exp()
            };
            total += w;
            for (s, a) in score.iter_mut().zip(atom) {
                *s += w * a;
            }
        }
        for (s, yk) in score.iter_mut().zip(y) {
            *s = -(yk - *s / total) / eps2;
        }
        max + total.ln() - (self.len as f64).ln() - self.kernel.log_norm_const()
    }

    /// Log-density only. Dimensions are not checked.
    pub fn log_density_unchecked(&self, y: &[f64]) -> f64 {
        let half_inv = 0.5 / (self.kernel.epsilon * self.kernel.epsilon);
        let mut max = f64::NEG_INFINITY;
        let mut total = 0.0;
        for atom in self.atoms() {
            let e = -sq_dist(y, atom) * half_inv;
            if e > max {
                total = total * (max - e).exp() + 1.0;
                max = e;
            } else if e - max >= NEGLIGIBLE_LOG_WEIGHT {
                total += (e - max).exp();
            }
        }
        max + total.ln() - (self.len as f64).ln() - self.kernel.log_norm_const()
    }

    /// Posterior component probabilities `r_i(y)` (max-subtracted softmax).
    pub fn responsibilities(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), y.len())?;
        let half_inv = 0.5 / (self.kernel.epsilon * self.kernel.epsilon);
        let logits: Vec<f64> = self.atoms().map(|a| -sq_dist(y, a) * half_inv).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        Ok(w.into_iter().map(|v| v / total).collect())
    }

    /// Hessian of `log p` at `y`, row-major `d×d`:
    /// `-I/eps² + Cov_r(x)/eps⁴` with `Cov_r` the responsibility-weighted
    /// covariance of the atoms.
    pub fn hessian_log_density(&self, y: &[f64]) -> Result<Vec<f64>> {
        let r = self.responsibilities(y)?;
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for (ri, atom) in r.iter().zip(self.atoms()) {
            for (m, a) in mean.iter_mut().zip(atom) {
                *m += ri * a;
            }
        }
        let mut cov = vec![0.0; d * d];
        for (ri, atom) in r.iter().zip(self.atoms()) {
            for p in 0..d {
                let dp = atom[p] - mean[p];
                for q in 0..d {
                    cov[p * d + q] += ri * dp * (atom[q] - mean[q]);
                }
            }
        }
        let eps2 = self.kernel.epsilon * self.kernel.epsilon;
        let mut h: Vec<f64> = cov.iter().map(|c| c / (eps2 * eps2)).collect();
        for p in 0..d {
            h[p * d + p] -= 1.0 / eps2;
        }
        Ok(h)
    }
}

/// `log[(1/N) Σ_i k_eps(y - x_i)]`.
pub fn mixture_log_density(gm: &GaussianMixture, y: &[f64]) -> Result<f64> {
    check_dim(gm.dim(), y.len())?;
    Ok(gm.log_density_unchecked(y))
}

/// `∇_y log (k_eps * mu_n)(y) = -(y - Σ r_i x_i)/eps²`.
pub fn mixture_score(gm: &GaussianMixture, y: &[f64]) -> Result<Vec<f64>> {
    check_dim(gm.dim(), y.len())?;
    let mut score = vec![0.0; y.len()];
    gm.log_density_and_score(y, &mut score);
    Ok(score)
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
