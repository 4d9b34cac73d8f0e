//! Deterministic 1-D quadrature oracles.
//!
//! Written against plain formulas (direct sums of Gaussian densities) so
//! they share no code with the library's log-space evaluation path.
//! Composite trapezoid on `[min - 8 eps, max + 8 eps]` with 2^14 nodes.
#![allow(dead_code)]

use std::f64::consts::PI;

pub const NODES: usize = 1 << 14;

pub fn gauss(u: f64, eps: f64) -> f64 {
    (-(u * u) / (2.0 * eps * eps)).exp() / ((2.0 * PI).sqrt() * eps)
}

pub fn gauss_prime(u: f64, eps: f64) -> f64 {
    -u / (eps * eps) * gauss(u, eps)
}

/// Equal-weight 1-D mixture density.
pub fn mix(y: f64, atoms: &[f64], eps: f64) -> f64 {
    atoms.iter().map(|a| gauss(y - a, eps)).sum::<f64>() / atoms.len() as f64
}

pub fn mix_prime(y: f64, atoms: &[f64], eps: f64) -> f64 {
    atoms.iter().map(|a| gauss_prime(y - a, eps)).sum::<f64>() / atoms.len() as f64
}

pub fn trapezoid(lo: f64, hi: f64, nodes: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (hi - lo) / (nodes - 1) as f64;
    let mut s = 0.5 * (f(lo) + f(hi));
    for i in 1..nodes - 1 {
        s += f(lo + i as f64 * h);
    }
    s * h
}

pub fn range(points: &[f64], eps: f64) -> (f64, f64) {
    let lo = points.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = points.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo - 8.0 * eps, hi + 8.0 * eps)
}

/// Eq.-(8)-style gradient for particle `j`:
/// `∫ [V'(y) + q'(y)/q(y)] k_eps(y - x_j) dy` with `V = -log mix(target)`.
pub fn particle_gradient(particles: &[f64], target: &[f64], eps: f64, j: usize) -> f64 {
    let lo_hi: Vec<f64> = particles.iter().chain(target).copied().collect();
    let (lo, hi) = range(&lo_hi, eps);
    trapezoid(lo, hi, NODES, |y| {
        let v_prime = -mix_prime(y, target, eps) / mix(y, target, eps);
        let score = mix_prime(y, particles, eps) / mix(y, particles, eps);
        (v_prime + score) * gauss(y - particles[j], eps)
    })
}

/// Gradient field at an arbitrary point `w`.
pub fn first_variation(particles: &[f64], target: &[f64], eps: f64, w: f64) -> f64 {
    let mut pts: Vec<f64> = particles.iter().chain(target).copied().collect();
    pts.push(w);
    let (lo, hi) = range(&pts, eps);
    trapezoid(lo, hi, NODES, |y| {
        let v_prime = -mix_prime(y, target, eps) / mix(y, target, eps);
        let score = mix_prime(y, particles, eps) / mix(y, particles, eps);
        (v_prime + score) * gauss(y - w, eps)
    })
}

/// `F_eps = ∫ q (log q - log mu_star)` with `q = k_eps * mu_n`.
pub fn objective(particles: &[f64], target: &[f64], eps: f64) -> f64 {
    let pts: Vec<f64> = particles.iter().chain(target).copied().collect();
    let (lo, hi) = range(&pts, eps);
    trapezoid(lo, hi, NODES, |y| {
        let q = mix(y, particles, eps);
        if q == 0.0 {
            return 0.0;
        }
        q * (q.ln() - mix(y, target, eps).ln())
    })
}

/// `C² = ∫ (1/N) Σ_m k(x-m)² / mu_star(x) dx`.
pub fn cmu_sq(target: &[f64], eps: f64) -> f64 {
    let (lo, hi) = range(target, eps);
    trapezoid(lo, hi, NODES, |x| {
        let num = target.iter().map(|m| gauss(x - m, eps).powi(2)).sum::<f64>() / target.len() as f64;
        let den = mix(x, target, eps);
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    })
}
