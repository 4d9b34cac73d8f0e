//! The atomic measure `mu_n = (1/n) Σ δ_{x_i}`; particles are the means of
//! the variational mixture components.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::kernel::{GaussianMixture, KernelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    positions: Vec<f64>,
    len: usize,
    kernel: KernelParams,
    iteration: usize,
}

impl ParticleState {
    pub fn from_rows(rows: &[Vec<f64>], kernel: KernelParams) -> Result<Self> {
        let mut flat = Vec::with_capacity(rows.len() * kernel.dim());
        for r in rows {
            check_dim(kernel.dim(), r.len())?;
            flat.extend_from_slice(r);
        }
        Self::from_flat(flat, kernel)
    }

    pub fn from_flat(positions: Vec<f64>, kernel: KernelParams) -> Result<Self> {
        let d = kernel.dim();
        if positions.is_empty() {
            return Err(Error::InvalidParameter("need at least one particle".into()));
        }
        if positions.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: positions.len() % d,
            });
        }
        let len = positions.len() / d;
        let state = ParticleState {
            positions,
            len,
            kernel,
            iteration: 0,
        };
        if !state.is_finite() {
            return Err(Error::InvalidParameter("particle positions must be finite".into()));
        }
        Ok(state)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.positions[i * d..(i + 1) * d]
    }

    pub fn particles(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.positions.chunks_exact(self.dim())
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().all(|v| v.is_finite())
    }

    /// Returns `positions - step·direction` with the iteration counter
    /// advanced. Fails without modifying `self` if any entry is non-finite.
    pub fn displaced(&self, step: f64, direction: &[f64]) -> Result<ParticleState> {
        check_dim(self.positions.len(), direction.len())?;
        let positions: Vec<f64> = self
            .positions
            .iter()
            .zip(direction)
            .map(|(x, g)| x - step * g)
            .collect();
        if let Some(k) = positions.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                iteration: self.iteration + 1,
                context: format!(
                    "particle {} coordinate {} became {}",
                    k / self.dim(),
                    k % self.dim(),
                    positions[k]
                ),
                snapshot: Box::new(self.clone()),
            });
        }
        Ok(ParticleState {
            positions,
            len: self.len,
            kernel: self.kernel,
            iteration: self.iteration + 1,
        })
    }

    /// `(1/n) Σ |x_i|²`.
    pub fn second_moment(&self) -> f64 {
        self.positions.iter().map(|v| v * v).sum::<f64>() / self.len as f64
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for p in self.particles() {
            m.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|a| *a /= self.len as f64);
        m
    }

    /// `k_eps * mu_n` as a mixture with the shared kernel.
    pub fn as_mixture(&self) -> GaussianMixture {
        GaussianMixture::from_flat(self.positions.clone(), self.kernel)
            .expect("particle state invariants imply a valid mixture")
    }

    /// Appends this state to a snapshot CSV (`iter,particle,coord_0..`).
    pub fn write_csv_rows<W: Write>(&self, out: &mut csv::Writer<W>) -> Result<()> {
        for (i, p) in self.particles().enumerate() {
            let mut row = Vec::with_capacity(p.len() + 2);
            row.push(self.iteration.to_string());
            row.push(i.to_string());
            row.extend(p.iter().map(|v| v.to_string()));
            out.write_record(&row)?;
        }
        Ok(())
    }

    /// Writes a complete snapshot CSV, header included.
    pub fn write_snapshot_csv<W: Write>(states: &[&ParticleState], writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let d = states.first().map_or(0, |s| s.dim());
        let mut header = vec!["iter".to_string(), "particle".to_string()];
        header.extend((0..d).map(|k| format!("coord_{k}")));
        out.write_record(&header)?;
        for s in states {
            s.write_csv_rows(&mut out)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `n` i.i.d. rows from `N(0, zeta² I_d)`.
pub fn init_particles<R: Rng + ?Sized>(
    n: usize,
    zeta: f64,
    kernel: KernelParams,
    rng: &mut R,
) -> Result<ParticleState> {
    if n == 0 {
        return Err(Error::InvalidParameter("n_particles must be >= 1".into()));
    }
    if !(zeta >= 0.0) || !zeta.is_finite() {
        return Err(Error::InvalidParameter(format!("zeta must be >= 0, got {zeta}")));
    }
    let positions = (0..n * kernel.dim())
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            zeta * z
        })
        .collect();
    ParticleState::from_flat(positions, kernel)
}
