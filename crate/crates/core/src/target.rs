//! Target measures `mu_star ∝ exp(-V)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernel::{GaussianMixture, KernelParams};
use crate::rng::{substream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    GaussianMixture,
    StandardGaussian,
    CustomPotential,
}

type PotentialFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradientFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

#[derive(Clone)]
enum Potential {
    Mixture(GaussianMixture),
    StandardGaussian,
    Custom {
        value: Arc<PotentialFn>,
        gradient: Arc<GradientFn>,
    },
}

/// Target potential together with its smoothness constant `L`.
#[derive(Clone)]
pub struct TargetModel {
    potential: Potential,
    dim: usize,
    smoothness: f64,
    seed: Option<u64>,
}

impl fmt::Debug for TargetModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("TargetModel");
        s.field("kind", &self.kind()).field("dim", &self.dim);
        if let Potential::Mixture(gm) = &self.potential {
            s.field("num_atoms", &gm.num_atoms())
                .field("epsilon", &gm.kernel().epsilon());
        }
        s.field("smoothness", &self.smoothness).finish()
    }
}

impl TargetModel {
    /// `mu_star = (1/N) Σ N(x_i, eps² I)`, with `V = -log mu_star` including
    /// the normalizing constant.
    pub fn gaussian_mixture(mixture: GaussianMixture) -> Self {
        let eps = mixture.kernel().epsilon();
        let r = mixture.atom_radius();
        let smoothness = (1.0 + r * r / (eps * eps)) / (eps * eps);
        TargetModel {
            dim: mixture.dim(),
            potential: Potential::Mixture(mixture),
            smoothness,
            seed: None,
        }
    }

    /// `N(0, I_d)` with `V(y) = |y|²/2 + (d/2) log 2π`.
    pub fn standard_gaussian(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        Ok(TargetModel {
            potential: Potential::StandardGaussian,
            dim,
            smoothness: 1.0,
            seed: None,
        })
    }

    /// User-supplied potential, gradient and smoothness constant. The
    /// potential need not be normalized.
    pub fn custom<V, G>(dim: usize, value: V, gradient: G, smoothness: f64) -> Result<Self>
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        if !(smoothness >= 0.0) {
            return Err(Error::InvalidParameter("smoothness must be nonnegative".into()));
        }
        Ok(TargetModel {
            potential: Potential::Custom {
                value: Arc::new(value),
                gradient: Arc::new(gradient),
            },
            dim,
            smoothness,
            seed: None,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn kind(&self) -> TargetKind {
        match self.potential {
            Potential::Mixture(_) => TargetKind::GaussianMixture,
            Potential::StandardGaussian => TargetKind::StandardGaussian,
            Potential::Custom { .. } => TargetKind::CustomPotential,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The mixing measure realized as atoms, when the target has one.
    pub fn mixture(&self) -> Option<&GaussianMixture> {
        match &self.potential {
            Potential::Mixture(gm) => Some(gm),
            _ => None,
        }
    }

    /// Whether `exp(-V)` integrates to one.
    pub fn is_normalized(&self) -> bool {
        !matches!(self.potential, Potential::Custom { .. })
    }

    pub fn potential(&self, y: &[f64]) -> Result<f64> {
        check_dim(self.dim, y.len())?;
        Ok(self.potential_unchecked(y))
    }

    pub fn grad_potential(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, y.len())?;
        let mut g = vec![0.0; self.dim];
        self.potential_and_grad(y, &mut g);
        Ok(g)
    }

    /// `log mu_star(y)`; only defined for normalized targets.
    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        if !self.is_normalized() {
            return Err(Error::NotNormalized);
        }
        Ok(-self.potential(y)?)
    }

    pub(crate) fn potential_unchecked(&self, y: &[f64]) -> f64 {
        match &self.potential {
            Potential::Mixture(gm) => -gm.log_density_unchecked(y),
            Potential::StandardGaussian => standard_gaussian_potential(y),
            Potential::Custom { value, .. } => value(y),
        }
    }

    /// Writes `∇V(y)` into `grad` and returns `V(y)`. Dimensions are not checked.
    pub fn potential_and_grad(&self, y: &[f64], grad: &mut [f64]) -> f64 {
        match &self.potential {
            Potential::Mixture(gm) => {
                let logp = gm.log_density_and_score(y, grad);
                grad.iter_mut().for_each(|g| *g = -*g);
                -logp
            }
            Potential::StandardGaussian => {
                grad.copy_from_slice(y);
                standard_gaussian_potential(y)
            }
            Potential::Custom { value, gradient } => {
                gradient(y, grad);
                value(y)
            }
        }
    }

    /// Upper bound `L` on the operator norm of the Hessian of `V`.
    ///
    /// Mixtures use `(1 + R²/eps²)/eps²` with `R` the largest distance from
    /// an atom to the atom centroid: `H_V = I/eps² - Cov_r(x)/eps⁴` and the
    /// responsibility-weighted covariance is dominated by `R²`.
    pub fn smoothness_bound(&self) -> f64 {
        self.smoothness
    }

    /// Hessian of `V` at `y`, row-major `d×d`. Custom potentials fall back
    /// to central differences of the gradient.
    pub fn hessian_potential(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, y.len())?;
        let d = self.dim;
        match &self.potential {
            Potential::Mixture(gm) => {
                Ok(gm.hessian_log_density(y)?.into_iter().map(|v| -v).collect())
            }
            Potential::StandardGaussian => {
                let mut h = vec![0.0; d * d];
                (0..d).for_each(|i| h[i * d + i] = 1.0);
                Ok(h)
            }
            Potential::Custom { gradient, .. } => {
                let step = 1e-5;
                let mut h = vec![0.0; d * d];
                let (mut gp, mut gm) = (vec![0.0; d], vec![0.0; d]);
                let mut z = y.to_vec();
                for q in 0..d {
                    z[q] = y[q] + step;
                    gradient(&z, &mut gp);
                    z[q] = y[q] - step;
                    gradient(&z, &mut gm);
                    z[q] = y[q];
                    for p in 0..d {
                        h[p * d + q] = (gp[p] - gm[p]) / (2.0 * step);
                    }
                }
                Ok(h)
            }
        }
    }

    pub fn to_document(&self) -> Result<TargetDocument> {
        match &self.potential {
            Potential::Mixture(gm) => Ok(TargetDocument {
                kind: TargetKind::GaussianMixture,
                dim: self.dim,
                epsilon: Some(gm.kernel().epsilon()),
                atoms: gm.atoms().map(|a| a.to_vec()).collect(),
                seed: self.seed,
            }),
            Potential::StandardGaussian => Ok(TargetDocument {
                kind: TargetKind::StandardGaussian,
                dim: self.dim,
                epsilon: None,
                atoms: Vec::new(),
                seed: self.seed,
            }),
            Potential::Custom { .. } => Err(Error::Unsupported(
                "custom potentials cannot be serialized".into(),
            )),
        }
    }

    pub fn from_document(doc: &TargetDocument) -> Result<Self> {
        let model = match doc.kind {
            TargetKind::GaussianMixture => {
                let eps = doc.epsilon.ok_or_else(|| {
                    Error::InvalidParameter("mixture target needs epsilon".into())
                })?;
                let kp = KernelParams::new(eps, doc.dim)?;
                TargetModel::gaussian_mixture(GaussianMixture::new(&doc.atoms, kp)?)
            }
            TargetKind::StandardGaussian => TargetModel::standard_gaussian(doc.dim)?,
            TargetKind::CustomPotential => {
                return Err(Error::Unsupported(
                    "custom potentials cannot be deserialized".into(),
                ))
            }
        };
        Ok(match doc.seed {
            Some(s) => model.with_seed(s),
            None => model,
        })
    }
}

fn standard_gaussian_potential(y: &[f64]) -> f64 {
    0.5 * y.iter().map(|v| v * v).sum::<f64>() + 0.5 * y.len() as f64 * (2.0 * PI).ln()
}

/// JSON form of a target: `{kind, dim, epsilon, atoms, seed}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetDocument {
    pub kind: TargetKind,
    pub dim: usize,
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub atoms: Vec<Vec<f64>>,
    pub seed: Option<u64>,
}

/// Random Gaussian-mixture target: `N` atoms drawn from `N(0, sigma² I)`,
/// component standard deviation `eps = epsilon0·√d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub num_components: usize,
    pub sigma: f64,
    pub epsilon0: f64,
    pub dim: usize,
    pub seed: u64,
}

impl TargetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_components == 0 {
            return Err(Error::InvalidParameter("num_components must be >= 1".into()));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidParameter("sigma must be positive".into()));
        }
        if !(self.epsilon0 > 0.0) || !self.epsilon0.is_finite() {
            return Err(Error::InvalidParameter("epsilon0 must be positive".into()));
        }
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dim must be >= 1".into()));
        }
        Ok(())
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon0 * (self.dim as f64).sqrt()
    }
}

pub fn build_random_target(spec: &TargetSpec) -> Result<TargetModel> {
    spec.validate()?;
    let kp = KernelParams::new(spec.epsilon(), spec.dim)?;
    let normal = Normal::new(0.0, spec.sigma)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = substream(spec.seed, &[tag::TARGET]);
    let atoms: Vec<f64> = (0..spec.num_components * spec.dim)
        .map(|_| normal.sample(&mut rng))
        .collect();
    Ok(TargetModel::gaussian_mixture(GaussianMixture::from_flat(atoms, kp)?).with_seed(spec.seed))
}
