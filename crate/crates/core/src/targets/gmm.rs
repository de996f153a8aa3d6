use lps_tape::{kernels, TapeError, Tensor, Var};
use rand::{Rng, RngCore};

use super::{TargetDensity, LN_2PI};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{normal_vec, substream, Substream};

/// Normalized mixture of full-covariance Gaussians.
#[derive(Debug, Clone)]
pub struct GaussianMixtureTarget {
    dim: usize,
    log_weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    chols: Vec<Vec<f64>>,
    precisions: Vec<Tensor>,
    log_norms: Vec<f64>,
}

impl GaussianMixtureTarget {
    /// `weights` need not be normalized; covariances are row-major `d×d`.
    pub fn new(weights: &[f64], means: Vec<Vec<f64>>, covs: &[Vec<f64>]) -> Result<Self> {
        let k = means.len();
        if k == 0 {
            return Err(Error::Empty("mixture"));
        }
        if weights.len() != k || covs.len() != k || weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::Invalid("mixture weights and covariances must match means".into()));
        }
        let dim = means[0].len();
        let total: f64 = weights.iter().sum();
        let log_weights: Vec<f64> = weights.iter().map(|w| (w / total).ln()).collect();
        let mut chols = Vec::with_capacity(k);
        let mut precisions = Vec::with_capacity(k);
        let mut log_norms = Vec::with_capacity(k);
        for (j, cov) in covs.iter().enumerate() {
            if means[j].len() != dim || cov.len() != dim * dim {
                return Err(Error::Dimension { expected: dim, got: means[j].len() });
            }
            let l = linalg::cholesky(cov, dim)
                .ok_or_else(|| Error::Invalid(format!("covariance {j} is not positive definite")))?;
            let logdet = linalg::log_det_from_cholesky(&l, dim);
            precisions.push(Tensor::new(vec![dim, dim], linalg::inverse_from_cholesky(&l, dim))?);
            log_norms.push(log_weights[j] - 0.5 * (dim as f64 * LN_2PI + logdet));
            chols.push(l);
        }
        Ok(Self { dim, log_weights, means, chols, precisions, log_norms })
    }

    /// Isotropic components `N(μ_j, s_j² I)` with uniform weights.
    pub fn isotropic(means: Vec<Vec<f64>>, stds: &[f64]) -> Result<Self> {
        let d = means.first().map_or(0, Vec::len);
        let covs: Vec<Vec<f64>> = stds
            .iter()
            .map(|s| (0..d * d).map(|i| if i % (d + 1) == 0 { s * s } else { 0.0 }).collect())
            .collect();
        Self::new(&vec![1.0; means.len()], means, &covs)
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    fn component_terms(&self, x: &[f64]) -> Vec<(f64, Vec<f64>)> {
        let d = self.dim;
        (0..self.means.len())
            .map(|j| {
                let diff: Vec<f64> = x.iter().zip(&self.means[j]).map(|(a, m)| a - m).collect();
                let p = self.precisions[j].data();
                let pd: Vec<f64> = (0..d)
                    .map(|r| (0..d).map(|c| p[r * d + c] * diff[c]).sum())
                    .collect();
                let q: f64 = pd.iter().zip(&diff).map(|(a, b)| a * b).sum();
                (self.log_norms[j] - 0.5 * q, pd)
            })
            .collect()
    }

    /// Per-component `(B×1 log term, B×d precision-weighted offset)`.
    fn batch_terms<'t>(&self, x: Var<'t>) -> Result<Vec<(Var<'t>, Var<'t>)>, TapeError> {
        let tape = x.tape();
        (0..self.means.len())
            .map(|j| {
                let diff = x.sub(tape.constant(Tensor::row(&self.means[j])))?;
                let pd = diff.matmul(tape.constant(self.precisions[j].clone()))?;
                let q = pd.mul(diff)?.sum_axis(1)?;
                Ok((q.scale(-0.5).offset(self.log_norms[j]), pd))
            })
            .collect()
    }
}

impl TargetDensity for GaussianMixtureTarget {
    fn name(&self) -> String {
        "gmm".into()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_log_rho(&self, x: &[f64]) -> f64 {
        let terms = self.component_terms(x);
        kernels::logsumexp(terms.iter().map(|t| t.0))
    }

    fn eval_grad_log_rho(&self, x: &[f64]) -> Vec<f64> {
        let terms = self.component_terms(x);
        let lse = kernels::logsumexp(terms.iter().map(|t| t.0));
        let mut g = vec![0.0; self.dim];
        for (l, pd) in &terms {
            let r = (l - lse).exp();
            for (gi, p) in g.iter_mut().zip(pd) {
                *gi -= r * p;
            }
        }
        g
    }

    fn log_rho_batch<'t>(&self, x: Var<'t>) -> Result<Var<'t>, TapeError> {
        let terms = self.batch_terms(x)?;
        let logs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        x.tape().concat(&logs, 1)?.logsumexp_axis(1)
    }

    fn score_batch<'t>(&self, x: Var<'t>) -> Result<Var<'t>, TapeError> {
        let terms = self.batch_terms(x)?;
        let logs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let lse = x.tape().concat(&logs, 1)?.logsumexp_axis(1)?;
        let mut acc: Option<Var> = None;
        for (l, pd) in terms {
            let piece = l.sub(lse)?.exp().mul(pd)?;
            acc = Some(match acc {
                None => piece,
                Some(a) => a.add(piece)?,
            });
        }
        Ok(acc.expect("at least one component").neg())
    }

    fn log_z(&self) -> Option<f64> {
        Some(0.0)
    }

    fn sample(&self, n: usize, mut rng: &mut dyn RngCore) -> Option<Vec<Vec<f64>>> {
        let weights: Vec<f64> = self.log_weights.iter().map(|w| w.exp()).collect();
        let dist = rand::distributions::WeightedIndex::new(&weights).ok()?;
        Some(
            (0..n)
                .map(|_| {
                    let j = rng.sample(&dist);
                    let z = normal_vec(&mut rng, self.dim);
                    let lz = linalg::lower_mul(&self.chols[j], &z, self.dim);
                    lz.iter().zip(&self.means[j]).map(|(a, m)| a + m).collect()
                })
                .collect(),
        )
    }

    fn mode_centers(&self) -> Option<Vec<Vec<f64>>> {
        Some(self.means.clone())
    }
}

/// Generator for the randomized mixture benchmark: uniform weights, means
/// uniform in a box and Wishart covariances with `d+1` degrees of freedom
/// scaled so that `E[Σ] = I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomGmmTarget {
    pub seed: u64,
    pub components: usize,
    pub dim: usize,
    pub half_width: f64,
}

impl Default for RandomGmmTarget {
    fn default() -> Self {
        Self { seed: 0, components: 10, dim: 2, half_width: 12.0 }
    }
}

impl RandomGmmTarget {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn build(&self) -> Result<GaussianMixtureTarget> {
        let d = self.dim;
        let dof = d + 1;
        let s = (1.0 / dof as f64).sqrt();
        let mut rng = substream(self.seed, Substream::Target);
        let mut means = Vec::with_capacity(self.components);
        let mut covs = Vec::with_capacity(self.components);
        for _ in 0..self.components {
            means.push((0..d).map(|_| rng.gen_range(-self.half_width..self.half_width)).collect());
            let mut cov = vec![0.0; d * d];
            for _ in 0..dof {
                let v: Vec<f64> = normal_vec(&mut rng, d).into_iter().map(|z| s * z).collect();
                for r in 0..d {
                    for c in 0..d {
                        cov[r * d + c] += v[r] * v[c];
                    }
                }
            }
            // Guards against a numerically singular draw.
            for r in 0..d {
                cov[r * d + r] += 1e-3;
            }
            covs.push(cov);
        }
        GaussianMixtureTarget::new(&vec![1.0; self.components], means, &covs)
    }
}
