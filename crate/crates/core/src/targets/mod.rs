//! Unnormalized target densities with analytic log-density and score.

mod dataset;
mod funnel;
mod gaussian;
mod gmm;
mod logreg;
mod phi4;

use lps_tape::{TapeError, Var};
use rand::RngCore;

use crate::error::{check_dim, Result};

pub use dataset::{load_csv_dataset, Dataset};
pub use funnel::Funnel;
pub use gaussian::IsotropicGaussian;
pub use gmm::{GaussianMixtureTarget, RandomGmmTarget};
pub use logreg::BayesLogReg;
pub use phi4::{magnetization, Phi4Lattice};

/// An unnormalized density `ρ` on `ℝᵈ`.
///
/// The `*_batch` methods act on `B×d` tape values and return `B×1` log-densities
/// and `B×d` scores; they are what the samplers differentiate through.
pub trait TargetDensity: Send + Sync {
    fn name(&self) -> String;

    fn dim(&self) -> usize;

    /// `log ρ(x)` without a dimension check.
    fn eval_log_rho(&self, x: &[f64]) -> f64;

    /// `∇ log ρ(x)` without a dimension check.
    fn eval_grad_log_rho(&self, x: &[f64]) -> Vec<f64>;

    fn log_rho_batch<'t>(&self, x: Var<'t>) -> Result<Var<'t>, TapeError>;

    fn score_batch<'t>(&self, x: Var<'t>) -> Result<Var<'t>, TapeError>;

    /// True normalization constant, when known.
    fn log_z(&self) -> Option<f64> {
        None
    }

    /// Exact draws, when the target supports them.
    fn sample(&self, _n: usize, _rng: &mut dyn RngCore) -> Option<Vec<Vec<f64>>> {
        None
    }

    /// Mode locations used for mode-coverage metrics.
    fn mode_centers(&self) -> Option<Vec<Vec<f64>>> {
        None
    }

    fn log_rho(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.eval_log_rho(x))
    }

    fn grad_log_rho(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(self.eval_grad_log_rho(x))
    }
}

/// `c·ρ` for a positive constant `c = exp(log_c)`.
pub struct Scaled<T> {
    pub inner: T,
    pub log_c: f64,
}

impl<T: TargetDensity> Scaled<T> {
    pub fn new(inner: T, log_c: f64) -> Self {
        Self { inner, log_c }
    }
}

impl<T: TargetDensity> TargetDensity for Scaled<T> {
    fn name(&self) -> String {
        format!("{}*exp({})", self.inner.name(), self.log_c)
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval_log_rho(&self, x: &[f64]) -> f64 {
        self.inner.eval_log_rho(x) + self.log_c
    }

    fn eval_grad_log_rho(&self, x: &[f64]) -> Vec<f64> {
        self.inner.eval_grad_log_rho(x)
    }

    fn log_rho_batch<'t>(&self, x: Var<'t>) -> Result<Var<'t>, TapeError> {
        Ok(self.inner.log_rho_batch(x)?.offset(self.log_c))
    }

    fn score_batch<'t>(&self, x: Var<'t>) -> Result<Var<'t>, TapeError> {
        self.inner.score_batch(x)
    }

    fn log_z(&self) -> Option<f64> {
        self.inner.log_z().map(|z| z + self.log_c)
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Option<Vec<Vec<f64>>> {
        self.inner.sample(n, rng)
    }

    fn mode_centers(&self) -> Option<Vec<Vec<f64>>> {
        self.inner.mode_centers()
    }
}

impl<T: TargetDensity + ?Sized> TargetDensity for Box<T> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_log_rho(&self, x: &[f64]) -> f64 {
        (**self).eval_log_rho(x)
    }
    fn eval_grad_log_rho(&self, x: &[f64]) -> Vec<f64> {
        (**self).eval_grad_log_rho(x)
    }
    fn log_rho_batch<'t>(&self, x: Var<'t>) -> Result<Var<'t>, TapeError> {
        (**self).log_rho_batch(x)
    }
    fn score_batch<'t>(&self, x: Var<'t>) -> Result<Var<'t>, TapeError> {
        (**self).score_batch(x)
    }
    fn log_z(&self) -> Option<f64> {
        (**self).log_z()
    }
    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Option<Vec<Vec<f64>>> {
        (**self).sample(n, rng)
    }
    fn mode_centers(&self) -> Option<Vec<Vec<f64>>> {
        (**self).mode_centers()
    }
}

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use lps_tape::{Tape, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Checks the analytic gradient against central differences and the batch
    /// paths against the pointwise ones at `points` random locations.
    pub fn check_target(t: &dyn TargetDensity, points: usize, spread: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = t.dim();
        let xs: Vec<Vec<f64>> = (0..points)
            .map(|_| (0..d).map(|_| rng.gen_range(-spread..spread)).collect())
            .collect();
        let h = 1e-5;
        for x in &xs {
            let g = t.grad_log_rho(x).unwrap();
            for i in 0..d {
                let mut p = x.clone();
                p[i] += h;
                let mut m = x.clone();
                m[i] -= h;
                let fd = (t.log_rho(&p).unwrap() - t.log_rho(&m).unwrap()) / (2.0 * h);
                let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-2);
                assert!(rel < 1e-4, "{}: coord {i} analytic {} fd {fd}", t.name(), g[i]);
            }
        }
        let tape = Tape::new();
        let xb = tape.constant(Tensor::from_rows(&xs).unwrap());
        let lp = t.log_rho_batch(xb).unwrap().value();
        let sc = t.score_batch(xb).unwrap().value();
        assert_eq!(lp.shape(), &[points, 1]);
        for (i, x) in xs.iter().enumerate() {
            let v = t.eval_log_rho(x);
            assert!((lp.data()[i] - v).abs() < 1e-9 * (1.0 + v.abs()));
            let g = t.eval_grad_log_rho(x);
            for j in 0..d {
                assert!((sc.row_slice(i)[j] - g[j]).abs() < 1e-9 * (1.0 + g[j].abs()));
            }
        }
    }
}
