use lps_tape::{TapeError, Tensor, Var};
use rand::RngCore;

use super::{TargetDensity, LN_2PI};
use crate::rng::normal_vec;

/// `ρ(x) = Z · N(x; mean, var·I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotropicGaussian {
    mean: Vec<f64>,
    var: f64,
    log_z: f64,
}

impl IsotropicGaussian {
    pub fn new(mean: Vec<f64>, var: f64) -> Self {
        assert!(var > 0.0, "variance must be positive");
        Self { mean, var, log_z: 0.0 }
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(vec![0.0; dim], 1.0)
    }

    /// Same density scaled so its normalization constant is `exp(log_z)`.
    pub fn with_log_z(mut self, log_z: f64) -> Self {
        self.log_z = log_z;
        self
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> f64 {
        self.var
    }

    fn log_norm(&self) -> f64 {
        self.log_z - 0.5 * self.mean.len() as f64 * (LN_2PI + self.var.ln())
    }
}

impl TargetDensity for IsotropicGaussian {
    fn name(&self) -> String {
        "gaussian".into()
    }

    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn eval_log_rho(&self, x: &[f64]) -> f64 {
        let sq: f64 = x.iter().zip(&self.mean).map(|(a, m)| (a - m).powi(2)).sum();
        self.log_norm() - 0.5 * sq / self.var
    }

    fn eval_grad_log_rho(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).map(|(a, m)| (m - a) / self.var).collect()
    }

    fn log_rho_batch<'t>(&self, x: Var<'t>) -> Result<Var<'t>, TapeError> {
        let mean = x.tape().constant(Tensor::row(&self.mean));
        let sq = x.sub(mean)?.square().sum_axis(1)?;
        Ok(sq.scale(-0.5 / self.var).offset(self.log_norm()))
    }

    fn score_batch<'t>(&self, x: Var<'t>) -> Result<Var<'t>, TapeError> {
        let mean = x.tape().constant(Tensor::row(&self.mean));
        Ok(mean.sub(x)?.scale(1.0 / self.var))
    }

    fn log_z(&self) -> Option<f64> {
        Some(self.log_z)
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Option<Vec<Vec<f64>>> {
        let sd = self.var.sqrt();
        Some(
            (0..n)
                .map(|_| {
                    normal_vec(rng, self.mean.len())
                        .into_iter()
                        .zip(&self.mean)
                        .map(|(z, m)| m + sd * z)
                        .collect()
                })
                .collect(),
        )
    }

    fn mode_centers(&self) -> Option<Vec<Vec<f64>>> {
        Some(vec![self.mean.clone()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::testing::check_target;

    #[test]
    fn standard_value_and_score() {
        let g = IsotropicGaussian::standard(2);
        assert!((g.log_rho(&[0.0, 0.0]).unwrap() + LN_2PI).abs() < 1e-14);
        assert_eq!(g.grad_log_rho(&[0.5, -2.0]).unwrap(), vec![-0.5, 2.0]);
        assert!(g.log_rho(&[0.0]).is_err());
    }

    #[test]
    fn gradient_and_batch_agree() {
        check_target(&IsotropicGaussian::new(vec![1.0, -2.0, 0.5], 2.5).with_log_z(3.0), 50, 4.0, 1);
    }
}
