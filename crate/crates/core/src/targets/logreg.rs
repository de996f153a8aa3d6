use lps_tape::{kernels, TapeError, Tensor, Var};
use rand::Rng;

use super::{Dataset, TargetDensity, LN_2PI};
use crate::error::Result;
use crate::rng::{normal_vec, substream, Substream};

/// Bayesian logistic regression posterior with a `N(0, σ_ω² I)` prior.
#[derive(Debug, Clone)]
pub struct BayesLogReg {
    design: Tensor,
    design_t: Tensor,
    labels: Tensor,
    labels_vec: Vec<f64>,
    prior_var: f64,
}

impl BayesLogReg {
    pub fn new(data: &Dataset, prior_var: f64) -> Result<Self> {
        let design = Tensor::from_rows(&data.features)?;
        let labels = Tensor::row(&data.labels);
        let design_t = transpose(&design);
        Ok(Self { design, design_t, labels, labels_vec: data.labels.clone(), prior_var })
    }

    /// Seeded synthetic problem with `n` rows and `dim` weights (the last one an intercept).
    pub fn synthetic(seed: u64, n: usize, dim: usize) -> Result<Self> {
        let mut rng = substream(seed, Substream::Target);
        let truth = normal_vec(&mut rng, dim);
        let mut features = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let x = normal_vec(&mut rng, dim - 1);
            let z: f64 = x.iter().zip(&truth).map(|(a, w)| a * w).sum::<f64>() + truth[dim - 1];
            labels.push(if rng.gen::<f64>() < kernels::sigmoid(z) { 1.0 } else { 0.0 });
            features.push(x);
        }
        let mut data = Dataset::new(features, labels)?;
        data.standardize();
        Self::new(&data.with_intercept(), 100.0)
    }

    fn logits(&self, w: &[f64]) -> Vec<f64> {
        self.design
            .rows()
            .map(|r| r.iter().zip(w).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn prior_norm(&self) -> f64 {
        -0.5 * self.dim() as f64 * (LN_2PI + self.prior_var.ln())
    }
}

impl TargetDensity for BayesLogReg {
    fn name(&self) -> String {
        "logreg".into()
    }

    fn dim(&self) -> usize {
        self.design.shape()[1]
    }

    fn eval_log_rho(&self, w: &[f64]) -> f64 {
        let ll: f64 = self
            .logits(w)
            .iter()
            .zip(&self.labels_vec)
            .map(|(z, y)| y * z - kernels::softplus(*z))
            .sum();
        let sq: f64 = w.iter().map(|a| a * a).sum();
        ll - 0.5 * sq / self.prior_var + self.prior_norm()
    }

    fn eval_grad_log_rho(&self, w: &[f64]) -> Vec<f64> {
        let z = self.logits(w);
        let mut g: Vec<f64> = w.iter().map(|a| -a / self.prior_var).collect();
        for ((row, zi), y) in self.design.rows().zip(&z).zip(&self.labels_vec) {
            let r = y - kernels::sigmoid(*zi);
            for (gj, xj) in g.iter_mut().zip(row) {
                *gj += r * xj;
            }
        }
        g
    }

    fn log_rho_batch<'t>(&self, w: Var<'t>) -> Result<Var<'t>, TapeError> {
        let tape = w.tape();
        let z = w.matmul(tape.constant(self.design_t.clone()))?;
        let ll = z.mul(tape.constant(self.labels.clone()))?.sub(z.softplus())?.sum_axis(1)?;
        let prior = w.square().sum_axis(1)?.scale(-0.5 / self.prior_var);
        Ok(ll.add(prior)?.offset(self.prior_norm()))
    }

    fn score_batch<'t>(&self, w: Var<'t>) -> Result<Var<'t>, TapeError> {
        let tape = w.tape();
        let z = w.matmul(tape.constant(self.design_t.clone()))?;
        let resid = tape.constant(self.labels.clone()).sub(z.sigmoid())?;
        let lik = resid.matmul(tape.constant(self.design.clone()))?;
        lik.sub(w.scale(1.0 / self.prior_var))
    }
}

fn transpose(t: &Tensor) -> Tensor {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out).expect("transpose preserves length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::testing::check_target;

    #[test]
    fn gradient_and_batch_agree() {
        let t = BayesLogReg::synthetic(0, 100, 11).unwrap();
        assert_eq!(t.dim(), 11);
        check_target(&t, 50, 1.5, 5);
    }

    #[test]
    fn matches_direct_bernoulli_likelihood() {
        let data = Dataset::new(vec![vec![0.5], vec![-1.0]], vec![1.0, 0.0]).unwrap();
        let t = BayesLogReg::new(&data, 100.0).unwrap();
        let w = [0.7];
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let expect = s(0.35).ln() + (1.0 - s(-0.7)).ln() - 0.5 * 0.49 / 100.0
            - 0.5 * (2.0 * std::f64::consts::PI * 100.0).ln();
        assert!((t.log_rho(&w).unwrap() - expect).abs() < 1e-12);
    }
}
