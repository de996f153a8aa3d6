use lps_tape::{TapeError, Var};
use rand::RngCore;

use super::{TargetDensity, LN_2PI};
use crate::rng::normal_vec;

/// Neal's funnel: `x₁ ~ N(0, σ_f²)`, `x_i | x₁ ~ N(0, e^{x₁})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Funnel {
    dim: usize,
    var_first: f64,
}

impl Default for Funnel {
    fn default() -> Self {
        Self { dim: 10, var_first: 9.0 }
    }
}

impl Funnel {
    pub fn new(dim: usize, var_first: f64) -> Self {
        assert!(dim >= 2 && var_first > 0.0);
        Self { dim, var_first }
    }
}

impl TargetDensity for Funnel {
    fn name(&self) -> String {
        "funnel".into()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_log_rho(&self, x: &[f64]) -> f64 {
        let v = x[0];
        let rest = (self.dim - 1) as f64;
        let sq: f64 = x[1..].iter().map(|a| a * a).sum();
        -0.5 * (LN_2PI + self.var_first.ln()) - 0.5 * v * v / self.var_first
            - 0.5 * rest * (LN_2PI + v)
            - 0.5 * sq * (-v).exp()
    }

    fn eval_grad_log_rho(&self, x: &[f64]) -> Vec<f64> {
        let v = x[0];
        let rest = (self.dim - 1) as f64;
        let e = (-v).exp();
        let sq: f64 = x[1..].iter().map(|a| a * a).sum();
        let mut g = Vec::with_capacity(self.dim);
        g.push(-v / self.var_first - 0.5 * rest + 0.5 * sq * e);
        g.extend(x[1..].iter().map(|a| -a * e));
        g
    }

    fn log_rho_batch<'t>(&self, x: Var<'t>) -> Result<Var<'t>, TapeError> {
        let v = x.slice(1, 0, 1)?;
        let tail = x.slice(1, 1, self.dim - 1)?;
        let rest = (self.dim - 1) as f64;
        let sq = tail.square().sum_axis(1)?;
        let first = v.square().scale(-0.5 / self.var_first);
        let spread = v.scale(-0.5 * rest);
        let quad = sq.mul(v.neg().exp())?.scale(-0.5);
        let c = -0.5 * (LN_2PI + self.var_first.ln()) - 0.5 * rest * LN_2PI;
        Ok(first.add(spread)?.add(quad)?.offset(c))
    }

    fn score_batch<'t>(&self, x: Var<'t>) -> Result<Var<'t>, TapeError> {
        let v = x.slice(1, 0, 1)?;
        let tail = x.slice(1, 1, self.dim - 1)?;
        let e = v.neg().exp();
        let rest = (self.dim - 1) as f64;
        let sq = tail.square().sum_axis(1)?;
        let g0 = v
            .scale(-1.0 / self.var_first)
            .add(sq.mul(e)?.scale(0.5))?
            .offset(-0.5 * rest);
        let gt = tail.mul(e)?.neg();
        x.tape().concat(&[g0, gt], 1)
    }

    fn log_z(&self) -> Option<f64> {
        Some(0.0)
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Option<Vec<Vec<f64>>> {
        let sd = self.var_first.sqrt();
        Some(
            (0..n)
                .map(|_| {
                    let z = normal_vec(rng, self.dim);
                    let v = sd * z[0];
                    let s = (0.5 * v).exp();
                    std::iter::once(v).chain(z[1..].iter().map(|a| s * a)).collect()
                })
                .collect(),
        )
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::testing::check_target;

    #[test]
    fn value_at_origin() {
        let f = Funnel::default();
        let expect = -0.5 * (2.0 * std::f64::consts::PI * 9.0).ln() - 4.5 * LN_2PI;
        assert!((f.log_rho(&[0.0; 10]).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn gradient_and_batch_agree() {
        check_target(&Funnel::default(), 50, 2.0, 2);
    }
}
