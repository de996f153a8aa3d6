//! Diagonal Gaussian and Gaussian-mixture priors with reparameterized sampling.
//!
//! Mixture weights are uniform and never trained. Each component's standard
//! deviation is `softplus(raw_scale)`, so it stays positive under any update.

use lps_tape::{kernels, Parameter, Tape, TapeError, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::targets::LN_2PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    mean: Parameter,
    raw_scale: Parameter,
}

impl DiagGaussian {
    pub fn new(mean: &[f64], std: &[f64]) -> Result<Self> {
        check_dim(mean.len(), std.len())?;
        if mean.is_empty() {
            return Err(Error::Empty("mean"));
        }
        if let Some(s) = std.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Invalid(format!("standard deviation {s} must be positive")));
        }
        let raw: Vec<f64> = std.iter().map(|&s| kernels::softplus_inv(s)).collect();
        Ok(Self {
            mean: Parameter::new(Tensor::row(mean)),
            raw_scale: Parameter::new(Tensor::row(&raw)),
        })
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(&vec![0.0; dim], &vec![1.0; dim]).expect("unit scale is valid")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.value().data()
    }

    pub fn std(&self) -> Vec<f64> {
        self.raw_scale.value().data().iter().map(|&r| kernels::softplus(r)).collect()
    }

    pub fn mean_param(&self) -> &Parameter {
        &self.mean
    }

    pub fn raw_scale_param(&self) -> &Parameter {
        &self.raw_scale
    }

    fn log_prob(&self, x: &[f64]) -> f64 {
        let std = self.std();
        let mut acc = -0.5 * self.dim() as f64 * LN_2PI;
        for ((xi, m), s) in x.iter().zip(self.mean()).zip(&std) {
            let z = (xi - m) / s;
            acc -= 0.5 * z * z + s.ln();
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePrior {
    components: Vec<DiagGaussian>,
}

impl MixturePrior {
    pub fn new(components: Vec<DiagGaussian>) -> Result<Self> {
        let first = components.first().ok_or(Error::Empty("mixture"))?;
        let d = first.dim();
        for c in &components {
            check_dim(d, c.dim())?;
        }
        Ok(Self { components })
    }

    pub fn standard(dim: usize) -> Self {
        Self { components: vec![DiagGaussian::standard(dim)] }
    }

    /// `K` components of std `std` with means `jitter·ξ_k`, `ξ_k ~ N(0, I)`,
    /// so that identical components do not receive identical gradients.
    pub fn jittered<R: rand::Rng + ?Sized>(dim: usize, k: usize, std: f64, jitter: f64, rng: &mut R) -> Result<Self> {
        if k == 0 {
            return Err(Error::Empty("mixture"));
        }
        let components = (0..k)
            .map(|_| {
                let mean: Vec<f64> = crate::rng::normal_vec(rng, dim).into_iter().map(|z| jitter * z).collect();
                DiagGaussian::new(&mean, &vec![std; dim])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(components)
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn components(&self) -> &[DiagGaussian] {
        &self.components
    }

    /// Uniform mixture weights `1/K`.
    pub fn weights(&self) -> Vec<f64> {
        vec![1.0 / self.k() as f64; self.k()]
    }

    pub fn set_trainable(&mut self, on: bool) {
        for p in self.parameters_mut() {
            p.set_requires_grad(on);
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.parameters().iter().any(|p| p.requires_grad())
    }

    /// Component parameters in `(mean, raw_scale)` pairs, component order.
    pub fn parameters(&self) -> Vec<&Parameter> {
        self.components.iter().flat_map(|c| [&c.mean, &c.raw_scale]).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.components
            .iter_mut()
            .flat_map(|c| [&mut c.mean, &mut c.raw_scale])
            .collect()
    }

    fn component_log_probs(&self, x: &[f64]) -> Vec<f64> {
        let lw = -(self.k() as f64).ln();
        self.components.iter().map(|c| lw + c.log_prob(x)).collect()
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(kernels::logsumexp(self.component_log_probs(x).into_iter()))
    }

    /// Responsibility-weighted component scores.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let lp = self.component_log_probs(x);
        let lse = kernels::logsumexp(lp.iter().copied());
        let mut g = vec![0.0; self.dim()];
        for (c, l) in self.components.iter().zip(&lp) {
            let r = (l - lse).exp();
            for (((gi, xi), m), s) in g.iter_mut().zip(x).zip(c.mean()).zip(c.std()) {
                *gi -= r * (xi - m) / (s * s);
            }
        }
        Ok(g)
    }

    /// `μ_k + σ_k ⊙ ξ`.
    pub fn sample_reparam(&self, xi: &[f64], k: usize) -> Result<Vec<f64>> {
        check_dim(self.dim(), xi.len())?;
        let c = self.components.get(k).ok_or_else(|| {
            Error::Invalid(format!("component {k} out of range for K={}", self.k()))
        })?;
        Ok(c.mean().iter().zip(c.std()).zip(xi).map(|((m, s), z)| m + s * z).collect())
    }

    /// Appends `N(mean, std² I)`; weights become uniform over `K+1`.
    pub fn add_component(&mut self, mean: &[f64], std: f64) -> Result<()> {
        check_dim(self.dim(), mean.len())?;
        let mut c = DiagGaussian::new(mean, &vec![std; mean.len()])?;
        let trainable = self.is_trainable();
        c.mean.set_requires_grad(trainable);
        c.raw_scale.set_requires_grad(trainable);
        self.components.push(c);
        Ok(())
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> Result<BoundPrior<'t>, TapeError> {
        let d = self.dim();
        let k = self.k();
        let mut means = Vec::with_capacity(k);
        let mut stds = Vec::with_capacity(k);
        let mut vars = Vec::with_capacity(k);
        let mut norms = Vec::with_capacity(k);
        let mut params = Vec::with_capacity(2 * k);
        let c0 = -(k as f64).ln() - 0.5 * d as f64 * LN_2PI;
        for c in &self.components {
            let m = tape.param(&c.mean);
            let raw = tape.param(&c.raw_scale);
            let s = raw.softplus();
            norms.push(s.log()?.sum().neg().offset(c0));
            vars.push(s.square());
            means.push(m);
            stds.push(s);
            params.push(m);
            params.push(raw);
        }
        Ok(BoundPrior { dim: d, means, stds, vars, norms, params })
    }
}

/// A prior whose parameters live on a tape.
pub struct BoundPrior<'t> {
    dim: usize,
    means: Vec<Var<'t>>,
    stds: Vec<Var<'t>>,
    vars: Vec<Var<'t>>,
    norms: Vec<Var<'t>>,
    params: Vec<Var<'t>>,
}

impl<'t> BoundPrior<'t> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    /// Tape handles in the order of [`MixturePrior::parameters`].
    pub fn params(&self) -> &[Var<'t>] {
        &self.params
    }

    /// Per component: `B×1` weighted log-density and `(x−μ)/σ²`.
    fn terms(&self, x: Var<'t>) -> Result<Vec<(Var<'t>, Var<'t>)>, TapeError> {
        (0..self.k())
            .map(|j| {
                let diff = x.sub(self.means[j])?;
                let scaled = diff.div(self.vars[j])?;
                let q = diff.mul(scaled)?.sum_axis(1)?;
                Ok((q.scale(-0.5).add(self.norms[j])?, scaled))
            })
            .collect()
    }

    pub fn log_density(&self, x: Var<'t>) -> Result<Var<'t>, TapeError> {
        Ok(self.log_density_and_score(x, false)?.0)
    }

    pub fn score(&self, x: Var<'t>) -> Result<Var<'t>, TapeError> {
        Ok(self.log_density_and_score(x, true)?.1.expect("score requested"))
    }

    pub fn log_density_and_score(
        &self,
        x: Var<'t>,
        with_score: bool,
    ) -> Result<(Var<'t>, Option<Var<'t>>), TapeError> {
        let terms = self.terms(x)?;
        if terms.len() == 1 {
            let (l, s) = terms[0];
            return Ok((l, with_score.then(|| s.neg())));
        }
        let logs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let lse = x.tape().concat(&logs, 1)?.logsumexp_axis(1)?;
        if !with_score {
            return Ok((lse, None));
        }
        let mut acc: Option<Var> = None;
        for (l, s) in terms {
            let piece = l.sub(lse)?.exp().mul(s)?;
            acc = Some(match acc {
                None => piece,
                Some(a) => a.add(piece)?,
            });
        }
        Ok((lse, acc.map(Var::neg)))
    }

    /// Row `i` is `μ_{k_i} + σ_{k_i} ⊙ ξ_i`.
    pub fn sample(&self, xi: Var<'t>, components: &[usize]) -> Result<Var<'t>, TapeError> {
        if self.k() == 1 {
            return xi.mul(self.stds[0])?.add(self.means[0]);
        }
        let tape = xi.tape();
        let means = tape.concat(&self.means, 0)?.index_select(0, components)?;
        let stds = tape.concat(&self.stds, 0)?.index_select(0, components)?;
        xi.mul(stds)?.add(means)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mixture(rng: &mut ChaCha8Rng, k: usize, d: usize) -> MixturePrior {
        let comps = (0..k)
            .map(|_| {
                let m: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let s: Vec<f64> = (0..d).map(|_| rng.gen_range(0.3..2.0)).collect();
                DiagGaussian::new(&m, &s).unwrap()
            })
            .collect();
        MixturePrior::new(comps).unwrap()
    }

    /// Direct `log Σ_k (1/K) Π_i N(x_i; μ_ki, σ_ki²)` without log-space tricks.
    fn brute_force(p: &MixturePrior, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for c in p.components() {
            let mut dens = 1.0 / p.k() as f64;
            for ((xi, m), s) in x.iter().zip(c.mean()).zip(c.std()) {
                dens *= (-(xi - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
            }
            total += dens;
        }
        total.ln()
    }

    #[test]
    fn standard_gaussian_values() {
        let p = MixturePrior::standard(2);
        assert!((p.log_density(&[0.0, 0.0]).unwrap() + LN_2PI).abs() < 1e-14);
        let s = p.score(&[0.3, -1.0]).unwrap();
        assert!((s[0] + 0.3).abs() < 1e-12 && (s[1] - 1.0).abs() < 1e-12);
        assert_eq!(p.score(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(p.log_density(&[0.0]).is_err());
    }

    #[test]
    fn duplicate_components_collapse() {
        let g = DiagGaussian::new(&[1.0, -1.0], &[0.5, 2.0]).unwrap();
        let single = MixturePrior::new(vec![g.clone()]).unwrap();
        let double = MixturePrior::new(vec![g.clone(), g]).unwrap();
        for x in [[0.0, 0.0], [1.3, 2.0]] {
            let (a, b) = (single.log_density(&x).unwrap(), double.log_density(&x).unwrap());
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn log_density_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_mixture(&mut rng, 3, 2);
        let tape = Tape::new();
        let bound = p.bind(&tape).unwrap();
        let xs: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)]).collect();
        let batch = bound.log_density(tape.constant(Tensor::from_rows(&xs).unwrap())).unwrap().value();
        for (i, x) in xs.iter().enumerate() {
            let want = brute_force(&p, x);
            assert!((p.log_density(x).unwrap() - want).abs() < 1e-10);
            assert!((batch.data()[i] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn score_matches_autodiff_of_log_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = random_mixture(&mut rng, 4, 3);
        for _ in 0..30 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let tape = Tape::new();
            let bound = p.bind(&tape).unwrap();
            let xv = tape.leaf(Tensor::row(&x), true);
            let (lp, score) = bound.log_density_and_score(xv, true).unwrap();
            let score = score.unwrap().value();
            let auto = tape.backward(lp.sum()).unwrap().wrt_or_zeros(xv);
            let direct = p.score(&x).unwrap();
            for j in 0..3 {
                let scale = auto.data()[j].abs().max(1e-8);
                assert!((direct[j] - auto.data()[j]).abs() / scale < 1e-8);
                assert!((score.data()[j] - auto.data()[j]).abs() / scale < 1e-8);
            }
        }
    }

    #[test]
    fn reparameterized_samples() {
        let p = MixturePrior::new(vec![
            DiagGaussian::standard(2),
            DiagGaussian::new(&[3.0, -1.0], &[0.5, 2.0]).unwrap(),
        ])
        .unwrap();
        assert_eq!(p.sample_reparam(&[0.0, 0.0], 1).unwrap(), vec![3.0, -1.0]);
        let x = p.sample_reparam(&[0.4, -0.7], 0).unwrap();
        assert!((x[0] - 0.4).abs() < 1e-12 && (x[1] + 0.7).abs() < 1e-12);
        assert!(p.sample_reparam(&[0.0, 0.0], 2).is_err());

        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut sums = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let xi = crate::rng::normal_vec(&mut rng, 2);
            let x = p.sample_reparam(&xi, 1).unwrap();
            for j in 0..2 {
                sums[j] += x[j];
                sq[j] += x[j] * x[j];
            }
        }
        let (mu, sd) = ([3.0, -1.0], [0.5, 2.0]);
        for j in 0..2 {
            let mean = sums[j] / n as f64;
            let var = sq[j] / n as f64 - mean * mean;
            assert!((mean - mu[j]).abs() < 3.0 * sd[j] / (n as f64).sqrt());
            let var_se = sd[j] * sd[j] * (2.0 / n as f64).sqrt();
            assert!((var - sd[j] * sd[j]).abs() < 3.0 * var_se);
        }
    }

    #[test]
    fn bound_sampling_selects_components() {
        let p = MixturePrior::new(vec![
            DiagGaussian::new(&[1.0], &[2.0]).unwrap(),
            DiagGaussian::new(&[-5.0], &[0.1]).unwrap(),
        ])
        .unwrap();
        let tape = Tape::new();
        let bound = p.bind(&tape).unwrap();
        let xi = tape.constant(Tensor::column(&[1.0, 1.0, -1.0]));
        let x = bound.sample(xi, &[0, 1, 1]).unwrap().value();
        let expect = [3.0, -4.9, -5.1];
        for (a, b) in x.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn add_component_reweights() {
        let mut p = MixturePrior::standard(2);
        let before = p.clone();
        p.add_component(&[2.0, 2.0], 1.0).unwrap();
        assert_eq!(p.k(), 2);
        assert_eq!(p.weights(), vec![0.5, 0.5]);
        assert_eq!(p.components()[0], before.components()[0]);
        let x = [0.0, 0.0];
        let old = before.log_density(&x).unwrap();
        let new_comp = -LN_2PI - 4.0;
        let expect = (0.5 * old.exp() + 0.5 * new_comp.exp()).ln();
        assert!((p.log_density(&x).unwrap() - expect).abs() < 1e-12);
        assert!((p.log_density(&x).unwrap() - brute_force(&p, &x)).abs() < 1e-12);
        assert!(p.add_component(&[0.0, 0.0], 0.0).is_err());
        assert!(p.add_component(&[0.0], 1.0).is_err());
    }

    #[test]
    fn reparameterization_gradient_matches_expectation_derivative() {
        // f(x) = (x − 1)², x = μ + σξ ⇒ dE[f]/dμ = 2(μ − 1).
        let p = MixturePrior::new(vec![DiagGaussian::new(&[0.3], &[0.8]).unwrap()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 20_000;
        let xi: Vec<f64> = crate::rng::normal_vec(&mut rng, n);
        let tape = Tape::new();
        let bound = p.bind(&tape).unwrap();
        let x = bound.sample(tape.constant(Tensor::column(&xi)), &vec![0; n]).unwrap();
        let per = x.offset(-1.0).square();
        let grads = tape.backward(per.mean()).unwrap();
        let g = grads.wrt_or_zeros(bound.params()[0]).data()[0];
        let samples: Vec<f64> = xi.iter().map(|z| 2.0 * (0.3 + 0.8 * z - 1.0)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let sd = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((g - 2.0 * (0.3 - 1.0)).abs() < 3.0 * sd / (n as f64).sqrt());
    }
}
