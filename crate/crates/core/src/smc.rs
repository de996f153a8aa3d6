//! Annealed sequential Monte Carlo with HMC moves and systematic resampling.
//!
//! Particles move along `π_β ∝ p₀^{1−β} ρ^β` with `p₀ = N(0, s² I)` and a
//! linear schedule `β_n = n/N`. Random numbers are consumed in a fixed order:
//! the initial particles (one normal vector each), then per temperature the
//! resampling uniform (if resampling) followed by, for every particle, one
//! momentum vector and one acceptance uniform.

use lps_tape::kernels;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::normal_vec;
use crate::targets::{TargetDensity, LN_2PI};

/// Hamiltonian Monte Carlo with identity mass and a step size that depends
/// on the annealing parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmcKernel {
    /// Step size for `β ≤ split`.
    pub early_step: f64,
    /// Step size for `β > split`.
    pub late_step: f64,
    pub split: f64,
    pub leapfrog_steps: usize,
}

impl Default for HmcKernel {
    fn default() -> Self {
        Self { early_step: 0.001, late_step: 0.1, split: 0.5, leapfrog_steps: 5 }
    }
}

impl HmcKernel {
    pub fn step_size(&self, beta: f64) -> f64 {
        if beta <= self.split { self.early_step } else { self.late_step }
    }
}

/// `L` leapfrog steps of size `eps` for the potential `−log π`.
pub fn leapfrog(
    x: &[f64],
    p: &[f64],
    grad_log_pi: &dyn Fn(&[f64]) -> Vec<f64>,
    eps: f64,
    steps: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut x = x.to_vec();
    let mut p = p.to_vec();
    let mut g = grad_log_pi(&x);
    for _ in 0..steps {
        p.iter_mut().zip(&g).for_each(|(pi, gi)| *pi += 0.5 * eps * gi);
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += eps * pi);
        g = grad_log_pi(&x);
        p.iter_mut().zip(&g).for_each(|(pi, gi)| *pi += 0.5 * eps * gi);
    }
    (x, p)
}

fn kinetic(p: &[f64]) -> f64 {
    0.5 * p.iter().map(|v| v * v).sum::<f64>()
}

/// One HMC transition; returns the new state and whether it was accepted.
/// Non-finite proposals are rejected.
pub fn hmc_step(
    x: &[f64],
    log_pi: &dyn Fn(&[f64]) -> f64,
    grad_log_pi: &dyn Fn(&[f64]) -> Vec<f64>,
    eps: f64,
    steps: usize,
    rng: &mut impl Rng,
) -> (Vec<f64>, bool) {
    let p = normal_vec(rng, x.len());
    let u: f64 = rng.gen();
    let (xp, pp) = leapfrog(x, &p, grad_log_pi, eps, steps);
    let h0 = -log_pi(x) + kinetic(&p);
    let h1 = -log_pi(&xp) + kinetic(&pp);
    let log_alpha = h0 - h1;
    if log_alpha.is_finite() && xp.iter().all(|v| v.is_finite()) && u.ln() < log_alpha {
        (xp, true)
    } else {
        (x.to_vec(), false)
    }
}

/// Ancestor indices by systematic resampling from normalized weights `w`.
pub fn systematic_resample(w: &[f64], rng: &mut impl Rng) -> Vec<usize> {
    let m = w.len();
    let u0: f64 = rng.gen();
    let mut out = Vec::with_capacity(m);
    let mut cum = 0.0;
    let mut i = 0;
    for j in 0..m {
        let u = (j as f64 + u0) / m as f64;
        while i + 1 < m && cum + w[i] < u {
            cum += w[i];
            i += 1;
        }
        out.push(i);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmcConfig {
    pub particles: usize,
    pub steps: usize,
    /// Standard deviation of the initial proposal `N(0, s² I)`.
    pub init_scale: f64,
    /// Resample when the normalized ESS falls below this value.
    pub resample_threshold: f64,
    pub hmc: HmcKernel,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self { particles: 2000, steps: 128, init_scale: 1.0, resample_threshold: 0.3, hmc: HmcKernel::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmcOutcome {
    pub particles: Vec<Vec<f64>>,
    /// Normalized log weights of the final particles.
    pub log_weights: Vec<f64>,
    pub log_z: f64,
    pub resamples: usize,
    pub acceptance_rate: f64,
    /// Normalized ESS after reweighting at each temperature.
    pub ess: Vec<f64>,
}

fn normalized_ess(lw: &[f64]) -> f64 {
    let a = kernels::logsumexp(lw.iter().copied());
    let b = kernels::logsumexp(lw.iter().map(|v| 2.0 * v));
    (2.0 * a - b).exp() / lw.len() as f64
}

/// Runs annealed SMC from `N(0, s² I)` to `ρ` and returns the particles with the `log Z` estimate.
pub fn smc_run(target: &dyn TargetDensity, config: &SmcConfig, rng: &mut impl Rng) -> Result<SmcOutcome> {
    if config.particles == 0 || config.steps == 0 {
        return Err(Error::Invalid("SMC needs particles and annealing steps".into()));
    }
    if !(config.init_scale > 0.0) {
        return Err(Error::Invalid("initial scale must be positive".into()));
    }
    let d = target.dim();
    let m = config.particles;
    let s2 = config.init_scale * config.init_scale;
    let log_p0 = |x: &[f64]| -> f64 {
        -0.5 * x.iter().map(|v| v * v).sum::<f64>() / s2 - 0.5 * d as f64 * (LN_2PI + s2.ln())
    };

    let mut xs: Vec<Vec<f64>> = (0..m)
        .map(|_| normal_vec(rng, d).into_iter().map(|z| config.init_scale * z).collect())
        .collect();
    // normalized log weights
    let mut lw = vec![-(m as f64).ln(); m];
    let mut log_z = 0.0;
    let mut resamples = 0;
    let mut accepted = 0usize;
    let mut ess_trace = Vec::with_capacity(config.steps);

    for n in 1..=config.steps {
        let (b_prev, b) = ((n - 1) as f64 / config.steps as f64, n as f64 / config.steps as f64);
        for (w, x) in lw.iter_mut().zip(&xs) {
            *w += (b - b_prev) * (target.eval_log_rho(x) - log_p0(x));
        }
        let total = kernels::logsumexp(lw.iter().copied());
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("all SMC weights degenerate at temperature {n}")));
        }
        log_z += total;
        lw.iter_mut().for_each(|w| *w -= total);
        let ess = normalized_ess(&lw);
        ess_trace.push(ess);
        if ess < config.resample_threshold {
            let w: Vec<f64> = lw.iter().map(|v| v.exp()).collect();
            let idx = systematic_resample(&w, rng);
            xs = idx.iter().map(|&i| xs[i].clone()).collect();
            lw = vec![-(m as f64).ln(); m];
            resamples += 1;
        }
        let log_pi = |x: &[f64]| (1.0 - b) * log_p0(x) + b * target.eval_log_rho(x);
        let grad = |x: &[f64]| -> Vec<f64> {
            let g = target.eval_grad_log_rho(x);
            x.iter().zip(g).map(|(xi, gi)| -(1.0 - b) * xi / s2 + b * gi).collect()
        };
        let eps = config.hmc.step_size(b);
        for x in xs.iter_mut() {
            let (next, ok) = hmc_step(x, &log_pi, &grad, eps, config.hmc.leapfrog_steps, rng);
            *x = next;
            accepted += ok as usize;
        }
    }
    Ok(SmcOutcome {
        particles: xs,
        log_weights: lw,
        log_z,
        resamples,
        acceptance_rate: accepted as f64 / (m * config.steps) as f64,
        ess: ess_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn std_normal_grad(x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| -v).collect()
    }

    fn std_normal_log(x: &[f64]) -> f64 {
        -0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn zero_step_size_is_identity() {
        let x = vec![0.3, -1.2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let (y, ok) = hmc_step(&x, &std_normal_log, &std_normal_grad, 0.0, 5, &mut rng);
            assert!(ok);
            assert_eq!(y, x);
        }
    }

    #[test]
    fn leapfrog_is_reversible() {
        let x = vec![0.7, -0.4, 1.9];
        let p = vec![-1.1, 0.5, 0.2];
        let (x1, p1) = leapfrog(&x, &p, &std_normal_grad, 0.13, 25);
        let flipped: Vec<f64> = p1.iter().map(|v| -v).collect();
        let (x2, p2) = leapfrog(&x1, &flipped, &std_normal_grad, 0.13, 25);
        for j in 0..3 {
            assert!((x2[j] - x[j]).abs() < 1e-10);
            assert!((p2[j] + p[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn energy_error_is_second_order() {
        let x = vec![1.3];
        let p = vec![0.4];
        let h = |x: &[f64], p: &[f64]| -std_normal_log(x) + kinetic(p);
        let h0 = h(&x, &p);
        // fixed trajectory length 1 so the global error scales with eps²
        let err = |eps: f64| {
            let steps = (1.0 / eps).round() as usize;
            let (x1, p1) = leapfrog(&x, &p, &std_normal_grad, eps, steps);
            (h(&x1, &p1) - h0).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn systematic_resampling_is_unbiased() {
        let w = [0.05, 0.4, 0.15, 0.3, 0.1];
        let m = w.len();
        let trials = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = vec![Vec::with_capacity(trials); m];
        for _ in 0..trials {
            let mut c = vec![0.0; m];
            for i in systematic_resample(&w, &mut rng) {
                c[i] += 1.0;
            }
            for i in 0..m {
                counts[i].push(c[i]);
            }
        }
        for i in 0..m {
            let mean = counts[i].iter().sum::<f64>() / trials as f64;
            let var = counts[i].iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
            let se = (var / trials as f64).sqrt().max(1e-12);
            assert!((mean - m as f64 * w[i]).abs() < 3.0 * se + 1e-9, "particle {i}: {mean}");
        }
    }

    #[test]
    fn resampling_yields_valid_ancestors() {
        let w = [0.0, 0.0, 1.0, 0.0];
        let idx = systematic_resample(&w, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(idx, vec![2, 2, 2, 2]);
    }

    #[test]
    fn normalized_ess_of_equal_weights_is_one() {
        assert!((normalized_ess(&[-1.3; 50]) - 1.0).abs() < 1e-12);
    }
}
