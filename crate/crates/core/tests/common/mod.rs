//! Oracles shared by the integration tests. They use only plain `f64`
//! arithmetic so they stay independent of the tape and the samplers.
#![allow(dead_code)]

use std::f64::consts::PI;

/// `c + a·ξ + b·ε` for independent standard normals `ξ, ε`.
#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub c: f64,
    pub xi: f64,
    pub eps: f64,
}

impl Affine {
    pub fn add(self, o: Affine) -> Affine {
        Affine { c: self.c + o.c, xi: self.xi + o.xi, eps: self.eps + o.eps }
    }

    pub fn scale(self, k: f64) -> Affine {
        Affine { c: k * self.c, xi: k * self.xi, eps: k * self.eps }
    }

    pub fn offset(self, k: f64) -> Affine {
        Affine { c: self.c + k, ..self }
    }

    /// `E[(c + aξ + bε)²]`.
    pub fn second_moment(self) -> f64 {
        self.c * self.c + self.xi * self.xi + self.eps * self.eps
    }
}

/// Expected log weight of a one-step uncontrolled DBS chain with prior
/// `N(m0, s0² I)`, target `Z·N(mu, tau² I)`, step `dt`, diffusion `sigma`, in `d` dimensions.
pub fn one_step_gaussian_chain(d: usize, m0: f64, s0: f64, mu: f64, tau: f64, log_z: f64, dt: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let x0 = Affine { c: m0, xi: s0, eps: 0.0 };
    let drift = |x: Affine| x.scale(-s2 / (tau * tau)).offset(s2 * mu / (tau * tau));
    let x1 = x0.add(drift(x0).scale(dt)).add(Affine { c: 0.0, xi: 0.0, eps: sigma * (2.0 * dt).sqrt() });
    let var = 2.0 * s2 * dt;
    let log_rho = -0.5 * (2.0 * PI * tau * tau).ln() - x1.offset(-mu).second_moment() / (2.0 * tau * tau);
    let log_p0 = -0.5 * (2.0 * PI * s0 * s0).ln() - 0.5;
    // backward mean x1 − f(x1)·dt
    let bwd_res = x0.add(x1.scale(-1.0)).add(drift(x1).scale(dt));
    let fwd_res = x1.add(x0.scale(-1.0)).add(drift(x0).scale(-dt));
    let norm = -0.5 * (2.0 * PI * var).ln();
    let per_dim = log_rho - log_p0 + (norm - bwd_res.second_moment() / (2.0 * var)) - (norm - fwd_res.second_moment() / (2.0 * var));
    // the normalizer enters once, not per dimension
    log_z + d as f64 * per_dim
}

pub fn normal_logpdf(y: &[f64], mean: &[f64], var: f64) -> f64 {
    let q: f64 = y.iter().zip(mean).map(|(a, b)| (a - b).powi(2)).sum();
    -0.5 * q / var - 0.5 * y.len() as f64 * (2.0 * PI * var).ln()
}

/// `log Σ_k (1/K) N(x; μ_k, diag σ_k²)` by direct summation.
pub fn mixture_logpdf(x: &[f64], means: &[Vec<f64>], stds: &[Vec<f64>]) -> f64 {
    let k = means.len() as f64;
    let mut total = 0.0;
    for (m, s) in means.iter().zip(stds) {
        let mut lp = 0.0;
        for ((xi, mi), si) in x.iter().zip(m).zip(s) {
            lp += -0.5 * ((xi - mi) / si).powi(2) - si.ln() - 0.5 * (2.0 * PI).ln();
        }
        total += lp.exp() / k;
    }
    total.ln()
}

pub fn mixture_score(x: &[f64], means: &[Vec<f64>], stds: &[Vec<f64>]) -> Vec<f64> {
    let d = x.len();
    let mut num = vec![0.0; d];
    let mut den = 0.0;
    for (m, s) in means.iter().zip(stds) {
        let mut lp = 0.0;
        for j in 0..d {
            lp += -0.5 * ((x[j] - m[j]) / s[j]).powi(2) - s[j].ln();
        }
        let w = lp.exp();
        den += w;
        for j in 0..d {
            num[j] -= w * (x[j] - m[j]) / (s[j] * s[j]);
        }
    }
    num.iter().map(|v| v / den).collect()
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `log ∫ exp(−(1−2λ)φ² − λφ⁴) dφ` by Simpson's rule on [−12, 12].
pub fn phi4_site_log_z(lambda: f64) -> f64 {
    let n = 20_000;
    let (a, b) = (-12.0, 12.0);
    let h = (b - a) / n as f64;
    let f = |p: f64| (-(1.0 - 2.0 * lambda) * p * p - lambda * p.powi(4)).exp();
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    (s * h / 3.0).ln()
}

/// `log ∫ exp(−a·φ² − λφ⁴) dφ` by Simpson's rule on [−20, 20].
pub fn quartic_log_integral(a: f64, lambda: f64) -> f64 {
    let n = 40_000;
    let (lo, hi) = (-20.0, 20.0);
    let h = (hi - lo) / n as f64;
    let log_f = |p: f64| -a * p * p - lambda * p.powi(4);
    let peak = (0..=n).map(|i| log_f(lo + i as f64 * h)).fold(f64::NEG_INFINITY, f64::max);
    let f = |p: f64| (log_f(p) - peak).exp();
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    peak + (s * h / 3.0).ln()
}
