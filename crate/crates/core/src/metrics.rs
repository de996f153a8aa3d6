//! Evaluation metrics over importance weights and sample sets.

use lps_tape::{kernels, Tape, TapeError, Var};
use serde::{Deserialize, Serialize};

use crate::controls::batch_jacobians;
use crate::error::{Error, Result};
use crate::rng::normal_vec;
use lps_tape::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn nonempty(lw: &[f64]) -> Result<()> {
    if lw.is_empty() {
        Err(Error::Empty("weight set"))
    } else {
        Ok(())
    }
}

/// Mean log weight.
pub fn elbo(lw: &[f64]) -> Result<f64> {
    nonempty(lw)?;
    Ok(lw.iter().sum::<f64>() / lw.len() as f64)
}

/// `logsumexp(log w) − log m`.
pub fn log_z_hat(lw: &[f64]) -> Result<f64> {
    nonempty(lw)?;
    Ok(kernels::logsumexp(lw.iter().copied()) - (lw.len() as f64).ln())
}

/// Normalized effective sample size `(Σw)² / (m Σw²)`, computed in log space
/// from offsets to the largest weight so that it is exactly shift-invariant
/// whenever those offsets are.
pub fn ess(lw: &[f64]) -> Result<f64> {
    nonempty(lw)?;
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("weight set has no finite weight".into()));
    }
    let d: Vec<f64> = lw.iter().map(|w| w - max).collect();
    let a = kernels::logsumexp(d.iter().copied());
    let b = kernels::logsumexp(d.iter().map(|v| 2.0 * v));
    Ok((2.0 * a - b - (lw.len() as f64).ln()).exp().min(1.0))
}

/// Entropic optimal-transport outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sinkhorn {
    /// Transport cost `⟨P, C⟩` under the regularized plan.
    pub cost: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    /// Regularization; `None` uses `0.05 ×` the median squared distance.
    pub epsilon: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self { epsilon: None, max_iter: 1000, tol: 1e-6 }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Log-domain Sinkhorn with squared-Euclidean cost and uniform marginals.
pub fn sinkhorn(a: &[Vec<f64>], b: &[Vec<f64>], opts: &SinkhornOptions) -> Result<Sinkhorn> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|x| x.len() != d) {
        return Err(Error::Invalid("sample sets must share one dimension".into()));
    }
    let (n, m) = (a.len(), b.len());
    let cost: Vec<f64> = a.iter().flat_map(|x| b.iter().map(move |y| sq_dist(x, y))).collect();
    let eps = match opts.epsilon {
        Some(e) => e,
        None => {
            let med = median(cost.clone());
            if med > 0.0 { 0.05 * med } else { 1e-3 }
        }
    };
    let (la, lb) = (-(n as f64).ln(), -(m as f64).ln());
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut converged = false;
    let mut iterations = 0;
    let mut buf = vec![0.0; n.max(m)];
    while iterations < opts.max_iter {
        iterations += 1;
        for i in 0..n {
            for j in 0..m {
                buf[j] = (g[j] - cost[i * m + j]) / eps + lb;
            }
            f[i] = -eps * kernels::logsumexp(buf[..m].iter().copied());
        }
        for j in 0..m {
            for i in 0..n {
                buf[i] = (f[i] - cost[i * m + j]) / eps + la;
            }
            g[j] = -eps * kernels::logsumexp(buf[..n].iter().copied());
        }
        let violation: f64 = (0..n)
            .map(|i| {
                let row: f64 = (0..m)
                    .map(|j| ((f[i] + g[j] - cost[i * m + j]) / eps + la + lb).exp())
                    .sum();
                (row - 1.0 / n as f64).abs()
            })
            .sum();
        if violation < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("sinkhorn did not converge in {iterations} iterations");
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            let c = cost[i * m + j];
            total += ((f[i] + g[j] - c) / eps + la + lb).exp() * c;
        }
    }
    Ok(Sinkhorn { cost: total, epsilon: eps, iterations, converged })
}

/// Normalized entropy of nearest-center assignment frequencies; `0` for one center.
pub fn emc(samples: &[Vec<f64>], centers: &[Vec<f64>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    if centers.is_empty() {
        return Err(Error::Empty("mode centers"));
    }
    if centers.len() == 1 {
        return Ok(0.0);
    }
    let mut counts = vec![0usize; centers.len()];
    for x in samples {
        let best = centers
            .iter()
            .enumerate()
            .map(|(j, c)| (j, sq_dist(x, c)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty")
            .0;
        counts[best] += 1;
    }
    let total = samples.len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let q = c as f64 / total;
            -q * q.ln()
        })
        .sum();
    // A single occupied mode sums to -0.0.
    Ok(h.abs() / (centers.len() as f64).ln())
}

/// Time-integrated spectral norm of the control Jacobian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralNorm {
    pub value: f64,
    /// False if any power iteration had not settled after the iteration budget.
    pub converged: bool,
}

/// Largest singular value of a row-major `rows×cols` matrix by power iteration on `JᵀJ`.
pub fn spectral_norm(jac: &[f64], rows: usize, cols: usize, iterations: usize) -> (f64, bool) {
    let mut v = normal_vec(&mut ChaCha8Rng::seed_from_u64(0x5eed), cols);
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= nv);
    let mut lambda = 0.0;
    let mut converged = false;
    for _ in 0..iterations {
        let jv: Vec<f64> = (0..rows).map(|r| (0..cols).map(|c| jac[r * cols + c] * v[c]).sum()).collect();
        let w: Vec<f64> = (0..cols).map(|c| (0..rows).map(|r| jac[r * cols + c] * jv[r]).sum()).collect();
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return (0.0, true);
        }
        converged = (norm - lambda).abs() <= 1e-6 * norm;
        lambda = norm;
        v = w.into_iter().map(|a| a / norm).collect();
    }
    (lambda.sqrt(), converged)
}

/// `Σ_n σ·δt_n·mean_i ‖∂u(x_n^i, n)/∂x‖₂`; `states[n]` holds the batch at step `n`.
pub fn control_spectral_norm<F>(states: &[Tensor], dts: &[f64], sigma: f64, control: F) -> Result<SpectralNorm>
where
    F: for<'t> Fn(&'t Tape, Var<'t>, usize) -> Result<Var<'t>, TapeError>,
{
    if states.len() < dts.len() {
        return Err(Error::Invalid("need one state batch per step".into()));
    }
    let mut total = 0.0;
    let mut converged = true;
    for (n, dt) in dts.iter().enumerate() {
        let x = &states[n];
        if x.shape()[0] == 0 {
            return Err(Error::Empty("state batch"));
        }
        let d = x.shape()[1];
        let jacs = batch_jacobians(x, |tape, xv| control(tape, xv, n))?;
        let mut acc = 0.0;
        for j in &jacs {
            let (s, ok) = spectral_norm(j, j.len() / d, d, 20);
            converged &= ok;
            acc += s;
        }
        total += sigma * dt * acc / jacs.len() as f64;
    }
    if !converged {
        log::warn!("power iteration did not settle; using the last iterate");
    }
    Ok(SpectralNorm { value: total, converged })
}

/// Variational lower bound on `−F` per lattice site: `ELBO / L²`.
pub fn free_energy_bound(elbo: f64, extent: usize) -> f64 {
    elbo / (extent * extent) as f64
}

/// Histogram normalized to unit total mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
}

impl Histogram {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

/// Histogram of `M(φ) = Σ_x φ_x` over field samples. Without an explicit range
/// the bins span `[−r, r]` with `r = max |M|`, so `{φ, −φ}` data is symmetric.
pub fn magnetization_histogram(samples: &[Vec<f64>], bins: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    if bins == 0 {
        return Err(Error::Invalid("bin count must be positive".into()));
    }
    let mags: Vec<f64> = samples.iter().map(|s| crate::targets::magnetization(s)).collect();
    let (lo, hi) = match range {
        Some(r) => r,
        None => {
            let r = mags.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if r > 0.0 { (-r, r) } else { (-0.5, 0.5) }
        }
    };
    if !(hi > lo) {
        return Err(Error::Invalid("histogram range is empty".into()));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for m in &mags {
        let b = ((m - lo) / width).floor().clamp(0.0, (bins - 1) as f64) as usize;
        counts[b] += 1;
    }
    let total = mags.len() as f64;
    Ok(Histogram {
        edges: (0..=bins).map(|i| lo + i as f64 * width).collect(),
        mass: counts.iter().map(|&c| c as f64 / total).collect(),
    })
}

/// One evaluation of a sampler; absent fields were not applicable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub step: usize,
    pub elbo: f64,
    pub log_z_hat: f64,
    pub delta_log_z: Option<f64>,
    pub ess: f64,
    pub sinkhorn: Option<f64>,
    pub emc: Option<f64>,
    pub s_norm: Option<f64>,
    pub free_energy_bound: Option<f64>,
    pub dropped_paths: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: [&'static str; 10] = [
        "step",
        "elbo",
        "log_z_hat",
        "delta_log_z",
        "ess",
        "sinkhorn",
        "emc",
        "s_norm",
        "free_energy_bound",
        "dropped_paths",
    ];

    /// Weight-based fields from one weight set.
    pub fn from_weights(step: usize, lw: &[f64], true_log_z: Option<f64>) -> Result<Self> {
        let z = log_z_hat(lw)?;
        Ok(Self {
            step,
            elbo: elbo(lw)?,
            log_z_hat: z,
            delta_log_z: true_log_z.map(|t| (t - z).abs()),
            ess: ess(lw)?,
            ..Self::default()
        })
    }

    pub fn csv_row(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.step.to_string(),
            self.elbo.to_string(),
            self.log_z_hat.to_string(),
            opt(self.delta_log_z),
            self.ess.to_string(),
            opt(self.sinkhorn),
            opt(self.emc),
            opt(self.s_norm),
            opt(self.free_energy_bound),
            self.dropped_paths.to_string(),
        ]
    }
}
