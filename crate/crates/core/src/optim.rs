//! Adam with global-norm clipping and a plateau-then-cosine learning rate.

use lps_tape::{Parameter, Tensor};

#[derive(Debug, Clone)]
struct Moments {
    m: Tensor,
    v: Tensor,
    t: u64,
}

/// Adam state. Moments are kept per parameter position; parameters appended
/// later start with fresh moments and their own step count.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    moments: Vec<Option<Moments>>,
    skipped: usize,
}

impl Default for Adam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, moments: Vec::new(), skipped: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Applied { grad_norm: f64, clip_scale: f64 },
    /// A gradient was non-finite; parameters and moments are unchanged.
    Skipped,
}

/// `√(Σ‖g‖²)` over parameters that require gradients.
pub fn global_norm(params: &[&mut Parameter]) -> f64 {
    params
        .iter()
        .filter(|p| p.requires_grad())
        .filter_map(|p| p.grad_ref())
        .flat_map(|g| g.data().iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Factor that brings a gradient of norm `norm` within `max_norm`.
pub fn clip_scale(norm: f64, max_norm: f64) -> f64 {
    if norm > max_norm { max_norm / norm } else { 1.0 }
}

impl Adam {
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// One update with per-parameter learning rates `lrs[i]`.
    pub fn step(&mut self, params: &mut [&mut Parameter], lrs: &[f64], max_norm: Option<f64>) -> StepOutcome {
        assert_eq!(params.len(), lrs.len(), "one learning rate per parameter");
        let norm = global_norm(params);
        if !norm.is_finite() {
            self.skipped += 1;
            return StepOutcome::Skipped;
        }
        let scale = max_norm.map_or(1.0, |m| clip_scale(norm, m));
        if self.moments.len() < params.len() {
            self.moments.resize(params.len(), None);
        }
        for (i, p) in params.iter_mut().enumerate() {
            if !p.requires_grad() {
                continue;
            }
            let Some(grad) = p.grad_ref().cloned() else { continue };
            let slot = self.moments[i].get_or_insert_with(|| Moments {
                m: Tensor::zeros(grad.shape()),
                v: Tensor::zeros(grad.shape()),
                t: 0,
            });
            slot.t += 1;
            let t = slot.t as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let value = p.value_mut().data_mut();
            let (m, v) = (slot.m.data_mut(), slot.v.data_mut());
            for j in 0..value.len() {
                let g = grad.data()[j] * scale;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                value[j] -= lrs[i] * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
        StepOutcome::Applied { grad_norm: norm, clip_scale: scale }
    }
}

/// Constant for the first `decay_start` fraction of steps, then cosine to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub total_steps: usize,
    pub decay_start: f64,
}

impl CosineSchedule {
    pub fn new(total_steps: usize) -> Self {
        Self { total_steps, decay_start: 0.4 }
    }

    /// Multiplier in `[0, 1]` for step `step`.
    pub fn factor(&self, step: usize) -> f64 {
        let start = (self.decay_start * self.total_steps as f64).floor() as usize;
        if step < start || self.total_steps <= start {
            return 1.0;
        }
        let span = (self.total_steps - start) as f64;
        let p = ((step - start) as f64 / span).min(1.0);
        0.5 * (1.0 + (std::f64::consts::PI * p).cos())
    }
}
