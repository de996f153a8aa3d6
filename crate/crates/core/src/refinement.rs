//! Iterative model refinement: MALA candidates, candidate scoring and
//! scheduled component addition.

use lps_tape::{Tape, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::SamplerModel;
use crate::error::{Error, Result};
use crate::rng::{normal_vec, PathRngs};
use crate::targets::TargetDensity;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MalaOptions {
    /// Chains start from `N(0, init_std² I)`.
    pub init_std: f64,
    pub chains: usize,
    pub steps: usize,
    /// `σ̃` in `x' = x + σ̃²∇log π(x)δt + σ̃√(2δt)ε`.
    pub step_scale: f64,
    pub dt: f64,
}

impl Default for MalaOptions {
    fn default() -> Self {
        Self { init_std: 5f64.sqrt(), chains: 256, steps: 64, step_scale: 5.0, dt: 1e-2 }
    }
}

/// How candidates are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heuristic {
    /// Candidates are end states `x_N`; rollouts run the backward process.
    Backward,
    /// Candidates are start states `x_0`; rollouts run the forward process.
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinementSchedule {
    pub interval: usize,
    pub max_components: usize,
    pub new_std: f64,
    pub rollouts: usize,
    pub heuristic: Heuristic,
    pub mala: MalaOptions,
}

impl Default for RefinementSchedule {
    fn default() -> Self {
        Self {
            interval: 500,
            max_components: 10,
            new_std: 1.0,
            rollouts: 4,
            heuristic: Heuristic::Backward,
            mala: MalaOptions::default(),
        }
    }
}

impl RefinementSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.interval == 0 || self.max_components == 0 || self.rollouts == 0 {
            return Err(Error::Invalid("refinement interval, K_max and rollouts must be ≥ 1".into()));
        }
        if !(self.new_std > 0.0) {
            return Err(Error::Invalid("new component std must be positive".into()));
        }
        Ok(())
    }

    /// Whether a component is added before training step `step`.
    pub fn due(&self, step: usize, components: usize) -> bool {
        step > 0 && step % self.interval == 0 && components < self.max_components
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub points: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    pub options: MalaOptions,
}

fn langevin_logq(to: &[f64], from: &[f64], grad_from: &[f64], h: f64) -> f64 {
    let var = 2.0 * h;
    to.iter()
        .zip(from)
        .zip(grad_from)
        .map(|((y, x), g)| -(y - x - h * g).powi(2) / (2.0 * var))
        .sum()
}

/// `log[π(x')q(x|x')] − log[π(x)q(x'|x)]` for the Langevin proposal with step `h = σ̃²δt`.
pub fn mala_log_accept_ratio(target: &dyn TargetDensity, x: &[f64], proposal: &[f64], step_scale: f64, dt: f64) -> f64 {
    let h = step_scale * step_scale * dt;
    let gx = target.eval_grad_log_rho(x);
    let gp = target.eval_grad_log_rho(proposal);
    target.eval_log_rho(proposal) - target.eval_log_rho(x) + langevin_logq(x, proposal, &gp, h)
        - langevin_logq(proposal, x, &gx, h)
}

/// Runs independent MALA chains and returns their final states.
pub fn mala_candidates(target: &dyn TargetDensity, opts: &MalaOptions, rng: &mut impl Rng) -> Result<CandidateSet> {
    if opts.chains == 0 {
        return Err(Error::Empty("candidate chains"));
    }
    let d = target.dim();
    let h = opts.step_scale * opts.step_scale * opts.dt;
    let noise = (2.0 * h).sqrt();
    let mut accepted = 0usize;
    let mut points = Vec::with_capacity(opts.chains);
    for _ in 0..opts.chains {
        let mut x: Vec<f64> = normal_vec(rng, d).into_iter().map(|z| opts.init_std * z).collect();
        let mut lp = target.eval_log_rho(&x);
        let mut g = target.eval_grad_log_rho(&x);
        for _ in 0..opts.steps {
            let z = normal_vec(rng, d);
            let prop: Vec<f64> = (0..d).map(|j| x[j] + h * g[j] + noise * z[j]).collect();
            let lp_prop = target.eval_log_rho(&prop);
            let g_prop = target.eval_grad_log_rho(&prop);
            let log_alpha = lp_prop - lp + langevin_logq(&x, &prop, &g_prop, h)
                - langevin_logq(&prop, &x, &g, h);
            let u: f64 = rng.gen();
            if log_alpha.is_finite() && u.ln() < log_alpha {
                x = prop;
                lp = lp_prop;
                g = g_prop;
                accepted += 1;
            }
        }
        if x.iter().all(|v| v.is_finite()) {
            points.push(x);
        }
    }
    if points.is_empty() {
        return Err(Error::NonFinite("every candidate chain diverged".into()));
    }
    let total = (opts.chains * opts.steps).max(1);
    Ok(CandidateSet { points, acceptance_rate: accepted as f64 / total as f64, options: *opts })
}

/// Candidate scores, also kept relative to a reference candidate so that
/// their ordering is unaffected by rounding of a constant offset in `log ρ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScores {
    /// `None` for candidates whose rollouts were non-finite.
    pub scores: Vec<Option<f64>>,
    pub relative: Vec<Option<f64>>,
    pub reference: Option<usize>,
}

impl CandidateScores {
    /// Index of the best-scoring candidate.
    pub fn argmax(&self) -> Option<usize> {
        self.relative
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|v| (i, v)))
            .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
                Some((_, b)) if b >= v => best,
                _ => Some((i, v)),
            })
            .map(|(i, _)| i)
    }
}

const SCORE_CHUNK: usize = 64;

/// Monte Carlo estimate, over `rollouts` paths per candidate, of the
/// expected log weight of a path pinned at the candidate.
pub fn score_candidates(
    model: &SamplerModel,
    target: &dyn TargetDensity,
    candidates: &[Vec<f64>],
    rollouts: usize,
    heuristic: Heuristic,
    rng: &mut impl Rng,
) -> Result<CandidateScores> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    if rollouts == 0 {
        return Err(Error::Invalid("need at least one rollout".into()));
    }
    // per candidate: pinned-end log ρ term and mean of the remaining terms
    let mut pinned = Vec::with_capacity(candidates.len());
    let mut rest = Vec::with_capacity(candidates.len());
    for chunk in candidates.chunks(SCORE_CHUNK) {
        let rows: Vec<Vec<f64>> = chunk
            .iter()
            .flat_map(|c| std::iter::repeat(c.clone()).take(rollouts))
            .collect();
        let x = Tensor::from_rows(&rows)?;
        let tape = Tape::new();
        let bound = model.bind(&tape, target)?.with_max_non_finite(1.0);
        let simulated = match heuristic {
            Heuristic::Backward => bound.simulate_backward_from(&x, rng),
            Heuristic::Forward => {
                let mut rngs = PathRngs { noise: rand_chacha_from(rng), components: rand_chacha_from(rng) };
                bound.simulate_forward_from(&x, &mut rngs)
            }
        };
        let paths = match simulated {
            Ok(p) => p,
            Err(Error::NonFinitePaths { .. }) => {
                pinned.extend(std::iter::repeat_with(|| None).take(chunk.len()));
                rest.extend(std::iter::repeat(f64::NAN).take(chunk.len()));
                continue;
            }
            Err(e) => return Err(e),
        };
        let lt = paths.log_target.value();
        let lr = paths.log_rest.value();
        for c in 0..chunk.len() {
            let idx = c * rollouts..(c + 1) * rollouts;
            let (t, rs): (Vec<f64>, Vec<f64>) = idx.map(|i| (lt.data()[i], lr.data()[i])).unzip();
            let r = rs.iter().sum::<f64>() / rollouts as f64;
            // forward rollouts end at different x_N, so the target term varies
            let t_mean = t.iter().sum::<f64>() / rollouts as f64;
            if r.is_finite() && t_mean.is_finite() {
                pinned.push(Some(t));
                rest.push(r);
            } else {
                pinned.push(None);
                rest.push(f64::NAN);
            }
        }
    }
    let reference = pinned.iter().position(Option::is_some);
    let mut scores = Vec::with_capacity(candidates.len());
    let mut relative = Vec::with_capacity(candidates.len());
    for (p, r) in pinned.iter().zip(&rest) {
        match (p, reference) {
            (Some(t), Some(ref_idx)) => {
                let t0 = pinned[ref_idx].as_ref().expect("reference is finite");
                let rel_t = t.iter().zip(t0).map(|(a, b)| a - b).sum::<f64>() / rollouts as f64;
                let rel = rel_t + r;
                relative.push(Some(rel));
                let abs_t = t.iter().sum::<f64>() / rollouts as f64;
                scores.push(Some(abs_t + r));
            }
            _ => {
                relative.push(None);
                scores.push(None);
            }
        }
    }
    Ok(CandidateScores { scores, relative, reference })
}

fn rand_chacha_from(rng: &mut impl Rng) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(rng.gen())
}

/// Record of one component addition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementEvent {
    pub step: usize,
    pub components: usize,
    pub mean: Vec<f64>,
    pub score: f64,
    pub candidates: usize,
    pub excluded: usize,
    pub acceptance_rate: f64,
}

/// Adds a component at the best candidate.
pub fn refine(
    model: &mut SamplerModel,
    schedule: &RefinementSchedule,
    candidates: &CandidateSet,
    scores: &CandidateScores,
    step: usize,
) -> Result<RefinementEvent> {
    if model.prior.k() >= schedule.max_components {
        return Err(Error::Invalid(format!("already at K_max = {}", schedule.max_components)));
    }
    let best = scores.argmax().ok_or(Error::Empty("candidate set"))?;
    let mean = candidates.points[best].clone();
    model.prior.add_component(&mean, schedule.new_std)?;
    Ok(RefinementEvent {
        step,
        components: model.prior.k(),
        mean,
        score: scores.scores[best].expect("argmax is finite"),
        candidates: candidates.points.len(),
        excluded: scores.scores.iter().filter(|s| s.is_none()).count(),
        acceptance_rate: candidates.acceptance_rate,
    })
}

/// Candidate generation, scoring and addition in one call.
pub fn refine_step(
    model: &mut SamplerModel,
    target: &dyn TargetDensity,
    schedule: &RefinementSchedule,
    step: usize,
    mala_rng: &mut impl Rng,
    score_rng: &mut impl Rng,
) -> Result<RefinementEvent> {
    let candidates = mala_candidates(target, &schedule.mala, mala_rng)?;
    let scores = score_candidates(model, target, &candidates.points, schedule.rollouts, schedule.heuristic, score_rng)?;
    refine(model, schedule, &candidates, &scores, step)
}
