//! The training loop: simulate, evaluate the loss, backpropagate, update.

use lps_tape::{Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::controls::BoundControl;
use crate::dynamics::{ParamGroup, PathMode, SamplerModel};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::metrics::{self, MetricsReport, SinkhornOptions};
use crate::optim::{Adam, CosineSchedule, StepOutcome};
use crate::refinement::{refine_step, RefinementEvent, RefinementSchedule};
use crate::rng::{substream, PathRngs, Substream};
use crate::targets::TargetDensity;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub prior_lr: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
    pub loss: LossKind,
    pub seed: u64,
    pub eval_interval: usize,
    pub eval: EvalOptions,
    /// Evaluations averaged when selecting the best model.
    pub window: usize,
    pub refinement: Option<RefinementSchedule>,
    /// Approximate tape budget in bytes; the batch is halved until a step fits.
    pub memory_budget: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch: 2000,
            lr: 8e-3,
            prior_lr: 1e-2,
            clip: Some(1.0),
            loss: LossKind::Kl,
            seed: 0,
            eval_interval: 100,
            eval: EvalOptions::default(),
            window: 5,
            refinement: None,
            memory_budget: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Invalid("training needs at least one step".into()));
        }
        if self.batch == 0 || self.eval_interval == 0 || self.window == 0 {
            return Err(Error::Invalid("batch, eval interval and window must be positive".into()));
        }
        if !(self.lr > 0.0 && self.prior_lr > 0.0) {
            return Err(Error::Invalid("learning rates must be positive".into()));
        }
        if self.clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Invalid("clip value must be positive".into()));
        }
        if let Some(r) = &self.refinement {
            r.validate()?;
        }
        self.eval.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub batch: usize,
    pub seed: u64,
    /// Paths simulated per tape.
    pub chunk: usize,
    /// Sample cap for the Sinkhorn distance; 0 disables it.
    pub sinkhorn_samples: usize,
    pub spectral_norm: bool,
    /// Batch used for the spectral norm of the forward control.
    pub spectral_batch: usize,
    /// Lattice extent for the per-site free-energy bound.
    pub lattice_extent: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            batch: 2000,
            seed: 0x00e7_a1,
            chunk: 512,
            sinkhorn_samples: 512,
            spectral_norm: false,
            spectral_batch: 32,
            lattice_extent: None,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 || self.chunk == 0 {
            return Err(Error::Invalid("evaluation needs a batch of at least 2".into()));
        }
        Ok(())
    }
}

/// Metrics of one evaluation together with the simulated end states.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub log_weights: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
}

/// Simulates `opts.batch` detached paths in chunks and computes every applicable metric.
pub fn evaluate(model: &SamplerModel, target: &dyn TargetDensity, opts: &EvalOptions, step: usize) -> Result<Evaluation> {
    opts.validate()?;
    let mut rngs = PathRngs::evaluation(opts.seed);
    let mut log_weights = Vec::with_capacity(opts.batch);
    let mut samples = Vec::with_capacity(opts.batch);
    let mut dropped = 0;
    let mut remaining = opts.batch;
    while remaining > 0 {
        let b = remaining.min(opts.chunk);
        remaining -= b;
        let tape = Tape::new();
        let bound = model.bind(&tape, target)?;
        let paths = bound.simulate_forward(b, &mut rngs, PathMode::Detached)?;
        dropped += paths.dropped();
        let lw = paths.log_weights.value();
        let xn = paths.states.last().expect("at least one state").value();
        for &i in &paths.finite {
            log_weights.push(lw.data()[i]);
            samples.push(xn.row_slice(i).to_vec());
        }
    }
    let mut report = MetricsReport::from_weights(step, &log_weights, target.log_z())?;
    report.dropped_paths = dropped;
    if opts.sinkhorn_samples > 0 {
        let n = opts.sinkhorn_samples.min(samples.len());
        let mut rng = substream(opts.seed, Substream::Eval);
        if let Some(reference) = target.sample(n, &mut rng) {
            let s = metrics::sinkhorn(&samples[..n], &reference, &SinkhornOptions::default())?;
            report.sinkhorn = Some(s.cost);
        }
    }
    if let Some(centers) = target.mode_centers() {
        report.emc = Some(metrics::emc(&samples, &centers)?);
    }
    if opts.spectral_norm {
        report.s_norm = spectral_norm_of(model, target, opts)?;
    }
    if let Some(extent) = opts.lattice_extent {
        report.free_energy_bound = Some(metrics::free_energy_bound(report.elbo, extent));
    }
    Ok(Evaluation { report, log_weights, samples })
}

fn spectral_norm_of(model: &SamplerModel, target: &dyn TargetDensity, opts: &EvalOptions) -> Result<Option<f64>> {
    let Some(net) = &model.forward_control else { return Ok(None) };
    let steps = model.config.steps;
    let states: Vec<Tensor> = {
        let tape = Tape::new();
        let bound = model.bind(&tape, target)?;
        let mut rngs = PathRngs::evaluation(opts.seed.wrapping_add(1));
        let paths = bound.simulate_forward(opts.spectral_batch, &mut rngs, PathMode::Detached)?;
        let keep = paths.finite.clone();
        paths
            .states
            .iter()
            .map(|s| {
                let v = s.value();
                Tensor::from_rows(&keep.iter().map(|&i| v.row_slice(i).to_vec()).collect::<Vec<_>>())
            })
            .collect::<std::result::Result<_, _>>()?
    };
    let s = metrics::control_spectral_norm(&states, &model.schedule.step_sizes(), model.config.sigma, |tape, x, n| {
        let bound = net.bind(tape, Some(target)).expect("target is supplied");
        bound.eval(x, n, steps)
    })?;
    Ok(Some(s.value))
}

/// Progress notifications from [`train`].
#[derive(Debug)]
pub enum TrainEvent<'a> {
    Step { step: usize, loss: f64, outcome: StepOutcome },
    Evaluated { report: &'a MetricsReport, running_elbo: f64, model: &'a SamplerModel },
    Refined(&'a RefinementEvent),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model with the highest running-average ELBO.
    pub best: SamplerModel,
    pub last: SamplerModel,
    pub best_step: usize,
    pub log: Vec<MetricsReport>,
    pub running_elbo: Vec<f64>,
    pub losses: Vec<f64>,
    pub skipped: usize,
    pub refinements: Vec<RefinementEvent>,
    /// Batch size actually used.
    pub batch: usize,
}

/// Rough tape footprint of one training step.
fn estimated_tape_bytes(model: &SamplerModel, batch: usize) -> usize {
    let d = model.dim();
    let nets = [&model.forward_control, &model.backward_control].iter().filter(|c| c.is_some()).count();
    let per_step = d * (24 + 2 * model.prior.k()) + nets * 6 * model.config.hidden;
    batch * (model.config.steps + 1) * per_step * 8
}

fn fitted_batch(config: &TrainConfig, model: &SamplerModel) -> usize {
    let mut batch = config.batch;
    if let Some(budget) = config.memory_budget {
        while batch > 64 && estimated_tape_bytes(model, batch) > budget {
            batch /= 2;
        }
        if batch != config.batch {
            log::warn!("batch reduced from {} to {batch} to fit the memory budget", config.batch);
        }
    }
    batch
}

/// Runs one training step and returns the loss value.
fn train_step(
    model: &mut SamplerModel,
    target: &dyn TargetDensity,
    loss_kind: LossKind,
    batch: usize,
    rngs: &mut PathRngs,
) -> Result<f64> {
    let (loss, grads) = {
        let tape = Tape::new();
        let bound = model.bind(&tape, target)?;
        let paths = bound.simulate_forward(batch, rngs, loss_kind.path_mode())?;
        let loss = loss_kind.evaluate(&paths)?;
        let g = tape.backward(loss)?;
        let grads: Vec<Tensor> = bound.params().iter().map(|v| g.wrt_or_zeros(*v)).collect();
        (loss.item(), grads)
    };
    for ((_, p), g) in model.parameters_mut().into_iter().zip(grads) {
        p.set_grad(g);
    }
    Ok(loss)
}

/// Trains `model` in place of a copy and returns the best and final states.
pub fn train(
    mut model: SamplerModel,
    target: &dyn TargetDensity,
    config: &TrainConfig,
    mut on_event: impl FnMut(TrainEvent<'_>),
) -> Result<TrainOutcome> {
    config.validate()?;
    let batch = fitted_batch(config, &model);
    let schedule = CosineSchedule::new(config.steps);
    let mut adam = Adam::default();
    let mut rngs = PathRngs::training(config.seed);
    let mut mala_rng = substream(config.seed, Substream::Mala);
    let mut refine_rng = substream(config.seed, Substream::Refine);

    let mut log = Vec::new();
    let mut running_elbo = Vec::new();
    let mut losses = Vec::with_capacity(config.steps);
    let mut refinements = Vec::new();
    let mut best: Option<(f64, usize, SamplerModel)> = None;

    for step in 0..config.steps {
        if let Some(r) = &config.refinement {
            if r.due(step, model.prior.k()) {
                let event = refine_step(&mut model, target, r, step, &mut mala_rng, &mut refine_rng)?;
                log::info!("step {step}: added component {} at {:?}", event.components, event.mean);
                on_event(TrainEvent::Refined(&event));
                refinements.push(event);
            }
        }
        let loss = train_step(&mut model, target, config.loss, batch, &mut rngs).map_err(|e| {
            if let Error::NonFinitePaths { dropped, total } = e {
                log::error!("step {step}: {dropped} of {total} paths non-finite; aborting");
            }
            e
        })?;
        let factor = schedule.factor(step);
        let (lrs, mut params): (Vec<f64>, Vec<_>) = model
            .parameters_mut()
            .into_iter()
            .map(|(group, p)| {
                let base = match group {
                    ParamGroup::Prior => config.prior_lr,
                    ParamGroup::Dynamics => config.lr,
                };
                (base * factor, p)
            })
            .unzip();
        let outcome = adam.step(&mut params, &lrs, config.clip);
        if outcome == StepOutcome::Skipped {
            log::warn!("step {step}: non-finite gradient, update skipped");
        }
        losses.push(loss);
        on_event(TrainEvent::Step { step, loss, outcome });

        let done = step + 1;
        if done % config.eval_interval == 0 || done == config.steps {
            let eval = evaluate(&model, target, &config.eval, done)?;
            log.push(eval.report);
            let recent = &log[log.len().saturating_sub(config.window)..];
            let avg = recent.iter().map(|r| r.elbo).sum::<f64>() / recent.len() as f64;
            running_elbo.push(avg);
            if best.as_ref().map_or(true, |(b, _, _)| avg > *b) {
                best = Some((avg, done, model.clone()));
            }
            on_event(TrainEvent::Evaluated { report: log.last().expect("pushed"), running_elbo: avg, model: &model });
        }
    }
    let (_, best_step, best_model) = best.expect("final step is always evaluated");
    Ok(TrainOutcome {
        best: best_model,
        last: model,
        best_step,
        log,
        running_elbo,
        losses,
        skipped: adam.skipped(),
        refinements,
        batch,
    })
}

