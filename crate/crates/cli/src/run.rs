//! Run execution and checkpoint evaluation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use lps_core::checkpoint::Checkpoint;
use lps_core::dynamics::{DiffusionConfig, SamplerModel};
use lps_core::metrics::{self, magnetization_histogram, Histogram, MetricsReport, SinkhornOptions};
use lps_core::priors::{DiagGaussian, MixturePrior};
use lps_core::rng::{substream, Substream};
use lps_core::smc::{smc_run, systematic_resample};
use lps_core::targets::TargetDensity;
use lps_core::training::{evaluate, train, EvalOptions, TrainEvent};
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, ExperimentConfig, PriorKind, TargetSpec};
use crate::error::CliError;

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LAST_CHECKPOINT_FILE: &str = "checkpoint_last.json";
pub const REFINEMENTS_FILE: &str = "refinements.json";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const SUMMARY_FILE: &str = "summary.json";

const HISTOGRAM_BINS: usize = 40;

/// Provenance and headline numbers of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: String,
    pub seed: u64,
    pub target: String,
    pub method: String,
    pub components: usize,
    pub diffusion_steps: usize,
    pub best_step: usize,
    pub skipped_updates: usize,
    pub batch: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub dir: PathBuf,
    pub summary: RunSummary,
}

fn build_prior(config: &ExperimentConfig, dim: usize) -> Result<MixturePrior, CliError> {
    let single = || DiagGaussian::new(&vec![0.0; dim], &vec![config.prior_std; dim]).map_err(CliError::from);
    let mut prior = match config.prior {
        PriorKind::Fixed | PriorKind::Gaussian => MixturePrior::new(vec![single()?])?,
        PriorKind::Gmp if config.refinement.is_some() || config.components == 1 => MixturePrior::new(vec![single()?])?,
        PriorKind::Gmp => MixturePrior::jittered(
            dim,
            config.components,
            config.prior_std,
            config.prior_jitter,
            &mut substream(config.seed, Substream::PriorInit),
        )?,
    };
    prior.set_trainable(config.prior != PriorKind::Fixed);
    Ok(prior)
}

/// Builds the untrained sampler described by `config`.
pub fn build_model(config: &ExperimentConfig, target: &dyn TargetDensity) -> Result<SamplerModel, CliError> {
    let Algorithm::Diffusion(method) = config.method else {
        return Err(CliError::Config("SMC has no trainable model".into()));
    };
    let prior = build_prior(config, target.dim())?;
    let mut diffusion = DiffusionConfig::new(method, config.diffusion_steps);
    diffusion.sigma = config.sigma;
    diffusion.hidden = config.hidden;
    diffusion.use_score_head = config.score_head;
    Ok(SamplerModel::new(diffusion, prior, config.seed)?)
}

fn write_csv<S: AsRef<str>>(path: &Path, header: &[S], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(e.into()))?;
    w.write_record(header.iter().map(|h| h.as_ref())).map_err(|e| CliError::Io(e.into()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| CliError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_metrics(path: &Path, reports: &[MetricsReport]) -> Result<(), CliError> {
    write_csv(path, &MetricsReport::CSV_HEADER, reports.iter().map(|r| r.csv_row()))
}

pub(crate) fn sample_header(dim: usize) -> Vec<String> {
    (0..dim).map(|j| format!("x{j}")).collect()
}

pub(crate) fn write_samples(path: &Path, dim: usize, samples: &[Vec<f64>]) -> Result<(), CliError> {
    write_csv(path, &sample_header(dim), samples.iter().map(|s| s.iter().map(f64::to_string).collect()))
}

pub(crate) fn write_histogram(path: &Path, h: Option<&Histogram>) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = h
        .map(|h| {
            h.mass
                .iter()
                .enumerate()
                .map(|(i, m)| vec![h.edges[i].to_string(), h.edges[i + 1].to_string(), m.to_string()])
                .collect()
        })
        .unwrap_or_default();
    write_csv(path, &["left", "right", "mass"], rows)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Core(e.into()))?;
    fs::write(path, text)?;
    Ok(())
}

fn eval_options(config: &ExperimentConfig) -> EvalOptions {
    EvalOptions { lattice_extent: config.target.lattice_extent(), ..config.train.eval }
}

/// Executes the experiment and writes its artifact directory.
pub fn run(mut config: ExperimentConfig) -> Result<RunArtifact, CliError> {
    config.validate()?;
    let target = config.target.build()?;
    fs::create_dir_all(&config.out)?;
    fs::write(config.out.join(CONFIG_FILE), config.to_toml()?)?;
    let summary = match config.method {
        Algorithm::Smc => run_smc(&config, target.as_ref())?,
        Algorithm::Diffusion(_) => run_diffusion(&config, target.as_ref())?,
    };
    write_json(&config.out.join(SUMMARY_FILE), &summary)?;
    Ok(RunArtifact { dir: config.out.clone(), summary })
}

fn run_diffusion(config: &ExperimentConfig, target: &dyn TargetDensity) -> Result<RunSummary, CliError> {
    let model = build_model(config, target)?;
    let mut train_config = config.train.clone();
    train_config.eval = eval_options(config);
    train_config.refinement = config.refinement;
    train_config.loss = config.loss;
    let dir = &config.out;
    let mut checkpoint_error = None;
    let outcome = train(model, target, &train_config, |event| match event {
        TrainEvent::Evaluated { report, running_elbo, model } => {
            log::info!(
                "step {:>6}  elbo {:>10.4}  avg {:>10.4}  log Z {:>10.4}  ess {:.3}",
                report.step,
                report.elbo,
                running_elbo,
                report.log_z_hat,
                report.ess
            );
            let ckpt = Checkpoint::new(model.clone(), target.name(), config.seed, report.step);
            if let Err(e) = ckpt.save(dir.join(LAST_CHECKPOINT_FILE)) {
                checkpoint_error.get_or_insert(e);
            }
        }
        TrainEvent::Refined(e) => log::info!("step {}: component {} added at {:?}", e.step, e.components, e.mean),
        TrainEvent::Step { .. } => {}
    })?;
    if let Some(e) = checkpoint_error {
        return Err(e.into());
    }
    let method = config.method.to_string();
    Checkpoint::new(outcome.best.clone(), target.name(), config.seed, outcome.best_step).save(dir.join(CHECKPOINT_FILE))?;
    Checkpoint::new(outcome.last.clone(), target.name(), config.seed, config.train.steps)
        .save(dir.join(LAST_CHECKPOINT_FILE))?;
    write_metrics(&dir.join(METRICS_FILE), &outcome.log)?;
    write_json(&dir.join(REFINEMENTS_FILE), &outcome.refinements)?;

    let final_eval = evaluate(&outcome.best, target, &eval_options(config), outcome.best_step)?;
    write_samples(&dir.join(SAMPLES_FILE), target.dim(), &final_eval.samples)?;
    let histogram = match config.target {
        TargetSpec::Phi4 { .. } => Some(magnetization_histogram(&final_eval.samples, HISTOGRAM_BINS, None)?),
        _ => None,
    };
    write_histogram(&dir.join(HISTOGRAM_FILE), histogram.as_ref())?;
    Ok(RunSummary {
        version: env!("CARGO_PKG_VERSION").into(),
        seed: config.seed,
        target: target.name(),
        method,
        components: outcome.best.prior.k(),
        diffusion_steps: outcome.best.config.steps,
        best_step: outcome.best_step,
        skipped_updates: outcome.skipped,
        batch: outcome.batch,
        report: final_eval.report,
    })
}

fn run_smc(config: &ExperimentConfig, target: &dyn TargetDensity) -> Result<RunSummary, CliError> {
    let mut rng = substream(config.seed, Substream::Smc);
    let out = smc_run(target, &config.smc, &mut rng)?;
    // log Ẑ comes from the annealing increments; the remaining fields use the final weights
    let mut report = MetricsReport::from_weights(config.smc.steps, &out.log_weights, None)?;
    report.log_z_hat = out.log_z;
    report.elbo = f64::NAN;
    report.delta_log_z = target.log_z().map(|z| (z - out.log_z).abs());
    let weights: Vec<f64> = out.log_weights.iter().map(|w| w.exp()).collect();
    let samples: Vec<Vec<f64>> =
        systematic_resample(&weights, &mut rng).into_iter().map(|i| out.particles[i].clone()).collect();
    if let Some(reference) = target.sample(samples.len().min(512), &mut rng) {
        let n = reference.len();
        report.sinkhorn = Some(metrics::sinkhorn(&samples[..n], &reference, &SinkhornOptions::default())?.cost);
    }
    if let Some(centers) = target.mode_centers() {
        report.emc = Some(metrics::emc(&samples, &centers)?);
    }
    let dir = &config.out;
    write_metrics(&dir.join(METRICS_FILE), std::slice::from_ref(&report))?;
    write_samples(&dir.join(SAMPLES_FILE), target.dim(), &samples)?;
    let histogram = match config.target {
        TargetSpec::Phi4 { .. } => Some(magnetization_histogram(&samples, HISTOGRAM_BINS, None)?),
        _ => None,
    };
    write_histogram(&dir.join(HISTOGRAM_FILE), histogram.as_ref())?;
    write_json(&dir.join(REFINEMENTS_FILE), &Vec::<()>::new())?;
    Ok(RunSummary {
        version: env!("CARGO_PKG_VERSION").into(),
        seed: config.seed,
        target: target.name(),
        method: "smc".into(),
        components: 0,
        diffusion_steps: config.smc.steps,
        best_step: config.smc.steps,
        skipped_updates: 0,
        batch: config.smc.particles,
        report,
    })
}

/// Evaluates a saved sampler on a fresh weight set of size `samples`.
pub fn eval_checkpoint(
    checkpoint: &Path,
    target: &TargetSpec,
    samples: usize,
    seed: u64,
) -> Result<MetricsReport, CliError> {
    let ckpt = Checkpoint::load(checkpoint).map_err(|e| match e {
        lps_core::Error::Io(io) => CliError::Io(io),
        other => CliError::Config(format!("cannot read checkpoint: {other}")),
    })?;
    let target = target.build()?;
    if ckpt.model.dim() != target.dim() {
        return Err(CliError::Config(format!(
            "checkpoint has dimension {} but target '{}' has {}",
            ckpt.model.dim(),
            target.name(),
            target.dim()
        )));
    }
    let opts = EvalOptions { batch: samples, seed, ..EvalOptions::default() };
    let opts = EvalOptions { lattice_extent: None, ..opts };
    Ok(evaluate(&ckpt.model, target.as_ref(), &opts, ckpt.step)?.report)
}

/// Fixed-width table of the headline metrics.
pub fn print_summary(out: &mut impl Write, s: &RunSummary) -> std::io::Result<()> {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let r = &s.report;
    writeln!(out, "{:<18}{}", "target", s.target)?;
    writeln!(out, "{:<18}{}", "method", s.method)?;
    writeln!(out, "{:<18}{}", "components", s.components)?;
    writeln!(out, "{:<18}{}", "steps N", s.diffusion_steps)?;
    writeln!(out, "{:<18}{}", "best step", s.best_step)?;
    writeln!(out, "{:<18}{:.4}", "ELBO", r.elbo)?;
    writeln!(out, "{:<18}{:.4}", "log Z estimate", r.log_z_hat)?;
    writeln!(out, "{:<18}{}", "|Δ log Z|", opt(r.delta_log_z))?;
    writeln!(out, "{:<18}{:.4}", "ESS", r.ess)?;
    writeln!(out, "{:<18}{}", "Sinkhorn", opt(r.sinkhorn))?;
    writeln!(out, "{:<18}{}", "EMC", opt(r.emc))?;
    writeln!(out, "{:<18}{}", "-F bound / site", opt(r.free_energy_bound))?;
    Ok(())
}
