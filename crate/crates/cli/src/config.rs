//! Experiment configuration: a TOML file with command-line overrides.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use lps_core::dynamics::Method;
use lps_core::losses::LossKind;
use lps_core::refinement::RefinementSchedule;
use lps_core::smc::SmcConfig;
use lps_core::targets::{
    load_csv_dataset, BayesLogReg, Funnel, IsotropicGaussian, Phi4Lattice, RandomGmmTarget, TargetDensity,
};
use lps_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Target density and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum TargetSpec {
    Funnel {
        #[serde(default = "ten")]
        dim: usize,
        #[serde(default = "nine")]
        var_first: f64,
    },
    Gmm {
        #[serde(default)]
        seed: u64,
        #[serde(default = "ten")]
        components: usize,
        #[serde(default = "two")]
        dim: usize,
        #[serde(default = "twelve")]
        half_width: f64,
    },
    Gaussian {
        mean: Vec<f64>,
        var: f64,
        #[serde(default)]
        log_z: f64,
    },
    Logreg {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dataset: Option<PathBuf>,
        #[serde(default = "default_label")]
        label_col: String,
        #[serde(default = "hundred")]
        prior_var: f64,
        /// Rows and weights of the built-in synthetic problem.
        #[serde(default = "hundred_rows")]
        rows: usize,
        #[serde(default = "eleven")]
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    Phi4 {
        #[serde(default = "four")]
        extent: usize,
        #[serde(default = "kappa")]
        kappa: f64,
        #[serde(default = "lambda")]
        lambda: f64,
    },
}

fn two() -> usize {
    2
}
fn four() -> usize {
    4
}
fn ten() -> usize {
    10
}
fn eleven() -> usize {
    11
}
fn hundred_rows() -> usize {
    100
}
fn nine() -> f64 {
    9.0
}
fn twelve() -> f64 {
    12.0
}
fn hundred() -> f64 {
    100.0
}
fn kappa() -> f64 {
    0.2
}
fn lambda() -> f64 {
    Phi4Lattice::DEFAULT_LAMBDA
}
fn default_label() -> String {
    "label".into()
}

impl TargetSpec {
    /// Default parameters for a target name.
    pub fn named(name: &str) -> Result<Self, CliError> {
        let spec = match name.to_ascii_lowercase().as_str() {
            "funnel" => TargetSpec::Funnel { dim: 10, var_first: 9.0 },
            "gmm" => TargetSpec::Gmm { seed: 0, components: 10, dim: 2, half_width: 12.0 },
            "gaussian" => TargetSpec::Gaussian { mean: vec![0.0, 0.0], var: 1.0, log_z: 0.0 },
            "logreg" => TargetSpec::Logreg {
                dataset: None,
                label_col: default_label(),
                prior_var: 100.0,
                rows: 100,
                dim: 11,
                seed: 0,
            },
            "phi4" => TargetSpec::Phi4 { extent: 4, kappa: kappa(), lambda: lambda() },
            other => return Err(CliError::Config(format!("unknown target '{other}'"))),
        };
        Ok(spec)
    }

    pub fn name(&self) -> &'static str {
        match self {
            TargetSpec::Funnel { .. } => "funnel",
            TargetSpec::Gmm { .. } => "gmm",
            TargetSpec::Gaussian { .. } => "gaussian",
            TargetSpec::Logreg { .. } => "logreg",
            TargetSpec::Phi4 { .. } => "phi4",
        }
    }

    pub fn build(&self) -> Result<Box<dyn TargetDensity>, CliError> {
        Ok(match self {
            TargetSpec::Funnel { dim, var_first } => {
                if *dim < 2 || !(*var_first > 0.0) {
                    return Err(CliError::Config("funnel needs dim ≥ 2 and a positive variance".into()));
                }
                Box::new(Funnel::new(*dim, *var_first))
            }
            TargetSpec::Gmm { seed, components, dim, half_width } => Box::new(
                RandomGmmTarget { seed: *seed, components: *components, dim: *dim, half_width: *half_width }
                    .build()
                    .map_err(CliError::config)?,
            ),
            TargetSpec::Gaussian { mean, var, log_z } => {
                if mean.is_empty() || !(*var > 0.0) {
                    return Err(CliError::Config("gaussian needs a mean and a positive variance".into()));
                }
                Box::new(IsotropicGaussian::new(mean.clone(), *var).with_log_z(*log_z))
            }
            TargetSpec::Logreg { dataset, label_col, prior_var, rows, dim, seed } => match dataset {
                Some(path) => {
                    let data = load_csv_dataset(path, label_col).map_err(CliError::config)?;
                    Box::new(BayesLogReg::new(&data, *prior_var).map_err(CliError::config)?)
                }
                None => Box::new(BayesLogReg::synthetic(*seed, *rows, *dim).map_err(CliError::config)?),
            },
            TargetSpec::Phi4 { extent, kappa, lambda } => {
                if *extent < 2 {
                    return Err(CliError::Config("lattice extent must be at least 2".into()));
                }
                Box::new(Phi4Lattice::new(*extent, *kappa, *lambda))
            }
        })
    }

    pub fn lattice_extent(&self) -> Option<usize> {
        match self {
            TargetSpec::Phi4 { extent, .. } => Some(*extent),
            _ => None,
        }
    }
}

/// A diffusion method or the SMC baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Algorithm {
    Diffusion(Method),
    Smc,
}

impl FromStr for Algorithm {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        if s.eq_ignore_ascii_case("smc") {
            return Ok(Algorithm::Smc);
        }
        s.parse::<Method>().map(Algorithm::Diffusion).map_err(CliError::config)
    }
}

impl TryFrom<String> for Algorithm {
    type Error = CliError;

    fn try_from(s: String) -> Result<Self, CliError> {
        s.parse()
    }
}

impl From<Algorithm> for String {
    fn from(a: Algorithm) -> String {
        a.to_string()
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Diffusion(m) => m.fmt(f),
            Algorithm::Smc => f.write_str("smc"),
        }
    }
}

/// `fixed`: a standard normal that is not trained. `gaussian`: one trainable
/// diagonal Gaussian. `gmp`: a trainable mixture of `K` diagonal Gaussians.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Fixed,
    Gaussian,
    Gmp,
}

impl FromStr for PriorKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(PriorKind::Fixed),
            "gaussian" | "gp" => Ok(PriorKind::Gaussian),
            "gmp" | "mixture" => Ok(PriorKind::Gmp),
            other => Err(CliError::Config(format!("unknown prior '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_method")]
    pub method: Algorithm,
    #[serde(default = "default_prior")]
    pub prior: PriorKind,
    /// Mixture components; the cap on components when refinement is on.
    #[serde(default = "one")]
    pub components: usize,
    /// Diffusion steps `N`; forced to 0 for method `none`.
    #[serde(default = "thirty_two")]
    pub diffusion_steps: usize,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default)]
    pub score_head: bool,
    #[serde(default = "sixty_four")]
    pub hidden: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Initial std of every prior component.
    #[serde(default = "default_prior_std")]
    pub prior_std: f64,
    /// Spread of initial component means for `gmp` without refinement.
    #[serde(default = "default_jitter")]
    pub prior_jitter: f64,
    pub target: TargetSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement: Option<RefinementSchedule>,
    #[serde(default)]
    pub smc: SmcConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/latest")
}
fn default_method() -> Algorithm {
    Algorithm::Diffusion(Method::Dis)
}
fn default_prior() -> PriorKind {
    PriorKind::Gaussian
}
fn default_loss() -> LossKind {
    LossKind::Kl
}
fn one() -> usize {
    1
}
fn thirty_two() -> usize {
    32
}
fn sixty_four() -> usize {
    64
}
fn default_sigma() -> f64 {
    1.0
}
fn default_prior_std() -> f64 {
    1.0
}
fn default_jitter() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn with_target(target: TargetSpec) -> Self {
        Self {
            seed: 0,
            out: default_out(),
            method: default_method(),
            prior: default_prior(),
            components: 1,
            diffusion_steps: 32,
            loss: LossKind::Kl,
            score_head: false,
            hidden: 64,
            sigma: 1.0,
            prior_std: 1.0,
            prior_jitter: 1.0,
            target,
            train: TrainConfig::default(),
            refinement: None,
            smc: SmcConfig::default(),
        }
    }

    pub fn from_toml(s: &str) -> Result<Self, CliError> {
        toml::from_str(s).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Checks cross-field invariants and normalizes `N` for method `none`.
    pub fn validate(&mut self) -> Result<(), CliError> {
        if self.components == 0 {
            return Err(CliError::Config("K must be at least 1".into()));
        }
        if matches!(self.prior, PriorKind::Fixed | PriorKind::Gaussian) && self.components != 1 {
            return Err(CliError::Config(format!("prior '{:?}' has exactly one component", self.prior).to_lowercase()));
        }
        if self.refinement.is_some() && self.prior != PriorKind::Gmp {
            return Err(CliError::Config("refinement requires the gmp prior".into()));
        }
        if let Algorithm::Diffusion(method) = self.method {
            if method == Method::None {
                if self.prior == PriorKind::Fixed {
                    return Err(CliError::Config("method none needs a trainable prior".into()));
                }
                self.diffusion_steps = 0;
            } else if self.diffusion_steps == 0 {
                return Err(CliError::Config(format!("method {method} needs N ≥ 1")));
            }
        }
        if !(self.prior_std > 0.0 && self.sigma > 0.0) {
            return Err(CliError::Config("prior std and sigma must be positive".into()));
        }
        self.train.seed = self.seed;
        self.train.validate().map_err(CliError::config)?;
        if let Some(r) = &mut self.refinement {
            r.max_components = self.components;
            r.validate().map_err(CliError::config)?;
        }
        Ok(())
    }
}
