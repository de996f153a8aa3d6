//! Training objectives over simulated path batches.

use std::fmt;
use std::str::FromStr;

use lps_tape::Var;
use serde::{Deserialize, Serialize};

use crate::dynamics::{PathBatch, PathMode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Reverse KL, i.e. the negative extended ELBO.
    Kl,
    /// Variance of the log path-density ratio over detached paths.
    LogVariance,
}

impl LossKind {
    pub fn path_mode(self) -> PathMode {
        match self {
            LossKind::Kl => PathMode::Attached,
            LossKind::LogVariance => PathMode::Detached,
        }
    }

    pub fn evaluate<'t>(self, paths: &PathBatch<'t>) -> Result<Var<'t>> {
        match self {
            LossKind::Kl => kl_loss(paths),
            LossKind::LogVariance => logvar_loss(paths),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Kl => "kl",
            LossKind::LogVariance => "logvariance",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "kl" => Ok(LossKind::Kl),
            "logvariance" | "logvar" | "lv" => Ok(LossKind::LogVariance),
            other => Err(Error::Invalid(format!("unknown loss '{other}'"))),
        }
    }
}

/// `−mean log w` over the finite paths.
pub fn kl_loss<'t>(paths: &PathBatch<'t>) -> Result<Var<'t>> {
    if paths.finite.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let (target, rest) = paths.finite_terms()?;
    Ok(target.add(rest)?.mean().neg())
}

/// Unbiased sample variance of the log weights.
///
/// Deviations are taken relative to the first path, separately for the
/// target term and the rest, so a constant added to `log ρ` cancels before
/// any rounding in the remaining arithmetic.
pub fn logvar_loss<'t>(paths: &PathBatch<'t>) -> Result<Var<'t>> {
    let m = paths.finite.len();
    if m < 2 {
        return Err(Error::Invalid(format!("log-variance loss needs at least 2 paths, got {m}")));
    }
    let (target, rest) = paths.finite_terms()?;
    let rel_target = target.sub(target.slice(0, 0, 1)?)?;
    let rel_rest = rest.sub(rest.slice(0, 0, 1)?)?;
    let dev = rel_target.add(rel_rest)?;
    let sum = dev.sum();
    let centered = dev.square().sum().sub(sum.square().scale(1.0 / m as f64))?;
    Ok(centered.scale(1.0 / (m - 1) as f64))
}
