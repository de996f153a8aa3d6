//! Plot-ready CSV tables derived from a run directory.

use std::fs;
use std::path::{Path, PathBuf};

use lps_core::metrics::{magnetization_histogram, MetricsReport};
use lps_core::refinement::RefinementEvent;

use crate::config::{ExperimentConfig, TargetSpec};
use crate::error::CliError;
use crate::run::{
    sample_header, write_histogram, write_samples, CONFIG_FILE, METRICS_FILE, REFINEMENTS_FILE, SAMPLES_FILE,
};

pub const ELBO_CURVE: &str = "elbo_curve.csv";
pub const ESS_CURVE: &str = "ess_curve.csv";
pub const SCATTER: &str = "scatter.csv";
pub const MAGNETIZATION: &str = "magnetization_histogram.csv";
pub const REFINEMENT_AUDIT: &str = "refinement_audit.csv";

const BINS: usize = 40;

fn csv_err(e: csv::Error) -> CliError {
    CliError::Config(format!("malformed CSV: {e}"))
}

fn read_metrics(path: &Path) -> Result<Vec<MetricsReport>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let num = |i: usize| rec.get(i).unwrap_or("").parse::<f64>().ok();
        out.push(MetricsReport {
            step: num(0).unwrap_or(0.0) as usize,
            elbo: num(1).unwrap_or(f64::NAN),
            log_z_hat: num(2).unwrap_or(f64::NAN),
            delta_log_z: num(3),
            ess: num(4).unwrap_or(f64::NAN),
            sinkhorn: num(5),
            emc: num(6),
            s_norm: num(7),
            free_energy_bound: num(8),
            dropped_paths: num(9).unwrap_or(0.0) as usize,
        });
    }
    Ok(out)
}

fn read_samples(path: &Path) -> Result<(usize, Vec<Vec<f64>>), CliError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let dim = r.headers().map_err(csv_err)?.len();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| CliError::Config(format!("bad sample value '{v}': {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok((dim, rows))
}

fn write_rows(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn present(path: &Path) -> bool {
    if path.is_file() {
        true
    } else {
        log::warn!("{} is missing; writing an empty table", path.display());
        false
    }
}

/// Writes every plot table for the run in `run_dir` into `out_dir` and returns their paths.
pub fn export(run_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !run_dir.is_dir() {
        return Err(CliError::Config(format!("run directory {} does not exist", run_dir.display())));
    }
    fs::create_dir_all(out_dir)?;
    let config = match fs::read_to_string(run_dir.join(CONFIG_FILE)) {
        Ok(text) => Some(ExperimentConfig::from_toml(&text)?),
        Err(_) => {
            log::warn!("no {CONFIG_FILE} in {}", run_dir.display());
            None
        }
    };

    let metrics = if present(&run_dir.join(METRICS_FILE)) { read_metrics(&run_dir.join(METRICS_FILE))? } else { vec![] };
    write_rows(
        &out_dir.join(ELBO_CURVE),
        &["step", "elbo", "log_z_hat"],
        metrics.iter().map(|m| vec![m.step.to_string(), m.elbo.to_string(), m.log_z_hat.to_string()]).collect(),
    )?;
    write_rows(
        &out_dir.join(ESS_CURVE),
        &["step", "ess"],
        metrics.iter().map(|m| vec![m.step.to_string(), m.ess.to_string()]).collect(),
    )?;

    let (dim, samples) = if present(&run_dir.join(SAMPLES_FILE)) {
        read_samples(&run_dir.join(SAMPLES_FILE))?
    } else {
        let dim = config.as_ref().and_then(|c| c.target.build().ok()).map_or(0, |t| t.dim());
        (dim, vec![])
    };
    if samples.is_empty() {
        write_rows(&out_dir.join(SCATTER), &sample_header(dim).iter().map(String::as_str).collect::<Vec<_>>(), vec![])?;
    } else {
        write_samples(&out_dir.join(SCATTER), dim, &samples)?;
    }

    let is_lattice = matches!(config.as_ref().map(|c| &c.target), Some(TargetSpec::Phi4 { .. }));
    let histogram = if is_lattice && !samples.is_empty() { Some(magnetization_histogram(&samples, BINS, None)?) } else { None };
    write_histogram(&out_dir.join(MAGNETIZATION), histogram.as_ref())?;

    let events: Vec<RefinementEvent> = if present(&run_dir.join(REFINEMENTS_FILE)) {
        let text = fs::read_to_string(run_dir.join(REFINEMENTS_FILE))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("malformed {REFINEMENTS_FILE}: {e}")))?
    } else {
        vec![]
    };
    write_rows(
        &out_dir.join(REFINEMENT_AUDIT),
        &["step", "components", "score", "candidates", "excluded", "acceptance_rate", "mean"],
        events
            .iter()
            .map(|e| {
                let mean: Vec<String> = e.mean.iter().map(f64::to_string).collect();
                vec![
                    e.step.to_string(),
                    e.components.to_string(),
                    e.score.to_string(),
                    e.candidates.to_string(),
                    e.excluded.to_string(),
                    e.acceptance_rate.to_string(),
                    mean.join(" "),
                ]
            })
            .collect(),
    )?;

    Ok([ELBO_CURVE, ESS_CURVE, SCATTER, MAGNETIZATION, REFINEMENT_AUDIT].iter().map(|f| out_dir.join(f)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_run_gives_headered_tables() {
        let run = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let files = export(run.path(), out.path()).unwrap();
        assert_eq!(files.len(), 5);
        for f in files {
            let text = fs::read_to_string(&f).unwrap();
            assert_eq!(text.lines().count(), 1, "{}", f.display());
        }
    }

    #[test]
    fn missing_directory_is_a_config_error() {
        let out = tempfile::tempdir().unwrap();
        let err = export(Path::new("/nonexistent/run"), out.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
