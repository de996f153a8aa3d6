use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lps_cli::config::{Algorithm, ExperimentConfig, PriorKind, TargetSpec};
use lps_cli::error::CliError;
use lps_cli::{export, run};
use lps_core::losses::LossKind;
use lps_core::refinement::RefinementSchedule;

#[derive(Parser)]
#[command(name = "lps", version, about = "Train and evaluate diffusion samplers with learnable priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a sampler (or run SMC) and write a run directory.
    Run(RunArgs),
    /// Evaluate a saved checkpoint and print a JSON report.
    Eval(EvalArgs),
    /// Write plot-ready CSV tables from a run directory.
    Export(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// funnel, gmm, gaussian, logreg or phi4.
    #[arg(long)]
    target: Option<String>,
    /// dis, mcd, cmcd, dbs, none or smc.
    #[arg(long)]
    method: Option<Algorithm>,
    /// fixed, gaussian or gmp.
    #[arg(long)]
    prior: Option<PriorKind>,
    /// Mixture components (the cap when --imr is set).
    #[arg(long = "K")]
    components: Option<usize>,
    /// Diffusion steps.
    #[arg(long = "N")]
    diffusion_steps: Option<usize>,
    /// kl or logvar.
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV file for the logistic-regression target.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long = "label-col")]
    label_col: Option<String>,
    /// Enable iterative model refinement of the mixture prior.
    #[arg(long)]
    imr: bool,
    /// Add the score term to the forward control.
    #[arg(long = "score-head")]
    score_head: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Experiment file naming the target; defaults to config.toml beside the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    run: PathBuf,
    /// Output directory; defaults to <run>/plots.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::from_toml(&text)
}

fn build_config(a: RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut c = match (&a.config, &a.target) {
        (Some(p), _) => read_config(p)?,
        (None, Some(t)) => ExperimentConfig::with_target(TargetSpec::named(t)?),
        (None, None) => return Err(CliError::Config("either --config or --target is required".into())),
    };
    if let Some(t) = &a.target {
        if t.to_ascii_lowercase() != c.target.name() {
            c.target = TargetSpec::named(t)?;
        }
    }
    if a.dataset.is_some() || a.label_col.is_some() {
        let TargetSpec::Logreg { dataset, label_col, .. } = &mut c.target else {
            return Err(CliError::Config("--dataset and --label-col apply to the logreg target".into()));
        };
        if let Some(d) = a.dataset {
            *dataset = Some(d);
        }
        if let Some(l) = a.label_col {
            *label_col = l;
        }
    }
    if let Some(m) = a.method {
        c.method = m;
    }
    if let Some(p) = a.prior {
        c.prior = p;
    }
    if let Some(k) = a.components {
        c.components = k;
    }
    if a.imr {
        c.prior = PriorKind::Gmp;
        c.refinement.get_or_insert_with(RefinementSchedule::default);
        if a.components.is_none() && c.components == 1 {
            c.components = RefinementSchedule::default().max_components;
        }
    }
    if let Some(n) = a.diffusion_steps {
        c.diffusion_steps = n;
    }
    if let Some(l) = a.loss {
        c.loss = l;
    }
    if let Some(s) = a.steps {
        c.train.steps = s;
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    if let Some(o) = a.out {
        c.out = o;
    }
    c.score_head |= a.score_head;
    Ok(c)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let artifact = run::run(build_config(args)?)?;
            run::print_summary(&mut std::io::stdout(), &artifact.summary)?;
            println!("{:<18}{}", "artifacts", artifact.dir.display());
        }
        Command::Eval(args) => {
            let config_path = match args.config {
                Some(p) => p,
                None => args.checkpoint.parent().unwrap_or(Path::new(".")).join(run::CONFIG_FILE),
            };
            let config = read_config(&config_path)?;
            let report = run::eval_checkpoint(&args.checkpoint, &config.target, args.samples, args.seed)?;
            let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Core(e.into()))?;
            println!("{text}");
        }
        Command::Export(args) => {
            let out = args.out.unwrap_or_else(|| args.run.join("plots"));
            for f in export::export(&args.run, &out)? {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
