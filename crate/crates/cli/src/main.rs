use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pdelearn::dataset::Preset;
use pdelearn::denoise::{Init, Method};
use pdelearn::experiment::{self, ExperimentConfig};
use pdelearn::library::Term;
use pdelearn::{Error, Result};

#[derive(Parser)]
#[command(name = "pdelearn", version, about = "Learn PDE models from noisy spatiotemporal data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a model and write noisy datasets
    Generate(Common),
    /// Estimate u and its derivatives from a dataset
    Denoise(Common),
    /// Run sparse regression over many train/validation splits
    Learn(Common),
    /// Refit learned coefficients by forward simulation
    Refine(Common),
    /// Collect artifacts into rmse.csv, tpr.csv and equations.json
    Report(Common),
    /// All stages end to end
    Run(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment configuration; flags override its values
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Print the resolved configuration and exit
    #[arg(long)]
    dump_config: bool,
    #[arg(long)]
    model: Option<Preset>,
    /// Noise levels (repeat or comma-separate)
    #[arg(long, value_delimiter = ',')]
    sigma: Vec<f64>,
    /// Noise seed
    #[arg(long)]
    seed: Option<u64>,
    /// Seed from which split seeds are derived
    #[arg(long)]
    master_seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Denoisers: fd, spline, ann (repeat or comma-separate)
    #[arg(long, value_delimiter = ',')]
    method: Vec<Method>,
    #[arg(long)]
    splits: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    no_prune: bool,
    /// Refine the ANN equations by forward simulation during `run`
    #[arg(long)]
    inverse: bool,
    /// Terms of the refined equation (comma-separated labels such as u_xx,u*u_xx)
    #[arg(long, value_delimiter = ',')]
    inverse_terms: Vec<Term>,
    /// Hidden units of the network
    #[arg(long)]
    hidden: Option<usize>,
    /// Draw the hidden units at random with this weight scale and solve the
    /// output layer by least squares before training
    #[arg(long)]
    weight_scale: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Seed of the network initialization and batching
    #[arg(long)]
    ann_seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_toml(&std::fs::read_to_string(path)?)?,
            None => ExperimentConfig::default(),
        };
        if let Some(m) = self.model {
            cfg.preset = m;
        }
        if !self.sigma.is_empty() {
            cfg.sigmas = self.sigma.clone();
        }
        if let Some(s) = self.seed {
            cfg.noise_seed = s;
        }
        if let Some(s) = self.master_seed {
            cfg.master_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        if !self.method.is_empty() {
            cfg.methods = self.method.clone();
        }
        if let Some(n) = self.splits {
            cfg.splits = n;
        }
        if self.alpha.is_some() {
            cfg.alpha = self.alpha;
        }
        if self.no_prune {
            cfg.prune = false;
        }
        if self.inverse {
            cfg.inverse = true;
        }
        if !self.inverse_terms.is_empty() {
            cfg.inverse_terms = Some(self.inverse_terms.clone());
        }
        if let Some(h) = self.hidden {
            cfg.ann.hidden = h;
        }
        if let Some(w) = self.weight_scale {
            cfg.ann.init = Init::random_features(w);
        }
        if let Some(e) = self.max_epochs {
            cfg.ann.max_epochs = e;
        }
        if let Some(lr) = self.learning_rate {
            cfg.ann.learning_rate = lr;
        }
        if let Some(s) = self.ann_seed {
            cfg.ann.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(command: &Command) -> Result<()> {
    let (Command::Generate(common)
    | Command::Denoise(common)
    | Command::Learn(common)
    | Command::Refine(common)
    | Command::Report(common)
    | Command::Run(common)) = command;
    let cfg = common.resolve()?;
    if common.dump_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let each = |f: &dyn Fn(f64, Method) -> Result<()>| -> Result<()> {
        for &sigma in &cfg.sigmas {
            for &method in &cfg.methods {
                f(sigma, method)?;
            }
        }
        Ok(())
    };
    match command {
        Command::Generate(_) => {
            for &sigma in &cfg.sigmas {
                experiment::stage_generate(&cfg, sigma)?;
                println!("{}", cfg.dataset_path(sigma).display());
            }
        }
        Command::Denoise(_) => each(&|sigma, method| {
            let out = experiment::stage_denoise(&cfg, sigma, method)?;
            if out.reused_checkpoint {
                log::info!("sigma={sigma} {method}: network checkpoint reused, training skipped");
            }
            println!("{}", cfg.bundle_path(sigma, method).display());
            Ok(())
        })?,
        Command::Learn(_) => each(&|sigma, method| {
            let out = experiment::stage_learn(&cfg, sigma, method)?;
            let eq = out
                .modal_equation()
                .map(|e| e.render())
                .unwrap_or_else(|| "u_t = 0".into());
            let prune = if out.pruned { "" } else { " (pruning disabled)" };
            println!("sigma={sigma} {method}: {eq}  median TPR {}{prune}", out.median_tpr());
            Ok(())
        })?,
        Command::Refine(_) => {
            for &sigma in &cfg.sigmas {
                let method = if cfg.methods.contains(&Method::Ann) {
                    Method::Ann
                } else {
                    cfg.methods[0]
                };
                match experiment::stage_refine(&cfg, sigma, method)? {
                    Some(r) => println!("sigma={sigma} {method}: {}", r.refined.render()),
                    None => println!("sigma={sigma} {method}: nothing to refine"),
                }
            }
        }
        Command::Report(_) => {
            experiment::stage_report(&cfg)?;
            for p in experiment::report_paths(&cfg.output) {
                println!("{}", p.display());
            }
        }
        Command::Run(_) => {
            let report = experiment::run_experiment(&cfg)?;
            for eq in &report.equations {
                println!(
                    "sigma={} {}: {}  median TPR {}",
                    eq.sigma,
                    eq.method,
                    eq.equation.as_deref().unwrap_or("u_t = 0"),
                    eq.tpr.median
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let stale = match &e {
                Error::Stage { source, .. } => matches!(**source, Error::StaleArtifact { .. }),
                other => matches!(other, Error::StaleArtifact { .. }),
            };
            if stale {
                eprintln!("hint: rerun the earlier stages so every artifact comes from the current dataset");
            }
            ExitCode::FAILURE
        }
    }
}
