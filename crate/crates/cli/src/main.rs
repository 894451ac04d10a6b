//! `gan-audit`: projection, likelihood, classification, outlier and
//! typicality reports for decoder-based generative models.

mod commands;
mod config;
mod error;
mod plot;
mod report;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::{Args, Parser, Subcommand};
use gan_audit::inference::Method;

use config::{Format, RunConfig, Sigma2, SynthKind};
use error::{CliError, CliResult};
use report::Outputs;

#[derive(Parser)]
#[command(name = "gan-audit", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand; they override the config file.
#[derive(Args)]
struct Global {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Size of the worker pool.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (default: $GAN_AUDIT_OUT, then ./gan-audit-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Stem of the output files (default: the command name).
    #[arg(long, global = true)]
    name: Option<String>,
    /// Report formats, comma separated.
    #[arg(long, global = true, value_enum, value_delimiter = ',')]
    format: Vec<Format>,
    /// AIS intermediate distributions.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// AIS chains per sample.
    #[arg(long, global = true)]
    chains: Option<usize>,
    /// Projection iterations per restart.
    #[arg(long, global = true)]
    iterations: Option<usize>,
    /// Projection restarts.
    #[arg(long, global = true)]
    restarts: Option<usize>,
}

#[derive(Args, Default)]
struct Inputs {
    /// Model manifest (repeat for several class models).
    #[arg(long = "model")]
    models: Vec<PathBuf>,
    /// Dataset file (repeat for several groups).
    #[arg(long = "data")]
    data: Vec<PathBuf>,
    /// Training set, used for sigma2 estimation and nearest neighbours.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Observation variance, or "estimate".
    #[arg(long, value_parser = parse_sigma2)]
    sigma2: Option<Sigma2>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Synth {
        #[arg(long, value_enum)]
        kind: Option<SynthKind>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        shape: Vec<usize>,
        #[arg(long)]
        latent_dim: Option<usize>,
        #[arg(long)]
        class_mean: Option<f64>,
        #[arg(long)]
        loading_scale: Option<f64>,
        #[arg(long)]
        sigma2: Option<f64>,
        #[arg(long)]
        value: Option<f64>,
        #[arg(long)]
        shift: Option<f64>,
    },
    /// Fit a PPCA model in closed form.
    FitPpca {
        #[arg(long = "data")]
        data: Vec<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        /// Fit only samples with this label.
        #[arg(long)]
        class: Option<usize>,
    },
    /// Draw samples from a model.
    Sample {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Project samples onto a model's range.
    Project {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Estimate log-likelihoods with AIS.
    Ll {
        #[command(flatten)]
        inputs: Inputs,
        /// Also write per-level traces.
        #[arg(long)]
        trace: bool,
    },
    /// Classify with one model per class, or with nearest neighbours.
    Classify {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
    },
    /// Score outliers; the first dataset holds the inliers.
    Outlier {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
    },
    /// Test groups for membership in the model's typical set.
    Typicality {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        pool: Option<usize>,
        #[arg(long)]
        group_size: Option<usize>,
        #[arg(long)]
        level: Option<f64>,
        #[arg(long)]
        resamples: Option<usize>,
    },
    /// Patch coefficient of variation against log-likelihood.
    Cv {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        patch: Option<usize>,
    },
    /// Histogram SVG from a CSV report.
    Plot {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        column: Option<String>,
        #[arg(long)]
        group_column: Option<String>,
        #[arg(long)]
        bins: Option<usize>,
        /// Typicality report supplying the band.
        #[arg(long)]
        typicality: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        center: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        title: Option<String>,
    },
}

fn parse_sigma2(s: &str) -> Result<Sigma2, String> {
    s.parse()
}

fn parse_method(s: &str) -> Result<Method, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("expected ll, projection or 1nn, got {s:?}"))
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn set_vec<T>(slot: &mut Vec<T>, v: Vec<T>) {
    if !v.is_empty() {
        *slot = v;
    }
}

impl Inputs {
    fn apply(self, cfg: &mut RunConfig) {
        set_vec(&mut cfg.models, self.models);
        set_vec(&mut cfg.data, self.data);
        set_opt(&mut cfg.train, self.train);
        set_opt(&mut cfg.sigma2, self.sigma2);
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::FitPpca { .. } => "fit-ppca",
            Command::Sample { .. } => "sample",
            Command::Project { .. } => "project",
            Command::Ll { .. } => "ll",
            Command::Classify { .. } => "classify",
            Command::Outlier { .. } => "outlier",
            Command::Typicality { .. } => "typicality",
            Command::Cv { .. } => "cv",
            Command::Plot { .. } => "plot",
        }
    }

    fn apply(self, cfg: &mut RunConfig) {
        match self {
            Command::Synth {
                kind,
                n,
                shape,
                latent_dim,
                class_mean,
                loading_scale,
                sigma2,
                value,
                shift,
            } => {
                let s = &mut cfg.synth;
                set(&mut s.kind, kind);
                set(&mut s.n, n);
                set_vec(&mut s.shape, shape);
                set(&mut s.latent_dim, latent_dim);
                set(&mut s.class_mean, class_mean);
                set(&mut s.loading_scale, loading_scale);
                set(&mut s.sigma2, sigma2);
                set_opt(&mut s.value, value);
                set(&mut s.shift, shift);
                if cfg.name.is_none() {
                    cfg.name = Some(s.kind.to_string());
                }
            }
            Command::FitPpca { data, k, class } => {
                set_vec(&mut cfg.data, data);
                set_opt(&mut cfg.k, k);
                set_opt(&mut cfg.class, class);
            }
            Command::Sample { inputs, n } => {
                inputs.apply(cfg);
                set(&mut cfg.n, n);
            }
            Command::Project { inputs } => inputs.apply(cfg),
            Command::Ll { inputs, trace } => {
                inputs.apply(cfg);
                cfg.trace |= trace;
            }
            Command::Classify { inputs, method } | Command::Outlier { inputs, method } => {
                inputs.apply(cfg);
                set(&mut cfg.method, method);
            }
            Command::Typicality {
                inputs,
                pool,
                group_size,
                level,
                resamples,
            } => {
                inputs.apply(cfg);
                let t = &mut cfg.typicality;
                set(&mut t.pool, pool);
                set(&mut t.group_size, group_size);
                set(&mut t.level, level);
                set(&mut t.resamples, resamples);
            }
            Command::Cv { inputs, patch } => {
                inputs.apply(cfg);
                set(&mut cfg.patch, patch);
            }
            Command::Plot {
                input,
                column,
                group_column,
                bins,
                typicality,
                center,
                epsilon,
                title,
            } => {
                let p = &mut cfg.plot;
                set_opt(&mut p.input, input);
                set(&mut p.column, column);
                set(&mut p.group_column, group_column);
                set(&mut p.bins, bins);
                set_opt(&mut p.typicality, typicality);
                set_opt(&mut p.center, center);
                set_opt(&mut p.epsilon, epsilon);
                set_opt(&mut p.title, title);
            }
        }
    }
}

/// Config file first, then flags on top.
fn resolve(cli: Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.global.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let command = cli.command.name();
    if !cfg.command.is_empty() && cfg.command != command {
        return Err(CliError::config(
            "command",
            format!("config file is for {:?}, not {command:?}", cfg.command),
        ));
    }
    cfg.command = command.to_string();
    let g = cli.global;
    set(&mut cfg.seed, g.seed);
    set_opt(&mut cfg.workers, g.workers);
    set_opt(&mut cfg.out_dir, g.out);
    set_opt(&mut cfg.name, g.name);
    set_vec(&mut cfg.formats, g.format);
    set(&mut cfg.ais.steps, g.steps);
    set(&mut cfg.ais.chains, g.chains);
    set(&mut cfg.inversion.iterations, g.iterations);
    set(&mut cfg.inversion.restarts, g.restarts);
    cli.command.apply(&mut cfg);
    cfg.resolve_out_dir();
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> CliResult<PathBuf> {
    let cfg = resolve(cli)?;
    if let Some(w) = cfg.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::config("workers", e.to_string()))?;
    }
    let mut out = Outputs::new(&cfg)?;
    commands::run(&cfg, &mut out)?;
    out.finish(&cfg)
}

fn usage_error(e: &clap::Error) -> CliError {
    let field = match e.get(ContextKind::InvalidArg) {
        Some(ContextValue::String(s)) => s
            .split_whitespace()
            .next()
            .map(|flag| flag.trim_start_matches('-').replace('-', "_")),
        _ => None,
    };
    let message = e.to_string();
    let first = message.lines().next().unwrap_or("").trim_start_matches("error: ");
    CliError::usage(field, first)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                e.exit()
            }
            _ => {
                let err = usage_error(&e);
                eprintln!("{}", err.record());
                return err.exit_code();
            }
        },
    };
    match execute(cli) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record());
            e.exit_code()
        }
    }
}
