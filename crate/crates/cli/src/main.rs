//! `ntk-spectra`: reproducible neural-tangent-kernel experiments.
//!
//! Exit codes: 0 on success, 1 on a numerical failure, 2 on a usage error.

mod commands;
mod config;
mod pool;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Params;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(ntk_spectra::Error),
    Io(std::io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Numerical(e) => write!(f, "numerical failure: {e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<ntk_spectra::Error> for CliError {
    fn from(e: ntk_spectra::Error) -> Self {
        use ntk_spectra::Error::*;
        match e {
            InvalidParameter(_)
            | InvalidDimension(_)
            | DegreeTooLarge { .. }
            | SmoothnessBelowThreshold { .. }
            | WindowExceedsSpectrum { .. }
            | Parse(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "ntk-spectra", version, about = "Neural tangent kernel spectra, kernel flow and wide-network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// `key = value` file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<String>,
    /// Root seed
    #[arg(long)]
    seed: Option<String>,
    /// Worker threads for independent cells
    #[arg(long)]
    jobs: Option<String>,
    /// Also write (x, y) pairs ready for log-log plots
    #[arg(long)]
    plot_data: bool,
}

impl Common {
    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("out", self.out.clone()),
            ("seed", self.seed.clone()),
            ("jobs", self.jobs.clone()),
            ("plot_data", self.plot_data.then(|| "true".to_string())),
        ]
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Empirical eigenvalue decay rates of the NTK over distributions, d and L
    #[command(after_help = Params::describe(commands::EDR_KEYS))]
    Edr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dist: Option<String>,
        #[arg(long)]
        d: Option<String>,
        #[arg(long = "L")]
        layers: Option<String>,
        #[arg(long)]
        n: Option<String>,
        #[arg(long)]
        window_lo: Option<String>,
        #[arg(long)]
        window_hi: Option<String>,
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Spherical-harmonic mode eigenvalues of a dot-product profile
    #[command(after_help = Params::describe(commands::SPHERE_KEYS))]
    SphereModes {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        d: Option<String>,
        #[arg(long = "L")]
        layers: Option<String>,
        #[arg(long)]
        n_max: Option<String>,
        #[arg(long)]
        quad_order: Option<String>,
        #[arg(long)]
        fit_lo: Option<String>,
        #[arg(long)]
        fit_hi: Option<String>,
        #[arg(long)]
        trace_rel: Option<String>,
    },
    /// Kernel gradient-flow regression risk curve
    #[command(after_help = Params::describe(commands::FLOW_KEYS))]
    Flow {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        d: Option<String>,
        #[arg(long = "L")]
        layers: Option<String>,
        #[arg(long)]
        n: Option<String>,
        #[arg(long)]
        n_holdout: Option<String>,
        #[arg(long)]
        n_eval: Option<String>,
        #[arg(long)]
        sigma: Option<String>,
        #[arg(long)]
        s: Option<String>,
        #[arg(long)]
        c: Option<String>,
        #[arg(long = "M")]
        bound: Option<String>,
        #[arg(long)]
        times: Option<String>,
    },
    /// Train one mirrored network and trace its lazy-regime diagnostics
    #[command(after_help = Params::describe(commands::TRAIN_KEYS))]
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        d: Option<String>,
        #[arg(long = "L")]
        layers: Option<String>,
        #[arg(long)]
        m: Option<String>,
        #[arg(long)]
        n: Option<String>,
        #[arg(long)]
        eta: Option<String>,
        #[arg(long)]
        steps: Option<String>,
        #[arg(long)]
        log_every: Option<String>,
    },
    /// Network-versus-kernel gaps across a width sweep
    #[command(after_help = Params::describe(commands::COMPARE_KEYS))]
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        d: Option<String>,
        #[arg(long = "L")]
        layers: Option<String>,
        #[arg(long)]
        n: Option<String>,
        #[arg(long)]
        eta: Option<String>,
        #[arg(long)]
        steps: Option<String>,
        #[arg(long)]
        log_every: Option<String>,
        #[arg(long)]
        widths: Option<String>,
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Holdout selection of the stopping time
    #[command(after_help = Params::describe(commands::CV_KEYS))]
    Cv {
        #[command(flatten)]
        common: Common,
        #[arg(long = "L")]
        layers: Option<String>,
        #[arg(long)]
        n_train: Option<String>,
        #[arg(long)]
        n_holdout: Option<String>,
        #[arg(long)]
        sigma: Option<String>,
        #[arg(long = "M")]
        bound: Option<String>,
        #[arg(long = "Q")]
        q: Option<String>,
        #[arg(long)]
        delta: Option<String>,
        #[arg(long)]
        runs: Option<String>,
        #[arg(long)]
        n_eval: Option<String>,
    },
}

fn resolve(
    name: &'static str,
    keys: &[config::Key],
    common: &Common,
    mut flags: Vec<(&'static str, Option<String>)>,
) -> Result<Params, CliError> {
    flags.extend(common.flags());
    Params::resolve(name, keys, common.config.as_deref(), &flags)
}

fn run(command: Command) -> Result<(), CliError> {
    use commands::*;
    match command {
        Command::Edr { common, dist, d, layers, n, window_lo, window_hi, seeds } => {
            let flags = vec![
                ("dist", dist),
                ("d", d),
                ("L", layers),
                ("n", n),
                ("window_lo", window_lo),
                ("window_hi", window_hi),
                ("seeds", seeds),
            ];
            edr(&resolve("edr", EDR_KEYS, &common, flags)?)
        }
        Command::SphereModes { common, profile, d, layers, n_max, quad_order, fit_lo, fit_hi, trace_rel } => {
            let flags = vec![
                ("profile", profile),
                ("d", d),
                ("L", layers),
                ("n_max", n_max),
                ("quad_order", quad_order),
                ("fit_lo", fit_lo),
                ("fit_hi", fit_hi),
                ("trace_rel", trace_rel),
            ];
            sphere_modes(&resolve("sphere-modes", SPHERE_KEYS, &common, flags)?)
        }
        Command::Flow { common, d, layers, n, n_holdout, n_eval, sigma, s, c, bound, times } => {
            let flags = vec![
                ("d", d),
                ("L", layers),
                ("n", n),
                ("n_holdout", n_holdout),
                ("n_eval", n_eval),
                ("sigma", sigma),
                ("s", s),
                ("c", c),
                ("M", bound),
                ("times", times),
            ];
            flow(&resolve("flow", FLOW_KEYS, &common, flags)?)
        }
        Command::Train { common, d, layers, m, n, eta, steps, log_every } => {
            let flags = vec![
                ("d", d),
                ("L", layers),
                ("m", m),
                ("n", n),
                ("eta", eta),
                ("steps", steps),
                ("log_every", log_every),
            ];
            train_cmd(&resolve("train", TRAIN_KEYS, &common, flags)?)
        }
        Command::Compare { common, d, layers, n, eta, steps, log_every, widths, seeds } => {
            let flags = vec![
                ("d", d),
                ("L", layers),
                ("n", n),
                ("eta", eta),
                ("steps", steps),
                ("log_every", log_every),
                ("widths", widths),
                ("seeds", seeds),
            ];
            compare(&resolve("compare", COMPARE_KEYS, &common, flags)?)
        }
        Command::Cv { common, layers, n_train, n_holdout, sigma, bound, q, delta, runs, n_eval } => {
            let flags = vec![
                ("L", layers),
                ("n_train", n_train),
                ("n_holdout", n_holdout),
                ("sigma", sigma),
                ("M", bound),
                ("Q", q),
                ("delta", delta),
                ("runs", runs),
                ("n_eval", n_eval),
            ];
            cv(&resolve("cv", CV_KEYS, &common, flags)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ntk-spectra: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
