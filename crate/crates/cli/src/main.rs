use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pathtrace::config::{apply_overrides, load_config, Overrides, PROBLEM_IDS};
use pathtrace::run::{run, EXIT_CONFIG_ERROR, EXIT_EARLY_TERMINATION};

/// Traces solution curves of parameterized nonlinear systems with the
/// Moore-Penrose continuation method, in its plain form or with the
/// deflation-informed safeguards and turning-point procedures.
#[derive(Parser)]
#[command(name = "pathtrace", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trace a curve from a JSON configuration file.
    Run {
        /// Path to the configuration file.
        config: PathBuf,
        /// Output directory for points.csv, events.csv and summary.json.
        #[arg(long, default_value = "pathtrace_out")]
        out: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// List the registered problem ids.
    Problems,
}

#[derive(Args, Clone, Default)]
struct Flags {
    /// Continuation driver: standard | improved.
    #[arg(long)]
    mode: Option<String>,
    /// Seed for the tangent-bordering retry rows.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of quadratic elements of the FEM problems.
    #[arg(long)]
    mesh_elems: Option<usize>,
    /// Bratu compression factor.
    #[arg(long)]
    gamma: Option<f64>,
    /// Manufactured-solution height factor.
    #[arg(long)]
    zeta: Option<f64>,
    /// Manufactured-solution width exponent.
    #[arg(long)]
    eta: Option<f64>,
    /// Branch-scan period in accepted steps.
    #[arg(long)]
    deflation_period: Option<usize>,
    /// Deflation power p.
    #[arg(long)]
    deflation_power: Option<f64>,
    /// Deflation shift sigma.
    #[arg(long)]
    deflation_shift: Option<f64>,
    /// Cosine floor for consecutive tangents.
    #[arg(long)]
    c_min: Option<f64>,
    /// Largest accepted ||u_new - u_old||.
    #[arg(long)]
    delta_max_u: Option<f64>,
    /// Largest accepted |lambda_new - lambda_old|.
    #[arg(long)]
    delta_max_lambda: Option<f64>,
    /// Branch-proximity threshold of the horizontal regime.
    #[arg(long)]
    delta_crit: Option<f64>,
    /// Base increment sizing the vertical method's lambda nudge.
    #[arg(long)]
    eps_lambda: Option<f64>,
    /// Tangent de-verticalization increment.
    #[arg(long)]
    eps_lambda_star: Option<f64>,
    /// Lambda nudge of the vertical turning point method.
    #[arg(long)]
    delta_lambda: Option<f64>,
    /// Branch-coincidence tolerance of the horizontal method.
    #[arg(long)]
    eps_diff: Option<f64>,
}

impl From<Flags> for Overrides {
    fn from(f: Flags) -> Overrides {
        Overrides {
            mode: f.mode,
            seed: f.seed,
            mesh_elems: f.mesh_elems,
            gamma: f.gamma,
            zeta: f.zeta,
            eta: f.eta,
            deflation_period: f.deflation_period,
            deflation_power: f.deflation_power,
            deflation_shift: f.deflation_shift,
            c_min: f.c_min,
            delta_max_u: f.delta_max_u,
            delta_max_lambda: f.delta_max_lambda,
            delta_crit: f.delta_crit,
            eps_lambda: f.eps_lambda,
            eps_lambda_star: f.eps_lambda_star,
            delta_lambda: f.delta_lambda,
            eps_diff: f.eps_diff,
        }
    }
}

fn env_seed() -> Option<u64> {
    std::env::var("PATHTRACE_SEED").ok().and_then(|s| s.parse().ok())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Problems => {
            for id in PROBLEM_IDS {
                println!("{id}");
            }
            ExitCode::SUCCESS
        }
        Command::Run { config, out, flags } => {
            let cfg = match load_config(&config)
                .and_then(|cfg| apply_overrides(cfg, &flags.into(), env_seed()))
            {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprint!("{e}");
                    return ExitCode::from(EXIT_CONFIG_ERROR as u8);
                }
            };
            match run(&cfg, &out) {
                Ok(code) => ExitCode::from(code as u8),
                Err(msg) => {
                    eprintln!("{msg}");
                    ExitCode::from(EXIT_EARLY_TERMINATION as u8)
                }
            }
        }
    }
}
