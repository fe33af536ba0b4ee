use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tamsde::experiment::{run_experiment, ExperimentConfig, ExperimentKind, GridSpec};
use tamsde::Scheme;

#[derive(Parser, Debug)]
#[command(name = "tamsde", version, about = "Tamed-adaptive Milstein experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// MSE(k) between successive levels and the fitted strong rate.
    Rate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = SchemeArg::Tam)]
        scheme: SchemeArg,
    },
    /// TAM vs TM: log2 MSE against log2 N(T) for each horizon.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Moments E|X_T|^p of the approximation.
    Moments {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        /// Run at Δ = 2^-K.
        #[arg(long = "delta-k", default_value_t = 4)]
        delta_k: u32,
    },
    /// Check the dissipativity and one-sided Lipschitz bounds on a grid.
    VerifyAssumptions {
        #[arg(long, default_value = "model1")]
        model: String,
        /// Grid as lo:hi:n.
        #[arg(long, default_value = "-50:50:10000", allow_hyphen_values = true)]
        grid: GridSpec,
        /// Random grid pairs added to the consecutive pairs.
        #[arg(long = "random-pairs", default_value_t = 10_000)]
        random_pairs: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Strong error against exact geometric Brownian motion.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.05)]
        a: f64,
        #[arg(long, default_value_t = 0.2)]
        b: f64,
        #[arg(long, default_value_t = 1.0)]
        x0: f64,
    },
    /// Run an experiment described by a TOML file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Built-in model (model1, model2, gbm) or path to a model file.
    #[arg(long, default_value = "model1")]
    model: String,
    #[arg(long = "k-min", default_value_t = 1)]
    k_min: u32,
    #[arg(long = "k-max", default_value_t = 5)]
    k_max: u32,
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    /// Horizon(s), comma separated.
    #[arg(long = "T", value_delimiter = ',', default_value = "5")]
    t: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    h0: f64,
    #[arg(long, default_value_t = 2.0)]
    l0: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SchemeArg {
    Tam,
    Tm,
}

impl Common {
    fn into_config(self, kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            kind,
            model: self.model,
            k_min: self.k_min,
            k_max: self.k_max,
            n_paths: self.paths,
            t_values: self.t,
            h0: self.h0,
            l0: self.l0,
            seed: self.seed,
            out: self.out,
            threads: self.threads,
            ..Default::default()
        }
    }
}

fn build_config(cmd: Command) -> Result<ExperimentConfig, tamsde::experiment::ExperimentError> {
    Ok(match cmd {
        Command::Rate { common, scheme } => ExperimentConfig {
            scheme: match scheme {
                SchemeArg::Tam => Scheme::TamedAdaptive,
                SchemeArg::Tm => Scheme::TamedFixed,
            },
            ..common.into_config(ExperimentKind::Rate)
        },
        Command::Compare { common } => common.into_config(ExperimentKind::Compare),
        Command::Moments { common, p, delta_k } => ExperimentConfig {
            p,
            moment_k: delta_k,
            ..common.into_config(ExperimentKind::Moments)
        },
        Command::VerifyAssumptions {
            model,
            grid,
            random_pairs,
            seed,
            out,
        } => ExperimentConfig {
            kind: ExperimentKind::VerifyAssumptions,
            model,
            grid,
            random_pairs,
            seed,
            out,
            ..Default::default()
        },
        Command::Oracle { common, a, b, x0 } => ExperimentConfig {
            gbm_a: a,
            gbm_b: b,
            gbm_x0: x0,
            ..common.into_config(ExperimentKind::Oracle)
        },
        Command::Run { config } => ExperimentConfig::load(&config)?,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build_config(cli.command).and_then(|cfg| run_experiment(&cfg));
    match result {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
