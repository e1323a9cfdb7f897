use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::Settings;

const EXIT_USER: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "nodewise", version, about = "Factor-model precision matrices, portfolios and backtests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true)]
    threads: Option<String>,
    /// gic | cv | fixed
    #[arg(long, global = true)]
    selector: Option<String>,
    #[arg(long, global = true)]
    cv_folds: Option<String>,
    /// Contiguous time blocks as folds instead of a random partition.
    #[arg(long, global = true)]
    cv_blocked: bool,
    /// Proportional transaction cost.
    #[arg(long, global = true)]
    tc: Option<String>,
    #[arg(long, global = true)]
    window: Option<String>,
    #[arg(long, global = true)]
    rho1: Option<String>,
    #[arg(long, global = true)]
    sigma: Option<String>,
    /// gmv | markowitz | msr | mos
    #[arg(long, global = true)]
    strategy: Option<String>,
    #[arg(long, global = true)]
    returns: Option<String>,
    #[arg(long, global = true)]
    factors: Option<String>,
    #[arg(long, global = true)]
    log_level: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Monte-Carlo comparison of Sharpe-ratio estimates with their targets.
    Simulate,
    /// Rolling-window out-of-sample backtest.
    Backtest,
    /// Residual and returns precision matrices for a panel.
    Precision,
    /// Portfolio weights and Sharpe-ratio estimates for a panel.
    Weights,
    /// Lists the configuration keys.
    Keys,
}

impl Cli {
    fn flag_overrides(&self) -> Vec<(&'static str, String)> {
        let mut v: Vec<(&'static str, String)> = [
            ("out", &self.out),
            ("seed", &self.seed),
            ("threads", &self.threads),
            ("selector", &self.selector),
            ("cv_folds", &self.cv_folds),
            ("tc", &self.tc),
            ("window", &self.window),
            ("rho1", &self.rho1),
            ("sigma", &self.sigma),
            ("strategy", &self.strategy),
            ("returns", &self.returns),
            ("factors", &self.factors),
            ("log_level", &self.log_level),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
        .collect();
        if self.cv_blocked {
            v.push(("cv_blocked", "true".into()));
        }
        v
    }

    fn settings(&self) -> anyhow::Result<Settings> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            s.apply_file(path)?;
        }
        s.apply_env(std::env::vars())?;
        for (k, v) in self.flag_overrides() {
            s.set(k, &v).map_err(|e| e.context(format!("flag --{}", k.replace('_', "-"))))?;
        }
        Ok(s)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .any(|e| e.downcast_ref::<nodewise::Error>().is_some_and(|e| e.is_numerical()));
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_USER
    }
}

fn run(cli: &Cli, settings: &Settings) -> anyhow::Result<()> {
    if settings.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(settings.threads)
            .build_global()?;
    }
    match cli.command {
        Command::Simulate => commands::simulate(settings),
        Command::Backtest => commands::backtest(settings),
        Command::Precision => commands::precision(settings),
        Command::Weights => commands::weights(settings),
        Command::Keys => {
            for (key, doc) in config::SCHEMA {
                println!("{key:<18} {doc}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let settings = match cli.settings() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_USER);
        }
    };
    env_logger::Builder::new().filter_level(settings.log_level).init();
    match run(&cli, &settings) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
