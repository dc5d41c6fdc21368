use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kerncon::pipeline::config::PipelineConfig;
use kerncon::pipeline::report::RunReport;
use kerncon::pipeline::{self, RunOptions};
use kerncon::Error;

/// Data-driven nonlinearity-cancelling controller design.
#[derive(Parser)]
#[command(name = "kerncon", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the kernel model and export the datasets.
    Fit(Common),
    /// Fit and synthesize the controller.
    Synthesize(Common),
    /// Fit, synthesize and certify the invariant level set.
    Certify(Common),
    /// Simulate the closed loop from random starts inside the level set.
    Simulate(Common),
    /// Run the bundled two-state example end to end with all checks.
    ReproducePaper(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the report as JSON on stdout.
    #[arg(long)]
    json: bool,
    /// Grid points per axis for certification.
    #[arg(long = "grid-res")]
    grid_res: Option<usize>,
    /// Level γ of the certified set.
    #[arg(long)]
    gamma: Option<f64>,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig, Error> {
        let base = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        RunOptions {
            seed: self.seed,
            out: self.out.clone(),
            grid_resolution: self.grid_res,
            level: self.gamma,
        }
        .apply(&base)
    }
}

/// Exit code 2 marks a completed run whose checks failed; 1 marks an error.
fn emit(report: &RunReport, json: bool) -> ExitCode {
    if json {
        match report.to_json() {
            Ok(s) => println!("{s}"),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        }
    } else {
        print!("{}", report.human_summary());
    }
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Infeasible { .. } => "infeasible",
        Error::Excitation { .. } => "excitation",
        Error::Config(_) => "config",
        Error::Solver(_) => "solver",
        Error::Io(_) => "io",
        _ => "error",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (common, run): (&Common, fn(&PipelineConfig) -> Result<RunReport, Error>) = match &cli.command {
        Command::Fit(c) => (c, pipeline::cmd_fit),
        Command::Synthesize(c) => (c, pipeline::cmd_synthesize),
        Command::Certify(c) => (c, pipeline::cmd_certify),
        Command::Simulate(c) => (c, pipeline::cmd_simulate),
        Command::ReproducePaper(c) => (c, pipeline::reproduce_paper),
    };
    let result = common.config().and_then(|cfg| run(&cfg));
    match result {
        Ok(report) => emit(&report, common.json),
        Err(e) => {
            if common.json {
                let body = serde_json::json!({
                    "passed": false,
                    "error": error_kind(&e),
                    "message": e.to_string(),
                });
                println!("{body}");
            } else {
                eprintln!("error: {e}");
            }
            // infeasibility and rejected data are verdicts, not crashes
            match e {
                Error::Infeasible { .. } | Error::Excitation { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
