use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use teamsim_core::adapter::{AdapterSettings, DEFAULT_MODEL, DEFAULT_TEMPERATURE};
use teamsim_core::commands::{cmd_compare, cmd_report, cmd_run, CommandError, EXIT_ERROR};
use teamsim_core::config::RunConfig;
use teamsim_core::metrics::{render_report, to_csv};

/// Simulate a small team working through a task under a communication policy.
#[derive(Parser)]
#[command(name = "teamsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trace.jsonl, metrics.csv and report.txt.
    Run(RunArgs),
    /// Run several policies on the same scenario and seed.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated; speedup is relative to the first.
        #[arg(long, value_delimiter = ',', required = true)]
        policies: Vec<String>,
    },
    /// Recompute metrics from a stored trace.
    Report {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        baseline: Option<f64>,
        /// Print CSV instead of the table.
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    evaluator: Option<String>,
    #[arg(long)]
    planner: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    max_steps: Option<u32>,
    /// Base URL of a chat-completion endpoint. The bearer token is read
    /// from TEAMSIM_API_KEY.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value = DEFAULT_MODEL)]
    model: String,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
    /// Reference completion time in hours for the speedup column.
    #[arg(long)]
    baseline: Option<f64>,
    /// Let agents decide on a thread pool.
    #[arg(long)]
    parallel: bool,
}

impl RunArgs {
    fn config(self) -> RunConfig {
        let adapter = self.endpoint.map(|e| AdapterSettings {
            model: self.model,
            temperature: self.temperature,
            ..AdapterSettings::new(e)
        });
        RunConfig {
            scenario_path: self.scenario,
            policy: self.policy,
            evaluator: self.evaluator,
            planner: self.planner,
            seed: self.seed,
            out_dir: self.out,
            max_steps: self.max_steps,
            adapter,
            baseline_hours: self.baseline,
            parallel: self.parallel,
        }
    }
}

fn exec(cli: Cli) -> Result<i32, CommandError> {
    match cli.command {
        Command::Run(args) => {
            let out = cmd_run(&args.config())?;
            print!("{}", render_report(&out.report));
            for w in out.result.trace.warnings() {
                eprintln!("warning: {w}");
            }
            Ok(out.exit_code())
        }
        Command::Compare { run, policies } => {
            let cmp = cmd_compare(&run.config(), &policies)?;
            print!("{}", cmp.table);
            Ok(0)
        }
        Command::Report { scenario, trace, baseline, csv } => {
            let r = cmd_report(&scenario, &trace, baseline)?;
            if csv {
                print!("{}", to_csv(std::slice::from_ref(&r)));
            } else {
                print!("{}", render_report(&r));
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR as u8 } else { 0 });
        }
    };
    match exec(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
