use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use smoothquant::encoding::LevelCoding;
use smoothquant::harness::bench::{encode_bench, StepSpec};
use smoothquant::harness::{self, DatasetSource, XAxis};
use smoothquant::methods::MethodKind;
use smoothquant::par;
use smoothquant::step_solver::BudgetMode;

#[derive(Parser)]
#[command(name = "smoothquant", version, about = "Smoothness-aware compressed distributed optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method/compressor/seed combination in a config file.
    Run { config: PathBuf },
    /// Print optimal quantization steps per worker as JSON.
    SolveSteps {
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value = "varying", value_parser = parse_mode)]
        mode: BudgetMode,
        #[arg(long, default_value = "dcgd+")]
        method: MethodKind,
        #[arg(long)]
        blocks: Option<usize>,
        #[arg(long, default_value_t = 1e-3)]
        l2: f64,
    },
    /// Print smoothness statistics per worker as JSON.
    Smoothness {
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 1e-3)]
        l2: f64,
    },
    /// Bit count versus ||h^-1|| on random Poisson vectors.
    EncodeBench {
        #[arg(long, default_value_t = 50)]
        d: usize,
        #[arg(long, default_value = "abs-normal")]
        steps: StepSpec,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Vectors per (lambda, density) setting for each step vector.
        #[arg(long, default_value_t = 1)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "unary")]
        level_coding: LevelCoding,
        /// Print only the correlation line.
        #[arg(long)]
        quiet: bool,
    },
    /// Render trace CSV files into one SVG.
    Plot {
        #[arg(long, default_value = "iters")]
        x_axis: XAxis,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<BudgetMode, String> {
    match s {
        "varying" => Ok(BudgetMode::Varying),
        "block" => Ok(BudgetMode::Block),
        other => Err(format!("unknown mode `{other}` (expected varying or block)")),
    }
}

fn load_problems(dataset: &str, n: usize, l2: f64) -> smoothquant::Result<Vec<smoothquant::problems::WorkerProblem>> {
    DatasetSource::parse(dataset, std::path::Path::new("."))?.problems(n, l2)
}

fn fail(e: smoothquant::Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    par::init_threads(par::threads_from_env());
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let code = harness::cli_run(&config, &mut std::io::stdout(), &mut std::io::stderr());
            ExitCode::from(code as u8)
        }
        Command::SolveSteps { dataset, n, beta, mode, method, blocks, l2 } => {
            match load_problems(&dataset, n, l2)
                .and_then(|p| harness::solve_steps(&p, beta, mode, method, blocks))
                .and_then(|r| harness::to_json(&r))
            {
                Ok(json) => {
                    println!("{json}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Smoothness { dataset, n, l2 } => {
            match load_problems(&dataset, n, l2).and_then(|p| harness::smoothness_report(&p)).and_then(|r| harness::to_json(&r)) {
                Ok(json) => {
                    println!("{json}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::EncodeBench { d, steps, trials, samples, seed, level_coding, quiet } => {
            match encode_bench(d, steps, trials, samples, seed, level_coding) {
                Ok(report) => {
                    let text = report.render();
                    if quiet {
                        print!("{}", text.lines().last().unwrap_or_default());
                        println!();
                    } else {
                        print!("{text}");
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Plot { x_axis, out, traces } => match harness::plot_csvs(&traces, x_axis, &out) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(e),
        },
    }
}
