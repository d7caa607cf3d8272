//! Experiment orchestration behind the command-line interface.

pub mod bench;
pub mod config;
pub mod output;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::compressors::VarianceCertificate;
use crate::error::{Error, Result};
use crate::methods::{run_with_setup, setup, CompressorSpec, MethodConfig, MethodKind, Trace};
use crate::par;
use crate::problems::{reference_solution, strong_convexity, WorkerProblem};
use crate::smoothness::{heterogeneity, HeterogeneityStats, SmoothnessFactor};
use crate::step_solver::{
    even_blocks, solve_block_dcgd, solve_block_diana, solve_varying_dcgd, solve_varying_diana, BudgetMode,
};

pub use config::{load_config, parse_config, DatasetSource, ExperimentConfig};
pub use output::{emit_svg_plot, read_csv, render_svg, write_csv, Series, XAxis};

/// File-name friendly form of a method/compressor label.
pub fn slug(text: &str) -> String {
    text.replace('+', "plus").replace(|c: char| !c.is_ascii_alphanumeric(), "_")
}

#[derive(Clone, Debug, Serialize)]
pub struct ThresholdHit {
    pub threshold: f64,
    pub iter: Option<usize>,
    pub bits: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CombinationSummary {
    pub method: MethodKind,
    pub compressor: String,
    pub runs: Vec<PathBuf>,
    pub averaged: PathBuf,
    pub gamma: f64,
    pub alpha: Option<f64>,
    pub omega: Vec<f64>,
    pub cal_l: Vec<f64>,
    pub one_time_bits: u64,
    pub diverged_seeds: Vec<u64>,
    pub hits: Vec<ThresholdHit>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub version: String,
    pub smoothness: f64,
    pub mu: f64,
    pub f_star: f64,
    pub heterogeneity: HeterogeneityStats,
    pub combinations: Vec<CombinationSummary>,
    pub plots: Vec<PathBuf>,
}

impl RunSummary {
    pub fn diverged(&self) -> bool {
        self.combinations.iter().any(|c| !c.diverged_seeds.is_empty())
    }

    pub fn table(&self) -> String {
        let thresholds: Vec<f64> = self.combinations.first().map(|c| c.hits.iter().map(|h| h.threshold).collect()).unwrap_or_default();
        let mut out = format!("{:<8} {:<14}", "method", "compressor");
        for t in &thresholds {
            out.push_str(&format!(" {:>10} {:>14}", format!("it@{t:e}"), format!("bits@{t:e}")));
        }
        out.push('\n');
        for c in &self.combinations {
            out.push_str(&format!("{:<8} {:<14}", c.method.to_string(), c.compressor));
            for h in &c.hits {
                let it = h.iter.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
                let bits = h.bits.map(|v| format!("{v:.0}")).unwrap_or_else(|| "-".into());
                out.push_str(&format!(" {it:>10} {bits:>14}"));
            }
            if !c.diverged_seeds.is_empty() {
                out.push_str(&format!("  diverged: {:?}", c.diverged_seeds));
            }
            out.push('\n');
        }
        out
    }
}

/// Runs every (method, compressor, seed) combination of the config.
///
/// Writes `runs/<method>_<compressor>_seed<k>.csv`, `avg/<method>_<compressor>.csv`,
/// `plot_{iters,mbytes,time}.svg` and `summary.json` into the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    let problems = config.dataset.problems(config.n, config.l2)?;
    let reference = reference_solution(&problems, config.regularizer(), None)?;
    let factors: Vec<SmoothnessFactor> = problems.iter().map(|p| (*p.factor).clone()).collect();
    let stats = heterogeneity(&factors)?;
    let hash = config.hash();

    let combos: Vec<(MethodKind, &CompressorSpec)> =
        config.methods.iter().flat_map(|&m| config.compressors.iter().map(move |c| (m, c))).collect();
    let setups = combos
        .iter()
        .map(|(m, spec)| setup(*m, &problems, spec, config.geometry))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, u64)> =
        (0..combos.len()).flat_map(|c| config.seeds.iter().map(move |&s| (c, s))).collect();
    let traces: Vec<Result<Trace>> = par::map_range(jobs.len(), |j| {
        let (c, seed) = jobs[j];
        let mc = MethodConfig {
            gamma: config.gamma,
            alpha: config.alpha,
            iterations: config.iterations,
            seed,
            prox: config.regularizer(),
            coding: config.level_coding,
            geometry: config.geometry,
            clock: config.clock,
            cost: config.cost,
            x0: None,
        };
        let mut t = run_with_setup(combos[c].0, &setups[c], combos[c].1, &mc, &reference)?;
        t.meta.config_hash = Some(hash.clone());
        Ok(t)
    });
    let traces = traces.into_iter().collect::<Result<Vec<_>>>()?;

    let out = &config.output_dir;
    std::fs::create_dir_all(out.join("runs"))?;
    std::fs::create_dir_all(out.join("avg"))?;
    let mut combinations = Vec::new();
    let mut averaged = Vec::new();
    for (c, (method, spec)) in combos.iter().enumerate() {
        let label = format!("{method} {}", spec.label());
        let stem = format!("{}_{}", slug(&method.to_string()), slug(&spec.label()));
        let mine: Vec<&Trace> = traces.iter().zip(&jobs).filter(|(_, j)| j.0 == c).map(|(t, _)| t).collect();
        let mut runs = Vec::new();
        for t in &mine {
            let path = out.join("runs").join(format!("{stem}_seed{}.csv", t.meta.seed));
            write_csv(&path, &Series::from_records(&label, &t.records))?;
            runs.push(path);
        }
        let records: Vec<&[_]> = mine.iter().map(|t| t.records.as_slice()).collect();
        let mean = Series::mean(&label, &records);
        let avg_path = out.join("avg").join(format!("{stem}.csv"));
        write_csv(&avg_path, &mean)?;
        let hits = config
            .thresholds
            .iter()
            .map(|&threshold| {
                let idx = mean.first_below(threshold);
                ThresholdHit { threshold, iter: idx.map(|i| mean.iter[i]), bits: idx.map(|i| mean.bits_cum[i]) }
            })
            .collect();
        let meta = &mine[0].meta;
        combinations.push(CombinationSummary {
            method: *method,
            compressor: spec.label(),
            runs,
            averaged: avg_path,
            gamma: meta.gamma,
            alpha: meta.alpha,
            omega: meta.omega.clone(),
            cal_l: meta.cal_l.clone(),
            one_time_bits: meta.one_time_bits,
            diverged_seeds: mine.iter().filter(|t| t.diverged()).map(|t| t.meta.seed).collect(),
            hits,
        });
        averaged.push(mean);
    }
    let mut plots = Vec::new();
    for axis in [XAxis::Iters, XAxis::Mbytes, XAxis::Time] {
        let path = out.join(format!("plot_{}.svg", axis.file_stem()));
        emit_svg_plot(&averaged, axis, &path)?;
        plots.push(path);
    }
    let summary = RunSummary {
        config_hash: hash,
        version: env!("CARGO_PKG_VERSION").to_string(),
        smoothness: setups[0].smoothness,
        mu: setups[0].mu,
        f_star: reference.f_star,
        heterogeneity: stats,
        combinations,
        plots,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    std::fs::write(out.join("summary.json"), json + "\n")?;
    Ok(summary)
}

/// Process exit status for a finished or failed `run`.
pub fn exit_code(result: &Result<RunSummary>) -> i32 {
    match result {
        Ok(s) if s.diverged() => 1,
        Ok(_) => 0,
        Err(_) => 2,
    }
}

/// `run <config>`: executes, prints the summary table, returns the exit code.
pub fn cli_run(config_path: &Path, out: &mut impl Write, err: &mut impl Write) -> i32 {
    let result = load_config(config_path).and_then(|c| run_experiment(&c));
    match &result {
        Ok(summary) => {
            let _ = write!(out, "{}", summary.table());
            if summary.diverged() {
                let _ = writeln!(err, "error: at least one run diverged");
            }
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
        }
    }
    exit_code(&result)
}

#[derive(Clone, Debug, Serialize)]
pub struct WorkerSteps {
    pub worker: usize,
    pub steps: Vec<f64>,
    pub block_sizes: Option<Vec<usize>>,
    pub delta: Option<f64>,
    pub objective_value: f64,
    pub certificate: VarianceCertificate,
}

#[derive(Clone, Debug, Serialize)]
pub struct StepReport {
    pub method: MethodKind,
    pub mode: BudgetMode,
    pub beta: f64,
    pub mu: f64,
    pub workers: Vec<WorkerSteps>,
}

/// Step vectors for every worker under the budget `beta`.
pub fn solve_steps(
    problems: &[WorkerProblem],
    beta: f64,
    mode: BudgetMode,
    method: MethodKind,
    blocks: Option<usize>,
) -> Result<StepReport> {
    let n = problems.len();
    let mu = strong_convexity(problems)?;
    let diana = method.learns_shifts();
    let mut workers = Vec::with_capacity(n);
    for (i, p) in problems.iter().enumerate() {
        let f = &p.factor;
        let (sol, sizes, compressor) = match mode {
            BudgetMode::Varying => {
                let sol = if diana { solve_varying_diana(f, beta, n, mu)? } else { solve_varying_dcgd(f, beta)? };
                let c = crate::compressors::Compressor::varying(sol.steps.clone())?;
                (sol, None, c)
            }
            BudgetMode::Block => {
                let sizes = even_blocks(f.dim(), blocks.unwrap_or(n).clamp(1, f.dim()))?;
                let sol = if diana { solve_block_diana(f, &sizes, beta, n, mu)? } else { solve_block_dcgd(f, &sizes, beta)? };
                let c = crate::compressors::Compressor::block(sizes.clone(), sol.steps.clone())?;
                (sol, Some(sizes), c)
            }
        };
        workers.push(WorkerSteps {
            worker: i,
            certificate: compressor.certify(f)?,
            steps: sol.steps,
            block_sizes: sizes,
            delta: sol.delta,
            objective_value: sol.objective_value,
        });
    }
    Ok(StepReport { method, mode, beta, mu, workers })
}

#[derive(Clone, Debug, Serialize)]
pub struct WorkerSmoothness {
    pub worker: usize,
    pub rows: usize,
    pub lambda_max: f64,
    pub trace: f64,
    pub rank: usize,
    pub diag: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SmoothnessReport {
    pub global_lambda_max: f64,
    pub mu: f64,
    pub heterogeneity: HeterogeneityStats,
    pub workers: Vec<WorkerSmoothness>,
}

pub fn smoothness_report(problems: &[WorkerProblem]) -> Result<SmoothnessReport> {
    let factors: Vec<SmoothnessFactor> = problems.iter().map(|p| (*p.factor).clone()).collect();
    let workers = problems
        .iter()
        .enumerate()
        .map(|(i, p)| WorkerSmoothness {
            worker: i,
            rows: match &p.loss {
                crate::problems::Loss::Logistic(d) => d.len(),
                crate::problems::Loss::Quadratic { .. } => 0,
            },
            lambda_max: p.factor.lambda_max(),
            trace: p.factor.diag().iter().sum(),
            rank: p.factor.rank(),
            diag: p.factor.diag().to_vec(),
        })
        .collect();
    Ok(SmoothnessReport {
        global_lambda_max: crate::smoothness::global_factor(&factors)?.lambda_max(),
        mu: strong_convexity(problems)?,
        heterogeneity: heterogeneity(&factors)?,
        workers,
    })
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::InvalidParameter(e.to_string()))
}

/// `plot`: renders existing trace CSVs, labelled by file stem.
pub fn plot_csvs(paths: &[PathBuf], x_axis: XAxis, out: &Path) -> Result<()> {
    let series = paths
        .iter()
        .map(|p| {
            let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            read_csv(p, &label)
        })
        .collect::<Result<Vec<_>>>()?;
    emit_svg_plot(&series, x_axis, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{logistic_problems, synthetic_logistic_dataset};

    fn write_config(dir: &Path, extra: &str) -> PathBuf {
        let text = format!(
            "dataset = \"synthetic:m=60,d=6,seed=2\"\nn = 3\nl2 = 0.01\nmethods = [\"dcgd+\", \"diana\"]\n\
             compressors = [\"quant+\", \"quant\"]\nseeds = [0, 1, 2, 3, 4]\niterations = 30\noutput_dir = \"out\"\n{extra}"
        );
        let path = dir.join("exp.toml");
        std::fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn run_counts_files_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "");
        let mut out = Vec::new();
        let mut err = Vec::new();
        assert_eq!(cli_run(&path, &mut out, &mut err), 0, "{}", String::from_utf8_lossy(&err));
        let runs = std::fs::read_dir(dir.path().join("out/runs")).unwrap().count();
        let avg = std::fs::read_dir(dir.path().join("out/avg")).unwrap().count();
        assert_eq!((runs, avg), (20, 4));
        let first = std::fs::read(dir.path().join("out/avg/dcgdplus_quantplus.csv")).unwrap();
        let svg = std::fs::read(dir.path().join("out/plot_mbytes.svg")).unwrap();
        assert_eq!(cli_run(&path, &mut Vec::new(), &mut Vec::new()), 0);
        assert_eq!(std::fs::read(dir.path().join("out/avg/dcgdplus_quantplus.csv")).unwrap(), first);
        assert_eq!(std::fs::read(dir.path().join("out/plot_mbytes.svg")).unwrap(), svg);
        let table = String::from_utf8(out).unwrap();
        assert!(table.contains("dcgd+") && table.contains("quant+"));
    }

    #[test]
    fn missing_dataset_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, "dataset = \"absent.svm\"\nmethods = [\"dcgd\"]\ncompressors = [\"quant\"]\n").unwrap();
        let mut err = Vec::new();
        assert_eq!(cli_run(&path, &mut Vec::new(), &mut err), 2);
        assert!(String::from_utf8(err).unwrap().contains("absent.svm"));
    }

    #[test]
    fn divergence_exits_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "gamma = 1000.0\n");
        assert_eq!(cli_run(&path, &mut Vec::new(), &mut Vec::new()), 1);
    }

    #[test]
    fn step_report_matches_solvers() {
        let ds = synthetic_logistic_dataset(60, 6, 3).unwrap();
        let problems = logistic_problems(&ds, 2, 1e-2).unwrap();
        let r = solve_steps(&problems, 3.0, BudgetMode::Varying, MethodKind::DcgdPlus, None).unwrap();
        let direct = solve_varying_dcgd(&problems[1].factor, 3.0).unwrap();
        assert_eq!(r.workers[1].steps, direct.steps);
        let b = solve_steps(&problems, 5.0, BudgetMode::Block, MethodKind::DianaPlus, Some(2)).unwrap();
        assert_eq!(b.workers[0].block_sizes, Some(vec![3, 3]));
        assert!(b.workers[0].delta.is_some());
        let s = smoothness_report(&problems).unwrap();
        assert_eq!(s.workers.len(), 2);
        assert!(to_json(&s).unwrap().contains("heterogeneity"));
    }

    #[test]
    fn plot_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "");
        assert_eq!(cli_run(&path, &mut Vec::new(), &mut Vec::new()), 0);
        let csvs = vec![dir.path().join("out/avg/dcgdplus_quant.csv"), dir.path().join("out/avg/diana_quant.csv")];
        let svg = dir.path().join("p.svg");
        plot_csvs(&csvs, XAxis::Iters, &svg).unwrap();
        let text = std::fs::read_to_string(svg).unwrap();
        assert_eq!(text.matches("<polyline").count(), 2);
    }
}
