//! Command-line driver: run scenario experiments, compare reports, check
//! inputs, and brute-force small toll grids.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use tollsim::closed_loop::report::{
    compare, comparison_csv, cycles_csv, guidance_csv, improvement_table, trace_csv, trips_csv,
    SeriesData,
};
use tollsim::closed_loop::{Experiment, PerformanceReport, ScenarioConfig, ScenarioKind};
use tollsim::network::load_network;
use tollsim::optimizer::{grid_oracle, optimize, Evaluator};

#[derive(Parser)]
#[command(name = "tollsim", version, about = "Rolling-horizon toll optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (scenario, demand level) of a config and write report CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Bound on concurrently running evaluations/replications.
        #[arg(long)]
        jobs: Option<usize>,
        /// Config overrides, e.g. --set period.delta=60.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Compare two series CSVs (baseline first) over the tolling and peak
    /// windows.
    Compare {
        /// Peak window as HH:MM-HH:MM or SECONDS-SECONDS; defaults to the
        /// baseline's metadata.
        #[arg(long)]
        peak: Option<String>,
        baseline: PathBuf,
        treatment: PathBuf,
    },
    /// Validate a config and its network file; print violations.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Exhaustively evaluate a discretized toll grid at the first
    /// optimizing cycle and print the objective table.
    GridOracle {
        #[arg(long)]
        config: PathBuf,
        /// Grid levels per gantry.
        #[arg(long, default_value_t = 5)]
        levels: usize,
        /// Also run the GA on the same context and report both optima.
        #[arg(long)]
        with_ga: bool,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

/// Exit codes: 0 success, 1 runtime failure, 2 usage/config failure.
fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(RunError::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(RunError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

enum RunError {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn usage<T>(r: anyhow::Result<T>) -> Result<T, RunError> {
    r.map_err(RunError::Usage)
}

fn runtime<T>(r: anyhow::Result<T>) -> Result<T, RunError> {
    r.map_err(RunError::Runtime)
}

fn dispatch(cli: Cli) -> Result<ExitCode, RunError> {
    match cli.command {
        Command::Run {
            config,
            out,
            jobs,
            overrides,
        } => {
            configure_jobs(jobs);
            let experiment = usage(load_experiment(&config, &overrides))?;
            runtime(run_all(&experiment, &out))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare {
            peak,
            baseline,
            treatment,
        } => {
            let peak = usage(peak.as_deref().map(parse_window).transpose())?;
            let a = runtime(SeriesData::load(&baseline).map_err(Into::into))?;
            let b = runtime(SeriesData::load(&treatment).map_err(Into::into))?;
            let rows = runtime(compare(&a, &b, peak).map_err(Into::into))?;
            print!("{}", comparison_csv(&rows));
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config, overrides } => {
            let config = usage(load_config(&config, &overrides))?;
            let network = usage(
                load_network(config.resolve(&config.files.network)).map_err(Into::into),
            )?;
            let violations = network.validate();
            if violations.is_empty() {
                println!(
                    "ok: {} nodes, {} links, {} gantries",
                    network.nodes.len(),
                    network.num_links(),
                    network.num_gantries()
                );
                Ok(ExitCode::SUCCESS)
            } else {
                for v in &violations {
                    println!("violation: {v}");
                }
                Ok(ExitCode::from(1))
            }
        }
        Command::GridOracle {
            config,
            levels,
            with_ga,
            jobs,
            overrides,
        } => {
            configure_jobs(jobs);
            let experiment = usage(load_experiment(&config, &overrides))?;
            runtime(run_grid(&experiment, levels, with_ga))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn configure_jobs(jobs: Option<usize>) {
    if let Some(n) = jobs {
        tollsim::set_parallelism(n);
    }
}

fn load_config(path: &Path, overrides: &[String]) -> anyhow::Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(ScenarioConfig::parse_with_overrides(&text, base, overrides)?)
}

fn load_experiment(path: &Path, overrides: &[String]) -> anyhow::Result<Experiment> {
    Ok(Experiment::load(load_config(path, overrides)?)?)
}

/// Parse `HH:MM-HH:MM` (seconds of day) or `SECONDS-SECONDS`.
fn parse_window(s: &str) -> anyhow::Result<(f64, f64)> {
    let (a, b) = s
        .split_once('-')
        .ok_or_else(|| anyhow!("window {s:?} is not FROM-TO"))?;
    let parse_instant = |t: &str| -> anyhow::Result<f64> {
        if let Some((hh, mm)) = t.split_once(':') {
            let hours: f64 = hh.trim().parse().map_err(|_| anyhow!("bad hour in {t:?}"))?;
            let minutes: f64 = mm
                .trim()
                .parse()
                .map_err(|_| anyhow!("bad minute in {t:?}"))?;
            Ok(hours * 3600.0 + minutes * 60.0)
        } else {
            t.trim()
                .parse()
                .map_err(|_| anyhow!("bad seconds in {t:?}"))
        }
    };
    let from = parse_instant(a)?;
    let to = parse_instant(b)?;
    if from >= to {
        return Err(anyhow!("window {s:?} is empty"));
    }
    Ok((from, to))
}

fn level_tag(level: f64) -> String {
    format!("{level:.2}").replace('.', "_")
}

fn run_all(experiment: &Experiment, out: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("cannot create output directory {}", out.display()))?;
    let kinds = experiment.config.scenario_kinds()?;
    let static_tolls = if kinds.contains(&ScenarioKind::Static) {
        log::info!("computing static toll baseline");
        let st = experiment.compute_static_tolls()?;
        let mut csv = String::from("gantry,link,toll\n");
        for (g, toll) in st.tolls.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{:.6}\n",
                g, experiment.network.tolled_links[g], toll
            ));
        }
        csv.push_str(&format!("# design_objective={:.6}\n", st.design_objective));
        std::fs::write(out.join("static_tolls.csv"), csv)?;
        Some(st.tolls)
    } else {
        None
    };

    let mut reports: Vec<PerformanceReport> = Vec::new();
    for &level in &experiment.config.run.demand_levels {
        for &kind in &kinds {
            log::info!("running {kind} at demand level {level}");
            let report = experiment.run_scenario(kind, level, static_tolls.as_deref())?;
            write_report(experiment, &report, out)?;
            reports.push(report);
        }
    }
    std::fs::write(out.join("table.csv"), improvement_table(&reports)?)?;
    Ok(())
}

fn write_report(
    experiment: &Experiment,
    report: &PerformanceReport,
    out: &Path,
) -> anyhow::Result<()> {
    let tag = format!("{}_{}", report.kind, level_tag(report.demand_level));
    let series = SeriesData::from_report(report);
    std::fs::write(out.join(format!("series_{tag}.csv")), series.serialize())?;
    for rep in 0..report.replications.len() {
        std::fs::write(
            out.join(format!("trips_{tag}_rep{rep}.csv")),
            trips_csv(report, rep, &experiment.network, &experiment.catalog)?,
        )?;
        std::fs::write(
            out.join(format!("cycles_{tag}_rep{rep}.csv")),
            cycles_csv(report, rep),
        )?;
        std::fs::write(
            out.join(format!("guidance_{tag}_rep{rep}.csv")),
            guidance_csv(report, rep, &experiment.network),
        )?;
        if report.kind == ScenarioKind::Predictive {
            std::fs::write(
                out.join(format!("trace_{tag}_rep{rep}.csv")),
                trace_csv(report, rep),
            )?;
        }
        if let Some(reason) = &report.replications[rep].failed {
            log::warn!("{tag} replication {rep} incomplete: {reason}");
        }
    }
    Ok(())
}

fn run_grid(experiment: &Experiment, levels: usize, with_ga: bool) -> anyhow::Result<()> {
    let context = experiment.first_optimizing_context(1.0, 0)?;
    let (region, shape) = experiment.cycle_region_and_shape(&context);
    let predictor = experiment.predictor();
    let evaluator = Evaluator {
        predictor: &predictor,
        estimated: &context.estimated,
        trips: &context.pred_trips,
        init_guidance: &context.init_guidance,
        shape,
        seed: context.eval_seed,
    };
    let (table, argmin) = grid_oracle(&region, levels, &evaluator)?;
    println!("tolls,objective");
    for (genes, objective) in &table {
        let tolls = genes
            .iter()
            .map(|g| format!("{g:.6}"))
            .collect::<Vec<_>>()
            .join(";");
        println!("{tolls},{objective:.6}");
    }
    let (best, best_obj) = &table[argmin];
    let best_str = best
        .iter()
        .map(|g| format!("{g:.6}"))
        .collect::<Vec<_>>()
        .join(";");
    println!(
        "# argmin={best_str} objective={best_obj:.6} cycle={}",
        context.cycle
    );
    if with_ga {
        let params = experiment.config.ga_params(experiment.config.world.seed);
        let outcome = optimize(&region, &params, &evaluator)?;
        let ga = outcome
            .genes
            .iter()
            .map(|g| format!("{g:.6}"))
            .collect::<Vec<_>>()
            .join(";");
        println!(
            "# ga={ga} objective={:.6} within_pct={:.4}",
            outcome.best_objective,
            100.0 * (outcome.best_objective - best_obj) / best_obj.max(1e-12)
        );
    }
    Ok(())
}
