//! Subcommands of the `sim` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use irsim::montecarlo::{
    det_equivalent_sweep, optimize_at, run_experiment, with_threads, ExperimentSpec, Metric,
};
use irsim::report::ResultTable;
use irsim::scenarios::{self, FigureOptions, DEFAULT_SEED, DEFAULT_TRIALS};
use serde::Serialize;
use thiserror::Error;

use crate::output::{emit_csv, provenance_id, stamp, write_csv, VERSION};
use crate::scenario::{parse_and_validate, OutputSettings, ResolvedScenario, ScenarioError, ScenarioFile};

#[derive(Debug, Parser)]
#[command(name = "sim", version = VERSION, about = "IRS-assisted multi-user MISO downlink simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte-Carlo sweep of a scenario file; writes <out>/<name>.csv and its resolved echo.
    Run(RunArgs),
    /// Deterministic-equivalent sweep of a scenario file, as CSV on stdout.
    Detequiv(ConfigArgs),
    /// Optimised IRS phases at the first grid point, as JSON on stdout.
    Optimize(ConfigArgs),
    /// Regenerate a figure's data set into <out>/<name>.csv.
    Fig(FigArgs),
}

#[derive(Debug, Args)]
pub struct Overrides {
    /// Replace the scenario's Monte-Carlo seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace the number of Monte-Carlo trials per grid point.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Worker threads (defaults to all cores).
    #[arg(long, env = "SIM_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides output.path in the file).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FigureName {
    Fig2,
    Fig3,
    Fig4,
}

#[derive(Debug, Args)]
pub struct FigArgs {
    #[arg(long, value_enum)]
    pub name: FigureName,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Core(#[from] irsim::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for input that fails validation, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        use irsim::Error as E;
        match self {
            CliError::Scenario(ScenarioError::Io { .. }) => 1,
            CliError::Scenario(ScenarioError::Core(e)) | CliError::Core(e) => match e {
                E::NotPositiveDefinite(_) | E::ResourceLimit(_) => 1,
                _ => 2,
            },
            CliError::Scenario(_) => 2,
            CliError::Io { .. } => 1,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

fn load(config: &Path, overrides: &Overrides) -> Result<ResolvedScenario, CliError> {
    let mut resolved = parse_and_validate(config)?;
    if let Some(seed) = overrides.seed {
        resolved.spec.seed = seed;
    }
    if let Some(trials) = overrides.trials {
        resolved.spec.trials = trials;
    }
    resolved.spec.validate().map_err(ScenarioError::from)?;
    Ok(resolved)
}

fn threads(overrides: &Overrides) -> Result<Option<usize>, CliError> {
    match overrides.threads {
        Some(0) => Err(ScenarioError::Invalid {
            key: "--threads".into(),
            msg: "must be at least 1".into(),
        }
        .into()),
        t => Ok(t),
    }
}

/// File stem derived from a scenario name.
pub fn file_stem(name: &str) -> String {
    let stem: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if stem.is_empty() { "scenario".into() } else { stem }
}

fn write_echo(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("echo serialises");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(format!("cannot write {}", path.display())))
}

fn run(args: &RunArgs) -> Result<(), CliError> {
    let resolved = load(&args.config, &args.overrides)?;
    let spec = &resolved.spec;
    let dir = args.out.clone().unwrap_or_else(|| resolved.output.dir.clone());
    let result = with_threads(threads(&args.overrides)?, || run_experiment(spec))?;
    let mut table = ResultTable::default();
    table.push_mc(&result, |p| format!("{p}_mc"), &Metric::ALL);
    stamp(&mut table, &spec.scenario_id, spec.seed);

    let stem = file_stem(&spec.scenario_id);
    let csv_path = dir.join(format!("{stem}.csv"));
    emit_csv(&table, &csv_path).map_err(io_err(format!("cannot write {}", csv_path.display())))?;
    let output = OutputSettings {
        dir: dir.clone(),
        format: resolved.output.format.clone(),
    };
    write_echo(&dir.join(format!("{stem}.echo.json")), &ScenarioFile::echo(spec, &output))?;
    println!("{}", csv_path.display());
    Ok(())
}

fn detequiv(args: &ConfigArgs) -> Result<(), CliError> {
    let resolved = load(&args.config, &args.overrides)?;
    let spec = &resolved.spec;
    let sweep = with_threads(threads(&args.overrides)?, || det_equivalent_sweep(spec))?;
    let mut table = ResultTable::default();
    table.push_det(&sweep, |p| format!("{p}_det"), &Metric::ALL);
    stamp(&mut table, &spec.scenario_id, spec.seed);
    let stdout = std::io::stdout();
    write_csv(&table, stdout.lock()).map_err(io_err("cannot write to stdout"))
}

#[derive(Debug, Serialize)]
struct OptimizeReport {
    scenario_id: String,
    x_name: String,
    x_value: f64,
    n: usize,
    alpha: Vec<f64>,
    theta_rad: Vec<f64>,
    v_re: Vec<f64>,
    v_im: Vec<f64>,
    sum_rate: f64,
    initial_sum_rate: f64,
    iterations: usize,
    hit_max_iters: bool,
}

fn optimize(args: &ConfigArgs) -> Result<(), CliError> {
    let resolved = load(&args.config, &args.overrides)?;
    let spec = &resolved.spec;
    let (ctx, result) = with_threads(threads(&args.overrides)?, || optimize_at(spec, 0))?;
    let v = result.v.v();
    let report = OptimizeReport {
        scenario_id: provenance_id(&spec.scenario_id, spec.seed),
        x_name: spec.sweep.param.name().into(),
        x_value: ctx.x,
        n: ctx.config.n,
        alpha: result.v.alpha().to_vec(),
        theta_rad: result.v.theta(),
        v_re: v.iter().map(|z| z.re).collect(),
        v_im: v.iter().map(|z| z.im).collect(),
        sum_rate: result.sum_rate(),
        initial_sum_rate: result.trace[0],
        iterations: result.iterations,
        hit_max_iters: result.hit_max_iters,
    };
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, &report).expect("report serialises");
    writeln!(stdout).map_err(io_err("cannot write to stdout"))
}

fn figure_specs(name: FigureName, opts: FigureOptions) -> Result<Vec<ExperimentSpec>, CliError> {
    use irsim::montecarlo::PhasePolicy;
    Ok(match name {
        FigureName::Fig2 => vec![
            scenarios::fig2_spec(PhasePolicy::RandomDiscrete { bits: 2, per_trial: true }, opts),
            scenarios::fig2_spec(PhasePolicy::GreedyDiscrete { bits: 2 }, opts),
            scenarios::fig2_spec(PhasePolicy::OptimizedDet, opts),
        ],
        FigureName::Fig3 => scenarios::fig3_specs(opts)?
            .into_iter()
            .map(|(prefix, mut spec)| {
                spec.scenario_id = format!("fig3_{prefix}");
                spec
            })
            .collect(),
        FigureName::Fig4 => scenarios::FIG4_N
            .iter()
            .map(|&n| Some(n))
            .chain(std::iter::once(None))
            .map(|n| scenarios::fig4_spec(n, opts))
            .collect(),
    })
}

/// Compute a figure's table and write `<out>/<name>.csv` plus the specs used.
pub fn figure_preset(name: FigureName, out: &Path, opts: FigureOptions, threads: Option<usize>) -> Result<PathBuf, CliError> {
    let label = match name {
        FigureName::Fig2 => "fig2",
        FigureName::Fig3 => "fig3",
        FigureName::Fig4 => "fig4",
    };
    let mut table = with_threads(threads, || match name {
        FigureName::Fig2 => scenarios::fig2(opts),
        FigureName::Fig3 => scenarios::fig3(opts),
        FigureName::Fig4 => scenarios::fig4(opts),
    })?;
    stamp(&mut table, label, opts.seed);
    let csv_path = out.join(format!("{label}.csv"));
    emit_csv(&table, &csv_path).map_err(io_err(format!("cannot write {}", csv_path.display())))?;
    let output = OutputSettings {
        dir: out.to_path_buf(),
        format: "csv".into(),
    };
    let echoes: Vec<ScenarioFile> = figure_specs(name, opts)?
        .iter()
        .map(|s| ScenarioFile::echo(s, &output))
        .collect();
    write_echo(&out.join(format!("{label}.echo.json")), &echoes)?;
    Ok(csv_path)
}

fn fig(args: &FigArgs) -> Result<(), CliError> {
    let opts = FigureOptions {
        trials: args.overrides.trials.unwrap_or(DEFAULT_TRIALS),
        seed: args.overrides.seed.unwrap_or(DEFAULT_SEED),
    };
    if opts.trials == 0 {
        return Err(ScenarioError::Invalid {
            key: "--trials".into(),
            msg: "must be at least 1".into(),
        }
        .into());
    }
    let path = figure_preset(args.name, &args.out, opts, threads(&args.overrides)?)?;
    println!("{}", path.display());
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run(a) => run(a),
        Command::Detequiv(a) => detequiv(a),
        Command::Optimize(a) => optimize(a),
        Command::Fig(a) => fig(a),
    }
}
