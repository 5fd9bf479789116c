use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use aspo_core::acquisition::{CoolingMode, CoolingSchedule};
use aspo_core::assets::{load_assets, Assets};
use aspo_core::constraints::ConstraintTree;
use aspo_core::driver::{self, emit_report, Method, Problem, ReportFormat, RunConfig, Termination};
use aspo_core::eval::{
    EvalStrategy, ExternalBackend, HarnessCosts, ResourceBudget, SyntheticModel,
};
use aspo_core::par::Execution;
use aspo_core::space::ParameterSpace;
use aspo_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(
    name = "aspo",
    version,
    about = "Constraint-aware Bayesian optimization of soft-processor parameters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one benchmark and write report.jsonl and report.csv.
    Run(RunArgs),
    /// Compare the three evaluation strategies on random feasible configurations.
    EvalBench(EvalBenchArgs),
    /// Check asset hashes and that space, constraints and model load together.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct Inputs {
    /// Bundled processor (boom, rocketchip, el2-veer); replaces the file flags.
    #[arg(long, conflicts_with_all = ["space", "constraints", "model"])]
    processor: Option<String>,
    #[arg(long)]
    space: Option<PathBuf>,
    /// Omit for an unconstrained space.
    #[arg(long)]
    constraints: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    PaperRatio,
    Exponent,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Direct,
    Fixed,
    Retrieval,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    None,
    Random,
    VanillaBo,
    HillClimb,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    benchmark: String,
    #[arg(long, default_value_t = 40)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::PaperRatio)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = StrategyArg::Retrieval)]
    strategy: StrategyArg,
    #[arg(long, value_enum, default_value_t = BaselineArg::None)]
    baseline: BaselineArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    warm_start: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda0: f64,
    #[arg(long, default_value_t = 0.1)]
    decay: f64,
    /// Factor applied to every modelled minute.
    #[arg(long, default_value_t = 1.0 / 60.0)]
    time_compression: f64,
    /// Total design time limit in uncompressed minutes; 0 disables it.
    #[arg(long, default_value_t = 2100.0)]
    tdt_limit: f64,
    /// Consecutive non-improving iterations before stopping; 0 disables it.
    #[arg(long, default_value_t = 10)]
    stagnation: usize,
    /// Overrides the model's LUT budget.
    #[arg(long)]
    max_luts: Option<u64>,
    /// Add measured optimizer time to the design-time clock.
    #[arg(long)]
    account_overhead: bool,
    #[arg(long)]
    sequential: bool,
    /// External evaluator command line; replaces the synthetic model.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    external: Option<Vec<String>>,
    /// Per-request timeout for the external evaluator, in seconds.
    #[arg(long, default_value_t = 7200)]
    external_timeout: u64,
}

#[derive(Args)]
struct EvalBenchArgs {
    /// Bundled processors to measure; all by default.
    #[arg(long)]
    processor: Vec<String>,
    #[arg(long, default_value = "multiply")]
    benchmark: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    pool: usize,
    #[arg(long, default_value_t = 10)]
    samples: usize,
    /// Verify and use an on-disk asset tree instead of the bundled copies.
    #[arg(long)]
    assets: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Asset tree to verify against its manifest.
    #[arg(long)]
    assets: Option<PathBuf>,
}

struct Loaded {
    space: Arc<ParameterSpace>,
    tree: Arc<ConstraintTree>,
    model: Option<SyntheticModel>,
}

fn load_inputs(inputs: &Inputs) -> anyhow::Result<Loaded> {
    if let Some(name) = &inputs.processor {
        let assets = Assets::bundled()?;
        let p = assets.processor(name)?;
        return Ok(Loaded {
            space: p.space.clone(),
            tree: p.constraints.clone(),
            model: Some(p.model.clone()),
        });
    }
    let space_path = inputs.space.as_deref().ok_or_else(|| {
        Error::InvalidArgument("either --processor or --space is required".into())
    })?;
    let space = Arc::new(ParameterSpace::from_file(space_path)?);
    let tree = match &inputs.constraints {
        Some(p) => ConstraintTree::from_file(p, &space)?,
        None => ConstraintTree::unconstrained(&space),
    };
    let model = inputs
        .model
        .as_deref()
        .map(SyntheticModel::from_file)
        .transpose()?;
    if let Some(m) = &model {
        m.bind(space.clone())?;
    }
    Ok(Loaded {
        space,
        tree: Arc::new(tree),
        model,
    })
}

fn run(args: RunArgs) -> anyhow::Result<u8> {
    let loaded = load_inputs(&args.inputs)?;
    let problem = match (&args.external, &loaded.model) {
        (Some(cmd), model) => Problem {
            backend: Box::new(ExternalBackend::new(
                loaded.space.clone(),
                cmd.clone(),
                &args.benchmark,
                Duration::from_secs(args.external_timeout),
            )?),
            budget: match (args.max_luts, model) {
                (Some(l), _) => ResourceBudget::new(l)?,
                (None, Some(m)) => m.resource_budget(),
                (None, None) => ResourceBudget::new(u64::MAX)?,
            },
            costs: HarnessCosts::default(),
            space: loaded.space.clone(),
            tree: loaded.tree.clone(),
        },
        (None, Some(model)) => Problem::synthetic(
            loaded.space.clone(),
            loaded.tree.clone(),
            model,
            &args.benchmark,
            args.seed,
        )?,
        (None, None) => {
            return Err(Error::InvalidArgument("--model or --external is required".into()).into())
        }
    };
    let mode = match args.mode {
        ModeArg::PaperRatio => CoolingMode::PaperRatio,
        ModeArg::Exponent => CoolingMode::Exponent,
    };
    let rc = RunConfig {
        benchmark: args.benchmark.clone(),
        budget_iterations: args.iters,
        tdt_limit_minutes: (args.tdt_limit > 0.0).then_some(args.tdt_limit),
        warm_start_budget: args.warm_start,
        seed: args.seed,
        schedule: CoolingSchedule::new(args.lambda0, args.decay, mode)?,
        strategy: match args.strategy {
            StrategyArg::Direct => EvalStrategy::Direct,
            StrategyArg::Fixed => EvalStrategy::FixedCheckpoint,
            StrategyArg::Retrieval => EvalStrategy::Retrieval,
        },
        resource_budget: args.max_luts.map(ResourceBudget::new).transpose()?,
        time_compression: args.time_compression,
        stagnation_window: (args.stagnation > 0).then_some(args.stagnation),
        account_overhead: args.account_overhead,
        execution: if args.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        },
        ..RunConfig::default()
    };
    let method = match args.baseline {
        BaselineArg::None => Method::Aspo,
        BaselineArg::Random => Method::Random,
        BaselineArg::VanillaBo => Method::VanillaBo,
        BaselineArg::HillClimb => Method::HillClimb,
    };
    let report = driver::run(problem, &rc, method)?;
    emit_report(&loaded.space, &report, ReportFormat::Jsonl, &args.out)?;
    emit_report(&loaded.space, &report, ReportFormat::Csv, &args.out)?;
    println!("{}", driver::summary_json(&loaded.space, &report));
    Ok(match report.termination {
        Termination::NumericalFailure(msg) => {
            eprintln!("aspo: numerical failure: {msg}");
            EXIT_NUMERICAL
        }
        _ => 0,
    })
}

fn eval_bench(args: EvalBenchArgs) -> anyhow::Result<u8> {
    let assets = match &args.assets {
        Some(dir) => load_assets(dir)?,
        None => Assets::bundled()?,
    };
    let names: Vec<String> = if args.processor.is_empty() {
        assets.processors.keys().cloned().collect()
    } else {
        args.processor.clone()
    };
    for name in names {
        let p = assets.processor(&name)?;
        let problem = Problem::synthetic(
            p.space.clone(),
            p.constraints.clone(),
            &p.model,
            &args.benchmark,
            args.seed,
        )?;
        let stats = driver::eval_bench(problem, args.seed, args.pool, args.samples)?;
        for s in stats {
            println!(
                "{}",
                json!({
                    "processor": name,
                    "strategy": s.strategy.label(),
                    "samples": s.samples,
                    "mean_synthesis_minutes": s.mean_synthesis_minutes,
                    "mean_eval_minutes": s.mean_eval_minutes,
                })
            );
        }
    }
    Ok(0)
}

fn validate(args: ValidateArgs) -> anyhow::Result<u8> {
    if let Some(dir) = &args.assets {
        let assets = load_assets(dir)?;
        println!(
            "assets ok: {} files, processors {:?}",
            assets.manifest.files.len(),
            assets.processors.keys().collect::<Vec<_>>()
        );
    }
    let given = args.inputs.processor.is_some() || args.inputs.space.is_some();
    if given {
        let loaded = load_inputs(&args.inputs)?;
        let default = loaded.space.default_configuration();
        println!(
            "{}: {} parameters, {} configurations, default {}",
            loaded.space.name(),
            loaded.space.len(),
            loaded.space.size(),
            if loaded.tree.exact(&loaded.space, &default) {
                "feasible"
            } else {
                "infeasible"
            }
        );
    } else if args.assets.is_none() {
        let assets = Assets::bundled()?;
        println!(
            "bundled assets ok: processors {:?}",
            assets.processors.keys().collect::<Vec<_>>()
        );
    }
    Ok(0)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::InfeasibleSpace { .. }) | Some(Error::NoFeasibleCandidate { .. }) => {
            EXIT_INFEASIBLE
        }
        Some(Error::Numerical(_)) => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::EvalBench(a) => eval_bench(a),
        Command::Validate(a) => validate(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("aspo: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_exit_codes() {
        assert_eq!(
            exit_code(&Error::InfeasibleSpace { draws: 1 }.into()),
            EXIT_INFEASIBLE
        );
        assert_eq!(
            exit_code(&Error::Numerical("nan".into()).into()),
            EXIT_NUMERICAL
        );
        assert_eq!(
            exit_code(&Error::UnknownBenchmark("x".into()).into()),
            EXIT_CONFIG
        );
        assert_eq!(exit_code(&anyhow::anyhow!("other")), EXIT_CONFIG);
    }
}
