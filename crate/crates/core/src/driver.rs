//! The optimization loop, the comparison baselines and report emission.
//!
//! Time is accounted on a virtual clock in compressed minutes: every
//! evaluation adds its `eval_minutes`, and optimizer overhead is added at
//! measured wall time only when `account_overhead` is set (it is the one
//! non-deterministic input, so it is off by default).

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use crate::acquisition::{AcquisitionContext, CoolingSchedule, CostFn, MaximizeOptions};
use crate::checkpoint::{virtual_timestamp, CheckpointRecord, CheckpointStore, DistanceWeights};
use crate::constraints::ConstraintTree;
use crate::error::{Error, Result};
use crate::eval::{
    estimated_execution_time_ms, Backend, EvalStrategy, Evaluation, EvaluationResult, Harness,
    HarnessCosts, ResourceBudget, SyntheticBackend, SyntheticModel,
};
use crate::gp::{FitOptions, GpModel, KernelParams, Snapping};
use crate::par::Execution;
use crate::space::{Configuration, EncodedPoint, ParameterSpace};
use crate::warm_start::warm_start_configs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Aspo,
    Random,
    VanillaBo,
    HillClimb,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Aspo => "aspo",
            Method::Random => "random",
            Method::VanillaBo => "vanilla-bo",
            Method::HillClimb => "hill-climb",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub benchmark: String,
    /// Search iterations after the initial design.
    pub budget_iterations: usize,
    /// Uncompressed minutes; `None` disables the limit.
    pub tdt_limit_minutes: Option<f64>,
    pub warm_start_budget: usize,
    pub seed: u64,
    pub schedule: CoolingSchedule,
    pub strategy: EvalStrategy,
    /// Overrides the model's LUT budget when set.
    pub resource_budget: Option<ResourceBudget>,
    pub time_compression: f64,
    /// Stop after this many consecutive iterations without a relative EET
    /// improvement above `stagnation_tolerance`; `None` disables the rule.
    pub stagnation_window: Option<usize>,
    pub stagnation_tolerance: f64,
    pub relearn_every: usize,
    pub account_overhead: bool,
    pub random_starts: usize,
    pub gp_restarts: usize,
    pub execution: Execution,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            benchmark: "multiply".into(),
            budget_iterations: 40,
            tdt_limit_minutes: Some(2100.0),
            warm_start_budget: 10,
            seed: 0,
            schedule: CoolingSchedule::default(),
            strategy: EvalStrategy::Retrieval,
            resource_budget: None,
            time_compression: 1.0 / 60.0,
            stagnation_window: Some(10),
            stagnation_tolerance: 1e-3,
            relearn_every: 5,
            account_overhead: false,
            random_starts: 32,
            gp_restarts: 5,
            execution: Execution::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warm_start_budget == 0 {
            return Err(Error::InvalidArgument(
                "warm-start budget must be positive".into(),
            ));
        }
        if !(self.time_compression > 0.0) || !self.time_compression.is_finite() {
            return Err(Error::InvalidArgument(
                "time compression must be positive".into(),
            ));
        }
        if let Some(l) = self.tdt_limit_minutes {
            if !(l > 0.0) {
                return Err(Error::InvalidArgument("TDT limit must be positive".into()));
            }
        }
        if self.relearn_every == 0 {
            return Err(Error::InvalidArgument(
                "relearn interval must be positive".into(),
            ));
        }
        CoolingSchedule::new(self.schedule.lambda0, self.schedule.k, self.schedule.mode)?;
        Ok(())
    }
}

/// Space, constraints and evaluation backend for one run.
pub struct Problem {
    pub space: Arc<ParameterSpace>,
    pub tree: Arc<ConstraintTree>,
    pub backend: Box<dyn Backend>,
    pub budget: ResourceBudget,
    pub costs: HarnessCosts,
}

impl Problem {
    pub fn synthetic(
        space: Arc<ParameterSpace>,
        tree: Arc<ConstraintTree>,
        model: &SyntheticModel,
        benchmark: &str,
        seed: u64,
    ) -> Result<Self> {
        let bound = model.bind(space.clone())?;
        Ok(Self {
            budget: model.resource_budget(),
            costs: HarnessCosts {
                failure_minutes: model.timing.failure_minutes,
                lookup_minutes: model.timing.lookup_minutes,
            },
            backend: Box::new(SyntheticBackend::new(bound, benchmark, seed)?),
            space,
            tree,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Initial,
    Search,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub phase: Phase,
    pub config: Configuration,
    pub result: EvaluationResult,
    pub alpha: Option<f64>,
    pub cost_estimate: Option<f64>,
    pub cache_hit: bool,
    /// Virtual clock after this evaluation.
    pub tdt_minutes: f64,
    /// Best EET so far, including this entry.
    pub best_eet_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "detail")]
pub enum Termination {
    Budget,
    TdtLimit,
    Stagnation,
    Converged,
    Exhausted,
    NumericalFailure(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub method: Method,
    pub benchmark: String,
    pub seed: u64,
    pub strategy: EvalStrategy,
    pub time_compression: f64,
    pub history: Vec<HistoryEntry>,
    pub best_config: Option<Configuration>,
    pub best_eet_ms: Option<f64>,
    pub tdt_minutes: f64,
    pub termination: Termination,
}

impl RunReport {
    pub fn invalid_count(&self) -> usize {
        self.history.iter().filter(|h| !h.result.valid()).count()
    }

    /// Invalid fraction; `None` for an empty history.
    pub fn idr(&self) -> Option<f64> {
        if self.history.is_empty() {
            None
        } else {
            Some(self.invalid_count() as f64 / self.history.len() as f64)
        }
    }
}

/// Mixes a run seed with a stream tag and counter into a sub-seed.
pub fn derive_seed(seed: u64, stream: u64, counter: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(counter.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Shared bookkeeping for every method: harness, checkpoint store, clock,
/// history and the stopping rules.
struct Session<'a> {
    rc: &'a RunConfig,
    harness: Harness,
    db: CheckpointStore,
    weights: DistanceWeights,
    seen: HashMap<Configuration, EvaluationResult>,
    history: Vec<HistoryEntry>,
    tdt: f64,
    best: Option<(f64, Configuration)>,
    insertions: usize,
    stagnant: usize,
}

impl<'a> Session<'a> {
    fn new(problem: Problem, rc: &'a RunConfig) -> Self {
        let space = problem.space.clone();
        let n = space.len();
        Self {
            rc,
            harness: Harness {
                space: problem.space,
                tree: problem.tree,
                backend: problem.backend,
                budget: rc.resource_budget.unwrap_or(problem.budget),
                costs: problem.costs,
                time_compression: rc.time_compression,
            },
            db: CheckpointStore::new(space),
            weights: DistanceWeights::ones(n),
            seen: HashMap::new(),
            history: Vec::new(),
            tdt: 0.0,
            best: None,
            insertions: 0,
            stagnant: 0,
        }
    }

    fn space(&self) -> &Arc<ParameterSpace> {
        &self.harness.space
    }

    fn tdt_exhausted(&self) -> bool {
        self.rc
            .tdt_limit_minutes
            .is_some_and(|l| self.tdt >= l * self.rc.time_compression)
    }

    fn add_overhead(&mut self, started: Instant) {
        if self.rc.account_overhead {
            self.tdt += started.elapsed().as_secs_f64() / 60.0;
        }
    }

    /// Evaluates (or replays) `cfg`, updates the store, weights, clock and
    /// history. Returns whether the best EET improved beyond the tolerance.
    fn evaluate(
        &mut self,
        cfg: Configuration,
        phase: Phase,
        alpha: Option<f64>,
        cost_estimate: Option<f64>,
    ) -> Result<bool> {
        let outcome = match self.seen.get(&cfg) {
            Some(prev) => {
                let mut result = prev.clone();
                result.eval_minutes = self.harness.costs.lookup_minutes * self.rc.time_compression;
                Evaluation {
                    result,
                    synthesis_minutes: None,
                    cache_hit: true,
                    reference: None,
                }
            }
            None => self
                .harness
                .evaluate(&cfg, self.rc.strategy, &self.db, &self.weights)?,
        };
        self.tdt += outcome.result.eval_minutes;

        let mut improved = false;
        if outcome.result.valid() {
            let eet = estimated_execution_time_ms(&outcome.result)?;
            let better = self.best.as_ref().is_none_or(|(b, _)| eet < *b);
            improved = self
                .best
                .as_ref()
                .is_none_or(|(b, _)| eet < b * (1.0 - self.rc.stagnation_tolerance));
            if better {
                self.best = Some((eet, cfg.clone()));
            }
            if let Some(synth) = outcome.synthesis_minutes {
                let rec = CheckpointRecord::new(
                    self.space(),
                    cfg.clone(),
                    outcome.result.clone(),
                    synth.max(1e-9),
                    virtual_timestamp(self.tdt),
                )?;
                if self.db.insert(rec) {
                    self.insertions += 1;
                    if self.insertions.is_multiple_of(self.rc.relearn_every) {
                        self.relearn_weights();
                    }
                }
            }
        }
        if !outcome.cache_hit {
            self.seen.insert(cfg.clone(), outcome.result.clone());
        }
        self.history.push(HistoryEntry {
            iteration: self.history.len(),
            phase,
            config: cfg,
            result: outcome.result,
            alpha,
            cost_estimate,
            cache_hit: outcome.cache_hit,
            tdt_minutes: self.tdt,
            best_eet_ms: self.best.as_ref().map(|(b, _)| *b),
        });
        Ok(improved)
    }

    fn relearn_weights(&mut self) {
        let Some(model) = self.harness.backend.time_model() else {
            return;
        };
        let seed = derive_seed(self.rc.seed, 3, self.insertions as u64);
        match self.db.learn_weights(model, seed) {
            Ok(w) => self.weights = w,
            Err(e) => log::debug!("weight learning skipped: {e}"),
        }
    }

    /// Applies the stagnation rule after a search iteration.
    fn stagnated(&mut self, improved: bool) -> bool {
        if improved {
            self.stagnant = 0;
        } else {
            self.stagnant += 1;
        }
        self.rc
            .stagnation_window
            .is_some_and(|w| self.stagnant >= w)
    }

    fn training_set(&self) -> Result<(Vec<EncodedPoint>, Vec<f64>)> {
        let mut xs = Vec::with_capacity(self.db.len());
        let mut ys = Vec::with_capacity(self.db.len());
        for r in self.db.records() {
            xs.push(r.encoded.clone());
            ys.push(estimated_execution_time_ms(&r.metrics)?.ln());
        }
        Ok((xs, ys))
    }

    fn finish(self, method: Method, termination: Termination) -> RunReport {
        RunReport {
            method,
            benchmark: self.rc.benchmark.clone(),
            seed: self.rc.seed,
            strategy: self.rc.strategy,
            time_compression: self.rc.time_compression,
            best_eet_ms: self.best.as_ref().map(|(b, _)| *b),
            best_config: self.best.map(|(_, c)| c),
            history: self.history,
            tdt_minutes: self.tdt,
            termination,
        }
    }
}

fn is_numerical(e: &Error) -> bool {
    matches!(e, Error::Numerical(_))
}

/// Runs the constraint-aware, cost-cooled optimizer.
pub fn run_optimization(problem: Problem, rc: &RunConfig) -> Result<RunReport> {
    run(problem, rc, Method::Aspo)
}

/// Runs a comparison baseline under the same harness and accounting.
pub fn run_baseline(problem: Problem, rc: &RunConfig, method: Method) -> Result<RunReport> {
    run(problem, rc, method)
}

pub fn run(problem: Problem, rc: &RunConfig, method: Method) -> Result<RunReport> {
    rc.validate()?;
    let mut s = Session::new(problem, rc);
    let termination = match method {
        Method::Aspo => bayesian_loop(&mut s, true)?,
        Method::VanillaBo => bayesian_loop(&mut s, false)?,
        Method::Random => random_loop(&mut s)?,
        Method::HillClimb => hill_climb_loop(&mut s)?,
    };
    Ok(s.finish(method, termination))
}

fn uniform_design(s: &Session<'_>, n: usize, stream: u64) -> Vec<Configuration> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(s.rc.seed, stream, 0));
    (0..n)
        .map(|_| s.space().random_configuration(&mut rng))
        .collect()
}

fn bayesian_loop(s: &mut Session<'_>, aware: bool) -> Result<Termination> {
    let initial = if aware {
        warm_start_configs(
            s.space(),
            &s.harness.tree,
            s.rc.seed,
            s.rc.warm_start_budget,
        )?
    } else {
        uniform_design(s, s.rc.warm_start_budget, 1)
    };
    for cfg in &initial {
        let cost = aware.then(|| s.db.cost_estimate(cfg, &s.weights));
        s.evaluate(cfg.clone(), Phase::Initial, None, cost)?;
        if s.tdt_exhausted() {
            return Ok(Termination::TdtLimit);
        }
    }

    let space = s.space().clone();
    let tree = s.harness.tree.clone();
    for t in 0..s.rc.budget_iterations {
        let started = Instant::now();
        let (xs, ys) = s.training_set()?;
        let snapping = if aware {
            Snapping::On(space.clone())
        } else {
            Snapping::Off
        };
        let fit = GpModel::fit(
            snapping,
            &xs,
            &ys,
            &KernelParams::new(space.encoded_dim()),
            &FitOptions {
                restarts: s.rc.gp_restarts,
                seed: derive_seed(s.rc.seed, 4, t as u64),
                execution: s.rc.execution,
                ..FitOptions::default()
            },
        );
        let model = match fit {
            Ok(m) => Some(m),
            Err(Error::InsufficientRecords { .. }) => None,
            Err(e) if is_numerical(&e) => return Ok(Termination::NumericalFailure(e.to_string())),
            Err(e) => return Err(e),
        };

        let proposal = match &model {
            Some(model) => {
                let best = ys.iter().copied().fold(f64::INFINITY, f64::min);
                let ctx = AcquisitionContext {
                    model,
                    space: &space,
                    tree: aware.then_some(&*tree),
                    best_feasible: Some(best),
                    cost: aware.then_some(CostFn {
                        store: &s.db,
                        weights: &s.weights,
                    }),
                    schedule: s.rc.schedule,
                    iteration: t,
                };
                let opts = MaximizeOptions {
                    random_starts: s.rc.random_starts,
                    seed: derive_seed(s.rc.seed, 5, t as u64),
                    exclude_evaluated: aware,
                    execution: s.rc.execution,
                    ..MaximizeOptions::default()
                };
                match ctx.maximize(&initial, &opts) {
                    Ok(p) => (p.config, Some(p.score.alpha_cool), p.score.cost),
                    Err(Error::NoFeasibleCandidate { .. }) => return Ok(Termination::Exhausted),
                    Err(e) if is_numerical(&e) => {
                        return Ok(Termination::NumericalFailure(e.to_string()))
                    }
                    Err(e) => return Err(e),
                }
            }
            None => {
                // Too few valid observations for a surrogate: sample instead.
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(s.rc.seed, 6, t as u64));
                let mut pick = None;
                for _ in 0..crate::warm_start::REJECTION_DRAWS {
                    let c = space.random_configuration(&mut rng);
                    if !aware || (tree.exact(&space, &c) && !s.db.contains(&c)) {
                        pick = Some(c);
                        break;
                    }
                }
                match pick {
                    Some(c) => {
                        let cost = aware.then(|| s.db.cost_estimate(&c, &s.weights));
                        (c, None, cost)
                    }
                    None => return Ok(Termination::Exhausted),
                }
            }
        };
        s.add_overhead(started);

        let improved = s.evaluate(proposal.0, Phase::Search, proposal.1, proposal.2)?;
        if s.tdt_exhausted() {
            return Ok(Termination::TdtLimit);
        }
        if s.stagnated(improved) {
            return Ok(Termination::Stagnation);
        }
    }
    Ok(Termination::Budget)
}

fn random_loop(s: &mut Session<'_>) -> Result<Termination> {
    let total = s.rc.warm_start_budget + s.rc.budget_iterations;
    let design = uniform_design(s, total, 2);
    for (i, cfg) in design.into_iter().enumerate() {
        let phase = if i < s.rc.warm_start_budget {
            Phase::Initial
        } else {
            Phase::Search
        };
        let improved = s.evaluate(cfg, phase, None, None)?;
        if s.tdt_exhausted() {
            return Ok(Termination::TdtLimit);
        }
        if phase == Phase::Search && s.stagnated(improved) {
            return Ok(Termination::Stagnation);
        }
    }
    Ok(Termination::Budget)
}

/// Best-neighbour ascent from the default configuration. Every neighbour
/// evaluation consumes one unit of the evaluation budget.
fn hill_climb_loop(s: &mut Session<'_>) -> Result<Termination> {
    let total = s.rc.warm_start_budget + s.rc.budget_iterations;
    let mut current = s.space().default_configuration();
    s.evaluate(current.clone(), Phase::Initial, None, None)?;
    let mut current_eet = s.history[0]
        .result
        .valid()
        .then(|| s.best.as_ref().map(|b| b.0))
        .flatten();
    loop {
        let mut best_step: Option<(f64, Configuration)> = None;
        for n in s.space().neighbors(&current) {
            if s.history.len() >= total {
                return Ok(Termination::Budget);
            }
            s.evaluate(n.clone(), Phase::Search, None, None)?;
            let last = &s.history[s.history.len() - 1].result;
            if last.valid() {
                let eet = estimated_execution_time_ms(last)?;
                if best_step.as_ref().is_none_or(|(b, _)| eet < *b) {
                    best_step = Some((eet, n));
                }
            }
            if s.tdt_exhausted() {
                return Ok(Termination::TdtLimit);
            }
        }
        match best_step {
            Some((eet, n)) if current_eet.is_none_or(|c| eet < c) => {
                current = n;
                current_eet = Some(eet);
            }
            _ => return Ok(Termination::Converged),
        }
    }
}

/// Mean per-strategy cost of evaluating the same configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyStats {
    pub strategy: EvalStrategy,
    pub samples: usize,
    pub mean_synthesis_minutes: f64,
    pub mean_eval_minutes: f64,
}

/// Evaluates `samples` random feasible configurations under every strategy
/// at uncompressed time. The retrieval store is pre-populated with the
/// default plus `pool` random feasible configurations, and is not updated
/// during measurement so every sample sees the same store.
pub fn eval_bench(
    problem: Problem,
    seed: u64,
    pool: usize,
    samples: usize,
) -> Result<Vec<StrategyStats>> {
    let harness = Harness {
        space: problem.space,
        tree: problem.tree,
        backend: problem.backend,
        budget: problem.budget,
        costs: problem.costs,
        time_compression: 1.0,
    };
    let space = harness.space.clone();
    let weights = DistanceWeights::ones(space.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 7, 0));
    let mut picked: Vec<Configuration> = vec![space.default_configuration()];
    let mut draws = 0;
    while picked.len() < 1 + pool + samples {
        if draws == crate::warm_start::REJECTION_DRAWS {
            return Err(Error::InfeasibleSpace { draws });
        }
        draws += 1;
        let c = space.random_configuration(&mut rng);
        if harness.tree.exact(&space, &c) && !picked.contains(&c) {
            picked.push(c);
        }
    }
    let tests = picked.split_off(1 + pool);

    let mut db = CheckpointStore::new(space.clone());
    let empty = CheckpointStore::new(space.clone());
    let mut clock = 0.0;
    for cfg in picked {
        let e = harness.evaluate(&cfg, EvalStrategy::Direct, &empty, &weights)?;
        clock += e.result.eval_minutes;
        if let (true, Some(synth)) = (e.result.valid(), e.synthesis_minutes) {
            db.insert(CheckpointRecord::new(
                &space,
                cfg,
                e.result,
                synth,
                virtual_timestamp(clock),
            )?);
        }
    }

    EvalStrategy::ALL
        .iter()
        .map(|&strategy| {
            let store = if strategy == EvalStrategy::Direct {
                &empty
            } else {
                &db
            };
            let (mut synth, mut eval) = (0.0, 0.0);
            for cfg in &tests {
                let e = harness.evaluate(cfg, strategy, store, &weights)?;
                synth += e.synthesis_minutes.unwrap_or(0.0);
                eval += e.result.eval_minutes;
            }
            Ok(StrategyStats {
                strategy,
                samples: tests.len(),
                mean_synthesis_minutes: synth / tests.len() as f64,
                mean_eval_minutes: eval / tests.len() as f64,
            })
        })
        .collect()
}

fn opt_f64(v: Option<f64>) -> Json {
    v.map_or(Json::Null, |x| json!(x))
}

fn entry_json(space: &ParameterSpace, h: &HistoryEntry) -> Json {
    json!({
        "iteration": h.iteration,
        "phase": h.phase,
        "config": space.config_to_json(&h.config),
        "valid": h.result.valid(),
        "failure_stage": h.result.failure_stage(),
        "cycles": h.result.cycles,
        "fmax_mhz": h.result.fmax_mhz,
        "luts": h.result.luts,
        "power_w": h.result.power_w,
        "eval_minutes": h.result.eval_minutes,
        "eet_ms": opt_f64(estimated_execution_time_ms(&h.result).ok()),
        "alpha": opt_f64(h.alpha),
        "cost_estimate": opt_f64(h.cost_estimate),
        "cache_hit": h.cache_hit,
        "tdt_minutes": h.tdt_minutes,
        "best_eet_ms": opt_f64(h.best_eet_ms),
    })
}

pub fn summary_json(space: &ParameterSpace, report: &RunReport) -> Json {
    json!({
        "method": report.method,
        "benchmark": report.benchmark,
        "seed": report.seed,
        "strategy": report.strategy,
        "evaluations": report.history.len(),
        "invalid": report.invalid_count(),
        "idr": opt_f64(report.idr()),
        "tdt_minutes": report.tdt_minutes,
        "time_compression": report.time_compression,
        "best_eet_ms": opt_f64(report.best_eet_ms),
        "best_config": report.best_config.as_ref().map(|c| space.config_to_json(c)),
        "termination": report.termination,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Jsonl,
    Csv,
}

fn csv_f64(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Writes `report.jsonl` or `report.csv` under `dir` and returns its path.
pub fn emit_report(
    space: &ParameterSpace,
    report: &RunReport,
    format: ReportFormat,
    dir: &Path,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    match format {
        ReportFormat::Jsonl => {
            let path = dir.join("report.jsonl");
            let mut out = std::io::BufWriter::new(fs::File::create(&path)?);
            for h in &report.history {
                serde_json::to_writer(&mut out, &entry_json(space, h))?;
                out.write_all(b"\n")?;
            }
            serde_json::to_writer(&mut out, &json!({ "summary": summary_json(space, report) }))?;
            out.write_all(b"\n")?;
            out.flush()?;
            Ok(path)
        }
        ReportFormat::Csv => {
            let path = dir.join("report.csv");
            let mut w = csv::Writer::from_path(&path)?;
            let mut header: Vec<String> = vec!["iteration".into(), "phase".into()];
            header.extend(space.params().iter().map(|p| p.name().to_owned()));
            header.extend(
                [
                    "valid",
                    "failure_stage",
                    "cycles",
                    "fmax_mhz",
                    "luts",
                    "power_w",
                    "eval_minutes",
                    "eet_ms",
                    "alpha",
                    "cost_estimate",
                    "cache_hit",
                    "tdt_minutes",
                    "best_eet_ms",
                    "idr",
                ]
                .map(String::from),
            );
            w.write_record(&header)?;
            for h in &report.history {
                let mut row = vec![
                    h.iteration.to_string(),
                    match h.phase {
                        Phase::Initial => "initial".into(),
                        Phase::Search => "search".into(),
                    },
                ];
                row.extend(
                    space
                        .assignments(&h.config)
                        .into_iter()
                        .map(|(_, v)| v.to_string()),
                );
                row.extend([
                    h.result.valid().to_string(),
                    h.result
                        .failure_stage()
                        .map_or(String::new(), |s| s.to_string()),
                    h.result.cycles.to_string(),
                    h.result.fmax_mhz.to_string(),
                    h.result.luts.to_string(),
                    h.result.power_w.to_string(),
                    h.result.eval_minutes.to_string(),
                    csv_f64(estimated_execution_time_ms(&h.result).ok()),
                    csv_f64(h.alpha),
                    csv_f64(h.cost_estimate),
                    h.cache_hit.to_string(),
                    h.tdt_minutes.to_string(),
                    csv_f64(h.best_eet_ms),
                    String::new(),
                ]);
                w.write_record(&row)?;
            }
            let mut summary = vec!["summary".to_owned(), termination_label(&report.termination)];
            match &report.best_config {
                Some(c) => {
                    summary.extend(space.assignments(c).into_iter().map(|(_, v)| v.to_string()))
                }
                None => summary.extend(std::iter::repeat_n(String::new(), space.len())),
            }
            let mut tail = vec![String::new(); 14];
            tail[7] = csv_f64(report.best_eet_ms);
            tail[11] = report.tdt_minutes.to_string();
            tail[12] = csv_f64(report.best_eet_ms);
            tail[13] = report.idr().map_or("null".into(), |v| v.to_string());
            summary.extend(tail);
            w.write_record(&summary)?;
            w.flush()?;
            Ok(path)
        }
    }
}

pub fn termination_label(t: &Termination) -> String {
    match t {
        Termination::Budget => "budget".into(),
        Termination::TdtLimit => "tdt-limit".into(),
        Termination::Stagnation => "stagnation".into(),
        Termination::Converged => "converged".into(),
        Termination::Exhausted => "exhausted".into(),
        Termination::NumericalFailure(_) => "numerical-failure".into(),
    }
}
