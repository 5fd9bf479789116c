//! Configuration evaluation: the synthetic processor model, the external
//! evaluator protocol, resource checking and synthesis-time accounting for
//! the three evaluation strategies.
//!
//! All minute quantities leaving the harness are multiplied by the
//! time-compression factor; the synthetic model itself works in real minutes.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use sha2::{Digest, Sha256};

use crate::checkpoint::{weighted_distance, CheckpointStore, DistanceWeights, SynthesisTimeModel};
use crate::constraints::ConstraintTree;
use crate::error::{Error, Result};
use crate::space::{Configuration, Domain, ParameterSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureStage {
    Constraint,
    Resource,
    Synthesis,
    Simulation,
}

impl fmt::Display for FailureStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureStage::Constraint => "constraint",
            FailureStage::Resource => "resource",
            FailureStage::Synthesis => "synthesis",
            FailureStage::Simulation => "simulation",
        })
    }
}

#[derive(Serialize, Deserialize)]
struct RawResult {
    cycles: u64,
    fmax_mhz: f64,
    luts: u64,
    power_w: f64,
    eval_minutes: f64,
    valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    failure_stage: Option<FailureStage>,
}

/// Outcome of one evaluation. `valid` holds exactly when `failure_stage` is
/// absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawResult", into = "RawResult")]
pub struct EvaluationResult {
    pub cycles: u64,
    pub fmax_mhz: f64,
    pub luts: u64,
    pub power_w: f64,
    pub eval_minutes: f64,
    failure_stage: Option<FailureStage>,
}

impl EvaluationResult {
    pub fn ok(cycles: u64, fmax_mhz: f64, luts: u64, power_w: f64, eval_minutes: f64) -> Self {
        Self {
            cycles,
            fmax_mhz,
            luts,
            power_w,
            eval_minutes,
            failure_stage: None,
        }
    }

    /// A failed evaluation; metrics are zero unless filled in afterwards.
    pub fn failed(stage: FailureStage, eval_minutes: f64) -> Self {
        Self {
            cycles: 0,
            fmax_mhz: 0.0,
            luts: 0,
            power_w: 0.0,
            eval_minutes,
            failure_stage: Some(stage),
        }
    }

    pub fn valid(&self) -> bool {
        self.failure_stage.is_none()
    }

    pub fn failure_stage(&self) -> Option<FailureStage> {
        self.failure_stage
    }
}

impl TryFrom<RawResult> for EvaluationResult {
    type Error = Error;

    fn try_from(r: RawResult) -> Result<Self> {
        if r.valid != r.failure_stage.is_none() {
            return Err(Error::InvalidArgument(
                "evaluation result: `valid` must hold exactly when `failure_stage` is absent"
                    .into(),
            ));
        }
        if !(r.eval_minutes > 0.0) {
            return Err(Error::InvalidArgument(
                "evaluation result: eval_minutes must be positive".into(),
            ));
        }
        Ok(Self {
            cycles: r.cycles,
            fmax_mhz: r.fmax_mhz,
            luts: r.luts,
            power_w: r.power_w,
            eval_minutes: r.eval_minutes,
            failure_stage: r.failure_stage,
        })
    }
}

impl From<EvaluationResult> for RawResult {
    fn from(r: EvaluationResult) -> Self {
        RawResult {
            cycles: r.cycles,
            fmax_mhz: r.fmax_mhz,
            luts: r.luts,
            power_w: r.power_w,
            eval_minutes: r.eval_minutes,
            valid: r.failure_stage.is_none(),
            failure_stage: r.failure_stage,
        }
    }
}

/// Execution time in milliseconds: `cycles / (fmax_mhz * 1e6)` seconds.
pub fn estimated_execution_time_ms(r: &EvaluationResult) -> Result<f64> {
    if !r.valid() {
        return Err(Error::UndefinedMetric);
    }
    Ok(r.cycles as f64 / (r.fmax_mhz * 1e6) * 1e3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceBudget {
    pub max_luts: u64,
}

impl ResourceBudget {
    pub fn new(max_luts: u64) -> Result<Self> {
        if max_luts == 0 {
            return Err(Error::InvalidArgument("LUT budget must be positive".into()));
        }
        Ok(Self { max_luts })
    }

    pub fn admits(&self, luts: u64) -> bool {
        luts <= self.max_luts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalStrategy {
    Direct,
    #[serde(alias = "fixed")]
    FixedCheckpoint,
    Retrieval,
}

impl EvalStrategy {
    pub const ALL: [EvalStrategy; 3] = [
        EvalStrategy::Direct,
        EvalStrategy::FixedCheckpoint,
        EvalStrategy::Retrieval,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EvalStrategy::Direct => "direct",
            EvalStrategy::FixedCheckpoint => "fixed-checkpoint",
            EvalStrategy::Retrieval => "retrieval",
        }
    }
}

fn default_failure_minutes() -> f64 {
    1.0
}

fn default_lookup_minutes() -> f64 {
    0.1
}

fn default_time_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingModel {
    pub t_full_minutes: f64,
    pub t_base_minutes: f64,
    /// Fraction of `t_full` charged per unit of normalized reference distance.
    pub rho: f64,
    pub sim_base_minutes: f64,
    pub sim_minutes_per_mcycle: f64,
    #[serde(default = "default_failure_minutes")]
    pub failure_minutes: f64,
    #[serde(default = "default_lookup_minutes")]
    pub lookup_minutes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmaxModel {
    pub base_mhz: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    pub static_w: f64,
    pub watts_per_klut: f64,
}

/// Per-parameter coefficients. Ordinal parameters use the `*_per_rank`
/// fields and `beta`; categorical parameters use the per-value tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamModel {
    #[serde(default)]
    pub beta: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub benchmark_beta: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub cycle_factors: BTreeMap<String, f64>,
    #[serde(default)]
    pub complexity_per_rank: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub complexity: BTreeMap<String, f64>,
    #[serde(default)]
    pub luts_per_rank: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub luts: BTreeMap<String, f64>,
    #[serde(default = "default_time_weight")]
    pub time_weight: f64,
}

/// Closed-form synthetic processor model loaded from a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticModel {
    pub processor: String,
    pub version: u32,
    pub space: String,
    pub max_luts: u64,
    pub timing: TimingModel,
    pub fmax: FmaxModel,
    pub base_luts: f64,
    pub power: PowerModel,
    /// Relative amplitude of the seeded cycle perturbation.
    pub cycle_jitter: f64,
    pub benchmarks: BTreeMap<String, u64>,
    pub parameters: BTreeMap<String, ParamModel>,
}

/// Model with its parameters resolved against a space.
#[derive(Debug, Clone)]
pub struct BoundModel {
    model: SyntheticModel,
    space: std::sync::Arc<ParameterSpace>,
    params: Vec<ParamModel>,
    time_weights: DistanceWeights,
}

impl SyntheticModel {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let m: SyntheticModel = serde_json::from_str(text)?;
        m.check()?;
        Ok(m)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    fn check(&self) -> Result<()> {
        let t = &self.timing;
        let positive = [
            ("t_full_minutes", t.t_full_minutes),
            ("t_base_minutes", t.t_base_minutes),
            ("failure_minutes", t.failure_minutes),
            ("lookup_minutes", t.lookup_minutes),
            ("base_mhz", self.fmax.base_mhz),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "model field `{name}` must be positive"
                )));
            }
        }
        if t.t_base_minutes > t.t_full_minutes {
            return Err(Error::InvalidArgument(
                "model: t_base_minutes exceeds t_full_minutes".into(),
            ));
        }
        if !(t.rho > 0.0) || !(t.sim_base_minutes >= 0.0) || !(t.sim_minutes_per_mcycle >= 0.0) {
            return Err(Error::InvalidArgument(
                "model: timing coefficients out of range".into(),
            ));
        }
        if self.max_luts == 0 {
            return Err(Error::InvalidArgument(
                "model: max_luts must be positive".into(),
            ));
        }
        if self.benchmarks.is_empty() {
            return Err(Error::InvalidArgument("model: no benchmarks".into()));
        }
        Ok(())
    }

    pub fn resource_budget(&self) -> ResourceBudget {
        ResourceBudget {
            max_luts: self.max_luts,
        }
    }

    /// Resolves parameter entries against `space`; every space parameter must
    /// have an entry and every categorical value a table entry where tables
    /// are given.
    pub fn bind(&self, space: std::sync::Arc<ParameterSpace>) -> Result<BoundModel> {
        if self.space != space.name() {
            return Err(Error::SpaceMismatch(format!(
                "model `{}` targets space `{}`, got `{}`",
                self.processor,
                self.space,
                space.name()
            )));
        }
        for name in self.parameters.keys() {
            if space.index_of(name).is_none() {
                return Err(Error::UnknownParameter(name.clone()));
            }
        }
        let mut params = Vec::with_capacity(space.len());
        for p in space.params() {
            let pm = self.parameters.get(p.name()).cloned().ok_or_else(|| {
                Error::InvalidArgument(format!("model has no entry for parameter `{}`", p.name()))
            })?;
            if let Domain::Categorical(values) = p.domain() {
                for table in [&pm.cycle_factors, &pm.complexity, &pm.luts] {
                    if table.is_empty() {
                        continue;
                    }
                    if let Some(v) = values.iter().find(|v| !table.contains_key(*v)) {
                        return Err(Error::InvalidArgument(format!(
                            "model table for `{}` lacks value `{v}`",
                            p.name()
                        )));
                    }
                }
            }
            if !(pm.time_weight >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "time weight of `{}` must be non-negative",
                    p.name()
                )));
            }
            params.push(pm);
        }
        let time_weights = DistanceWeights::new(params.iter().map(|p| p.time_weight).collect())?;
        Ok(BoundModel {
            model: self.clone(),
            space,
            params,
            time_weights,
        })
    }
}

/// Raw synthetic metrics before any time accounting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticMetrics {
    pub cycles: u64,
    pub fmax_mhz: f64,
    pub luts: u64,
    pub power_w: f64,
}

impl BoundModel {
    pub fn model(&self) -> &SyntheticModel {
        &self.model
    }

    pub fn space(&self) -> &std::sync::Arc<ParameterSpace> {
        &self.space
    }

    pub fn time_weights(&self) -> &DistanceWeights {
        &self.time_weights
    }

    /// Estimated LUT count (deterministic, seed-free).
    pub fn luts(&self, cfg: &Configuration) -> u64 {
        let mut total = self.model.base_luts;
        for (i, p) in self.space.params().iter().enumerate() {
            let pm = &self.params[i];
            let l = cfg.level(i);
            total += match p.domain() {
                Domain::Ordinal(_) => pm.luts_per_rank * p.scaled_rank(l),
                Domain::Categorical(vs) => pm.luts.get(&vs[l]).copied().unwrap_or(0.0),
            };
        }
        total.max(0.0).round() as u64
    }

    fn complexity(&self, cfg: &Configuration) -> f64 {
        let mut total = 0.0;
        for (i, p) in self.space.params().iter().enumerate() {
            let pm = &self.params[i];
            let l = cfg.level(i);
            total += match p.domain() {
                Domain::Ordinal(_) => pm.complexity_per_rank * p.scaled_rank(l),
                Domain::Categorical(vs) => pm.complexity.get(&vs[l]).copied().unwrap_or(0.0),
            };
        }
        total
    }

    fn cycle_penalty(&self, cfg: &Configuration, benchmark: &str) -> f64 {
        let mut total = 0.0;
        for (i, p) in self.space.params().iter().enumerate() {
            let pm = &self.params[i];
            let l = cfg.level(i);
            total += match p.domain() {
                Domain::Ordinal(_) => {
                    let beta = pm.benchmark_beta.get(benchmark).copied().unwrap_or(pm.beta);
                    let gap = 1.0 - p.scaled_rank(l);
                    beta * gap * gap
                }
                Domain::Categorical(vs) => pm.cycle_factors.get(&vs[l]).copied().unwrap_or(0.0),
            };
        }
        total
    }

    /// Deterministic perturbation in [-1, 1] derived from (seed, cfg, benchmark).
    fn jitter(&self, cfg: &Configuration, benchmark: &str, seed: u64) -> f64 {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(benchmark.as_bytes());
        for &l in cfg.levels() {
            h.update((l as u64).to_le_bytes());
        }
        let digest = h.finalize();
        let mut bytes = [0u8; 32];
        bytes.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(bytes).gen_range(-1.0..=1.0)
    }

    /// Closed-form metrics for `cfg` running `benchmark`.
    pub fn metrics(
        &self,
        cfg: &Configuration,
        benchmark: &str,
        seed: u64,
    ) -> Result<SyntheticMetrics> {
        self.space.validate(cfg)?;
        let base = *self
            .model
            .benchmarks
            .get(benchmark)
            .ok_or_else(|| Error::UnknownBenchmark(benchmark.to_owned()))?;
        let noise = 1.0 + self.model.cycle_jitter * self.jitter(cfg, benchmark, seed);
        let cycles = (base as f64 * (1.0 + self.cycle_penalty(cfg, benchmark)) * noise).round();
        let fmax = self.model.fmax.base_mhz * (1.0 - self.model.fmax.gamma * self.complexity(cfg));
        if !(fmax > 0.0) {
            return Err(Error::Numerical(format!(
                "synthetic fmax non-positive ({fmax})"
            )));
        }
        let luts = self.luts(cfg);
        let power = self.model.power.static_w + self.model.power.watts_per_klut * luts as f64 / 1e3;
        Ok(SyntheticMetrics {
            cycles: cycles.max(0.0) as u64,
            fmax_mhz: fmax,
            luts,
            power_w: power,
        })
    }

    pub fn simulation_minutes(&self, cycles: u64) -> f64 {
        let t = &self.model.timing;
        t.sim_base_minutes + t.sim_minutes_per_mcycle * cycles as f64 / 1e6
    }
}

impl SynthesisTimeModel for BoundModel {
    /// `t_full` without a reference; otherwise
    /// `t_base + t_full * rho * d / d_max` clamped to `[t_base, t_full]`.
    fn synthesis_minutes(&self, x: &Configuration, reference: Option<&Configuration>) -> f64 {
        let t = &self.model.timing;
        let Some(r) = reference else {
            return t.t_full_minutes;
        };
        let d = weighted_distance(&self.space, x, r, &self.time_weights).unwrap_or(f64::INFINITY);
        let d_max = self.time_weights.sum();
        (t.t_base_minutes + t.t_full_minutes * t.rho * d / d_max)
            .clamp(t.t_base_minutes, t.t_full_minutes)
    }
}

/// What a backend receives for one evaluation.
pub struct BackendRequest<'a> {
    pub config: &'a Configuration,
    pub reference: Option<&'a Configuration>,
    pub checkpoint_hint: Option<&'a str>,
}

/// Raw backend output in uncompressed minutes.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendResult {
    pub result: EvaluationResult,
    pub synthesis_minutes: f64,
}

/// Produces metrics and synthesis/simulation time for a configuration.
pub trait Backend: Send + Sync {
    /// LUT estimate available before synthesis, if the backend has one.
    fn estimate_luts(&self, _cfg: &Configuration) -> Option<u64> {
        None
    }

    fn run(&self, req: &BackendRequest<'_>) -> Result<BackendResult>;

    /// Synthesis-time model used for weight learning, if the backend has one.
    fn time_model(&self) -> Option<&dyn SynthesisTimeModel> {
        None
    }
}

/// Synthetic backend: a bound model plus the benchmark and seed it runs.
pub struct SyntheticBackend {
    pub model: BoundModel,
    pub benchmark: String,
    pub seed: u64,
}

impl SyntheticBackend {
    pub fn new(model: BoundModel, benchmark: &str, seed: u64) -> Result<Self> {
        if !model.model().benchmarks.contains_key(benchmark) {
            return Err(Error::UnknownBenchmark(benchmark.to_owned()));
        }
        Ok(Self {
            model,
            benchmark: benchmark.to_owned(),
            seed,
        })
    }
}

impl Backend for SyntheticBackend {
    fn estimate_luts(&self, cfg: &Configuration) -> Option<u64> {
        Some(self.model.luts(cfg))
    }

    fn run(&self, req: &BackendRequest<'_>) -> Result<BackendResult> {
        let m = self.model.metrics(req.config, &self.benchmark, self.seed)?;
        let synth = self.model.synthesis_minutes(req.config, req.reference);
        let minutes = synth + self.model.simulation_minutes(m.cycles);
        Ok(BackendResult {
            result: EvaluationResult::ok(m.cycles, m.fmax_mhz, m.luts, m.power_w, minutes),
            synthesis_minutes: synth,
        })
    }

    fn time_model(&self) -> Option<&dyn SynthesisTimeModel> {
        Some(&self.model)
    }
}

/// Runs an external evaluator command once per configuration, exchanging one
/// JSON line each way.
pub struct ExternalBackend {
    space: std::sync::Arc<ParameterSpace>,
    command: Vec<String>,
    benchmark: String,
    timeout: Duration,
    failure_minutes: f64,
    next_id: AtomicU64,
}

impl ExternalBackend {
    pub fn new(
        space: std::sync::Arc<ParameterSpace>,
        command: Vec<String>,
        benchmark: &str,
        timeout: Duration,
    ) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::InvalidArgument(
                "external evaluator command is empty".into(),
            ));
        }
        Ok(Self {
            space,
            command,
            benchmark: benchmark.to_owned(),
            timeout,
            failure_minutes: default_failure_minutes(),
            next_id: AtomicU64::new(1),
        })
    }

    fn request_line(&self, id: &str, req: &BackendRequest<'_>) -> String {
        json!({
            "id": id,
            "config": self.space.config_to_json(req.config),
            "checkpoint_hint": req.checkpoint_hint,
            "benchmark": self.benchmark,
        })
        .to_string()
    }
}

fn required<'a>(obj: &'a serde_json::Map<String, Json>, key: &str) -> Result<&'a Json> {
    obj.get(key)
        .ok_or_else(|| Error::Protocol(format!("response missing \"{key}\"")))
}

fn required_f64(obj: &serde_json::Map<String, Json>, key: &str) -> Result<f64> {
    required(obj, key)?
        .as_f64()
        .ok_or_else(|| Error::Protocol(format!("\"{key}\" is not a number")))
}

fn required_u64(obj: &serde_json::Map<String, Json>, key: &str) -> Result<u64> {
    required(obj, key)?
        .as_u64()
        .ok_or_else(|| Error::Protocol(format!("\"{key}\" is not a non-negative integer")))
}

/// Maps one response line to a result. `elapsed_minutes` stands in for a
/// missing `synthesis_minutes`.
pub fn parse_response(
    line: &str,
    expected_id: &str,
    elapsed_minutes: f64,
    failure_minutes: f64,
) -> Result<BackendResult> {
    let v: Json = serde_json::from_str(line.trim())
        .map_err(|e| Error::Protocol(format!("malformed response: {e}")))?;
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Protocol("response is not a JSON object".into()))?;
    let id = required(obj, "id")?
        .as_str()
        .ok_or_else(|| Error::Protocol("\"id\" is not a string".into()))?;
    if id != expected_id {
        return Err(Error::Protocol(format!(
            "response id `{id}` does not match `{expected_id}`"
        )));
    }
    let synth = match obj.get("synthesis_minutes") {
        Some(s) => s.as_f64().filter(|m| *m > 0.0).ok_or_else(|| {
            Error::Protocol("\"synthesis_minutes\" must be a positive number".into())
        })?,
        None => elapsed_minutes.max(1e-6),
    };
    match required(obj, "status")?.as_str() {
        Some("ok") => {
            let fmax = required_f64(obj, "fmax_mhz")?;
            if !(fmax > 0.0) {
                return Err(Error::Protocol("\"fmax_mhz\" must be positive".into()));
            }
            let power = match obj.get("power_w") {
                Some(p) => p
                    .as_f64()
                    .ok_or_else(|| Error::Protocol("\"power_w\" is not a number".into()))?,
                None => 0.0,
            };
            Ok(BackendResult {
                result: EvaluationResult::ok(
                    required_u64(obj, "cycles")?,
                    fmax,
                    required_u64(obj, "luts")?,
                    power,
                    synth,
                ),
                synthesis_minutes: synth,
            })
        }
        Some("invalid") => {
            let stage: FailureStage = serde_json::from_value(required(obj, "stage")?.clone())
                .map_err(|e| Error::Protocol(format!("bad \"stage\": {e}")))?;
            let minutes = obj
                .get("synthesis_minutes")
                .and_then(Json::as_f64)
                .filter(|m| *m > 0.0)
                .unwrap_or(failure_minutes);
            Ok(BackendResult {
                result: EvaluationResult::failed(stage, minutes),
                synthesis_minutes: minutes,
            })
        }
        _ => Err(Error::Protocol(
            "\"status\" must be \"ok\" or \"invalid\"".into(),
        )),
    }
}

impl Backend for ExternalBackend {
    fn run(&self, req: &BackendRequest<'_>) -> Result<BackendResult> {
        let id = format!("r{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let started = Instant::now();
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Tool(format!("cannot spawn `{}`: {e}", self.command[0])))?;
        {
            let mut stdin = child.stdin.take().expect("stdin is piped");
            let line = self.request_line(&id, req);
            // A tool that exits without reading its input surfaces below.
            let _ = stdin
                .write_all(line.as_bytes())
                .and_then(|_| stdin.write_all(b"\n"));
        }
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut line = String::new();
            let res = BufReader::new(stdout).read_line(&mut line).map(|_| line);
            let _ = tx.send(res);
        });
        let line = match rx.recv_timeout(self.timeout) {
            Ok(res) => res?,
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                let minutes = self.timeout.as_secs_f64() / 60.0;
                log::warn!("external evaluator timed out after {:?}", self.timeout);
                return Ok(BackendResult {
                    result: EvaluationResult::failed(FailureStage::Synthesis, minutes.max(1e-6)),
                    synthesis_minutes: minutes.max(1e-6),
                });
            }
        };
        let status = child.wait()?;
        if !status.success() {
            return Err(Error::Tool(format!(
                "`{}` exited with {status}",
                self.command[0]
            )));
        }
        if line.trim().is_empty() {
            return Err(Error::Protocol(
                "evaluator produced no response line".into(),
            ));
        }
        let elapsed = started.elapsed().as_secs_f64() / 60.0;
        parse_response(&line, &id, elapsed, self.failure_minutes)
    }
}

/// Constant charges applied by the harness, in uncompressed minutes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarnessCosts {
    pub failure_minutes: f64,
    pub lookup_minutes: f64,
}

impl Default for HarnessCosts {
    fn default() -> Self {
        Self {
            failure_minutes: default_failure_minutes(),
            lookup_minutes: default_lookup_minutes(),
        }
    }
}

/// Full evaluation outcome with accounting details.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub result: EvaluationResult,
    /// Compressed synthesis minutes, `None` when synthesis never ran.
    pub synthesis_minutes: Option<f64>,
    pub cache_hit: bool,
    /// Index of the checkpoint record used as synthesis reference.
    pub reference: Option<usize>,
}

/// Evaluation pipeline: constraint check, cache lookup, resource check,
/// strategy-specific reference selection, backend run.
pub struct Harness {
    pub space: std::sync::Arc<ParameterSpace>,
    pub tree: std::sync::Arc<ConstraintTree>,
    pub backend: Box<dyn Backend>,
    pub budget: ResourceBudget,
    pub costs: HarnessCosts,
    pub time_compression: f64,
}

impl Harness {
    fn scaled(&self, minutes: f64) -> f64 {
        minutes * self.time_compression
    }

    pub fn evaluate(
        &self,
        cfg: &Configuration,
        strategy: EvalStrategy,
        db: &CheckpointStore,
        weights: &DistanceWeights,
    ) -> Result<Evaluation> {
        self.space.validate(cfg)?;
        let failed = |stage| Evaluation {
            result: EvaluationResult::failed(stage, self.scaled(self.costs.failure_minutes)),
            synthesis_minutes: None,
            cache_hit: false,
            reference: None,
        };
        if !self.tree.exact(&self.space, cfg) {
            return Ok(failed(FailureStage::Constraint));
        }
        if strategy == EvalStrategy::Retrieval {
            if let Some(rec) = db.lookup(cfg) {
                let mut result = rec.metrics.clone();
                result.eval_minutes = self.scaled(self.costs.lookup_minutes);
                return Ok(Evaluation {
                    result,
                    synthesis_minutes: None,
                    cache_hit: true,
                    reference: None,
                });
            }
        }
        if let Some(luts) = self.backend.estimate_luts(cfg) {
            if !self.budget.admits(luts) {
                let mut e = failed(FailureStage::Resource);
                e.result.luts = luts;
                return Ok(e);
            }
        }
        let default = self.space.default_configuration();
        let (reference, ref_cfg, hint) = match strategy {
            EvalStrategy::Direct => (None, None, None),
            EvalStrategy::FixedCheckpoint => {
                let idx = db.records().iter().position(|r| r.config == default);
                (
                    idx,
                    Some(&default),
                    idx.map(|i| db.records()[i].artifact.as_str()),
                )
            }
            EvalStrategy::Retrieval => match db.match_config(cfg, weights) {
                Ok((i, _)) => {
                    let r = &db.records()[i];
                    (Some(i), Some(&r.config), Some(r.artifact.as_str()))
                }
                Err(Error::EmptyDatabase) => (None, None, None),
                Err(e) => return Err(e),
            },
        };
        let out = self.backend.run(&BackendRequest {
            config: cfg,
            reference: ref_cfg,
            checkpoint_hint: hint,
        })?;
        let mut result = out.result;
        result.eval_minutes = self.scaled(result.eval_minutes);
        let synthesis_minutes = Some(self.scaled(out.synthesis_minutes));
        if result.valid() && !self.budget.admits(result.luts) {
            result.failure_stage = Some(FailureStage::Resource);
        }
        Ok(Evaluation {
            result,
            synthesis_minutes,
            cache_hit: false,
            reference,
        })
    }
}
