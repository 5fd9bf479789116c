//! Expected improvement, the cost-cooled acquisition and its constrained
//! maximization over the encoded space.
//!
//! Minimization convention: improvement means a target below `best`.
//!
//! The maximizer runs a projected SQP-style ascent from every start on the
//! relaxed (un-snapped) point, with one linearized constraint row
//! `g + grad(g) . d >= 0` and the unit box. Local optima are snapped, checked
//! with the exact constraint semantics and refined by single-parameter moves
//! on the lattice.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{CheckpointStore, DistanceWeights};
use crate::constraints::ConstraintTree;
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::par::{self, Execution};
use crate::space::{Configuration, ParameterSpace};

/// Lower bound applied to the cost estimate before division.
pub const COST_FLOOR: f64 = 1e-6;

/// Two `(alpha, cost)` candidates whose exponent-mode ranking flips between
/// `lambda = 1` and `lambda -> 0`.
pub const EXPONENT_WITNESS: [(f64, f64); 2] = [(1.0, 1.0), (2.0, 4.0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoolingMode {
    /// `alpha / (lambda * c)`.
    PaperRatio,
    /// `alpha / c^lambda`.
    Exponent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoolingSchedule {
    pub lambda0: f64,
    pub k: f64,
    pub mode: CoolingMode,
}

impl Default for CoolingSchedule {
    fn default() -> Self {
        Self {
            lambda0: 1.0,
            k: 0.1,
            mode: CoolingMode::PaperRatio,
        }
    }
}

impl CoolingSchedule {
    pub fn new(lambda0: f64, k: f64, mode: CoolingMode) -> Result<Self> {
        if !(lambda0 > 0.0) || !lambda0.is_finite() || !(k >= 0.0) || !k.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "cooling schedule needs lambda0 > 0 and k >= 0, got ({lambda0}, {k})"
            )));
        }
        Ok(Self { lambda0, k, mode })
    }

    /// `lambda0 * exp(-k t)`.
    pub fn factor(&self, t: f64) -> f64 {
        self.lambda0 * (-self.k * t).exp()
    }
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Closed-form EI for a Gaussian posterior; `max(best - mean, 0)` at zero
/// variance. Never negative.
pub fn expected_improvement(mean: f64, variance: f64, best: f64) -> f64 {
    let sigma = variance.max(0.0).sqrt();
    let gain = best - mean;
    if sigma == 0.0 {
        return gain.max(0.0);
    }
    let z = gain / sigma;
    (sigma * (normal_pdf(z) + z * normal_cdf(z))).max(0.0)
}

/// EI with its partial derivatives with respect to mean and variance.
pub fn expected_improvement_partials(mean: f64, variance: f64, best: f64) -> (f64, f64, f64) {
    let sigma = variance.max(0.0).sqrt();
    let gain = best - mean;
    if sigma < 1e-12 {
        let d_mean = if gain > 0.0 { -1.0 } else { 0.0 };
        return (gain.max(0.0), d_mean, 0.0);
    }
    let z = gain / sigma;
    let ei = (sigma * (normal_pdf(z) + z * normal_cdf(z))).max(0.0);
    (ei, -normal_cdf(z), normal_pdf(z) / (2.0 * sigma))
}

/// Cost-cooled acquisition value for a raw acquisition `alpha` and cost `c`.
pub fn alpha_cool(alpha: f64, cost: f64, schedule: &CoolingSchedule, t: f64) -> f64 {
    let c = cost.max(COST_FLOOR);
    let lambda = schedule.factor(t);
    match schedule.mode {
        CoolingMode::PaperRatio => alpha / (lambda * c),
        CoolingMode::Exponent => alpha / c.powf(lambda),
    }
}

/// The checkpoint-distance cost function `c(x)`.
#[derive(Clone, Copy)]
pub struct CostFn<'a> {
    pub store: &'a CheckpointStore,
    pub weights: &'a DistanceWeights,
}

/// Everything the acquisition needs at one iteration. A missing `tree`
/// disables constraint handling; a missing `cost` disables cost cooling.
pub struct AcquisitionContext<'a> {
    pub model: &'a GpModel,
    pub space: &'a ParameterSpace,
    pub tree: Option<&'a ConstraintTree>,
    pub best_feasible: Option<f64>,
    pub cost: Option<CostFn<'a>>,
    pub schedule: CoolingSchedule,
    pub iteration: usize,
}

/// Acquisition breakdown for one configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub alpha_cool: f64,
    pub ei: f64,
    pub cost: Option<f64>,
}

impl AcquisitionContext<'_> {
    /// Incumbent for EI: the best feasible observation, else the lowest
    /// training target.
    pub fn incumbent(&self) -> f64 {
        self.best_feasible.unwrap_or_else(|| {
            let m = self.model.target_mean();
            let s = self.model.target_std();
            self.model
                .standardized_targets()
                .iter()
                .map(|y| m + s * y)
                .fold(f64::INFINITY, f64::min)
        })
    }

    pub fn expected_improvement(&self, coords: &[f64]) -> Result<f64> {
        let (mean, var) = self.model.predict(coords)?;
        Ok(expected_improvement(mean, var, self.incumbent()))
    }

    pub fn score(&self, cfg: &Configuration) -> Result<Score> {
        let enc = self.space.encode(cfg)?;
        let ei = self.expected_improvement(enc.coords())?;
        Ok(match &self.cost {
            Some(c) => {
                let cost = c.store.cost_estimate(cfg, c.weights);
                Score {
                    alpha_cool: alpha_cool(ei, cost, &self.schedule, self.iteration as f64),
                    ei,
                    cost: Some(cost),
                }
            }
            None => Score {
                alpha_cool: ei,
                ei,
                cost: None,
            },
        })
    }

    pub fn alpha_cool(&self, cfg: &Configuration) -> Result<f64> {
        Ok(self.score(cfg)?.alpha_cool)
    }

    pub fn is_feasible(&self, cfg: &Configuration) -> bool {
        self.tree.is_none_or(|t| t.exact(self.space, cfg))
    }

    /// `ln(alpha_cool)` on the relaxed point with its gradient. Floors keep
    /// the value finite where EI underflows.
    fn relaxed_log_objective(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let pred = self.model.predict_relaxed_with_gradient(x)?;
        let (ei, d_mean, d_var) =
            expected_improvement_partials(pred.mean, pred.variance, self.incumbent());
        let dim = x.len();
        let mut grad = vec![0.0; dim];
        let mut value;
        if ei > 1e-300 {
            value = ei.ln();
            for (k, g) in grad.iter_mut().enumerate() {
                *g = (d_mean * pred.mean_grad[k] + d_var * pred.variance_grad[k]) / ei;
            }
        } else {
            value = (1e-300f64).ln();
        }
        if let Some(c) = &self.cost {
            let (raw, cgrad) = c.store.relaxed_cost(x, c.weights);
            let lambda = self.schedule.factor(self.iteration as f64);
            let floored = raw <= COST_FLOOR;
            let cost = raw.max(COST_FLOOR);
            let power = match self.schedule.mode {
                CoolingMode::PaperRatio => {
                    value -= lambda.ln();
                    1.0
                }
                CoolingMode::Exponent => lambda,
            };
            value -= power * cost.ln();
            if !floored {
                for k in 0..dim {
                    grad[k] -= power * cgrad[k] / cost;
                }
            }
        }
        Ok((value, grad))
    }

    /// Smooth constraint value on the relaxed point, with its gradient in
    /// encoded coordinates. `+inf` when unconstrained.
    fn relaxed_constraint(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; x.len()];
        let Some(tree) = self.tree.filter(|t| !t.is_unconstrained()) else {
            return Ok((f64::INFINITY, grad));
        };
        let (values, slopes) = self.space.relaxed_numeric(x)?;
        let (g, dg) = tree.smooth_gradient(&values)?;
        for i in 0..self.space.len() {
            if slopes[i] != 0.0 && dg[i] != 0.0 {
                grad[self.space.offset(i)] = dg[i] * slopes[i];
            }
        }
        Ok((g, grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaximizeOptions {
    pub random_starts: usize,
    pub max_steps: usize,
    pub initial_step: f64,
    pub seed: u64,
    /// Refine snapped optima by single-parameter moves.
    pub polish: bool,
    /// Skip configurations already present in the cost store.
    pub exclude_evaluated: bool,
    pub rejection_draws: usize,
    pub execution: Execution,
}

impl Default for MaximizeOptions {
    fn default() -> Self {
        Self {
            random_starts: 32,
            max_steps: 60,
            initial_step: 0.1,
            seed: 0,
            polish: true,
            exclude_evaluated: true,
            rejection_draws: 100_000,
            execution: Execution::default(),
        }
    }
}

/// The selected configuration and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub config: Configuration,
    pub score: Score,
    /// Start index that produced it; `None` for the rejection-sampling fallback.
    pub start: Option<usize>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn clip(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

/// One projected step of length `eta` along `d`, bent along `h` just enough
/// to keep the linearized constraint `g + h . step >= 0`. Falls back to a
/// pure restoration step along `h` when no multiplier reaches feasibility.
fn constrained_step(x: &[f64], d: &[f64], g: f64, h: &[f64], eta: f64) -> Vec<f64> {
    let trial = |nu: f64| -> Vec<f64> {
        let moved: Vec<f64> = (0..x.len())
            .map(|k| x[k] + eta * (d[k] + nu * h[k]))
            .collect();
        clip(&moved)
    };
    if !g.is_finite() {
        return trial(0.0);
    }
    let lin = |y: &[f64]| g + (0..x.len()).map(|k| h[k] * (y[k] - x[k])).sum::<f64>();
    let base = trial(0.0);
    if lin(&base) >= 0.0 {
        return base;
    }
    let mut hi = 1.0;
    while lin(&trial(hi)) < 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            let restored: Vec<f64> = (0..x.len()).map(|k| x[k] + eta * h[k]).collect();
            return clip(&restored);
        }
    }
    let mut lo = 0.0;
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if lin(&trial(mid)) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    trial(hi)
}

impl AcquisitionContext<'_> {
    /// Feasibility-first ascent from `x0`: while infeasible, accept steps that
    /// raise the constraint value; once feasible, accept steps that stay
    /// feasible and raise the objective.
    pub fn local_search(&self, x0: &[f64], opts: &MaximizeOptions) -> Result<Vec<f64>> {
        let mut x = clip(x0);
        let (mut f, mut gf) = self.relaxed_log_objective(&x)?;
        let (mut g, mut gg) = self.relaxed_constraint(&x)?;
        let mut eta = opts.initial_step;
        for _ in 0..opts.max_steps {
            let gf_n = inf_norm(&gf);
            let gg_n = inf_norm(&gg);
            let d: Vec<f64> = if gf_n > 0.0 {
                gf.iter().map(|v| v / gf_n).collect()
            } else {
                vec![0.0; x.len()]
            };
            let (gs, h): (f64, Vec<f64>) = if g.is_finite() && gg_n > 0.0 {
                (g / gg_n, gg.iter().map(|v| v / gg_n).collect())
            } else {
                (f64::INFINITY, vec![0.0; x.len()])
            };
            if gf_n == 0.0 && g >= 0.0 {
                break;
            }
            let mut accepted = false;
            for _ in 0..20 {
                let cand = constrained_step(&x, &d, gs, &h, eta);
                if cand.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12) {
                    break;
                }
                let (fc, gfc) = self.relaxed_log_objective(&cand)?;
                let (gc, ggc) = self.relaxed_constraint(&cand)?;
                let better = if g >= 0.0 {
                    gc >= 0.0 && fc > f
                } else {
                    gc > g
                };
                if better {
                    x = cand;
                    (f, gf, g, gg) = (fc, gfc, gc, ggc);
                    accepted = true;
                    eta = (eta * 2.0).min(1.0);
                    break;
                }
                eta *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Ok(x)
    }

    /// Greedy single-parameter ascent on the lattice from a feasible `start`.
    /// Moves only between feasible configurations; an excluded start is left
    /// for its best admissible neighbour unconditionally.
    fn polish<F>(
        &self,
        start: Configuration,
        excluded: &F,
        enabled: bool,
    ) -> Result<Option<(Configuration, f64)>>
    where
        F: Fn(&Configuration) -> bool,
    {
        let admissible = |c: &Configuration| self.is_feasible(c) && !excluded(c);
        let (mut cur, mut cur_val) = if admissible(&start) {
            let v = self.alpha_cool(&start)?;
            (start, v)
        } else {
            if !enabled {
                return Ok(None);
            }
            let mut best: Option<(Configuration, f64)> = None;
            for n in self.space.neighbors(&start) {
                if !admissible(&n) {
                    continue;
                }
                let v = self.alpha_cool(&n)?;
                if best.as_ref().is_none_or(|(_, bv)| v > *bv) {
                    best = Some((n, v));
                }
            }
            match best {
                Some(b) => b,
                None => return Ok(None),
            }
        };
        if !enabled {
            return Ok(Some((cur, cur_val)));
        }
        for _ in 0..200 {
            let mut step: Option<(Configuration, f64)> = None;
            for n in self.space.neighbors(&cur) {
                if !admissible(&n) {
                    continue;
                }
                let v = self.alpha_cool(&n)?;
                if v > step.as_ref().map_or(cur_val, |(_, sv)| *sv) {
                    step = Some((n, v));
                }
            }
            match step {
                Some((n, v)) => {
                    cur = n;
                    cur_val = v;
                }
                None => break,
            }
        }
        Ok(Some((cur, cur_val)))
    }

    /// Multi-start constrained maximization of the cooled acquisition.
    ///
    /// Starts are the encoded `seeds` followed by `random_starts` seeded
    /// uniform points. Returns the exact-feasible candidate with the highest
    /// value, lowest start index on ties; falls back to seeded rejection
    /// sampling when no start yields a feasible candidate.
    pub fn maximize(&self, seeds: &[Configuration], opts: &MaximizeOptions) -> Result<Proposal> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut starts: Vec<Vec<f64>> = seeds
            .iter()
            .map(|c| self.space.encode(c).map(|e| e.into_inner()))
            .collect::<Result<_>>()?;
        for _ in 0..opts.random_starts {
            starts.push(self.space.random_relaxed(&mut rng));
        }
        let excluded = |c: &Configuration| {
            opts.exclude_evaluated && self.cost.as_ref().is_some_and(|cf| cf.store.contains(c))
        };

        let results = par::map_slice(opts.execution, &starts, |_, x0| -> Result<_> {
            let x = self.local_search(x0, opts)?;
            let snapped = self.space.snap_levels(&x)?;
            if !self.is_feasible(&snapped) {
                return Ok(None);
            }
            self.polish(snapped, &excluded, opts.polish)
        });

        let mut best: Option<(usize, Configuration, f64)> = None;
        for (i, r) in results.into_iter().enumerate() {
            if let Some((cfg, v)) = r? {
                if best.as_ref().is_none_or(|(_, _, bv)| v > *bv) {
                    best = Some((i, cfg, v));
                }
            }
        }
        if let Some((i, config, _)) = best {
            let score = self.score(&config)?;
            return Ok(Proposal {
                config,
                score,
                start: Some(i),
            });
        }

        log::debug!("no feasible local optimum; falling back to rejection sampling");
        for _ in 0..opts.rejection_draws {
            let c = self.space.random_configuration(&mut rng);
            if self.is_feasible(&c) && !excluded(&c) {
                let score = self.score(&c)?;
                return Ok(Proposal {
                    config: c,
                    score,
                    start: None,
                });
            }
        }
        Err(Error::NoFeasibleCandidate {
            draws: opts.rejection_draws,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{KernelParams, Snapping};
    use crate::space::ParameterDef;
    use std::sync::Arc;

    #[test]
    fn ei_examples() {
        assert!((expected_improvement(0.0, 1.0, 0.0) - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert_eq!(expected_improvement(1.0, 0.0, 3.0), 2.0);
        assert_eq!(expected_improvement(3.0, 0.0, 1.0), 0.0);
        let far = expected_improvement(8.0, 1.0, 0.0);
        assert!((0.0..1e-14).contains(&far));
    }

    #[test]
    fn ei_partials_match_differences() {
        for &(m, v, b) in &[(0.3, 0.7, 0.5), (-1.0, 2.0, 0.0), (0.0, 0.01, 0.2)] {
            let (_, dm, dv) = expected_improvement_partials(m, v, b);
            let h = 1e-6;
            let fm =
                (expected_improvement(m + h, v, b) - expected_improvement(m - h, v, b)) / (2.0 * h);
            let fv =
                (expected_improvement(m, v + h, b) - expected_improvement(m, v - h, b)) / (2.0 * h);
            assert!((dm - fm).abs() < 1e-6, "{dm} vs {fm}");
            assert!((dv - fv).abs() < 1e-6, "{dv} vs {fv}");
        }
    }

    #[test]
    fn cooling_examples() {
        let s = CoolingSchedule::default();
        assert_eq!(s.factor(0.0), 1.0);
        let flat = CoolingSchedule::new(1.0, 0.0, CoolingMode::PaperRatio).unwrap();
        assert_eq!(flat.factor(37.0), 1.0);
        let two = CoolingSchedule::new(2.0, 0.1, CoolingMode::PaperRatio).unwrap();
        assert!((two.factor(10.0) - 0.735_758_882_342_884_6).abs() < 1e-12);
        assert!(CoolingSchedule::new(0.0, 0.1, CoolingMode::Exponent).is_err());
        assert!(CoolingSchedule::new(1.0, -0.1, CoolingMode::Exponent).is_err());
    }

    #[test]
    fn alpha_cool_examples() {
        for mode in [CoolingMode::PaperRatio, CoolingMode::Exponent] {
            let s = CoolingSchedule {
                mode,
                ..Default::default()
            };
            assert_eq!(alpha_cool(0.7, 1.0, &s, 0.0), 0.7);
            assert!(alpha_cool(0.7, 0.5, &s, 3.0) > alpha_cool(0.7, 2.0, &s, 3.0));
            assert!(alpha_cool(0.7, 0.0, &s, 0.0).is_finite());
        }
    }

    #[test]
    fn exponent_witness_flips() {
        let s = CoolingSchedule {
            mode: CoolingMode::Exponent,
            ..Default::default()
        };
        let [(a1, c1), (a2, c2)] = EXPONENT_WITNESS;
        assert!(alpha_cool(a1, c1, &s, 0.0) > alpha_cool(a2, c2, &s, 0.0));
        assert!(alpha_cool(a1, c1, &s, 1e4) < alpha_cool(a2, c2, &s, 1e4));
    }

    #[test]
    fn categorical_argmax_is_found() {
        let space = Arc::new(
            ParameterSpace::new(
                "c",
                vec![ParameterDef::categorical("kind", vec!["a", "b", "c"], "a").unwrap()],
            )
            .unwrap(),
        );
        let inputs: Vec<_> = (0..3u128)
            .map(|i| space.encode(&space.config_at(i)).unwrap())
            .collect();
        // category 2 ("c") has the lowest target
        let targets = [1.0, 0.8, -1.0];
        let model = GpModel::condition(
            Snapping::On(space.clone()),
            &inputs,
            &targets,
            &KernelParams::new(3),
        )
        .unwrap();
        let ctx = AcquisitionContext {
            model: &model,
            space: &space,
            tree: None,
            best_feasible: Some(-0.5),
            cost: None,
            schedule: CoolingSchedule::default(),
            iteration: 0,
        };
        let p = ctx.maximize(&[], &MaximizeOptions::default()).unwrap();
        assert_eq!(p.config.levels(), &[2]);
    }
}
