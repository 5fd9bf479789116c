//! Gaussian-process regression over encoded points.
//!
//! The covariance is an ARD Matérn-5/2 kernel evaluated on *snapped* inputs,
//! `K'(x, y) = K(snap(x), snap(y))`, so every relaxed point that rounds to the
//! same configuration shares one posterior. A model built without a space
//! (see [`Snapping::Off`]) uses the plain kernel; the vanilla baseline relies on
//! that.
//!
//! Targets are standardized before fitting; hyperparameters are optimized in
//! log space by multi-start projected gradient ascent on the log marginal
//! likelihood.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::space::{EncodedPoint, ParameterSpace};

const SQRT5: f64 = 2.236_067_977_499_79;
const LOG_2PI: f64 = 1.837_877_066_409_345_3;
const MAX_JITTER: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub jitter: f64,
}

impl KernelParams {
    /// Lengthscales 0.5, signal variance 1, noise 1e-6, jitter 1e-8.
    pub fn new(dim: usize) -> Self {
        Self {
            lengthscales: vec![0.5; dim],
            signal_variance: 1.0,
            noise_variance: 1e-6,
            jitter: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lengthscales.iter().all(|&l| l > 0.0 && l.is_finite())
            && self.signal_variance > 0.0
            && self.noise_variance >= 0.0
            && self.jitter > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid kernel parameters {self:?}"
            )))
        }
    }

    /// `[ln l_1 .. ln l_D, ln signal, ln noise]`
    fn to_log(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        v.push(self.signal_variance.ln());
        v.push(self.noise_variance.max(1e-300).ln());
        v
    }

    fn from_log(theta: &[f64], jitter: f64) -> Self {
        let d = theta.len() - 2;
        Self {
            lengthscales: theta[..d].iter().map(|t| t.exp()).collect(),
            signal_variance: theta[d].exp(),
            noise_variance: theta[d + 1].exp(),
            jitter,
        }
    }
}

/// Matérn-5/2 correlation at scaled distance `r`.
pub fn matern52(r: f64) -> f64 {
    (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * (-SQRT5 * r).exp()
}

fn scaled_distance(params: &KernelParams, x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(&params.lengthscales)
        .map(|((a, b), l)| {
            let d = (a - b) / l;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Base (un-snapped) ARD Matérn-5/2 covariance.
pub fn base_kernel(params: &KernelParams, x: &[f64], y: &[f64]) -> f64 {
    params.signal_variance * matern52(scaled_distance(params, x, y))
}

/// Snap-composed covariance `K'(x, y) = K(snap(x), snap(y))`.
pub fn kernel_value(
    space: &ParameterSpace,
    params: &KernelParams,
    x: &EncodedPoint,
    y: &EncodedPoint,
) -> Result<f64> {
    if x.dim() != y.dim() || params.lengthscales.len() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.lengthscales.len(),
            actual: if x.dim() != params.lengthscales.len() {
                x.dim()
            } else {
                y.dim()
            },
        });
    }
    let sx = space.snap_coords(x.coords())?;
    let sy = space.snap_coords(y.coords())?;
    Ok(base_kernel(params, &sx, &sy))
}

/// Whether inputs are snapped before every kernel evaluation.
#[derive(Debug, Clone, Default)]
pub enum Snapping {
    On(Arc<ParameterSpace>),
    #[default]
    Off,
}

impl Snapping {
    fn apply(&self, coords: &[f64]) -> Result<Vec<f64>> {
        match self {
            Snapping::On(space) => space.snap_coords(coords),
            Snapping::Off => Ok(coords.to_vec()),
        }
    }

    pub fn is_on(&self) -> bool {
        matches!(self, Snapping::On(_))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub bounds: (f64, f64),
    /// Keep the noise variance at its initial value.
    pub fix_noise: bool,
    pub execution: Execution,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            seed: 0,
            max_iters: 100,
            bounds: (1e-3, 1e3),
            fix_noise: true,
            execution: Execution::default(),
        }
    }
}

/// Log marginal likelihood of standardized targets and its gradient with
/// respect to `[ln l_1 .. ln l_D, ln signal, ln noise]`.
///
/// `extra_noise` adds a per-point diagonal term on top of the shared noise.
pub fn log_marginal_likelihood(
    inputs: &[Vec<f64>],
    targets: &[f64],
    extra_noise: &[f64],
    params: &KernelParams,
) -> Result<(f64, Vec<f64>)> {
    let n = inputs.len();
    let d = params.lengthscales.len();
    let (chol, _) = factorize(inputs, extra_noise, params)?;
    let y = DVector::from_column_slice(targets);
    let alpha = chol.solve(&y);
    let l = chol.l();
    let log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    let lml = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * LOG_2PI;

    // d lml / d theta = 0.5 tr((alpha alpha^T - K^-1) dK/dtheta)
    let kinv = chol.inverse();
    let mut w = &alpha * alpha.transpose();
    w -= &kinv;

    let mut grad = vec![0.0; d + 2];
    let sv = params.signal_variance;
    for i in 0..n {
        for j in 0..=i {
            let r = scaled_distance(params, &inputs[i], &inputs[j]);
            let e = (-SQRT5 * r).exp();
            let kij = sv * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * e;
            let common = sv * 5.0 / 3.0 * (1.0 + SQRT5 * r) * e;
            let factor = if i == j { 0.5 * w[(i, j)] } else { w[(i, j)] };
            for (k, g) in grad.iter_mut().take(d).enumerate() {
                let dx = (inputs[i][k] - inputs[j][k]) / params.lengthscales[k];
                *g += factor * common * dx * dx;
            }
            grad[d] += factor * kij;
        }
    }
    grad[d + 1] = 0.5 * params.noise_variance * w.diagonal().sum();
    Ok((lml, grad))
}

fn gram(inputs: &[Vec<f64>], params: &KernelParams) -> DMatrix<f64> {
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = base_kernel(params, &inputs[i], &inputs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky of `K + (noise + jitter) I + diag(extra)` with jitter escalation.
/// Returns the factor and the jitter that succeeded.
fn factorize(
    inputs: &[Vec<f64>],
    extra_noise: &[f64],
    params: &KernelParams,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let base = gram(inputs, params);
    let mut jitter = params.jitter;
    loop {
        let mut k = base.clone();
        for i in 0..inputs.len() {
            k[(i, i)] +=
                params.noise_variance + jitter + extra_noise.get(i).copied().unwrap_or(0.0);
        }
        if let Some(c) = Cholesky::new(k) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
        if jitter > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::Numerical(format!(
                "Cholesky factorization failed with jitter up to {MAX_JITTER}"
            )));
        }
    }
}

#[derive(Debug, Clone)]
pub struct GpModel {
    snapping: Snapping,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    extra_noise: Vec<f64>,
    params: KernelParams,
    jitter_used: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    target_mean: f64,
    target_std: f64,
    log_likelihood: f64,
}

/// Serializable snapshot of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpDump {
    pub kernel: KernelParams,
    pub snapped: bool,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub extra_noise: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

struct Prepared {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    extra_noise: Vec<f64>,
    mean: f64,
    std: f64,
}

fn prepare(snapping: &Snapping, inputs: &[EncodedPoint], targets: &[f64]) -> Result<Prepared> {
    if inputs.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("no training data".into()));
    }
    let dim = inputs[0].dim();
    if let Some(p) = inputs.iter().find(|p| p.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: p.dim(),
        });
    }
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };

    // merge duplicate (snapped) inputs: average targets, inflate local noise
    let mut keys: Vec<Vec<u64>> = Vec::new();
    let mut merged: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for (p, &t) in inputs.iter().zip(targets) {
        let x = snapping.apply(p.coords())?;
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        match keys.iter().position(|k| *k == key) {
            Some(i) => merged[i].1.push((t - mean) / std),
            None => {
                keys.push(key);
                merged.push((x, vec![(t - mean) / std]));
            }
        }
    }
    let mut out_inputs = Vec::with_capacity(merged.len());
    let mut out_targets = Vec::with_capacity(merged.len());
    let mut extra = Vec::with_capacity(merged.len());
    for (x, ts) in merged {
        let m = ts.len() as f64;
        let avg = ts.iter().sum::<f64>() / m;
        let spread = ts.iter().map(|t| (t - avg).powi(2)).sum::<f64>() / m;
        out_inputs.push(x);
        out_targets.push(avg);
        extra.push(spread / m);
    }
    Ok(Prepared {
        inputs: out_inputs,
        targets: out_targets,
        extra_noise: extra,
        mean,
        std,
    })
}

impl GpModel {
    /// Conditions a GP on data with fixed hyperparameters.
    pub fn condition(
        snapping: Snapping,
        inputs: &[EncodedPoint],
        targets: &[f64],
        params: &KernelParams,
    ) -> Result<Self> {
        params.validate()?;
        let prep = prepare(&snapping, inputs, targets)?;
        if params.lengthscales.len() != prep.inputs[0].len() {
            return Err(Error::DimensionMismatch {
                expected: params.lengthscales.len(),
                actual: prep.inputs[0].len(),
            });
        }
        Self::build(snapping, prep, params.clone())
    }

    fn build(snapping: Snapping, prep: Prepared, params: KernelParams) -> Result<Self> {
        let (chol, jitter_used) = factorize(&prep.inputs, &prep.extra_noise, &params)?;
        let y = DVector::from_column_slice(&prep.targets);
        let alpha = chol.solve(&y);
        let n = prep.inputs.len();
        let l = chol.l();
        let log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
        let log_likelihood = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * LOG_2PI;
        Ok(Self {
            snapping,
            inputs: prep.inputs,
            targets: prep.targets,
            extra_noise: prep.extra_noise,
            params,
            jitter_used,
            chol,
            alpha,
            target_mean: prep.mean,
            target_std: prep.std,
            log_likelihood,
        })
    }

    /// Fits hyperparameters by maximizing the log marginal likelihood from
    /// `init` plus `restarts - 1` seeded random starts; the best likelihood
    /// wins, lowest restart index on ties.
    pub fn fit(
        snapping: Snapping,
        inputs: &[EncodedPoint],
        targets: &[f64],
        init: &KernelParams,
        opts: &FitOptions,
    ) -> Result<Self> {
        init.validate()?;
        if inputs.len() < 2 {
            return Err(Error::InsufficientRecords {
                required: 2,
                found: inputs.len(),
            });
        }
        let prep = prepare(&snapping, inputs, targets)?;
        let dim = prep.inputs[0].len();
        if init.lengthscales.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: init.lengthscales.len(),
                actual: dim,
            });
        }
        let (lo, hi) = (opts.bounds.0.ln(), opts.bounds.1.ln());
        let mut theta0 = init.to_log();
        for t in theta0.iter_mut().take(dim + 1) {
            *t = t.clamp(lo, hi);
        }
        if !opts.fix_noise {
            theta0[dim + 1] = theta0[dim + 1].clamp(lo, hi);
        }

        let starts: Vec<Vec<f64>> = (0..opts.restarts.max(1))
            .map(|i| {
                if i == 0 {
                    return theta0.clone();
                }
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(i as u64));
                let mut t = theta0.clone();
                for v in t.iter_mut().take(dim) {
                    *v = rng.gen_range(0.05f64.ln()..5.0f64.ln());
                }
                t[dim] = rng.gen_range(0.1f64.ln()..10.0f64.ln());
                t
            })
            .collect();

        let runs = par::map_slice(opts.execution, &starts, |_, start| {
            ascend(&prep, start, init.jitter, (lo, hi), opts)
        });

        let mut best: Option<(f64, Vec<f64>)> = None;
        for (lml, theta) in runs.into_iter().flatten() {
            if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                best = Some((lml, theta));
            }
        }
        let (_, theta) = best.ok_or_else(|| {
            Error::Numerical("log marginal likelihood undefined at every restart".into())
        })?;
        Self::build(snapping, prep, KernelParams::from_log(&theta, init.jitter))
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn training_inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn standardized_targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn target_mean(&self) -> f64 {
        self.target_mean
    }

    pub fn target_std(&self) -> f64 {
        self.target_std
    }

    pub fn snapping(&self) -> &Snapping {
        &self.snapping
    }

    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `K'(X, X) + (noise + jitter) I + diag(extra)`, the matrix that was factored.
    pub fn regularized_gram(&self) -> DMatrix<f64> {
        let mut k = gram(&self.inputs, &self.params);
        for i in 0..self.inputs.len() {
            k[(i, i)] += self.params.noise_variance + self.jitter_used + self.extra_noise[i];
        }
        k
    }

    pub fn dim(&self) -> usize {
        self.params.lengthscales.len()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn cross(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.inputs.len(),
            self.inputs
                .iter()
                .map(|xi| base_kernel(&self.params, x, xi)),
        )
    }

    /// Posterior mean and variance in standardized units.
    pub fn predict_standardized(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check(x)?;
        let x = self.snapping.apply(x)?;
        Ok(self.posterior(&x))
    }

    fn posterior(&self, x: &[f64]) -> (f64, f64) {
        let ks = self.cross(x);
        let mean = ks.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&ks)
            .expect("triangular factor is non-singular");
        let mut var = self.params.signal_variance - v.dot(&v);
        if var < 0.0 {
            if var < -1e-10 {
                log::warn!("posterior variance {var:e} clamped to zero");
            }
            var = 0.0;
        }
        (mean, var)
    }

    /// Posterior mean and variance in target units.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        let (m, v) = self.predict_standardized(x)?;
        Ok((
            self.target_mean + self.target_std * m,
            v * self.target_std * self.target_std,
        ))
    }

    pub fn predict_point(&self, x: &EncodedPoint) -> Result<(f64, f64)> {
        self.predict(x.coords())
    }

    /// Mean, variance and their gradients (target units) at the raw relaxed
    /// point `x`, using the base kernel without snapping.
    pub fn predict_relaxed_with_gradient(&self, x: &[f64]) -> Result<RelaxedPrediction> {
        self.check(x)?;
        let n = self.inputs.len();
        let d = self.dim();
        let ks = self.cross(x);
        let mut dks = DMatrix::zeros(n, d);
        for (i, xi) in self.inputs.iter().enumerate() {
            let r = scaled_distance(&self.params, x, xi);
            let common =
                -self.params.signal_variance * 5.0 / 3.0 * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp();
            for k in 0..d {
                let l = self.params.lengthscales[k];
                dks[(i, k)] = common * (x[k] - xi[k]) / (l * l);
            }
        }
        let mean_s = ks.dot(&self.alpha);
        let kinv_ks = self.chol.solve(&ks);
        let mut var_s = self.params.signal_variance - ks.dot(&kinv_ks);
        let dmean_s = dks.transpose() * &self.alpha;
        let mut dvar_s = -(dks.transpose() * &kinv_ks) * 2.0;
        if var_s < 0.0 {
            var_s = 0.0;
            dvar_s.fill(0.0);
        }
        let s = self.target_std;
        Ok(RelaxedPrediction {
            mean: self.target_mean + s * mean_s,
            variance: var_s * s * s,
            mean_grad: dmean_s.iter().map(|g| g * s).collect(),
            variance_grad: dvar_s.iter().map(|g| g * s * s).collect(),
        })
    }

    pub fn dump(&self) -> GpDump {
        GpDump {
            kernel: self.params.clone(),
            snapped: self.snapping.is_on(),
            inputs: self.inputs.clone(),
            targets: self.targets.clone(),
            extra_noise: self.extra_noise.clone(),
            target_mean: self.target_mean,
            target_std: self.target_std,
        }
    }

    /// Rebuilds a model from a dump. `space` is required when the dump was
    /// snapped.
    pub fn from_dump(dump: &GpDump, space: Option<Arc<ParameterSpace>>) -> Result<Self> {
        let snapping = match (dump.snapped, space) {
            (true, Some(s)) => Snapping::On(s),
            (true, None) => {
                return Err(Error::InvalidArgument(
                    "snapped model dump needs its parameter space".into(),
                ))
            }
            (false, _) => Snapping::Off,
        };
        dump.kernel.validate()?;
        let prep = Prepared {
            inputs: dump.inputs.clone(),
            targets: dump.targets.clone(),
            extra_noise: dump.extra_noise.clone(),
            mean: dump.target_mean,
            std: dump.target_std,
        };
        Self::build(snapping, prep, dump.kernel.clone())
    }
}

#[derive(Debug, Clone)]
pub struct RelaxedPrediction {
    pub mean: f64,
    pub variance: f64,
    pub mean_grad: Vec<f64>,
    pub variance_grad: Vec<f64>,
}

/// Projected gradient ascent with backtracking in log-hyperparameter space.
fn ascend(
    prep: &Prepared,
    start: &[f64],
    jitter: f64,
    (lo, hi): (f64, f64),
    opts: &FitOptions,
) -> Option<(f64, Vec<f64>)> {
    let dim = start.len() - 2;
    let project = |t: &mut Vec<f64>| {
        for (i, v) in t.iter_mut().enumerate() {
            if i <= dim || !opts.fix_noise {
                *v = v.clamp(lo, hi);
            }
        }
        if opts.fix_noise {
            t[dim + 1] = start[dim + 1];
        }
    };
    let eval = |t: &[f64]| -> Option<(f64, Vec<f64>)> {
        let params = KernelParams::from_log(t, jitter);
        let (f, mut g) =
            log_marginal_likelihood(&prep.inputs, &prep.targets, &prep.extra_noise, &params)
                .ok()?;
        if opts.fix_noise {
            g[dim + 1] = 0.0;
        }
        f.is_finite().then_some((f, g))
    };

    let mut theta = start.to_vec();
    project(&mut theta);
    let (mut f, mut g) = eval(&theta)?;
    let mut step = 0.1;
    for _ in 0..opts.max_iters {
        let mut accepted = false;
        for _ in 0..40 {
            let mut cand: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t + step * gi).collect();
            project(&mut cand);
            let decrease: f64 = cand
                .iter()
                .zip(&theta)
                .zip(&g)
                .map(|((c, t), gi)| (c - t) * gi)
                .sum();
            if decrease <= 0.0 {
                break;
            }
            if let Some((fc, gc)) = eval(&cand) {
                if fc >= f + 1e-4 * decrease {
                    let gain = fc - f;
                    theta = cand;
                    f = fc;
                    g = gc;
                    step = (step * 2.0).min(10.0);
                    accepted = true;
                    if gain < 1e-9 * (1.0 + f.abs()) {
                        return Some((f, theta));
                    }
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Some((f, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::ParameterDef;

    fn cat3() -> Arc<ParameterSpace> {
        Arc::new(
            ParameterSpace::new(
                "c",
                vec![ParameterDef::categorical("c", vec!["a", "b", "c"], "a").unwrap()],
            )
            .unwrap(),
        )
    }

    #[test]
    fn matern_closed_form_at_unit_distance() {
        // (1 + sqrt5 + 5/3) e^-sqrt5 evaluated independently
        let expected = (1.0 + 5f64.sqrt() + 5.0 / 3.0) * (-(5f64.sqrt())).exp();
        assert!((matern52(1.0) - expected).abs() < 1e-15);
        assert!((matern52(1.0) - 0.52399).abs() < 1e-5);
    }

    #[test]
    fn kernel_is_signal_variance_on_diagonal_and_snap_invariant() {
        let s = cat3();
        let mut p = KernelParams::new(3);
        p.signal_variance = 2.5;
        let x = EncodedPoint::new(vec![0.2, 0.7, 0.1]).unwrap();
        let y = EncodedPoint::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(kernel_value(&s, &p, &x, &x).unwrap(), 2.5);
        assert_eq!(kernel_value(&s, &p, &x, &y).unwrap(), 2.5);
        let z = EncodedPoint::new(vec![0.0, 0.0]).unwrap();
        assert!(kernel_value(&s, &p, &x, &z).is_err());
    }

    #[test]
    fn constant_targets_give_constant_mean() {
        let s = cat3();
        let xs: Vec<_> = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
            .iter()
            .map(|c| EncodedPoint::new(c.to_vec()).unwrap())
            .collect();
        let m = GpModel::fit(
            Snapping::On(s),
            &xs,
            &[3.5, 3.5],
            &KernelParams::new(3),
            &FitOptions::default(),
        )
        .unwrap();
        for q in [[0.0, 0.0, 1.0], [0.3, 0.3, 0.4]] {
            let (mu, var) = m.predict(&q).unwrap();
            assert!((mu - 3.5).abs() < 1e-9);
            assert!(var <= m.params().signal_variance + 1e-12);
        }
    }

    #[test]
    fn single_point_far_query_recovers_prior() {
        let p = KernelParams {
            lengthscales: vec![1e-3; 2],
            ..KernelParams::new(2)
        };
        let x = EncodedPoint::new(vec![0.0, 0.0]).unwrap();
        let m = GpModel::condition(Snapping::Off, &[x], &[4.0], &p).unwrap();
        let (mu, var) = m.predict_standardized(&[1.0, 1.0]).unwrap();
        assert!(mu.abs() < 1e-9);
        assert!((var - p.signal_variance).abs() <= 0.01 * p.signal_variance);
        assert!((m.predict(&[1.0, 1.0]).unwrap().0 - 4.0).abs() < 1e-9);
    }

    #[test]
    fn fit_requires_two_points() {
        let x = EncodedPoint::new(vec![0.0]).unwrap();
        assert!(matches!(
            GpModel::fit(
                Snapping::Off,
                &[x],
                &[1.0],
                &KernelParams::new(1),
                &FitOptions::default()
            ),
            Err(Error::InsufficientRecords { .. })
        ));
    }

    #[test]
    fn duplicates_are_merged() {
        let s = cat3();
        let xs: Vec<_> = [[1.0, 0.0, 0.0], [0.9, 0.1, 0.0], [0.0, 1.0, 0.0]]
            .iter()
            .map(|c| EncodedPoint::new(c.to_vec()).unwrap())
            .collect();
        let m = GpModel::condition(
            Snapping::On(s),
            &xs,
            &[1.0, 3.0, 2.0],
            &KernelParams::new(3),
        )
        .unwrap();
        assert_eq!(m.training_inputs().len(), 2);
    }

    #[test]
    fn dump_round_trip() {
        let s = cat3();
        let xs: Vec<_> = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
            .iter()
            .map(|c| EncodedPoint::new(c.to_vec()).unwrap())
            .collect();
        let m = GpModel::condition(
            Snapping::On(s.clone()),
            &xs,
            &[1.0, 2.0],
            &KernelParams::new(3),
        )
        .unwrap();
        let json = serde_json::to_string(&m.dump()).unwrap();
        let back: GpDump = serde_json::from_str(&json).unwrap();
        let m2 = GpModel::from_dump(&back, Some(s)).unwrap();
        let q = [0.1, 0.2, 0.7];
        assert_eq!(m.predict(&q).unwrap(), m2.predict(&q).unwrap());
        assert!(GpModel::from_dump(&back, None).is_err());
    }
}
