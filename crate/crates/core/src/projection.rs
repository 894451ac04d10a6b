//! Latent inversion: multi-restart Adam on `||G(z) - x||^2` with a cosine
//! learning-rate schedule and nearest-decode initialisation.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{forward_and_vjp, squared_distance};
use crate::error::{Error, Result};
use crate::models::GeneratorModel;
use crate::rng::{rng_for, stream};
use crate::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    pub iterations: usize,
    pub restarts: usize,
    pub init_pool: usize,
    pub lr0: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            iterations: 750,
            restarts: 4,
            init_pool: 500,
            lr0: 0.05,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations", "must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts", "must be at least 1"));
        }
        if self.init_pool == 0 {
            return Err(Error::invalid("init_pool", "must be at least 1"));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::invalid("lr0", "must be positive and finite"));
        }
        Ok(())
    }
}

/// `lr0 * (1 + cos(pi t / T)) / 2`.
pub fn cosine_lr(t: usize, total: usize, lr0: f64) -> Result<f64> {
    if t > total {
        return Err(Error::invalid("t", format!("step {t} exceeds total {total}")));
    }
    if total == 0 {
        return Ok(lr0);
    }
    Ok(lr0 * 0.5 * (1.0 + (PI * t as f64 / total as f64).cos()))
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// One restart's optimisation history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestartTrace {
    pub restart: usize,
    /// Distance `||G(z) - x||` at the start and after each iteration.
    pub errors: Vec<f64>,
    /// Recomputed distance at the best iterate; `None` if the restart failed.
    pub best_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub z_star: Tensor,
    pub reconstruction: Tensor,
    pub error: f64,
    pub traces: Vec<RestartTrace>,
    pub winner: usize,
}

fn loss_and_grad(model: &GeneratorModel, x: &Tensor, z: &[f64]) -> Result<(f64, Vec<f64>)> {
    let z = Tensor::vector(z.to_vec())?;
    let mut loss = 0.0;
    let (_, grad) = forward_and_vjp(model, &z, |g| {
        let r: Vec<f64> = g.data().iter().zip(x.data()).map(|(g, x)| g - x).collect();
        loss = r.iter().map(|v| v * v).sum();
        Ok(r.into_iter().map(|v| 2.0 * v).collect())
    })?;
    Ok((loss, grad))
}

struct Descent {
    z: Vec<f64>,
    errors: Vec<f64>,
}

/// Runs Adam from `init`, returning the best iterate seen.
fn descend(
    model: &GeneratorModel,
    x: &Tensor,
    init: &[f64],
    iterations: usize,
    lr0: f64,
) -> Result<Descent> {
    let mut z = init.to_vec();
    let mut adam = Adam::new(z.len());
    let mut errors = Vec::with_capacity(iterations + 1);
    let (mut loss, mut grad) = loss_and_grad(model, x, &z)?;
    let mut best = (loss, z.clone());
    errors.push(loss.sqrt());
    for t in 0..iterations {
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("projection loss"));
        }
        adam.step(&mut z, &grad, cosine_lr(t, iterations, lr0)?);
        (loss, grad) = loss_and_grad(model, x, &z)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("projection loss"));
        }
        errors.push(loss.sqrt());
        if loss < best.0 {
            best = (loss, z.clone());
        }
    }
    Ok(Descent { z: best.1, errors })
}

/// Latent of the pool decode nearest to `x`; ties go to the earliest draw.
fn nearest_init(
    model: &GeneratorModel,
    x: &Tensor,
    cfg: &InversionConfig,
    seed: u64,
    sample_id: usize,
    restart: usize,
) -> Result<Tensor> {
    let mut rng = rng_for(seed, &[stream::RESTART, sample_id as u64, restart as u64]);
    let prior = model.prior();
    let mut best: Option<(f64, Tensor)> = None;
    for _ in 0..cfg.init_pool {
        let z = prior.sample_one(&mut rng);
        let d = squared_distance(model.forward(&z)?.data(), x.data());
        if best.as_ref().is_none_or(|(b, _)| d < *b) {
            best = Some((d, z));
        }
    }
    Ok(best.expect("init_pool >= 1").1)
}

fn assemble(
    model: &GeneratorModel,
    x: &Tensor,
    inits: impl Iterator<Item = Result<Tensor>>,
    cfg: &InversionConfig,
) -> Result<ProjectionResult> {
    let mut traces = Vec::new();
    let mut best: Option<(f64, usize, Tensor, Tensor)> = None;
    for (restart, init) in inits.enumerate() {
        let outcome = init.and_then(|z0| {
            let d = descend(model, x, z0.data(), cfg.iterations, cfg.lr0)?;
            let z = Tensor::vector(d.z)?;
            let recon = model.forward(&z)?;
            let err = recon.distance(x)?;
            Ok((d.errors, z, recon, err))
        });
        match outcome {
            Ok((errors, z, recon, err)) => {
                traces.push(RestartTrace {
                    restart,
                    errors,
                    best_error: Some(err),
                });
                if best.as_ref().is_none_or(|(b, ..)| err < *b) {
                    best = Some((err, restart, z, recon));
                }
            }
            Err(e) => {
                log::warn!("projection restart {restart} discarded: {e}");
                traces.push(RestartTrace {
                    restart,
                    errors: Vec::new(),
                    best_error: None,
                });
            }
        }
    }
    let (error, winner, z_star, reconstruction) =
        best.ok_or(Error::AllRestartsFailed(traces.len()))?;
    Ok(ProjectionResult {
        z_star,
        reconstruction,
        error,
        traces,
        winner,
    })
}

fn check_input(model: &GeneratorModel, x: &Tensor, cfg: &InversionConfig) -> Result<()> {
    cfg.validate()?;
    x.ensure_shape(model.output_shape(), "projection target")
}

/// Projects `x` onto the range of `model`, treating it as sample 0.
pub fn project(
    model: &GeneratorModel,
    x: &Tensor,
    cfg: &InversionConfig,
    seed: u64,
) -> Result<ProjectionResult> {
    project_sample(model, x, 0, cfg, seed)
}

/// Projection with restart seeds derived from `(seed, sample_id, restart)`.
pub fn project_sample(
    model: &GeneratorModel,
    x: &Tensor,
    sample_id: usize,
    cfg: &InversionConfig,
    seed: u64,
) -> Result<ProjectionResult> {
    check_input(model, x, cfg)?;
    let inits = (0..cfg.restarts).map(|r| nearest_init(model, x, cfg, seed, sample_id, r));
    assemble(model, x, inits, cfg)
}

/// Projection from caller-supplied starting latents, one restart each.
pub fn project_from(
    model: &GeneratorModel,
    x: &Tensor,
    inits: &[Tensor],
    cfg: &InversionConfig,
) -> Result<ProjectionResult> {
    check_input(model, x, cfg)?;
    if inits.is_empty() {
        return Err(Error::invalid("inits", "at least one initial latent is required"));
    }
    for z in inits {
        z.ensure_shape(&[model.latent_dim()], "initial latent")?;
    }
    assemble(model, x, inits.iter().cloned().map(Ok), cfg)
}

/// Per-sample projection errors, in input order; sample ids are positions.
pub fn recon_error_set(
    model: &GeneratorModel,
    xs: &[Tensor],
    cfg: &InversionConfig,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    project_all(model, xs, cfg, seed)
        .map(|rs| rs.into_iter().enumerate().map(|(i, r)| (i, r.error)).collect())
}

/// Full projection results for every sample, in input order.
pub fn project_all(
    model: &GeneratorModel,
    xs: &[Tensor],
    cfg: &InversionConfig,
    seed: u64,
) -> Result<Vec<ProjectionResult>> {
    if xs.is_empty() {
        return Err(Error::invalid("xs", "no samples to project"));
    }
    xs.par_iter()
        .enumerate()
        .map(|(i, x)| project_sample(model, x, i, cfg, seed))
        .collect()
}
