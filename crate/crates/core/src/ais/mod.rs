//! Annealed importance sampling of `log p(x)` for a decoder under the
//! Gaussian observation model.
//!
//! Intermediate targets are `p(z) p(x | G(z))^beta_t` with a sigmoidal
//! `beta` schedule. Each level first accumulates the weight increment at the
//! current state and then moves the state with one HMC transition that
//! leaves the new level invariant.

mod hmc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use hmc::{
    adapt_step_size, hmc_step, leapfrog, Divergence, HmcOutcome, Phase, StepSizeAdapter,
    STEP_GROWTH, STEP_SHRINK,
};

use crate::autodiff::Tensor;
use crate::density::{bits_per_dim, evaluate_latent, LatentEval};
use crate::error::{Error, Result};
use crate::models::GeneratorModel;
use crate::rng::{rng_for, stream};

/// Fraction of divergent transitions above which a chain is flagged.
pub const DIVERGENCE_FLAG_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AisConfig {
    /// Number of intermediate distributions `T`.
    pub steps: usize,
    pub chains: usize,
    pub leapfrog_steps: usize,
    pub initial_step: f64,
    pub target_acceptance: f64,
    /// Weight on the previous value in the acceptance moving average.
    pub smoothing: f64,
    pub sharpness: f64,
}

impl Default for AisConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            chains: 4,
            leapfrog_steps: 10,
            initial_step: 0.05,
            target_acceptance: 0.65,
            smoothing: 0.9,
            sharpness: 4.0,
        }
    }
}

impl AisConfig {
    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_chains(mut self, chains: usize) -> Self {
        self.chains = chains;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("ais.steps", "must be at least 1"));
        }
        if self.chains == 0 {
            return Err(Error::invalid("ais.chains", "must be at least 1"));
        }
        if self.leapfrog_steps == 0 {
            return Err(Error::invalid("ais.leapfrog_steps", "must be at least 1"));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::invalid("ais.initial_step", "must be positive"));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::invalid("ais.target_acceptance", "must lie in (0, 1)"));
        }
        if !(self.smoothing > 0.0 && self.smoothing < 1.0) {
            return Err(Error::invalid("ais.smoothing", "must lie in (0, 1)"));
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(Error::invalid("ais.sharpness", "must be positive"));
        }
        Ok(())
    }
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `T + 1` annealing weights from 0 to 1: a logistic curve over
/// `[-sharpness, sharpness]`, rescaled so the endpoints are exact.
pub fn beta_schedule(steps: usize, sharpness: f64) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::invalid("steps", "must be at least 1"));
    }
    if !(sharpness > 0.0 && sharpness.is_finite()) {
        return Err(Error::invalid("sharpness", "must be positive"));
    }
    let lo = logistic(-sharpness);
    let hi = logistic(sharpness);
    let mut betas: Vec<f64> = (0..=steps)
        .map(|t| {
            let u = 2.0 * t as f64 / steps as f64 - 1.0;
            ((logistic(sharpness * u) - lo) / (hi - lo)).clamp(0.0, 1.0)
        })
        .collect();
    betas[0] = 0.0;
    betas[steps] = 1.0;
    Ok(betas)
}

/// `log(mean(exp(values)))` with a max shift. `-inf` entries contribute zero.
pub fn log_mean_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("values", "log-mean-exp of an empty list"));
    }
    Ok(crate::density::log_sum_exp(values) - (values.len() as f64).ln())
}

/// History of one annealing chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    /// Running log-weight after each level; length `T`.
    pub log_weights: Vec<f64>,
    /// Moving-average acceptance after each level; length `T`.
    pub acceptance: Vec<f64>,
    /// Leapfrog step size used at each level; length `T`.
    pub step_sizes: Vec<f64>,
    pub accepted: usize,
    pub divergences: usize,
    pub final_step: f64,
}

impl ChainTrace {
    pub fn final_log_weight(&self) -> f64 {
        *self.log_weights.last().expect("at least one level")
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.log_weights.len() as f64
    }

    pub fn flagged(&self) -> bool {
        self.divergences as f64 > DIVERGENCE_FLAG_FRACTION * self.log_weights.len() as f64
    }
}

fn phase_at(eval: LatentEval, beta: f64) -> Phase<LatentEval> {
    Phase {
        position: eval.z.clone(),
        log_density: eval.log_density(beta),
        grad: eval.grad(beta),
        aux: eval,
    }
}

/// Runs one chain with its own generator seeded by `seed`.
pub fn ais_chain(
    model: &GeneratorModel,
    x: &Tensor,
    sigma2: f64,
    cfg: &AisConfig,
    seed: u64,
) -> Result<ChainTrace> {
    cfg.validate()?;
    x.ensure_shape(model.output_shape(), "ais sample")?;
    let betas = beta_schedule(cfg.steps, cfg.sharpness)?;
    let mut rng = rng_for(seed, &[stream::CHAIN]);

    let z0 = model.prior().sample_one(&mut rng);
    let mut current = evaluate_latent(model, x, z0.data(), sigma2)?;
    let mut adapter = StepSizeAdapter::new(cfg.initial_step, cfg.smoothing, cfg.target_acceptance);

    let mut log_w = 0.0;
    let mut trace = ChainTrace {
        log_weights: Vec::with_capacity(cfg.steps),
        acceptance: Vec::with_capacity(cfg.steps),
        step_sizes: Vec::with_capacity(cfg.steps),
        accepted: 0,
        divergences: 0,
        final_step: cfg.initial_step,
    };
    for t in 1..=cfg.steps {
        let beta = betas[t];
        log_w += (beta - betas[t - 1]) * current.log_lik;

        let mut eval = |z: &[f64]| {
            evaluate_latent(model, x, z, sigma2)
                .ok()
                .map(|e| phase_at(e, beta))
        };
        let start = phase_at(current, beta);
        trace.step_sizes.push(adapter.step);
        let out = hmc_step(&start, &mut eval, adapter.step, cfg.leapfrog_steps, &mut rng);
        current = out.state.aux;
        trace.accepted += usize::from(out.accepted);
        trace.divergences += usize::from(out.divergent);
        adapter.update(out.accepted);

        trace.log_weights.push(log_w);
        trace.acceptance.push(adapter.avg_acceptance);
    }
    trace.final_step = adapter.step;
    if trace.flagged() {
        log::warn!(
            "ais chain {seed:#x}: {} divergent transitions of {}",
            trace.divergences,
            cfg.steps
        );
    }
    Ok(trace)
}

/// Per-sample likelihood estimate combining all chains.
#[derive(Debug, Clone, PartialEq)]
pub struct LLEstimate {
    pub sample_id: usize,
    pub chain_log_weights: Vec<f64>,
    /// Log-mean-exp of the final chain weights, in nats.
    pub log_likelihood: f64,
    /// Combined estimate after each level; length `T`.
    pub trace: Vec<f64>,
    /// Chain-averaged moving acceptance after each level; length `T`.
    pub acceptance_history: Vec<f64>,
    /// Fraction of accepted transitions over all chains.
    pub mean_acceptance: f64,
    pub divergences: usize,
    /// Some chain exceeded the divergence threshold.
    pub flagged: bool,
}

impl LLEstimate {
    pub fn chain_spread(&self) -> f64 {
        let max = self.chain_log_weights.iter().copied().fold(f64::MIN, f64::max);
        let min = self.chain_log_weights.iter().copied().fold(f64::MAX, f64::min);
        max - min
    }

    pub fn bits_per_dim(&self, dims: usize) -> Result<f64> {
        bits_per_dim(self.log_likelihood, dims)
    }

    fn combine(sample_id: usize, chains: &[ChainTrace]) -> Result<Self> {
        let steps = chains[0].log_weights.len();
        let finals: Vec<f64> = chains.iter().map(ChainTrace::final_log_weight).collect();
        let trace = (0..steps)
            .map(|t| {
                let at: Vec<f64> = chains.iter().map(|c| c.log_weights[t]).collect();
                log_mean_exp(&at)
            })
            .collect::<Result<Vec<_>>>()?;
        let n = chains.len() as f64;
        let acceptance_history = (0..steps)
            .map(|t| chains.iter().map(|c| c.acceptance[t]).sum::<f64>() / n)
            .collect();
        let accepted: usize = chains.iter().map(|c| c.accepted).sum();
        Ok(Self {
            sample_id,
            log_likelihood: log_mean_exp(&finals)?,
            chain_log_weights: finals,
            trace,
            acceptance_history,
            mean_acceptance: accepted as f64 / (steps as f64 * n),
            divergences: chains.iter().map(|c| c.divergences).sum(),
            flagged: chains.iter().any(ChainTrace::flagged),
        })
    }
}

/// Seed of chain `chain` for sample `sample` under run seed `seed`.
pub fn chain_seed(seed: u64, sample: usize, chain: usize) -> u64 {
    crate::rng::derive_seed(seed, &[stream::CHAIN, sample as u64, chain as u64])
}

/// AIS estimate for one sample; `sample_id` selects the chain streams.
pub fn estimate_ll_one(
    model: &GeneratorModel,
    x: &Tensor,
    sample_id: usize,
    sigma2: f64,
    cfg: &AisConfig,
    seed: u64,
) -> Result<LLEstimate> {
    cfg.validate()?;
    let chains = (0..cfg.chains)
        .into_par_iter()
        .map(|c| ais_chain(model, x, sigma2, cfg, chain_seed(seed, sample_id, c)))
        .collect::<Result<Vec<_>>>()?;
    LLEstimate::combine(sample_id, &chains)
}

/// AIS estimates for a batch; sample `i` uses id `i`.
pub fn estimate_ll(
    model: &GeneratorModel,
    xs: &[Tensor],
    sigma2: f64,
    cfg: &AisConfig,
    seed: u64,
) -> Result<Vec<LLEstimate>> {
    if xs.is_empty() {
        return Err(Error::invalid("xs", "no samples"));
    }
    cfg.validate()?;
    xs.par_iter()
        .enumerate()
        .map(|(i, x)| estimate_ll_one(model, x, i, sigma2, cfg, seed))
        .collect()
}
