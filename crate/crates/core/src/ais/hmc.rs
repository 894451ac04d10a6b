//! Hamiltonian Monte Carlo transition with a unit mass matrix.

use rand::Rng;
use rand_distr::StandardNormal;

/// A position with its log density and gradient, plus whatever the target
/// wants to carry along (`aux`) so accepted states need no re-evaluation.
#[derive(Debug, Clone)]
pub struct Phase<A> {
    pub position: Vec<f64>,
    pub log_density: f64,
    pub grad: Vec<f64>,
    pub aux: A,
}

/// The integrator left the finite range, or the target refused a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Divergence;

fn kick(momentum: &mut [f64], grad: &[f64], scale: f64) {
    momentum.iter_mut().zip(grad).for_each(|(p, g)| *p += scale * g);
}

/// Integrates Hamilton's equations for `n_steps` drifts of size `step`:
/// half kick, then alternating drift and full kick, closing with a half kick.
///
/// `eval` returns `None` when the density cannot be evaluated at a point.
pub fn leapfrog<A, F>(
    start: &Phase<A>,
    momentum: &[f64],
    step: f64,
    n_steps: usize,
    eval: &mut F,
) -> Result<(Phase<A>, Vec<f64>), Divergence>
where
    A: Clone,
    F: FnMut(&[f64]) -> Option<Phase<A>>,
{
    let mut p = momentum.to_vec();
    let mut state = start.clone();
    if n_steps == 0 {
        return Ok((state, p));
    }
    kick(&mut p, &state.grad, 0.5 * step);
    for i in 0..n_steps {
        let z: Vec<f64> = state
            .position
            .iter()
            .zip(&p)
            .map(|(z, p)| z + step * p)
            .collect();
        state = eval(&z).ok_or(Divergence)?;
        let scale = if i + 1 == n_steps { 0.5 * step } else { step };
        kick(&mut p, &state.grad, scale);
        if p.iter().any(|v| !v.is_finite()) || !state.log_density.is_finite() {
            return Err(Divergence);
        }
    }
    Ok((state, p))
}

fn hamiltonian(log_density: f64, momentum: &[f64]) -> f64 {
    -log_density + 0.5 * momentum.iter().map(|p| p * p).sum::<f64>()
}

#[derive(Debug, Clone)]
pub struct HmcOutcome<A> {
    pub state: Phase<A>,
    pub accepted: bool,
    pub divergent: bool,
    /// `min(1, exp(-dH))`, zero for divergent proposals.
    pub accept_prob: f64,
}

/// One Metropolis-adjusted HMC transition with full momentum refresh.
///
/// The random stream consumption is fixed (momentum, then one uniform)
/// regardless of the outcome, so a chain's draws never shift after a
/// divergence.
pub fn hmc_step<A, F, R>(
    current: &Phase<A>,
    eval: &mut F,
    step: f64,
    n_leapfrog: usize,
    rng: &mut R,
) -> HmcOutcome<A>
where
    A: Clone,
    F: FnMut(&[f64]) -> Option<Phase<A>>,
    R: Rng + ?Sized,
{
    let momentum: Vec<f64> = (0..current.position.len())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let u: f64 = rng.random();
    let h0 = hamiltonian(current.log_density, &momentum);

    let proposal = leapfrog(current, &momentum, step, n_leapfrog, eval);
    let (proposed, p1) = match proposal {
        Ok(v) => v,
        Err(Divergence) => return rejected(current, true),
    };
    let h1 = hamiltonian(proposed.log_density, &p1);
    let log_ratio = h0 - h1;
    if !log_ratio.is_finite() {
        return rejected(current, true);
    }
    let accept_prob = log_ratio.exp().min(1.0);
    if u < accept_prob {
        HmcOutcome {
            state: proposed,
            accepted: true,
            divergent: false,
            accept_prob,
        }
    } else {
        HmcOutcome {
            accept_prob,
            ..rejected(current, false)
        }
    }
}

fn rejected<A: Clone>(current: &Phase<A>, divergent: bool) -> HmcOutcome<A> {
    HmcOutcome {
        state: current.clone(),
        accepted: false,
        divergent,
        accept_prob: 0.0,
    }
}

/// Multiplicative step-size control driven by an exponential moving average
/// of the acceptance indicator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizeAdapter {
    pub step: f64,
    pub avg_acceptance: f64,
    pub smoothing: f64,
    pub target: f64,
}

pub const STEP_GROWTH: f64 = 1.02;
pub const STEP_SHRINK: f64 = 0.98;

impl StepSizeAdapter {
    /// The moving average starts at the target.
    pub fn new(step: f64, smoothing: f64, target: f64) -> Self {
        Self {
            step,
            avg_acceptance: target,
            smoothing,
            target,
        }
    }

    pub fn update(&mut self, accepted: bool) -> f64 {
        let (step, avg) = adapt_step_size(
            self.step,
            self.avg_acceptance,
            accepted,
            self.smoothing,
            self.target,
        );
        self.step = step;
        self.avg_acceptance = avg;
        step
    }
}

/// Returns the new `(step, moving average)`.
pub fn adapt_step_size(
    step: f64,
    avg_acceptance: f64,
    accepted: bool,
    smoothing: f64,
    target: f64,
) -> (f64, f64) {
    let hit = if accepted { 1.0 } else { 0.0 };
    let avg = smoothing * avg_acceptance + (1.0 - smoothing) * hit;
    let factor = if avg > target { STEP_GROWTH } else { STEP_SHRINK };
    (step * factor, avg)
}
