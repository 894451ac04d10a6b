//! Gaussian observation model, annealed log-joint, and the two exact
//! likelihood references (closed-form linear-Gaussian and grid quadrature).

use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, DVector};

use crate::autodiff::{forward_and_vjp, Tensor};
use crate::error::{Error, Result};
use crate::models::{grid_axis, GeneratorModel};

/// ln(2 pi)
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Additive isotropic Gaussian noise on the decoder output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationModel {
    sigma2: f64,
}

impl ObservationModel {
    pub fn new(sigma2: f64) -> Result<Self> {
        check_sigma2(sigma2)?;
        Ok(Self { sigma2 })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn log_density(&self, x: &Tensor, g: &Tensor) -> Result<f64> {
        log_obs(x, g, self.sigma2)
    }
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("sigma2", format!("must be finite and > 0, got {sigma2}")))
    }
}

/// `log N(x; g, sigma2 I)`.
pub fn log_obs(x: &Tensor, g: &Tensor, sigma2: f64) -> Result<f64> {
    check_sigma2(sigma2)?;
    let sq = x.squared_distance(g)?;
    let d = x.len() as f64;
    Ok(-0.5 * d * (LN_2PI + sigma2.ln()) - sq / (2.0 * sigma2))
}

/// Standard-normal log density of a latent code.
pub fn log_prior(z: &Tensor) -> f64 {
    -0.5 * z.len() as f64 * LN_2PI - 0.5 * z.squared_norm()
}

fn check_beta(beta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::invalid("beta", format!("must lie in [0, 1], got {beta}")))
    }
}

/// `log p(z) + beta log p(x | G(z))`.
pub fn log_joint_annealed(
    model: &GeneratorModel,
    x: &Tensor,
    z: &Tensor,
    sigma2: f64,
    beta: f64,
) -> Result<f64> {
    check_beta(beta)?;
    let prior = log_prior(z);
    if beta == 0.0 {
        return Ok(prior);
    }
    let g = model.forward(z)?;
    Ok(prior + beta * log_obs(x, &g, sigma2)?)
}

/// Prior and likelihood terms at one latent point, with their gradients.
///
/// Holding the two pieces separately lets a sampler re-target any annealing
/// weight without another decoder pass.
#[derive(Debug, Clone)]
pub struct LatentEval {
    pub z: Vec<f64>,
    pub log_prior: f64,
    pub log_lik: f64,
    pub grad_log_lik: Vec<f64>,
}

impl LatentEval {
    pub fn log_density(&self, beta: f64) -> f64 {
        self.log_prior + beta * self.log_lik
    }

    /// Gradient of `log p(z) + beta log p(x | G(z))`.
    pub fn grad(&self, beta: f64) -> Vec<f64> {
        self.z
            .iter()
            .zip(&self.grad_log_lik)
            .map(|(z, g)| -z + beta * g)
            .collect()
    }
}

/// One forward and one backward pass through the decoder at `z`.
pub fn evaluate_latent(
    model: &GeneratorModel,
    x: &Tensor,
    z: &[f64],
    sigma2: f64,
) -> Result<LatentEval> {
    check_sigma2(sigma2)?;
    let zt = Tensor::new(vec![z.len()], z.to_vec())?;
    let mut log_lik = 0.0;
    let (_, grad_log_lik) = forward_and_vjp(model, &zt, |g| {
        log_lik = log_obs(x, g, sigma2)?;
        // d/dg of -|x - g|^2 / (2 sigma2)
        Ok(x.data()
            .iter()
            .zip(g.data())
            .map(|(x, g)| (x - g) / sigma2)
            .collect())
    })?;
    Ok(LatentEval {
        log_prior: log_prior(&zt),
        z: zt.into_data(),
        log_lik,
        grad_log_lik,
    })
}

/// Marginal covariance `W W^T + sigma2 I` of a linear model.
fn linear_covariance(model: &GeneratorModel, sigma2: f64) -> Result<(DMatrix<f64>, &Tensor)> {
    let (w, mu) = model.linear_params().ok_or(Error::UnsupportedModel {
        op: "closed-form likelihood",
        kind: model.kind().as_str(),
    })?;
    let (d, k) = (w.shape()[0], w.shape()[1]);
    let w = DMatrix::from_row_slice(d, k, w.data());
    let cov = &w * w.transpose() + DMatrix::identity(d, d) * sigma2;
    Ok((cov, mu))
}

/// Exact `log N(x; mu, W W^T + sigma2 I)` for a linear decoder.
pub fn ppca_loglik(model: &GeneratorModel, sigma2: f64, x: &Tensor) -> Result<f64> {
    check_sigma2(sigma2)?;
    let (cov, mu) = linear_covariance(model, sigma2)?;
    let d = cov.nrows();
    if x.len() != d {
        return Err(Error::ShapeMismatch {
            context: "closed-form likelihood",
            expected: mu.shape().to_vec(),
            got: x.shape().to_vec(),
        });
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::invalid("sigma2", "marginal covariance is not positive definite"))?;
    let r = DVector::from_iterator(d, x.data().iter().zip(mu.data()).map(|(a, b)| a - b));
    let solved = chol.solve(&r);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(-0.5 * (d as f64 * LN_2PI + log_det + r.dot(&solved)))
}

/// Differential entropy of the linear model's marginal, in nats.
pub fn ppca_entropy(model: &GeneratorModel, sigma2: f64) -> Result<f64> {
    check_sigma2(sigma2)?;
    let (cov, _) = linear_covariance(model, sigma2)?;
    let d = cov.nrows() as f64;
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::invalid("sigma2", "marginal covariance is not positive definite"))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(0.5 * d * (1.0 + LN_2PI) + 0.5 * log_det)
}

/// Latent box for [`quadrature_loglik`], applied to every latent axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentRange {
    pub min: f64,
    pub max: f64,
}

impl Default for LatentRange {
    fn default() -> Self {
        Self { min: -8.0, max: 8.0 }
    }
}

/// Log marginal likelihood by trapezoid quadrature over the latent grid
/// (latent_dim <= 2).
///
/// The log-joint sum is normalized by the same rule applied to the prior
/// alone, which makes the estimate exact for decoders that ignore `z` and
/// removes the prior mass lost outside the box.
pub fn quadrature_loglik(
    model: &GeneratorModel,
    sigma2: f64,
    x: &Tensor,
    range: LatentRange,
    steps: usize,
) -> Result<f64> {
    check_sigma2(sigma2)?;
    if range.min > -3.0 || range.max < 3.0 {
        return Err(Error::invalid(
            "z_range",
            format!("must cover [-3, 3], got [{}, {}]", range.min, range.max),
        ));
    }
    let axis = grid_axis(range.min, range.max, steps)?;
    let h = (range.max - range.min) / (steps - 1) as f64;
    let log_w: Vec<f64> = (0..steps)
        .map(|i| {
            let end = i == 0 || i + 1 == steps;
            h.ln() + if end { -LN_2 } else { 0.0 }
        })
        .collect();

    let mut joint = Vec::new();
    let mut prior = Vec::new();
    let mut push = |z: Vec<f64>, lw: f64| -> Result<()> {
        let zt = Tensor::vector(z)?;
        let lp = log_prior(&zt);
        let g = model.forward(&zt)?;
        prior.push(lw + lp);
        joint.push(lw + lp + log_obs(x, &g, sigma2)?);
        Ok(())
    };
    match model.latent_dim() {
        1 => {
            for (a, wa) in axis.iter().zip(&log_w) {
                push(vec![*a], *wa)?;
            }
        }
        2 => {
            for (a, wa) in axis.iter().zip(&log_w) {
                for (b, wb) in axis.iter().zip(&log_w) {
                    push(vec![*a, *b], wa + wb)?;
                }
            }
        }
        d => {
            return Err(Error::invalid(
                "latent_dim",
                format!("quadrature needs latent_dim <= 2, got {d}"),
            ))
        }
    }
    Ok(log_sum_exp(&joint) - log_sum_exp(&prior))
}

/// `log(sum(exp(values)))`, shifted by the maximum.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Nats per image to bits per dimension.
pub fn bits_per_dim(ll_nats: f64, dims: usize) -> Result<f64> {
    if dims == 0 {
        return Err(Error::invalid("dims", "must be at least 1"));
    }
    Ok(ll_nats / (dims as f64 * LN_2))
}

/// Peak signal-to-noise ratio in dB for unit peak intensity.
pub fn psnr(sigma2: f64) -> Result<f64> {
    check_sigma2(sigma2)?;
    Ok(10.0 * (1.0 / sigma2).log10())
}

/// Per-pixel noise variance implied by a set of l2 reconstruction errors:
/// the mean of `error^2 / dims`.
pub fn sigma2_from_reconstruction(errors: &[f64], dims: usize) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::invalid("errors", "no reconstruction errors"));
    }
    if dims == 0 {
        return Err(Error::invalid("dims", "must be at least 1"));
    }
    let mean = errors.iter().map(|e| e * e).sum::<f64>() / (errors.len() * dims) as f64;
    check_sigma2(mean)?;
    Ok(mean)
}

/// Entropy of an isotropic Gaussian with `dims` coordinates.
pub fn isotropic_entropy(sigma2: f64, dims: usize) -> f64 {
    0.5 * dims as f64 * (1.0 + (2.0 * PI * sigma2).ln())
}
