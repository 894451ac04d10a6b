//! Decoder zoo: linear-Gaussian, MLP, constant and spiral generators.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Dense, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

/// Spiral geometry used when no parameters are given: z in [-3, 3]
/// sweeps 2.5 turns.
pub const SPIRAL_ANGULAR_GAIN: f64 = 2.5 * PI / 3.0;
pub const SPIRAL_OFFSET: f64 = PI / 2.0;
pub const SPIRAL_RADIAL_GAIN: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Mlp,
    Constant,
    Spiral,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Mlp => "mlp",
            ModelKind::Constant => "constant",
            ModelKind::Spiral => "spiral",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Tanh,
    Relu,
    LeakyRelu,
    Sigmoid,
    Reshape(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpiralParams {
    pub angular_gain: f64,
    pub offset: f64,
    pub radial_gain: f64,
}

impl Default for SpiralParams {
    fn default() -> Self {
        Self {
            angular_gain: SPIRAL_ANGULAR_GAIN,
            offset: SPIRAL_OFFSET,
            radial_gain: SPIRAL_RADIAL_GAIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Decoder {
    /// `x = W z + mu`; the layer's bias is the mean.
    Linear(Dense),
    Mlp(Vec<Layer>),
    /// Zero weights with the constant output as bias.
    Constant(Dense),
    Spiral { params: SpiralParams, angle: Dense },
}

/// A decoder `z -> x` under a standard-normal latent prior.
///
/// Immutable once built; share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    id: String,
    latent_dim: usize,
    output_shape: Vec<usize>,
    decoder: Decoder,
}

impl GeneratorModel {
    /// Linear-Gaussian decoder with weight `[D, k]` and mean of `D` elements.
    pub fn linear(weight: Tensor, mean: Tensor) -> Result<Self> {
        let output_shape = mean.shape().to_vec();
        let layer = Dense::new(weight, mean)?;
        let latent_dim = layer.in_dim();
        if latent_dim == 0 {
            return Err(Error::invalid("latent_dim", "must be at least 1"));
        }
        Ok(Self {
            id: format!("linear-{}x{}", layer.out_dim(), latent_dim),
            latent_dim,
            output_shape,
            decoder: Decoder::Linear(layer),
        })
    }

    /// Multilayer decoder. The final layer output is reshaped to `output_shape`.
    pub fn mlp(latent_dim: usize, layers: Vec<Layer>, output_shape: Vec<usize>) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::invalid("latent_dim", "must be at least 1"));
        }
        let model = Self {
            id: format!("mlp-{}-{}", latent_dim, output_shape.iter().product::<usize>()),
            latent_dim,
            output_shape,
            decoder: Decoder::Mlp(layers),
        };
        // shape check by a dry run at the origin
        model.forward(&Tensor::zeros(vec![latent_dim]))?;
        Ok(model)
    }

    pub fn constant(output: Tensor, latent_dim: usize) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::invalid("latent_dim", "must be at least 1"));
        }
        let output_shape = output.shape().to_vec();
        let weight = Tensor::zeros(vec![output.len(), latent_dim]);
        Ok(Self {
            id: format!("constant-{}", output.len()),
            latent_dim,
            output_shape,
            decoder: Decoder::Constant(Dense::new(weight, output)?),
        })
    }

    pub fn spiral(params: SpiralParams) -> Result<Self> {
        let SpiralParams {
            angular_gain,
            offset,
            radial_gain,
        } = params;
        if ![angular_gain, offset, radial_gain].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("spiral parameters"));
        }
        let angle = Dense::new(
            Tensor::new(vec![1, 1], vec![angular_gain])?,
            Tensor::vector(vec![offset])?,
        )?;
        Ok(Self {
            id: "spiral".to_string(),
            latent_dim: 1,
            output_shape: vec![2],
            decoder: Decoder::Spiral { params, angle },
        })
    }

    /// MLP with Gaussian (Glorot-scaled) weights and small random biases.
    pub fn random_mlp(
        latent_dim: usize,
        hidden: &[usize],
        activation: Layer,
        output_activation: Option<Layer>,
        output_shape: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rng_for(seed, &[stream::PRIOR, u64::MAX]);
        let out_dim = output_shape.iter().product::<usize>();
        let mut widths = vec![latent_dim];
        widths.extend_from_slice(hidden);
        widths.push(out_dim);
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let scale = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let normal = Normal::new(0.0, scale).expect("positive scale");
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..fan_out).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
            layers.push(Layer::Dense(Dense::new(
                Tensor::new(vec![fan_out, fan_in], w)?,
                Tensor::vector(b)?,
            )?));
            if i + 2 < widths.len() {
                layers.push(activation.clone());
            } else if let Some(act) = &output_activation {
                layers.push(act.clone());
            }
        }
        Self::mlp(latent_dim, layers, output_shape)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> ModelKind {
        match self.decoder {
            Decoder::Linear(_) => ModelKind::Linear,
            Decoder::Mlp(_) => ModelKind::Mlp,
            Decoder::Constant(_) => ModelKind::Constant,
            Decoder::Spiral { .. } => ModelKind::Spiral,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn output_dim(&self) -> usize {
        self.output_shape.iter().product()
    }

    pub fn prior(&self) -> LatentPrior {
        LatentPrior::new(self.latent_dim)
    }

    /// Weight `[D, k]` and mean of a linear model.
    pub fn linear_params(&self) -> Option<(&Tensor, &Tensor)> {
        match &self.decoder {
            Decoder::Linear(l) => Some((l.weight(), l.bias())),
            _ => None,
        }
    }

    pub fn constant_output(&self) -> Option<Tensor> {
        match &self.decoder {
            Decoder::Constant(l) => Some(
                l.bias()
                    .reshape(self.output_shape.clone())
                    .expect("bias matches output shape"),
            ),
            _ => None,
        }
    }

    pub fn layers(&self) -> Option<&[Layer]> {
        match &self.decoder {
            Decoder::Mlp(layers) => Some(layers),
            _ => None,
        }
    }

    pub fn spiral_params(&self) -> Option<SpiralParams> {
        match &self.decoder {
            Decoder::Spiral { params, .. } => Some(*params),
            _ => None,
        }
    }

    /// Appends the decoder graph for latent `z` to `tape`.
    pub fn record<'m>(&'m self, tape: &mut Tape<'m>, z: Var) -> Result<Var> {
        let zlen = tape.value(z).len();
        if zlen != self.latent_dim {
            return Err(Error::ShapeMismatch {
                context: "latent code",
                expected: vec![self.latent_dim],
                got: tape.value(z).shape().to_vec(),
            });
        }
        let mut h = if tape.value(z).shape().len() == 1 {
            z
        } else {
            tape.reshape(z, vec![zlen])?
        };
        match &self.decoder {
            Decoder::Linear(layer) | Decoder::Constant(layer) => h = tape.dense(h, layer)?,
            Decoder::Mlp(layers) => {
                for layer in layers {
                    h = match layer {
                        Layer::Dense(d) => tape.dense(h, d)?,
                        Layer::Tanh => tape.tanh(h)?,
                        Layer::Relu => tape.relu(h)?,
                        Layer::LeakyRelu => tape.leaky_relu(h)?,
                        Layer::Sigmoid => tape.sigmoid(h)?,
                        Layer::Reshape(shape) => tape.reshape(h, shape.clone())?,
                    };
                }
            }
            Decoder::Spiral { params, angle } => {
                let theta = tape.dense(h, angle)?;
                h = tape.polar(theta, params.radial_gain)?;
            }
        }
        if tape.value(h).shape() != self.output_shape.as_slice() {
            h = tape.reshape(h, self.output_shape.clone())?;
        }
        Ok(h)
    }

    /// Evaluates `G(z)`.
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let zv = tape.leaf(z.clone());
        let out = self.record(&mut tape, zv)?;
        Ok(tape.value(out).clone())
    }
}

/// Standard normal prior over the latent space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentPrior {
    dim: usize,
}

impl LatentPrior {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Tensor {
        let data = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        Tensor::from_parts_unchecked(vec![self.dim], data)
    }
}

/// Draws `n` i.i.d. standard-normal latent codes.
pub fn sample_prior(prior: LatentPrior, n: usize, seed: u64) -> Result<Vec<Tensor>> {
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    let mut rng = rng_for(seed, &[stream::PRIOR]);
    Ok((0..n).map(|_| prior.sample_one(&mut rng)).collect())
}

/// One draw from the noisy model, `x = G(z) + e` with `e ~ N(0, sigma2 I)`.
pub fn sample_noisy(model: &GeneratorModel, sigma2: f64, rng: &mut impl Rng) -> Result<Tensor> {
    let z = model.prior().sample_one(rng);
    let g = model.forward(&z)?;
    if sigma2 == 0.0 {
        return Ok(g);
    }
    let sd = sigma2.sqrt();
    let data = g
        .data()
        .iter()
        .map(|v| v + sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(g.shape().to_vec(), data)
}

/// `n` samples of the noisy model. Sample `i` has its own stream, so any
/// prefix of a larger draw is identical to a smaller draw.
pub fn sample_dataset(
    model: &GeneratorModel,
    sigma2: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<Tensor>> {
    if !sigma2.is_finite() || sigma2 < 0.0 {
        return Err(Error::invalid("sigma2", format!("must be finite and >= 0, got {sigma2}")));
    }
    (0..n)
        .map(|i| {
            let mut rng = rng_for(seed, &[stream::DATASET, i as u64]);
            sample_noisy(model, sigma2, &mut rng)
        })
        .collect()
}

/// Closed-form maximum-likelihood PPCA fit.
#[derive(Debug, Clone)]
pub struct PpcaFit {
    pub model: GeneratorModel,
    pub sigma2: f64,
    /// Eigenvalues of the sample covariance, descending.
    pub eigenvalues: Vec<f64>,
    /// Set when the covariance spectrum is flat (including all zero); the
    /// weight is then zero.
    pub degenerate: bool,
}

pub fn ppca_fit(data: &[Tensor], k: usize) -> Result<PpcaFit> {
    let first = data
        .first()
        .ok_or_else(|| Error::invalid("data", "empty dataset"))?;
    let dim = first.len();
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    if k >= dim {
        return Err(Error::invalid("k", format!("must be below data dimension {dim}, got {k}")));
    }
    if data.len() <= k {
        return Err(Error::invalid("data", format!("need more than {k} samples, got {}", data.len())));
    }
    for x in data {
        x.ensure_shape(first.shape(), "ppca data")?;
    }

    let n = data.len() as f64;
    let mut mean = vec![0.0; dim];
    for x in data {
        mean.iter_mut().zip(x.data()).for_each(|(m, v)| *m += v / n);
    }
    let centered = DMatrix::from_fn(dim, data.len(), |r, c| data[c].data()[r] - mean[r]);
    let cov = (&centered * centered.transpose()) / n;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();

    let sigma2 = eigenvalues[k..].iter().sum::<f64>() / (dim - k) as f64;
    let top = eigenvalues[0];
    let spread = top - eigenvalues[dim - 1];
    let degenerate = spread <= 1e-12 * top.max(f64::MIN_POSITIVE) || top <= 0.0;

    let mut weight = vec![0.0; dim * k];
    if !degenerate {
        for (j, &col) in order.iter().take(k).enumerate() {
            let scale = (eigenvalues[j] - sigma2).max(0.0).sqrt();
            for r in 0..dim {
                weight[r * k + j] = eig.eigenvectors[(r, col)] * scale;
            }
        }
    } else {
        log::warn!("ppca_fit: flat covariance spectrum, weight set to zero");
    }

    let mean = Tensor::new(first.shape().to_vec(), mean)?;
    let model = GeneratorModel::linear(Tensor::new(vec![dim, k], weight)?, mean)?
        .with_id(format!("ppca-{dim}x{k}"));
    Ok(PpcaFit {
        model,
        sigma2,
        eigenvalues,
        degenerate,
    })
}

/// Decodes a uniform grid over `[z_min, z_max]^latent_dim` (latent_dim <= 2).
/// Points are in row-major order with the last coordinate varying fastest.
pub fn generate_grid(
    model: &GeneratorModel,
    z_min: f64,
    z_max: f64,
    steps: usize,
) -> Result<Vec<(Tensor, Tensor)>> {
    let axis = grid_axis(z_min, z_max, steps)?;
    let points: Vec<Vec<f64>> = match model.latent_dim() {
        1 => axis.iter().map(|&a| vec![a]).collect(),
        2 => axis
            .iter()
            .flat_map(|&a| axis.iter().map(move |&b| vec![a, b]))
            .collect(),
        d => return Err(Error::invalid("latent_dim", format!("grid needs latent_dim <= 2, got {d}"))),
    };
    points
        .into_iter()
        .map(|p| {
            let z = Tensor::vector(p)?;
            let x = model.forward(&z)?;
            Ok((z, x))
        })
        .collect()
}

pub(crate) fn grid_axis(z_min: f64, z_max: f64, steps: usize) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(Error::invalid("steps", "need at least 2 grid points"));
    }
    if !z_min.is_finite() || !z_max.is_finite() || z_max <= z_min {
        return Err(Error::invalid("z_range", format!("empty range [{z_min}, {z_max}]")));
    }
    let h = (z_max - z_min) / (steps - 1) as f64;
    Ok((0..steps)
        .map(|i| if i + 1 == steps { z_max } else { z_min + h * i as f64 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_2x1() -> GeneratorModel {
        GeneratorModel::linear(
            Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap(),
            Tensor::vector(vec![0.5, -0.5]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identity_dense_passes_latent_through() {
        let model = GeneratorModel::linear(
            Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(vec![2]),
        )
        .unwrap();
        let x = model.forward(&Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(x.data(), &[1.0, 2.0]);
    }

    #[test]
    fn constant_ignores_latent() {
        let g0 = Tensor::new(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let model = GeneratorModel::constant(g0.clone(), 3).unwrap();
        let x = model
            .forward(&Tensor::vector(vec![5.0, -1.0, 2.0]).unwrap())
            .unwrap();
        assert_eq!(x, g0);
    }

    #[test]
    fn wrong_latent_length_is_rejected() {
        let model = linear_2x1();
        let err = model.forward(&Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(matches!(err, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn mlp_output_shape_is_checked() {
        let layers = vec![Layer::Dense(
            Dense::new(Tensor::zeros(vec![3, 2]), Tensor::zeros(vec![3])).unwrap(),
        )];
        assert!(GeneratorModel::mlp(2, layers.clone(), vec![3]).is_ok());
        assert!(GeneratorModel::mlp(2, layers, vec![4]).is_err());
    }

    #[test]
    fn spiral_matches_polar_formula() {
        let model = GeneratorModel::spiral(SpiralParams::default()).unwrap();
        let z = 0.7;
        let theta = SPIRAL_ANGULAR_GAIN * z + SPIRAL_OFFSET;
        let r = SPIRAL_RADIAL_GAIN * theta;
        let x = model.forward(&Tensor::vector(vec![z]).unwrap()).unwrap();
        assert!((x.data()[0] - r * theta.cos()).abs() < 1e-15);
        assert!((x.data()[1] - r * theta.sin()).abs() < 1e-15);
    }

    #[test]
    fn prior_sampling_is_seeded() {
        let p = LatentPrior::new(3);
        let a = sample_prior(p, 5, 11).unwrap();
        assert_eq!(a, sample_prior(p, 5, 11).unwrap());
        assert_ne!(a, sample_prior(p, 5, 12).unwrap());
        assert!(sample_prior(p, 0, 1).is_err());
    }

    #[test]
    fn prior_moments() {
        let n = 100_000;
        let d = 4;
        let zs = sample_prior(LatentPrior::new(d), n, 21).unwrap();
        let nf = n as f64;
        for j in 0..d {
            let mean = zs.iter().map(|z| z.data()[j]).sum::<f64>() / nf;
            let var = zs.iter().map(|z| (z.data()[j] - mean).powi(2)).sum::<f64>() / nf;
            assert!(mean.abs() <= 3.0 / nf.sqrt(), "mean {mean}");
            assert!((var - 1.0).abs() <= 3.0 * (2.0 / nf).sqrt(), "var {var}");
        }
    }

    #[test]
    fn noiseless_constant_dataset() {
        let g0 = Tensor::filled(vec![4], 0.25);
        let model = GeneratorModel::constant(g0.clone(), 2).unwrap();
        let xs = sample_dataset(&model, 0.0, 10, 1).unwrap();
        assert!(xs.iter().all(|x| *x == g0));
        assert!(sample_dataset(&model, -1.0, 1, 1).is_err());
    }

    #[test]
    fn dataset_noise_variance() {
        let n = 10_000;
        let model = GeneratorModel::constant(Tensor::filled(vec![3], 0.5), 1).unwrap();
        let xs = sample_dataset(&model, 0.01, n, 9).unwrap();
        assert_eq!(xs, sample_dataset(&model, 0.01, n, 9).unwrap());
        let nf = n as f64;
        for j in 0..3 {
            let mean = xs.iter().map(|x| x.data()[j]).sum::<f64>() / nf;
            let var = xs.iter().map(|x| (x.data()[j] - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            // standard error of a Gaussian sample variance
            let se = 0.01 * (2.0 / (nf - 1.0)).sqrt();
            assert!((var - 0.01).abs() <= 3.0 * se, "var {var}");
        }
    }

    #[test]
    fn ppca_rejects_bad_rank() {
        let xs = vec![Tensor::vector(vec![1.0, 2.0]).unwrap(); 5];
        assert!(ppca_fit(&xs, 2).is_err());
        assert!(ppca_fit(&xs, 0).is_err());
        assert!(ppca_fit(&xs[..1], 1).is_err());
    }

    #[test]
    fn ppca_zero_variance_is_flagged() {
        let xs = vec![Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap(); 5];
        let fit = ppca_fit(&xs, 1).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.sigma2, 0.0);
        let (w, mu) = fit.model.linear_params().unwrap();
        assert!(w.data().iter().all(|v| *v == 0.0));
        assert_eq!(mu.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn ppca_isotropic_data_gives_small_weight() {
        let model = GeneratorModel::constant(Tensor::zeros(vec![5]), 1).unwrap();
        let xs = sample_dataset(&model, 0.3, 20_000, 4).unwrap();
        let fit = ppca_fit(&xs, 1).unwrap();
        let (w, _) = fit.model.linear_params().unwrap();
        assert!(w.norm() < 0.1, "column norm {}", w.norm());
        assert!((fit.sigma2 - 0.3).abs() < 0.02, "sigma2 {}", fit.sigma2);
    }

    #[test]
    fn grid_endpoints_and_collinearity() {
        let model = linear_2x1();
        let g = generate_grid(&model, -1.0, 1.0, 2).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].0.data(), &[-1.0]);
        assert_eq!(g[1].0.data(), &[1.0]);

        let g = generate_grid(&model, -2.0, 3.0, 7).unwrap();
        let p0 = g[0].1.data();
        let d = [g[6].1.data()[0] - p0[0], g[6].1.data()[1] - p0[1]];
        for (_, x) in &g {
            let v = [x.data()[0] - p0[0], x.data()[1] - p0[1]];
            assert!((v[0] * d[1] - v[1] * d[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_rejects_high_latent_dim() {
        let model = GeneratorModel::constant(Tensor::zeros(vec![2]), 3).unwrap();
        assert!(generate_grid(&model, -1.0, 1.0, 3).is_err());
        let model2 = GeneratorModel::constant(Tensor::zeros(vec![2]), 2).unwrap();
        assert_eq!(generate_grid(&model2, -1.0, 1.0, 3).unwrap().len(), 9);
    }

    #[test]
    fn spiral_grid_spacing_shrinks_with_refinement() {
        let model = GeneratorModel::spiral(SpiralParams::default()).unwrap();
        let max_gap = |steps| {
            let g = generate_grid(&model, -3.0, 3.0, steps).unwrap();
            g.windows(2)
                .map(|w| w[0].1.distance(&w[1].1).unwrap())
                .fold(0.0f64, f64::max)
        };
        let coarse = max_gap(101);
        let fine = max_gap(1001);
        assert!(fine < coarse / 5.0);
    }
}
