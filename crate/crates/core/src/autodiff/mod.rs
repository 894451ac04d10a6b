//! Dense tensors and reverse-mode gradients with respect to latent codes.

mod tape;
mod tensor;

use rand::Rng;
use rand_distr::StandardNormal;

pub use tape::{Adjoints, Dense, Tape, Var, LEAKY_SLOPE};
pub use tensor::Tensor;
pub(crate) use tensor::{dot, squared_distance};

use crate::error::{Error, Result};
use crate::models::GeneratorModel;
use crate::rng::rng_for;

/// Central finite-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;

/// Evaluates `G(z)`.
pub fn forward_eval(model: &GeneratorModel, z: &Tensor) -> Result<Tensor> {
    model.forward(z)
}

/// Decoded output together with `u^T dG/dz`.
pub fn forward_and_vjp(
    model: &GeneratorModel,
    z: &Tensor,
    cotangent: impl FnOnce(&Tensor) -> Result<Vec<f64>>,
) -> Result<(Tensor, Vec<f64>)> {
    let mut tape = Tape::new();
    let zv = tape.leaf(z.clone());
    let out = model.record(&mut tape, zv)?;
    let x = tape.value(out).clone();
    let u = cotangent(&x)?;
    let adj = tape.backward(out, &u)?;
    Ok((x, adj.get(zv, z.len())))
}

/// Vector-Jacobian product `u^T dG/dz` at `z`.
pub fn vjp(model: &GeneratorModel, z: &Tensor, cotangent: &Tensor) -> Result<Tensor> {
    cotangent.ensure_shape(model.output_shape(), "vjp cotangent")?;
    let (_, g) = forward_and_vjp(model, z, |_| Ok(cotangent.data().to_vec()))?;
    Tensor::new(z.shape().to_vec(), g)
}

/// Largest relative error between [`vjp`] and central differences of
/// `u^T G(z)` over `probes` random cotangents.
pub fn grad_check(model: &GeneratorModel, z: &Tensor, probes: usize, seed: u64) -> Result<f64> {
    if probes == 0 {
        return Err(Error::invalid("probes", "must be at least 1"));
    }
    let mut rng = rng_for(seed, &[0x6772_6164]);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let u: Vec<f64> = (0..model.output_dim())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let u = Tensor::new(model.output_shape().to_vec(), u)?;
        let analytic = vjp(model, z, &u)?;

        let mut numeric = Vec::with_capacity(z.len());
        for i in 0..z.len() {
            let mut plus = z.data().to_vec();
            let mut minus = z.data().to_vec();
            plus[i] += FD_STEP;
            minus[i] -= FD_STEP;
            // the representable step, not the nominal one
            let width = plus[i] - minus[i];
            let fp = dot(u.data(), model.forward(&Tensor::new(z.shape().to_vec(), plus)?)?.data());
            let fm = dot(u.data(), model.forward(&Tensor::new(z.shape().to_vec(), minus)?)?.data());
            numeric.push((fp - fm) / width);
        }

        let diff = squared_distance(analytic.data(), &numeric).sqrt();
        let scale = analytic.norm().max(dot(&numeric, &numeric).sqrt());
        let rel = if scale > 0.0 { diff / scale } else { diff };
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Layer;

    fn dense(rows: usize, cols: usize, w: &[f64], b: &[f64]) -> Layer {
        Layer::Dense(
            Dense::new(
                Tensor::new(vec![rows, cols], w.to_vec()).unwrap(),
                Tensor::vector(b.to_vec()).unwrap(),
            )
            .unwrap(),
        )
    }

    // Pinned 2-4-3 tanh network.
    const W1: [f64; 8] = [0.5, -0.3, 0.8, 0.1, -0.6, 0.4, 0.2, 0.9];
    const B1: [f64; 4] = [0.1, -0.2, 0.05, 0.0];
    const W2: [f64; 12] = [0.3, -0.7, 0.2, 0.5, -0.4, 0.6, 0.1, -0.2, 0.8, 0.05, -0.3, 0.4];
    const B2: [f64; 3] = [0.0, 0.1, -0.1];

    fn pinned_mlp() -> GeneratorModel {
        GeneratorModel::mlp(
            2,
            vec![dense(4, 2, &W1, &B1), Layer::Tanh, dense(3, 4, &W2, &B2)],
            vec![3],
        )
        .unwrap()
    }

    /// Scalar-at-a-time reference, written without the tape.
    fn reference_forward(z: [f64; 2]) -> [f64; 3] {
        let mut h = [0.0; 4];
        for i in 0..4 {
            let mut acc = B1[i];
            for j in 0..2 {
                acc += W1[i * 2 + j] * z[j];
            }
            h[i] = acc.tanh();
        }
        let mut out = [0.0; 3];
        for i in 0..3 {
            let mut acc = B2[i];
            for j in 0..4 {
                acc += W2[i * 4 + j] * h[j];
            }
            out[i] = acc;
        }
        out
    }

    #[test]
    fn pinned_mlp_matches_scalar_reference() {
        let x = forward_eval(&pinned_mlp(), &Tensor::vector(vec![0.5, -0.5]).unwrap()).unwrap();
        let expect = reference_forward([0.5, -0.5]);
        for (a, b) in x.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let model = pinned_mlp();
        let z = Tensor::vector(vec![0.25, 1.5]).unwrap();
        let a = forward_eval(&model, &z).unwrap();
        let b = forward_eval(&model, &z).unwrap();
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn linear_vjp_is_transpose() {
        let w = [1.0, -2.0, 0.5, 3.0, 0.0, 1.0];
        let model = GeneratorModel::linear(
            Tensor::new(vec![3, 2], w.to_vec()).unwrap(),
            Tensor::zeros(vec![3]),
        )
        .unwrap();
        let u = Tensor::vector(vec![1.0, 2.0, -1.0]).unwrap();
        let g = vjp(&model, &Tensor::vector(vec![0.3, 0.1]).unwrap(), &u).unwrap();
        let expect = [1.0 + 2.0 * 0.5 - 0.0, -2.0 + 2.0 * 3.0 - 1.0];
        assert_eq!(g.data(), &expect);
    }

    #[test]
    fn vjp_is_linear_in_cotangent() {
        let model = pinned_mlp();
        let z = Tensor::vector(vec![0.2, -0.9]).unwrap();
        let u = Tensor::vector(vec![0.3, -1.2, 0.7]).unwrap();
        let v = Tensor::vector(vec![2.0, 0.1, -0.4]).unwrap();
        let (a, b) = (1.7, -0.6);
        let combo = Tensor::vector(
            u.data().iter().zip(v.data()).map(|(x, y)| a * x + b * y).collect(),
        )
        .unwrap();
        let lhs = vjp(&model, &z, &combo).unwrap();
        let gu = vjp(&model, &z, &u).unwrap();
        let gv = vjp(&model, &z, &v).unwrap();
        for i in 0..2 {
            let rhs = a * gu.data()[i] + b * gv.data()[i];
            assert!((lhs.data()[i] - rhs).abs() < 1e-14);
        }
    }

    #[test]
    fn vjp_rejects_wrong_cotangent() {
        let model = pinned_mlp();
        let z = Tensor::vector(vec![0.0, 0.0]).unwrap();
        assert!(vjp(&model, &z, &Tensor::zeros(vec![4])).is_err());
    }

    #[test]
    fn grad_check_linear_and_tanh() {
        let model = GeneratorModel::linear(
            Tensor::new(vec![3, 2], vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0]).unwrap(),
            Tensor::vector(vec![0.1, 0.2, 0.3]).unwrap(),
        )
        .unwrap();
        let z = Tensor::vector(vec![0.4, -1.1]).unwrap();
        assert!(grad_check(&model, &z, 5, 1).unwrap() <= 1e-10);
        let err = grad_check(&pinned_mlp(), &Tensor::vector(vec![0.5, -0.5]).unwrap(), 10, 2).unwrap();
        assert!(err <= 1e-6, "{err}");
        assert!(grad_check(&model, &z, 0, 1).is_err());
    }

    #[test]
    fn grad_check_relu_away_from_kinks() {
        let model = GeneratorModel::mlp(
            2,
            vec![dense(4, 2, &W1, &B1), Layer::Relu, dense(3, 4, &W2, &B2)],
            vec![3],
        )
        .unwrap();
        let z = Tensor::vector(vec![0.5, -0.5]).unwrap();
        let pre: Vec<f64> = (0..4)
            .map(|i| B1[i] + W1[2 * i] * 0.5 - W1[2 * i + 1] * 0.5)
            .collect();
        assert!(pre.iter().all(|p| p.abs() > 1e-3));
        let err = grad_check(&model, &z, 10, 3).unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn spiral_gradient_matches_finite_differences() {
        let model = GeneratorModel::spiral(Default::default()).unwrap();
        for z in [-2.5, -0.3, 0.0, 1.7] {
            let err = grad_check(&model, &Tensor::vector(vec![z]).unwrap(), 4, 5).unwrap();
            assert!(err <= 1e-6, "z={z}: {err}");
        }
    }
}
