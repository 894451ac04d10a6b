//! Synthetic datasets with known generating distributions.

use gan_audit::inference::LabeledDataset;
use gan_audit::models::{sample_dataset, SpiralParams};
use gan_audit::rng::{derive_seed, rng_for};
use gan_audit::{GeneratorModel, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{SynthConfig, SynthKind};
use crate::error::{CliError, CliResult, Context};

const SYNTH_STREAM: u64 = 16;

fn check(cfg: &SynthConfig) -> CliResult<()> {
    if cfg.n == 0 {
        return Err(CliError::config("synth.n", "must be at least 1"));
    }
    if cfg.shape.is_empty() || cfg.shape.contains(&0) {
        return Err(CliError::config("synth.shape", format!("invalid shape {:?}", cfg.shape)));
    }
    if !(cfg.sigma2.is_finite() && cfg.sigma2 >= 0.0) {
        return Err(CliError::config("synth.sigma2", "must be finite and >= 0"));
    }
    if !cfg.loading_scale.is_finite() || cfg.loading_scale < 0.0 {
        return Err(CliError::config("synth.loading_scale", "must be finite and >= 0"));
    }
    if !cfg.class_mean.is_finite() || !cfg.shift.is_finite() {
        return Err(CliError::config("synth", "class_mean and shift must be finite"));
    }
    if let Some(v) = cfg.value {
        if !v.is_finite() {
            return Err(CliError::config("synth.value", "must be finite"));
        }
    }
    Ok(())
}

fn ppca_component(cfg: &SynthConfig, class: u64, sign: f64, seed: u64) -> CliResult<GeneratorModel> {
    let dim: usize = cfg.shape.iter().product();
    if cfg.latent_dim == 0 || cfg.latent_dim >= dim {
        return Err(CliError::config(
            "synth.latent_dim",
            format!("must be in 1..{dim}, got {}", cfg.latent_dim),
        ));
    }
    let mut rng = rng_for(seed, &[SYNTH_STREAM, 100 + class]);
    let weight = (0..dim * cfg.latent_dim)
        .map(|_| cfg.loading_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let model = GeneratorModel::linear(
        Tensor::new(vec![dim, cfg.latent_dim], weight)?,
        Tensor::filled(cfg.shape.clone(), sign * cfg.class_mean),
    )?;
    Ok(model.with_id(format!("class-{class}")))
}

/// Builds the dataset described by `cfg`; identical for identical seeds.
pub fn make_synthetic(cfg: &SynthConfig, group: &str, seed: u64) -> CliResult<LabeledDataset> {
    check(cfg)?;
    let data_seed = |tag: u64| derive_seed(seed, &[SYNTH_STREAM, tag]);
    let (samples, labels, classes) = match cfg.kind {
        SynthKind::TwoClassPpca => {
            let models = [
                ppca_component(cfg, 0, 1.0, seed)?,
                ppca_component(cfg, 1, -1.0, seed)?,
            ];
            let n1 = cfg.n / 2;
            let n0 = cfg.n - n1;
            let a = sample_dataset(&models[0], cfg.sigma2, n0, data_seed(0))?;
            let b = sample_dataset(&models[1], cfg.sigma2, n1, data_seed(1))?;
            let mut samples = Vec::with_capacity(cfg.n);
            let mut labels = Vec::with_capacity(cfg.n);
            let (mut a, mut b) = (a.into_iter(), b.into_iter());
            for i in 0..cfg.n {
                let (x, l) = if i % 2 == 0 { (a.next(), 0) } else { (b.next(), 1) };
                samples.push(x.expect("class sizes match the interleaving"));
                labels.push(l);
            }
            (samples, labels, 2)
        }
        SynthKind::Spiral => {
            let model = GeneratorModel::spiral(SpiralParams::default())?;
            (sample_dataset(&model, cfg.sigma2, cfg.n, data_seed(0))?, vec![0; cfg.n], 1)
        }
        SynthKind::SingleColor => {
            let samples = (0..cfg.n)
                .map(|i| {
                    let v = match cfg.value {
                        Some(v) => v,
                        None => rng_for(seed, &[SYNTH_STREAM, i as u64]).random::<f64>(),
                    };
                    Tensor::filled(cfg.shape.clone(), v)
                })
                .collect();
            (samples, vec![0; cfg.n], 1)
        }
        SynthKind::ShiftedCluster => {
            let centre = Tensor::filled(cfg.shape.clone(), cfg.value.unwrap_or(0.5) + cfg.shift);
            let model = GeneratorModel::constant(centre, 1)?;
            (sample_dataset(&model, cfg.sigma2, cfg.n, data_seed(0))?, vec![0; cfg.n], 1)
        }
    };
    LabeledDataset::new(samples, labels, classes, group).field("synth")
}
