//! Typical-set membership: entropy from model samples, bootstrap tolerance,
//! and per-group verdicts.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ais::{estimate_ll, AisConfig};
use crate::density::bits_per_dim;
use crate::error::{Error, Result};
use crate::models::{sample_dataset, GeneratorModel};
use crate::rng::{derive_seed, rng_for, stream};
use crate::Tensor;

pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const DEFAULT_GROUP_SIZE: usize = 50;
pub const DEFAULT_LEVEL: f64 = 0.95;

/// `H = -mean log p(x_i)` over fresh model samples, keeping the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub entropy: f64,
    pub lls: Vec<f64>,
    pub ais: AisConfig,
    pub sigma2: f64,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn estimate_entropy(
    model: &GeneratorModel,
    sigma2: f64,
    n: usize,
    cfg: &AisConfig,
    seed: u64,
) -> Result<EntropyEstimate> {
    if n < 2 {
        return Err(Error::invalid("n", "need at least two generated samples"));
    }
    let root = derive_seed(seed, &[stream::ENTROPY]);
    let xs = sample_dataset(model, sigma2, n, root)?;
    let lls: Vec<f64> = estimate_ll(model, &xs, sigma2, cfg, root)?
        .into_iter()
        .map(|e| e.log_likelihood)
        .collect();
    Ok(EntropyEstimate {
        entropy: -mean(&lls),
        lls,
        ais: *cfg,
        sigma2,
    })
}

/// The `level` quantile of `|resample mean - pool mean|` over `resamples`
/// bootstrap draws of size `group_size`.
///
/// The quantile is the smallest order statistic with at least `level` of the
/// resamples at or below it.
pub fn bootstrap_epsilon(
    lls: &[f64],
    group_size: usize,
    level: f64,
    resamples: usize,
    seed: u64,
) -> Result<f64> {
    if group_size == 0 || lls.len() < group_size {
        return Err(Error::invalid(
            "group_size",
            format!("needs 1 <= N <= {} generated samples, got {group_size}", lls.len()),
        ));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("level", "must lie strictly between 0 and 1"));
    }
    if resamples == 0 {
        return Err(Error::invalid("resamples", "must be at least 1"));
    }
    let centre = mean(lls);
    let mut devs: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_for(seed, &[stream::BOOTSTRAP, b as u64]);
            let sum: f64 = (0..group_size)
                .map(|_| lls[rng.random_range(0..lls.len())])
                .sum();
            (sum / group_size as f64 - centre).abs()
        })
        .collect();
    devs.sort_by(f64::total_cmp);
    let rank = ((level * resamples as f64).ceil() as usize).clamp(1, resamples);
    Ok(devs[rank - 1])
}

/// Membership flag and margin `|mean + H| - eps`.
pub fn typicality_test(group_lls: &[f64], entropy: f64, epsilon: f64) -> Result<(bool, f64)> {
    if group_lls.is_empty() {
        return Err(Error::invalid("group_lls", "empty group"));
    }
    let margin = (mean(group_lls) + entropy).abs() - epsilon;
    Ok((margin <= 0.0, margin))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub name: String,
    pub n: usize,
    pub mean_ll: f64,
    pub mean_ll_bits_per_dim: f64,
    pub deviation: f64,
    pub margin: f64,
    pub member: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypicalityReport {
    pub entropy: f64,
    pub epsilon: f64,
    pub level: f64,
    pub group_size: usize,
    pub resamples: usize,
    pub pool_size: usize,
    pub dims: usize,
    pub ais: AisConfig,
    pub groups: Vec<GroupEntry>,
}

/// Collects group verdicts against one entropy estimate, refusing group
/// likelihoods produced under a different AIS configuration.
#[derive(Debug, Clone)]
pub struct TypicalityBuilder {
    estimate: EntropyEstimate,
    report: TypicalityReport,
}

impl TypicalityBuilder {
    pub fn new(
        estimate: EntropyEstimate,
        dims: usize,
        group_size: usize,
        level: f64,
        resamples: usize,
        seed: u64,
    ) -> Result<Self> {
        let epsilon = bootstrap_epsilon(&estimate.lls, group_size, level, resamples, seed)?;
        Ok(Self {
            report: TypicalityReport {
                entropy: estimate.entropy,
                epsilon,
                level,
                group_size,
                resamples,
                pool_size: estimate.lls.len(),
                dims,
                ais: estimate.ais,
                groups: Vec::new(),
            },
            estimate,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.report.epsilon
    }

    pub fn add_group(&mut self, name: impl Into<String>, lls: &[f64], ais: &AisConfig) -> Result<()> {
        if *ais != self.estimate.ais {
            return Err(Error::invalid(
                "ais",
                "group likelihoods must use the same AIS configuration as the entropy estimate",
            ));
        }
        let (member, margin) = typicality_test(lls, self.report.entropy, self.report.epsilon)?;
        let mean_ll = mean(lls);
        self.report.groups.push(GroupEntry {
            name: name.into(),
            n: lls.len(),
            mean_ll,
            mean_ll_bits_per_dim: bits_per_dim(mean_ll, self.report.dims)?,
            deviation: (mean_ll + self.report.entropy).abs(),
            margin,
            member,
        });
        Ok(())
    }

    /// Estimates the group's likelihoods with the entropy's own AIS setup.
    pub fn add_samples(
        &mut self,
        name: impl Into<String>,
        model: &GeneratorModel,
        xs: &[Tensor],
        seed: u64,
    ) -> Result<Vec<f64>> {
        let ais = self.estimate.ais;
        let lls: Vec<f64> = estimate_ll(model, xs, self.estimate.sigma2, &ais, seed)?
            .into_iter()
            .map(|e| e.log_likelihood)
            .collect();
        self.add_group(name, &lls, &ais)?;
        Ok(lls)
    }

    pub fn finish(self) -> TypicalityReport {
        self.report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::log_obs;

    fn constant(g: Vec<f64>) -> GeneratorModel {
        GeneratorModel::constant(Tensor::vector(g).unwrap(), 1).unwrap()
    }

    #[test]
    fn constant_model_entropy_matches_gaussian() {
        let est = estimate_entropy(&constant(vec![0.2, -0.4]), 1.0, 500, &AisConfig::default().with_steps(3), 4)
            .unwrap();
        let expect = (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        let m = mean(&est.lls);
        let sd = (est.lls.iter().map(|l| (l - m).powi(2)).sum::<f64>() / 499.0).sqrt();
        let se = sd / (500f64).sqrt();
        assert!((est.entropy - expect).abs() <= 3.0 * se, "{} vs {expect}", est.entropy);
        let again = estimate_entropy(&constant(vec![0.2, -0.4]), 1.0, 500, &AisConfig::default().with_steps(3), 4)
            .unwrap();
        assert_eq!(est.entropy.to_bits(), again.entropy.to_bits());
    }

    #[test]
    fn epsilon_edge_cases() {
        assert_eq!(bootstrap_epsilon(&[1.5; 60], 50, 0.95, 200, 1).unwrap(), 0.0);
        assert!(bootstrap_epsilon(&[1.0; 10], 50, 0.95, 200, 1).is_err());
        assert!(bootstrap_epsilon(&[1.0; 60], 50, 1.0, 200, 1).is_err());
        let pool: Vec<f64> = (0..300).map(|i| (i as f64 * 0.731).sin()).collect();
        let mut last = 0.0;
        for level in [0.5, 0.8, 0.9, 0.95, 0.99] {
            let e = bootstrap_epsilon(&pool, 50, level, 2000, 7).unwrap();
            assert!(e >= last);
            last = e;
        }
    }

    #[test]
    fn pool_is_a_member_of_itself() {
        let pool: Vec<f64> = (0..100).map(|i| -3.0 + (i as f64 * 0.3).cos()).collect();
        let h = -mean(&pool);
        let (member, margin) = typicality_test(&pool, h, 0.25).unwrap();
        assert!(member);
        assert_eq!(margin, -0.25);
        assert!(typicality_test(&pool, h + 100.0, f64::INFINITY).unwrap().0);
        assert!(typicality_test(&[], h, 1.0).is_err());
    }

    #[test]
    fn shifted_constant_group_is_rejected() {
        let a = constant(vec![0.0; 4]);
        let b = constant(vec![2.0; 4]);
        let cfg = AisConfig::default().with_steps(2);
        let est = estimate_entropy(&a, 0.5, 400, &cfg, 1).unwrap();
        let mut builder = TypicalityBuilder::new(est, 4, 50, 0.95, 2000, 2).unwrap();
        let xs = sample_dataset(&b, 0.5, 50, 3).unwrap();
        let lls: Vec<f64> = xs
            .iter()
            .map(|x| log_obs(x, &Tensor::zeros(vec![4]), 0.5).unwrap())
            .collect();
        builder.add_group("shifted", &lls, &cfg).unwrap();
        assert!(builder.add_group("other-config", &lls, &cfg.with_steps(3)).is_err());
        let report = builder.finish();
        assert!(!report.groups[0].member);
        assert!(report.groups[0].margin > 0.0);
    }
}
