use gan_audit::ais::{estimate_ll, estimate_ll_one, hmc_step, AisConfig, Phase, StepSizeAdapter};
use gan_audit::analysis::patch_cv;
use gan_audit::density::{ppca_entropy, ppca_loglik};
use gan_audit::inference::{classify_by_projection, LabeledDataset, L2};
use gan_audit::models::{ppca_fit, sample_dataset, sample_prior, Layer};
use gan_audit::projection::{project_sample, recon_error_set, InversionConfig};
use gan_audit::rng::{derive_seed, rng_for};
use gan_audit::typicality::{bootstrap_epsilon, estimate_entropy, typicality_test};
use gan_audit::{GeneratorModel, Tensor};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

fn random_linear(d: usize, k: usize, scale: f64, seed: u64) -> GeneratorModel {
    let mut rng = rng_for(seed, &[]);
    let w: Vec<f64> = (0..d * k).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    let mu: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
    GeneratorModel::linear(Tensor::new(vec![d, k], w).unwrap(), Tensor::vector(mu).unwrap()).unwrap()
}

fn covariance(model: &GeneratorModel, sigma2: f64) -> DMatrix<f64> {
    let (w, _) = model.linear_params().unwrap();
    let (d, k) = (w.shape()[0], w.shape()[1]);
    let w = DMatrix::from_row_slice(d, k, w.data());
    &w * w.transpose() + DMatrix::identity(d, d) * sigma2
}

#[test]
fn ppca_fit_recovers_generating_covariance() {
    // loadings of scale 0.3: signal a few times the noise, where the sampling
    // error of the fitted covariance stays well inside the bound
    let truth = random_linear(8, 2, 0.3, 1);
    let data = sample_dataset(&truth, 0.05, 20_000, 2).unwrap();
    let fit = ppca_fit(&data, 2).unwrap();
    let err = (covariance(&fit.model, fit.sigma2) - covariance(&truth, 0.05)).norm();
    assert!(err <= 0.05, "frobenius error {err}");
}

#[test]
fn ppca_likelihood_grows_with_rank() {
    let truth = random_linear(10, 3, 0.8, 3);
    let data = sample_dataset(&truth, 0.1, 400, 4).unwrap();
    let mut last = f64::NEG_INFINITY;
    for k in 1..6 {
        let fit = ppca_fit(&data, k).unwrap();
        let total: f64 = data.iter().map(|x| ppca_loglik(&fit.model, fit.sigma2, x).unwrap()).sum();
        assert!(total >= last - 1e-9, "k={k}: {total} < {last}");
        last = total;
    }
}

#[test]
fn linear_outputs_lie_in_the_column_space() {
    let model = random_linear(6, 2, 1.0, 5);
    let (w, mu) = model.linear_params().unwrap();
    let wm = DMatrix::from_row_slice(6, 2, w.data());
    let svd = wm.clone().svd(true, true);
    for z in sample_prior(model.prior(), 20, 6).unwrap() {
        let x = model.forward(&z).unwrap();
        let r = DVector::from_iterator(6, x.data().iter().zip(mu.data()).map(|(a, b)| a - b));
        let coef = svd.solve(&r, 1e-12).unwrap();
        assert!((&r - &wm * coef).norm() <= 1e-10);
    }
}

fn normal_phase(z: &[f64]) -> Option<Phase<()>> {
    Some(Phase {
        position: z.to_vec(),
        log_density: -0.5 * z.iter().map(|v| v * v).sum::<f64>(),
        grad: z.iter().map(|v| -v).collect(),
        aux: (),
    })
}

#[test]
fn hmc_samples_a_standard_normal() {
    // fixed step near the adapted value; thinning by 5 leaves nearly independent draws
    let mut rng = rng_for(7, &[]);
    let mut state = normal_phase(&[0.0, 0.0]).unwrap();
    let mut xs = Vec::new();
    for i in 0..100_000 {
        state = hmc_step(&state, &mut normal_phase, 1.3, 10, &mut rng).state;
        if i % 5 == 0 {
            xs.push(state.position[0]);
        }
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    assert!(m.abs() <= 4.0 / n.sqrt(), "{m}");
    assert!((v - 1.0).abs() <= 4.0 * (2.0 / n).sqrt(), "{v}");
}

#[test]
fn adapted_step_settles_near_target_acceptance() {
    let mut rng = rng_for(8, &[]);
    let mut state = normal_phase(&[0.5; 3]).unwrap();
    let mut adapter = StepSizeAdapter::new(0.05, 0.9, 0.65);
    let mut hits = 0;
    for _ in 0..20_000 {
        let out = hmc_step(&state, &mut normal_phase, adapter.step, 10, &mut rng);
        adapter.update(out.accepted);
        hits += usize::from(out.accepted);
        state = out.state;
    }
    let rate = hits as f64 / 20_000.0;
    assert!((rate - 0.65).abs() <= 0.05, "{rate}");
}

#[test]
fn ais_matches_closed_form_on_ppca_batch() {
    let model = random_linear(16, 4, 0.1, 9);
    let xs = sample_dataset(&model, 0.05, 20, 10).unwrap();
    let est = estimate_ll(&model, &xs, 0.05, &AisConfig::default(), 11).unwrap();
    let dev: f64 = est
        .iter()
        .zip(&xs)
        .map(|(e, x)| (e.log_likelihood - ppca_loglik(&model, 0.05, x).unwrap()).abs())
        .sum::<f64>()
        / (20.0 * 16.0);
    assert!(dev <= 0.05, "{dev}");
    for e in &est {
        assert_eq!(e.trace.len(), 500);
        let lo = e.chain_log_weights.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = e.chain_log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo <= e.log_likelihood && e.log_likelihood <= hi);
    }
}

#[test]
fn short_runs_underestimate_on_average() {
    let model = random_linear(16, 4, 0.5, 12);
    let xs = sample_dataset(&model, 0.02, 20, 13).unwrap();
    let cfg = AisConfig::default().with_steps(20);
    let below = xs
        .iter()
        .enumerate()
        .filter(|(i, x)| {
            let oracle = ppca_loglik(&model, 0.02, x).unwrap();
            let mean = (0..100u64)
                .map(|r| estimate_ll_one(&model, x, *i, 0.02, &cfg, derive_seed(14, &[r])).unwrap().log_likelihood)
                .sum::<f64>()
                / 100.0;
            mean <= oracle
        })
        .count();
    assert!(below >= 19, "{below}/20");
}

#[test]
fn ppca_entropy_from_ais() {
    let model = random_linear(16, 4, 0.1, 15);
    let est = estimate_entropy(&model, 0.05, 200, &AisConfig::default(), 16).unwrap();
    let exact = ppca_entropy(&model, 0.05).unwrap();
    assert!((est.entropy - exact).abs() / 16.0 <= 0.1, "{} vs {exact}", est.entropy);
}

#[test]
fn bootstrap_tolerance_self_calibrates() {
    let mut rng = rng_for(17, &[]);
    let pool: Vec<f64> = (0..2000).map(|_| -10.0 + 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let entropy = -pool.iter().sum::<f64>() / pool.len() as f64;
    let eps = bootstrap_epsilon(&pool, 50, 0.95, 10_000, 18).unwrap();
    let members = (0..400)
        .filter(|_| {
            let group: Vec<f64> = (0..50).map(|_| pool[rng.random_range(0..pool.len())]).collect();
            typicality_test(&group, entropy, eps).unwrap().0
        })
        .count();
    let rate = members as f64 / 400.0;
    assert!((rate - 0.95).abs() <= 0.05, "{rate}");
}

fn mlp() -> GeneratorModel {
    GeneratorModel::random_mlp(4, &[32], Layer::Tanh, None, vec![16], 19).unwrap()
}

#[test]
fn generated_samples_are_recovered() {
    let model = mlp();
    let xs: Vec<Tensor> = sample_prior(model.prior(), 100, 20)
        .unwrap()
        .iter()
        .map(|z| model.forward(z).unwrap())
        .collect();
    let errs = recon_error_set(&model, &xs, &InversionConfig::default(), 21).unwrap();
    let ok = errs.iter().filter(|(_, e)| *e <= 1e-3).count();
    assert!(ok >= 95, "{ok}/100");
    assert!(errs.iter().enumerate().all(|(i, (id, _))| i == *id));
}

#[test]
fn noisy_samples_sit_about_sigma_root_d_away() {
    let model = mlp();
    let sigma = 0.05;
    let xs = sample_dataset(&model, sigma * sigma, 40, 22).unwrap();
    let errs = recon_error_set(&model, &xs, &InversionConfig::default(), 23).unwrap();
    let mean = errs.iter().map(|(_, e)| e).sum::<f64>() / errs.len() as f64;
    // the fit absorbs roughly latent_dim of the 16 noise directions
    let expect = sigma * ((16 - 4) as f64).sqrt();
    assert!((mean - expect).abs() <= 0.25 * expect, "{mean} vs {expect}");
}

#[test]
fn duplicate_inputs_project_identically() {
    let model = mlp();
    let x = model.forward(&Tensor::vector(vec![0.1, 0.2, -0.3, 0.4]).unwrap()).unwrap();
    let cfg = InversionConfig {
        iterations: 200,
        ..Default::default()
    };
    let a = project_sample(&model, &x, 5, &cfg, 24).unwrap();
    let b = project_sample(&model, &x, 5, &cfg, 24).unwrap();
    assert_eq!(a.error.to_bits(), b.error.to_bits());
    let set = recon_error_set(&model, &[x.clone(), x], &cfg, 24).unwrap();
    assert!(set[0].1 <= 1e-3 && set[1].1 <= 1e-3);
}

fn subspace_residual(model: &GeneratorModel, x: &Tensor) -> f64 {
    let (w, mu) = model.linear_params().unwrap();
    let (d, k) = (w.shape()[0], w.shape()[1]);
    let wm = DMatrix::from_row_slice(d, k, w.data());
    let r = DVector::from_iterator(d, x.data().iter().zip(mu.data()).map(|(a, b)| a - b));
    let coef = wm.clone().svd(true, true).solve(&r, 1e-12).unwrap();
    (&r - &wm * coef).norm()
}

#[test]
fn projection_classifier_matches_subspace_residuals() {
    let a = random_linear(3, 1, 1.0, 25);
    let b = random_linear(3, 1, 1.0, 26);
    let models = [a, b];
    let cfg = InversionConfig {
        init_pool: 50,
        ..Default::default()
    };
    let mut rng = rng_for(27, &[]);
    for i in 0..100 {
        let x = Tensor::vector((0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let (ra, rb) = (subspace_residual(&models[0], &x), subspace_residual(&models[1], &x));
        if (ra - rb).abs() < 1e-6 {
            continue;
        }
        let d = classify_by_projection(&models, &x, &cfg, &L2, i).unwrap();
        assert_eq!(d.class, usize::from(rb < ra), "point {i}: {ra} vs {rb}");
    }
}

#[test]
fn patch_cv_rises_with_noise() {
    let mut last = -1.0;
    for amp in [0.0, 0.02, 0.05, 0.1, 0.2] {
        let mut rng = rng_for(28, &[]);
        let data = (0..32 * 32 * 3)
            .map(|_| (0.5 + amp * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0))
            .collect();
        let cv = patch_cv(&Tensor::new(vec![32, 32, 3], data).unwrap(), 8).unwrap();
        assert!(cv > last, "amp {amp}: {cv} <= {last}");
        last = cv;
    }
}

#[test]
fn two_class_dataset_labels_round_trip() {
    let a = random_linear(4, 1, 1.0, 29);
    let xs = sample_dataset(&a, 0.1, 10, 30).unwrap();
    let data = LabeledDataset::new(xs, vec![1; 10], 2, "test").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.gten");
    gan_audit::io::save_dataset(&path, &data).unwrap();
    assert_eq!(gan_audit::io::load_dataset(&path).unwrap(), data);
}
