//! One function per subcommand. Each reads its inputs from the resolved
//! config, writes its reports through `Outputs`, and records derived values.

use std::path::PathBuf;

use gan_audit::ais::{estimate_ll_one, LLEstimate};
use gan_audit::analysis::{patch_cv, pearson};
use gan_audit::density::{bits_per_dim, sigma2_from_reconstruction};
use gan_audit::inference::{
    classify_dataset_by_knn1, classify_dataset_by_ll, classify_dataset_by_projection, knn1_outlier_score,
    ll_outlier_score, nearest_neighbor, roc_auc, LabeledDataset, Method, L2,
};
use gan_audit::io::{load_dataset, load_model, model_to_manifest, save_dataset, save_model, stack, write_tensor};
use gan_audit::models::{ppca_fit, sample_dataset};
use gan_audit::projection::{project_sample, recon_error_set};
use gan_audit::rng::derive_seed;
use gan_audit::typicality::{estimate_entropy, TypicalityBuilder, TypicalityReport};
use gan_audit::{GeneratorModel, Tensor};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{Format, RunConfig, Sigma2};
use crate::error::{CliError, CliResult, Context};
use crate::plot::{histogram_svg, read_groups, Band};
use crate::report::{num, Outputs};
use crate::synth::make_synthetic;

const GROUP_STREAM: u64 = 17;
const ESTIMATE_STREAM: u64 = 18;

pub fn run(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    match cfg.command.as_str() {
        "synth" => synth(cfg, out),
        "fit-ppca" => fit_ppca(cfg, out),
        "sample" => sample(cfg, out),
        "project" => project(cfg, out),
        "ll" => ll(cfg, out),
        "classify" => classify(cfg, out),
        "outlier" => outlier(cfg, out),
        "typicality" => typicality(cfg, out),
        "cv" => cv(cfg, out),
        "plot" => plot(cfg, out),
        other => Err(CliError::config("command", format!("unknown command {other:?}"))),
    }
}

fn load_models(cfg: &RunConfig, min: usize, max: Option<usize>) -> CliResult<Vec<GeneratorModel>> {
    let n = cfg.models.len();
    if n < min || max.is_some_and(|m| n > m) {
        let want = match max {
            Some(m) if m == min => format!("exactly {min}"),
            Some(m) => format!("{min} to {m}"),
            None => format!("at least {min}"),
        };
        return Err(CliError::config("models", format!("{} needs {want} model(s), got {n}", cfg.command)));
    }
    cfg.models.iter().map(|p| load_model(p).field("models")).collect()
}

fn load_data(cfg: &RunConfig, min: usize) -> CliResult<Vec<LabeledDataset>> {
    if cfg.data.len() < min {
        return Err(CliError::config(
            "data",
            format!("{} needs at least {min} dataset(s), got {}", cfg.command, cfg.data.len()),
        ));
    }
    cfg.data.iter().map(|p| load_dataset(p).field("data")).collect()
}

fn load_train(cfg: &RunConfig, why: &str) -> CliResult<LabeledDataset> {
    let path = cfg
        .train
        .as_ref()
        .ok_or_else(|| CliError::config("train", format!("a training set is required {why}")))?;
    load_dataset(path).field("train")
}

fn check_shapes(model: &GeneratorModel, sets: &[LabeledDataset], field: &str) -> CliResult<()> {
    for set in sets {
        if let Some(x) = set.samples.first() {
            if x.shape() != model.output_shape() {
                return Err(CliError::input(
                    field,
                    format!(
                        "{} samples have shape {:?}, model {:?} produces {:?}",
                        set.group,
                        x.shape(),
                        model.id(),
                        model.output_shape()
                    ),
                ));
            }
        }
    }
    Ok(())
}

struct Item<'a> {
    id: usize,
    group: &'a str,
    label: usize,
    x: &'a Tensor,
}

/// All samples of all datasets; ids run on across files.
fn flatten(sets: &[LabeledDataset]) -> Vec<Item<'_>> {
    sets.iter()
        .flat_map(|s| s.samples.iter().zip(&s.labels).map(move |(x, &l)| (s.group.as_str(), l, x)))
        .enumerate()
        .map(|(id, (group, label, x))| Item { id, group, label, x })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Observation variance from the config, estimating it from training
/// reconstructions when asked. With several models, each training sample is
/// projected onto the model of its label.
fn resolve_sigma2(cfg: &RunConfig, models: &[GeneratorModel], out: &mut Outputs) -> CliResult<f64> {
    let sigma2 = match cfg.sigma2 {
        None => {
            return Err(CliError::config("sigma2", "required: a positive number or \"estimate\""));
        }
        Some(Sigma2::Value(v)) => {
            out.resolve("sigma2_source", "config");
            v
        }
        Some(Sigma2::Estimate) => {
            let train = load_train(cfg, "to estimate sigma2")?;
            check_shapes(&models[0], std::slice::from_ref(&train), "train")?;
            let mut errors = Vec::with_capacity(train.len());
            for (c, model) in models.iter().enumerate() {
                let xs: Vec<Tensor> = if models.len() == 1 {
                    train.samples.clone()
                } else {
                    train
                        .samples
                        .iter()
                        .zip(&train.labels)
                        .filter(|(_, &l)| l == c)
                        .map(|(x, _)| x.clone())
                        .collect()
                };
                if xs.is_empty() {
                    return Err(CliError::input("train", format!("no training samples for class {c}")));
                }
                let seed = derive_seed(cfg.seed, &[ESTIMATE_STREAM, c as u64]);
                errors.extend(recon_error_set(model, &xs, &cfg.inversion, seed)?.into_iter().map(|(_, e)| e));
            }
            out.resolve("sigma2_source", "reconstruction");
            sigma2_from_reconstruction(&errors, models[0].output_dim()).field("train")?
        }
    };
    out.resolve("sigma2", sigma2);
    Ok(sigma2)
}

fn synth(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let data = make_synthetic(&cfg.synth, out.stem(), cfg.seed)?;
    let path = out.path(".gten");
    out.note_file(format!("{}.labels.json", out.stem()));
    save_dataset(&path, &data)?;
    out.resolve("samples", data.len());
    out.resolve("shape", data.samples[0].shape());
    Ok(())
}

fn fit_ppca(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let k = cfg.k.ok_or_else(|| CliError::config("k", "fit-ppca needs the latent dimension k"))?;
    let sets = load_data(cfg, 1)?;
    let xs: Vec<Tensor> = sets
        .iter()
        .flat_map(|s| s.samples.iter().zip(&s.labels))
        .filter(|(_, &l)| cfg.class.is_none_or(|c| c == l))
        .map(|(x, _)| x.clone())
        .collect();
    if xs.is_empty() {
        return Err(CliError::input("class", format!("no samples with class {:?}", cfg.class)));
    }
    let fit = ppca_fit(&xs, k).field("data")?;
    let model = fit.model.with_id(out.stem().to_string());
    let path = out.path(".model.json");
    let file_stem = format!("{}.model", out.stem());
    for w in model_to_manifest(&model, &file_stem)?.0.weights {
        out.note_file(w);
    }
    save_model(&model, &path)?;
    out.resolve("sigma2", fit.sigma2);
    let summary = json!({
        "model": path.file_name().map(|f| f.to_string_lossy().into_owned()),
        "n": xs.len(),
        "k": k,
        "dims": model.output_dim(),
        "class": cfg.class,
        "sigma2": fit.sigma2,
        "eigenvalues": fit.eigenvalues,
        "degenerate": fit.degenerate,
    });
    out.json(cfg, ".json", &summary)
}

fn sample(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let models = load_models(cfg, 1, Some(1))?;
    let sigma2 = match cfg.sigma2 {
        None => 0.0,
        Some(Sigma2::Value(v)) => v,
        Some(Sigma2::Estimate) => {
            return Err(CliError::config("sigma2", "sample needs an explicit noise variance"));
        }
    };
    if cfg.n == 0 {
        return Err(CliError::config("n", "must be at least 1"));
    }
    let xs = sample_dataset(&models[0], sigma2, cfg.n, cfg.seed).field("sigma2")?;
    let data = LabeledDataset::new(xs, vec![0; cfg.n], 1, out.stem())?;
    let path = out.path(".gten");
    out.note_file(format!("{}.labels.json", out.stem()));
    save_dataset(&path, &data)?;
    out.resolve("sigma2", sigma2);
    Ok(())
}

fn project(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let models = load_models(cfg, 1, Some(1))?;
    let model = &models[0];
    let sets = load_data(cfg, 1)?;
    check_shapes(model, &sets, "data")?;
    let items = flatten(&sets);
    let results = items
        .par_iter()
        .map(|it| project_sample(model, it.x, it.id, &cfg.inversion, cfg.seed))
        .collect::<Result<Vec<_>, _>>()?;

    let rows: Vec<Vec<String>> = items
        .iter()
        .zip(&results)
        .map(|(it, r)| {
            vec![
                it.id.to_string(),
                it.group.to_string(),
                it.label.to_string(),
                num(r.error),
                r.winner.to_string(),
            ]
        })
        .collect();
    out.csv(cfg, ".csv", &["sample_id", "group", "label", "error", "winner_restart"], &rows)?;
    let latents: Vec<Tensor> = results.iter().map(|r| r.z_star.clone()).collect();
    write_tensor(out.path(".latents.gten"), &stack(&latents)?)?;

    let dims = model.output_dim();
    let groups: Vec<_> = sets
        .iter()
        .map(|s| {
            let errs: Vec<f64> = items
                .iter()
                .zip(&results)
                .filter(|(it, _)| it.group == s.group)
                .map(|(_, r)| r.error)
                .collect();
            json!({
                "group": s.group,
                "n": errs.len(),
                "mean_error": mean(&errs),
                "median_error": median(&errs),
                "implied_sigma2": sigma2_from_reconstruction(&errs, dims).ok(),
            })
        })
        .collect();
    out.json(cfg, ".json", &json!({ "model": model.id(), "dims": dims, "groups": groups }))
}

fn ll_rows(items: &[Item<'_>], ests: &[LLEstimate], dims: usize) -> CliResult<Vec<Vec<String>>> {
    items
        .iter()
        .zip(ests)
        .map(|(it, e)| {
            Ok(vec![
                it.id.to_string(),
                it.group.to_string(),
                num(e.log_likelihood),
                num(e.bits_per_dim(dims)?),
                num(e.chain_spread()),
                num(e.mean_acceptance),
                e.divergences.to_string(),
                e.flagged.to_string(),
            ])
        })
        .collect()
}

const LL_HEADER: [&str; 8] = [
    "sample_id",
    "group",
    "ll_nats",
    "ll_bits_per_dim",
    "chain_spread",
    "mean_acceptance",
    "divergences",
    "flagged",
];

fn ll(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let models = load_models(cfg, 1, Some(1))?;
    let model = &models[0];
    let sets = load_data(cfg, 1)?;
    check_shapes(model, &sets, "data")?;
    let sigma2 = resolve_sigma2(cfg, &models, out)?;
    let items = flatten(&sets);
    let ests = items
        .par_iter()
        .map(|it| estimate_ll_one(model, it.x, it.id, sigma2, &cfg.ais, cfg.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let dims = model.output_dim();
    out.csv(cfg, ".csv", &LL_HEADER, &ll_rows(&items, &ests, dims)?)?;

    if cfg.trace {
        let rows: Vec<Vec<String>> = items
            .iter()
            .zip(&ests)
            .flat_map(|(it, e)| {
                e.trace.iter().zip(&e.acceptance_history).enumerate().map(move |(t, (ll, acc))| {
                    vec![it.id.to_string(), (t + 1).to_string(), num(*ll), num(*acc)]
                })
            })
            .collect();
        out.csv(cfg, ".trace.csv", &["sample_id", "level", "ll_nats", "acceptance"], &rows)?;
    }

    let groups = sets
        .iter()
        .map(|s| {
            let lls: Vec<f64> = items
                .iter()
                .zip(&ests)
                .filter(|(it, _)| it.group == s.group)
                .map(|(_, e)| e.log_likelihood)
                .collect();
            let m = mean(&lls);
            Ok(json!({
                "group": s.group,
                "n": lls.len(),
                "mean_ll_nats": m,
                "mean_ll_bits_per_dim": bits_per_dim(m, dims)?,
            }))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let flagged = ests.iter().filter(|e| e.flagged).count();
    if flagged > 0 {
        log::warn!("{flagged} sample(s) had chains with excessive divergences");
    }
    out.json(
        cfg,
        ".json",
        &json!({ "model": model.id(), "sigma2": sigma2, "dims": dims, "flagged": flagged, "groups": groups }),
    )
}

/// AUC of "looks like class 1" scores, class 0 as the negatives.
fn two_class_auc(truth: &[usize], class1_score: &[f64]) -> Option<f64> {
    let neg: Vec<f64> = truth.iter().zip(class1_score).filter(|(&t, _)| t == 0).map(|(_, &s)| s).collect();
    let pos: Vec<f64> = truth.iter().zip(class1_score).filter(|(&t, _)| t == 1).map(|(_, &s)| s).collect();
    roc_auc(&neg, &pos).ok()
}

fn classify(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let sets = load_data(cfg, 1)?;
    if sets.len() != 1 {
        return Err(CliError::config("data", "classify takes exactly one labelled test set"));
    }
    let test = &sets[0];
    let (report, scores) = match cfg.method {
        Method::Ll | Method::Projection => {
            let models = load_models(cfg, 2, None)?;
            check_shapes(&models[0], &sets, "data")?;
            for m in &models[1..] {
                if m.output_shape() != models[0].output_shape() {
                    return Err(CliError::input("models", "all class models must share one output shape"));
                }
            }
            if test.num_classes > models.len() {
                return Err(CliError::input(
                    "data",
                    format!("{} classes but only {} models", test.num_classes, models.len()),
                ));
            }
            let (report, decisions) = if cfg.method == Method::Ll {
                let sigma2 = resolve_sigma2(cfg, &models, out)?;
                classify_dataset_by_ll(&models, test, sigma2, &cfg.ais, cfg.seed)?
            } else {
                classify_dataset_by_projection(&models, test, &cfg.inversion, &L2, cfg.seed)?
            };
            (report, decisions.into_iter().map(|d| d.scores).collect::<Vec<_>>())
        }
        Method::Knn1 => {
            let train = load_train(cfg, "for 1nn classification")?;
            let (report, _) = classify_dataset_by_knn1(&train, test, &L2)?;
            let classes = train.num_classes.max(test.num_classes);
            let by_class: Vec<Vec<Tensor>> = (0..classes)
                .map(|c| {
                    train
                        .samples
                        .iter()
                        .zip(&train.labels)
                        .filter(|(_, &l)| l == c)
                        .map(|(x, _)| x.clone())
                        .collect()
                })
                .collect();
            let scores = test
                .samples
                .par_iter()
                .map(|x| {
                    by_class
                        .iter()
                        .map(|pts| {
                            if pts.is_empty() {
                                Ok(f64::INFINITY)
                            } else {
                                nearest_neighbor(pts, x, &L2).map(|(_, d)| d)
                            }
                        })
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            (report, scores)
        }
    };
    let classes = scores.first().map_or(0, Vec::len);
    let mut header = vec!["sample_id".to_string(), "true".into(), "predicted".into()];
    header.extend((0..classes).map(|c| format!("score_{c}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = (0..test.len())
        .map(|i| {
            let mut r = vec![i.to_string(), report.truth[i].to_string(), report.predicted[i].to_string()];
            r.extend(scores[i].iter().map(|&s| num(s)));
            r
        })
        .collect();
    out.csv(cfg, ".csv", &header, &rows)?;

    let auc = (classes == 2).then(|| {
        let s: Vec<f64> = scores
            .iter()
            .map(|s| match cfg.method {
                Method::Ll => s[1] - s[0],
                _ => s[0] - s[1],
            })
            .collect();
        two_class_auc(&report.truth, &s)
    });
    out.json(
        cfg,
        ".json",
        &json!({
            "method": cfg.method,
            "n": test.len(),
            "accuracy": report.accuracy,
            "auc": auc.flatten(),
            "confusion": report.confusion,
            "ties": report.ties,
            "config_hash": cfg.hash(),
        }),
    )
}

fn outlier(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let sets = load_data(cfg, 2)?;
    let items = flatten(&sets);
    let inlier_group = sets[0].group.clone();
    let n_in = sets[0].len();
    let scores: Vec<f64> = match cfg.method {
        Method::Ll => {
            let models = load_models(cfg, 1, Some(1))?;
            check_shapes(&models[0], &sets, "data")?;
            let sigma2 = resolve_sigma2(cfg, &models, out)?;
            items
                .par_iter()
                .map(|it| {
                    estimate_ll_one(&models[0], it.x, it.id, sigma2, &cfg.ais, cfg.seed)
                        .map(|e| ll_outlier_score(e.log_likelihood))
                })
                .collect::<Result<_, _>>()?
        }
        Method::Projection => {
            let models = load_models(cfg, 1, Some(1))?;
            check_shapes(&models[0], &sets, "data")?;
            items
                .par_iter()
                .map(|it| project_sample(&models[0], it.x, it.id, &cfg.inversion, cfg.seed).map(|r| r.error))
                .collect::<Result<_, _>>()?
        }
        Method::Knn1 => {
            let train = load_train(cfg, "for 1nn outlier scores")?;
            items
                .par_iter()
                .map(|it| knn1_outlier_score(&train.samples, it.x, &L2))
                .collect::<Result<_, _>>()?
        }
    };
    let rows: Vec<Vec<String>> = items
        .iter()
        .zip(&scores)
        .map(|(it, s)| vec![it.id.to_string(), it.group.to_string(), u8::from(it.id >= n_in).to_string(), num(*s)])
        .collect();
    out.csv(cfg, ".csv", &["sample_id", "group", "outlier", "score"], &rows)?;

    let (inl, outl) = scores.split_at(n_in);
    let overall = roc_auc(inl, outl)?;
    let mut offset = 0;
    let per_group = sets[1..]
        .iter()
        .map(|s| {
            let part = &outl[offset..offset + s.len()];
            offset += s.len();
            Ok(json!({ "group": s.group, "n": s.len(), "auc": roc_auc(inl, part)? }))
        })
        .collect::<CliResult<Vec<_>>>()?;
    out.resolve("auc", overall);
    out.json(
        cfg,
        ".json",
        &json!({
            "method": cfg.method,
            "inliers": { "group": inlier_group, "n": n_in },
            "auc": overall,
            "outliers": per_group,
            "config_hash": cfg.hash(),
        }),
    )
}

fn typicality(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let models = load_models(cfg, 1, Some(1))?;
    let model = &models[0];
    let sets = load_data(cfg, 1)?;
    check_shapes(model, &sets, "data")?;
    let sigma2 = resolve_sigma2(cfg, &models, out)?;
    let t = &cfg.typicality;
    let dims = model.output_dim();
    let est = estimate_entropy(model, sigma2, t.pool, &cfg.ais, cfg.seed).field("typicality.pool")?;
    let pool = est.lls.clone();
    let mut builder = TypicalityBuilder::new(est, dims, t.group_size, t.level, t.resamples, cfg.seed)
        .field("typicality")?;
    let mut rows = Vec::new();
    let mut push_rows = |group: &str, lls: &[f64]| -> CliResult<()> {
        for (i, &ll) in lls.iter().enumerate() {
            rows.push(vec![group.to_string(), i.to_string(), num(ll), num(bits_per_dim(ll, dims)?)]);
        }
        Ok(())
    };
    push_rows("model-pool", &pool)?;
    for (g, set) in sets.iter().enumerate() {
        if set.len() != t.group_size {
            log::warn!(
                "group {} has {} samples; epsilon is calibrated for groups of {}",
                set.group,
                set.len(),
                t.group_size
            );
        }
        let seed = derive_seed(cfg.seed, &[GROUP_STREAM, g as u64]);
        let lls = builder.add_samples(set.group.clone(), model, &set.samples, seed)?;
        push_rows(&set.group, &lls)?;
    }
    let report = builder.finish();
    out.resolve("entropy", report.entropy);
    out.resolve("epsilon", report.epsilon);
    out.csv(cfg, ".csv", &["group", "sample_id", "ll_nats", "ll_bits_per_dim"], &rows)?;
    out.json(cfg, ".json", &report)
}

fn cv(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let models = load_models(cfg, 1, Some(1))?;
    let model = &models[0];
    let sets = load_data(cfg, 1)?;
    check_shapes(model, &sets, "data")?;
    let sigma2 = resolve_sigma2(cfg, &models, out)?;
    let items = flatten(&sets);
    let cvs = items
        .par_iter()
        .map(|it| patch_cv(it.x, cfg.patch))
        .collect::<Result<Vec<_>, _>>()
        .field("data")?;
    let ests = items
        .par_iter()
        .map(|it| estimate_ll_one(model, it.x, it.id, sigma2, &cfg.ais, cfg.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let dims = model.output_dim();
    let lls: Vec<f64> = ests.iter().map(|e| e.log_likelihood).collect();
    let rows = items
        .iter()
        .zip(cvs.iter().zip(&lls))
        .map(|(it, (c, l))| {
            Ok(vec![it.id.to_string(), it.group.to_string(), num(*c), num(*l), num(bits_per_dim(*l, dims)?)])
        })
        .collect::<CliResult<Vec<_>>>()?;
    out.csv(cfg, ".csv", &["image_id", "group", "cv", "ll_nats", "ll_bits_per_dim"], &rows)?;
    let r = match pearson(&cvs, &lls) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("no correlation: {e}");
            None
        }
    };
    out.resolve("pearson", r);
    out.json(cfg, ".json", &json!({ "n": items.len(), "patch": cfg.patch, "pearson": r, "sigma2": sigma2 }))
}

fn plot(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    if !cfg.wants(Format::Svg) {
        return Err(CliError::config("formats", "plot writes svg, which is not among the requested formats"));
    }
    let p = &cfg.plot;
    let input: PathBuf = p
        .input
        .clone()
        .ok_or_else(|| CliError::config("plot.input", "plot needs an input CSV"))?;
    let groups = read_groups(&input, &p.column, &p.group_column)?;
    let band = match (&p.typicality, p.center, p.epsilon) {
        (Some(path), None, None) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e).in_field("plot.typicality"))?;
            let r: TypicalityReport = serde_json::from_str(&text)
                .map_err(|e| CliError::input("plot.typicality", format!("{}: {e}", path.display())))?;
            let scale = if p.column == "ll_bits_per_dim" {
                1.0 / (r.dims as f64 * std::f64::consts::LN_2)
            } else {
                1.0
            };
            Some(Band {
                center: -r.entropy * scale,
                half_width: r.epsilon * scale,
            })
        }
        (None, Some(center), Some(eps)) => Some(Band {
            center,
            half_width: eps,
        }),
        (None, None, None) => None,
        (Some(_), _, _) => {
            return Err(CliError::config("plot.typicality", "give either a typicality report or center and epsilon"));
        }
        (None, None, Some(_)) => return Err(CliError::config("plot.center", "epsilon needs a band centre")),
        (None, Some(_), None) => return Err(CliError::config("plot.epsilon", "center needs a band half-width")),
    };
    let title = p
        .title
        .clone()
        .unwrap_or_else(|| format!("{} by {}", p.column, p.group_column));
    let svg = histogram_svg(&groups, p.bins, band, &title, &p.column)?;
    let path = out.path(".svg");
    std::fs::write(&path, svg).map_err(|e| CliError::io(&path, e))?;
    let order: Vec<&str> = groups.iter().map(|(g, _)| g.as_str()).collect();
    out.resolve("group_order", order);
    Ok(())
}
