//! Generative classification, nearest-neighbour baselines and ROC-AUC.

use std::cmp::Ordering;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ais::{estimate_ll_one, AisConfig};
use crate::error::{Error, Result};
use crate::models::GeneratorModel;
use crate::projection::{project_sample, InversionConfig};
use crate::Tensor;

/// A named distance between two tensors of equal shape.
pub trait Distance: Send + Sync {
    fn name(&self) -> &str;
    fn distance(&self, a: &Tensor, b: &Tensor) -> Result<f64>;
}

/// Euclidean distance in pixel space.
#[derive(Debug, Clone, Copy, Default)]
pub struct L2;

impl Distance for L2 {
    fn name(&self) -> &str {
        "l2"
    }

    fn distance(&self, a: &Tensor, b: &Tensor) -> Result<f64> {
        a.distance(b)
    }
}

/// Wraps a plain function as a [`Distance`].
pub struct FnDistance<F> {
    name: String,
    f: F,
}

impl<F> FnDistance<F>
where
    F: Fn(&Tensor, &Tensor) -> Result<f64> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl<F> Distance for FnDistance<F>
where
    F: Fn(&Tensor, &Tensor) -> Result<f64> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn distance(&self, a: &Tensor, b: &Tensor) -> Result<f64> {
        (self.f)(a, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub samples: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// `train`, `test`, or the name of an outlier source.
    pub group: String,
}

impl LabeledDataset {
    pub fn new(
        samples: Vec<Tensor>,
        labels: Vec<usize>,
        num_classes: usize,
        group: impl Into<String>,
    ) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::invalid(
                "labels",
                format!("{} labels for {} samples", labels.len(), samples.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(
                "labels",
                format!("label {bad} outside {num_classes} classes"),
            ));
        }
        if let Some(first) = samples.first() {
            for s in &samples {
                s.ensure_shape(first.shape(), "dataset sample")?;
            }
        }
        Ok(Self {
            samples,
            labels,
            num_classes,
            group: group.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ll,
    Projection,
    #[serde(rename = "1nn")]
    Knn1,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ll => "ll",
            Method::Projection => "projection",
            Method::Knn1 => "1nn",
        })
    }
}

/// A single decision with the per-class scores behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub class: usize,
    pub scores: Vec<f64>,
    /// Another class scored exactly the same as the winner.
    pub tied: bool,
}

fn pick(scores: Vec<f64>, better: Ordering, what: &str) -> Result<Decision> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("class score"));
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if s.partial_cmp(&scores[best]) == Some(better) {
            best = i;
        }
    }
    let tied = scores
        .iter()
        .enumerate()
        .any(|(i, s)| i != best && *s == scores[best]);
    if tied {
        log::info!("{what}: tie broken towards class {best}");
    }
    Ok(Decision {
        class: best,
        scores,
        tied,
    })
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax_lowest(scores: Vec<f64>) -> Result<Decision> {
    pick(scores, Ordering::Greater, "argmax")
}

/// Index of the smallest score; ties go to the lowest index.
pub fn argmin_lowest(scores: Vec<f64>) -> Result<Decision> {
    pick(scores, Ordering::Less, "argmin")
}

fn check_models(models: &[GeneratorModel]) -> Result<()> {
    if models.len() < 2 {
        return Err(Error::invalid("models", "need at least two class models"));
    }
    for m in &models[1..] {
        if m.output_shape() != models[0].output_shape() {
            return Err(Error::ShapeMismatch {
                context: "class model output",
                expected: models[0].output_shape().to_vec(),
                got: m.output_shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// Class whose model assigns `x` the highest AIS log-likelihood.
///
/// Every class reuses the same chain streams for a given sample.
pub fn classify_by_ll(
    models: &[GeneratorModel],
    x: &Tensor,
    sigma2: f64,
    cfg: &AisConfig,
    seed: u64,
) -> Result<Decision> {
    classify_sample_by_ll(models, x, 0, sigma2, cfg, seed)
}

pub fn classify_sample_by_ll(
    models: &[GeneratorModel],
    x: &Tensor,
    sample_id: usize,
    sigma2: f64,
    cfg: &AisConfig,
    seed: u64,
) -> Result<Decision> {
    check_models(models)?;
    let scores = models
        .iter()
        .map(|m| estimate_ll_one(m, x, sample_id, sigma2, cfg, seed).map(|e| e.log_likelihood))
        .collect::<Result<Vec<_>>>()?;
    argmax_lowest(scores)
}

/// Class whose manifold reconstructs `x` most closely under `distance`.
pub fn classify_by_projection(
    models: &[GeneratorModel],
    x: &Tensor,
    cfg: &InversionConfig,
    distance: &dyn Distance,
    seed: u64,
) -> Result<Decision> {
    classify_sample_by_projection(models, x, 0, cfg, distance, seed)
}

pub fn classify_sample_by_projection(
    models: &[GeneratorModel],
    x: &Tensor,
    sample_id: usize,
    cfg: &InversionConfig,
    distance: &dyn Distance,
    seed: u64,
) -> Result<Decision> {
    check_models(models)?;
    let scores = models
        .iter()
        .map(|m| {
            let p = project_sample(m, x, sample_id, cfg, seed)?;
            distance.distance(&p.reconstruction, x)
        })
        .collect::<Result<Vec<_>>>()?;
    argmin_lowest(scores)
}

/// Index and distance of the nearest training sample; ties go to the lowest index.
pub fn nearest_neighbor(
    train: &[Tensor],
    x: &Tensor,
    distance: &dyn Distance,
) -> Result<(usize, f64)> {
    if train.is_empty() {
        return Err(Error::invalid("train", "empty training set"));
    }
    let mut best = (0, distance.distance(&train[0], x)?);
    for (i, t) in train.iter().enumerate().skip(1) {
        let d = distance.distance(t, x)?;
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best)
}

pub fn knn1_classify(train: &LabeledDataset, x: &Tensor, distance: &dyn Distance) -> Result<usize> {
    let (i, _) = nearest_neighbor(&train.samples, x, distance)?;
    Ok(train.labels[i])
}

/// Distance to the nearest training sample; higher means more outlying.
pub fn knn1_outlier_score(train: &[Tensor], x: &Tensor, distance: &dyn Distance) -> Result<f64> {
    nearest_neighbor(train, x, distance).map(|(_, d)| d)
}

/// Outlier score from a log-likelihood: its negation.
pub fn ll_outlier_score(ll_nats: f64) -> f64 {
    -ll_nats
}

/// `P(outlier > inlier) + P(equal) / 2` via mid-ranks.
pub fn roc_auc(inlier_scores: &[f64], outlier_scores: &[f64]) -> Result<f64> {
    if inlier_scores.is_empty() || outlier_scores.is_empty() {
        return Err(Error::invalid("scores", "both score sets must be non-empty"));
    }
    let mut all: Vec<(f64, bool)> = inlier_scores
        .iter()
        .map(|&s| (s, false))
        .chain(outlier_scores.iter().map(|&s| (s, true)))
        .collect();
    if all.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::NonFinite("roc scores"));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks are 1-based; a tie block shares its average rank
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|(_, o)| *o).count() as f64;
        i = j + 1;
    }
    let n_in = inlier_scores.len() as f64;
    let n_out = outlier_scores.len() as f64;
    Ok((rank_sum - n_out * (n_out + 1.0) / 2.0) / (n_in * n_out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub method: Method,
    pub truth: Vec<usize>,
    pub predicted: Vec<usize>,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Sample positions whose decision was a tie.
    pub ties: Vec<usize>,
}

impl ClassifierReport {
    pub fn new(
        method: Method,
        truth: Vec<usize>,
        predicted: Vec<usize>,
        num_classes: usize,
        ties: Vec<usize>,
    ) -> Result<Self> {
        if truth.len() != predicted.len() || truth.is_empty() {
            return Err(Error::invalid(
                "predicted",
                "needs one prediction per labelled sample",
            ));
        }
        let mut confusion = vec![vec![0; num_classes]; num_classes];
        for (&t, &p) in truth.iter().zip(&predicted) {
            if t >= num_classes || p >= num_classes {
                return Err(Error::invalid("labels", "class id outside the class set"));
            }
            confusion[t][p] += 1;
        }
        let hits: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
        Ok(Self {
            method,
            accuracy: hits as f64 / truth.len() as f64,
            truth,
            predicted,
            confusion,
            ties,
        })
    }
}

/// Classifies every sample of `data`; sample ids are positions.
pub fn classify_dataset_by_ll(
    models: &[GeneratorModel],
    data: &LabeledDataset,
    sigma2: f64,
    cfg: &AisConfig,
    seed: u64,
) -> Result<(ClassifierReport, Vec<Decision>)> {
    let decisions = data
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, x)| classify_sample_by_ll(models, x, i, sigma2, cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    report(Method::Ll, data, models.len(), decisions)
}

pub fn classify_dataset_by_projection(
    models: &[GeneratorModel],
    data: &LabeledDataset,
    cfg: &InversionConfig,
    distance: &dyn Distance,
    seed: u64,
) -> Result<(ClassifierReport, Vec<Decision>)> {
    let decisions = data
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, x)| classify_sample_by_projection(models, x, i, cfg, distance, seed))
        .collect::<Result<Vec<_>>>()?;
    report(Method::Projection, data, models.len(), decisions)
}

pub fn classify_dataset_by_knn1(
    train: &LabeledDataset,
    test: &LabeledDataset,
    distance: &dyn Distance,
) -> Result<(ClassifierReport, Vec<usize>)> {
    let nearest = test
        .samples
        .par_iter()
        .map(|x| nearest_neighbor(&train.samples, x, distance).map(|(i, _)| i))
        .collect::<Result<Vec<_>>>()?;
    let predicted = nearest.iter().map(|&i| train.labels[i]).collect();
    let classes = train.num_classes.max(test.num_classes);
    let r = ClassifierReport::new(Method::Knn1, test.labels.clone(), predicted, classes, Vec::new())?;
    Ok((r, nearest))
}

fn report(
    method: Method,
    data: &LabeledDataset,
    num_classes: usize,
    decisions: Vec<Decision>,
) -> Result<(ClassifierReport, Vec<Decision>)> {
    let ties = decisions
        .iter()
        .enumerate()
        .filter(|(_, d)| d.tied)
        .map(|(i, _)| i)
        .collect();
    let predicted = decisions.iter().map(|d| d.class).collect();
    let classes = num_classes.max(data.num_classes);
    let r = ClassifierReport::new(method, data.labels.clone(), predicted, classes, ties)?;
    Ok((r, decisions))
}
