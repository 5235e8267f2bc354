//! Averaged per-class accuracy and the seen/unseen harmonic mean.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{ApnetError, Result};
use crate::graph::PropagationConfig;
use crate::head::{project, scores_for_image, HeadConfig};
use crate::model::{class_embeddings, ModelParams};
use crate::numerics::argmax;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    #[default]
    Zsl,
    Gzsl,
}

impl std::str::FromStr for Setting {
    type Err = ApnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zsl" => Ok(Self::Zsl),
            "gzsl" => Ok(Self::Gzsl),
            other => Err(ApnetError::InvalidArgument(format!("unknown setting {other:?}"))),
        }
    }
}

/// Which classes form the propagation graph at test time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphScope {
    /// ZSL: unseen classes only. GZSL always uses every class.
    #[default]
    Unseen,
    All,
}

impl std::str::FromStr for GraphScope {
    type Err = ApnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unseen" => Ok(Self::Unseen),
            "all" => Ok(Self::All),
            other => Err(ApnetError::InvalidArgument(format!("unknown graph scope {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: Setting,
    /// Classes that formed the propagation graph.
    pub graph_scope: GraphScope,
    /// Fraction correct per evaluated class, in `[0, 1]`.
    pub per_class_acc: BTreeMap<usize, f64>,
    /// Seen accuracy in percent (GZSL only).
    #[serde(rename = "S")]
    pub acc_seen: Option<f64>,
    /// Unseen accuracy in percent.
    #[serde(rename = "U")]
    pub acc_unseen: f64,
    /// Harmonic mean of `S` and `U` in percent (GZSL only).
    #[serde(rename = "H")]
    pub harmonic: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub prop: PropagationConfig,
    pub head: HeadConfig,
    pub graph_scope: GraphScope,
}

/// Accuracy of every class in `class_set`, keyed by class id.
pub fn per_class_accuracies(predictions: &[usize], truths: &[usize], class_set: &[usize]) -> Result<BTreeMap<usize, f64>> {
    if predictions.len() != truths.len() {
        return Err(ApnetError::dims(
            "per_class_accuracy",
            format!("{} predictions for {} labels", predictions.len(), truths.len()),
        ));
    }
    let classes: BTreeSet<usize> = class_set.iter().copied().collect();
    let mut hits: BTreeMap<usize, (usize, usize)> = classes.iter().map(|&c| (c, (0, 0))).collect();
    for (&p, &t) in predictions.iter().zip(truths) {
        let entry = hits.get_mut(&t).ok_or_else(|| {
            ApnetError::InvalidArgument(format!("true label {t} is not in the evaluated class set"))
        })?;
        entry.1 += 1;
        if p == t {
            entry.0 += 1;
        }
    }
    hits.into_iter()
        .map(|(c, (correct, total))| {
            if total == 0 {
                Err(ApnetError::SplitViolation(format!("class {c} has no test samples")))
            } else {
                Ok((c, correct as f64 / total as f64))
            }
        })
        .collect()
}

/// Mean over classes of the within-class hit rate, in `[0, 1]`.
pub fn per_class_accuracy(predictions: &[usize], truths: &[usize], class_set: &[usize]) -> Result<f64> {
    let per_class = per_class_accuracies(predictions, truths, class_set)?;
    if per_class.is_empty() {
        return Err(ApnetError::EmptyInput("per_class_accuracy class set"));
    }
    Ok(per_class.values().sum::<f64>() / per_class.len() as f64)
}

/// `2su / (s + u)`, or 0 when both are 0.
pub fn harmonic_mean(s: f64, u: f64) -> f64 {
    if s + u == 0.0 {
        0.0
    } else {
        2.0 * s * u / (s + u)
    }
}

/// Predicted class id for each sample, choosing among `candidates`.
///
/// `graph_classes` are propagated together; `candidates` must be a subset.
pub fn predict_samples(
    params: &ModelParams,
    dataset: &Dataset,
    cfg: &EvalConfig,
    graph_classes: &[usize],
    candidates: &[usize],
    samples: &[usize],
) -> Result<Vec<usize>> {
    params.check_compatible(dataset.attr_dim(), dataset.image_dim())?;
    cfg.head.validate()?;
    if candidates.is_empty() {
        return Err(ApnetError::EmptyInput("candidate class set"));
    }
    let (xt, _) = class_embeddings(params, dataset.attributes(), dataset.distances(), graph_classes, &cfg.prop)?;
    let rows: Vec<usize> = candidates
        .iter()
        .map(|c| {
            graph_classes
                .iter()
                .position(|g| g == c)
                .expect("candidates are part of the graph")
        })
        .collect();
    let cand_x = xt.select_rows(&rows);
    let images = dataset.image_features().select_rows(samples);
    let proj = project(&cand_x, &images, &params.head)?;
    Ok((0..samples.len())
        .map(|q| candidates[argmax(&scores_for_image(&proj, q, &params.head)).expect("nonempty candidates")])
        .collect())
}

fn truths(dataset: &Dataset, samples: &[usize]) -> Vec<usize> {
    samples.iter().map(|&i| dataset.labels()[i]).collect()
}

/// Unseen test images classified among unseen classes only.
pub fn evaluate_zsl(params: &ModelParams, dataset: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    if dataset.test_unseen().is_empty() || dataset.unseen().is_empty() {
        return Err(ApnetError::SplitViolation("ZSL evaluation needs unseen classes and test_unseen samples".into()));
    }
    let all: Vec<usize> = (0..dataset.num_classes()).collect();
    let graph = match cfg.graph_scope {
        GraphScope::Unseen => dataset.unseen(),
        GraphScope::All => &all,
    };
    let preds = predict_samples(params, dataset, cfg, graph, dataset.unseen(), dataset.test_unseen())?;
    let per_class = per_class_accuracies(&preds, &truths(dataset, dataset.test_unseen()), dataset.unseen())?;
    let acc = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(EvalReport {
        setting: Setting::Zsl,
        graph_scope: cfg.graph_scope,
        per_class_acc: per_class,
        acc_seen: None,
        acc_unseen: 100.0 * acc,
        harmonic: None,
    })
}

/// Seen and unseen test images classified among all classes over one shared graph.
pub fn evaluate_gzsl(params: &ModelParams, dataset: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    if dataset.test_seen().is_empty() || dataset.seen().is_empty() {
        return Err(ApnetError::SplitViolation("GZSL evaluation needs test_seen samples".into()));
    }
    if dataset.test_unseen().is_empty() || dataset.unseen().is_empty() {
        return Err(ApnetError::SplitViolation("GZSL evaluation needs test_unseen samples".into()));
    }
    let all: Vec<usize> = (0..dataset.num_classes()).collect();
    let mut samples = dataset.test_seen().to_vec();
    samples.extend_from_slice(dataset.test_unseen());
    let preds = predict_samples(params, dataset, cfg, &all, &all, &samples)?;
    let (seen_preds, unseen_preds) = preds.split_at(dataset.test_seen().len());
    let seen_acc = per_class_accuracies(seen_preds, &truths(dataset, dataset.test_seen()), dataset.seen())?;
    let unseen_acc = per_class_accuracies(unseen_preds, &truths(dataset, dataset.test_unseen()), dataset.unseen())?;
    let s = 100.0 * seen_acc.values().sum::<f64>() / seen_acc.len() as f64;
    let u = 100.0 * unseen_acc.values().sum::<f64>() / unseen_acc.len() as f64;
    let mut per_class = seen_acc;
    per_class.extend(unseen_acc);
    Ok(EvalReport {
        setting: Setting::Gzsl,
        graph_scope: GraphScope::All,
        per_class_acc: per_class,
        acc_seen: Some(s),
        acc_unseen: u,
        harmonic: Some(harmonic_mean(s, u)),
    })
}
