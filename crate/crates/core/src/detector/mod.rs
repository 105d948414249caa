//! Classification head over app embeddings, detection metrics and
//! stratified cross-validation. Malicious is the positive class.

mod cv;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hin::Label;
use crate::msgat::MsGatModel;
use crate::numerics::tape::softmax_in_place;
use crate::numerics::{DenseMatrix, Tape};

pub use cv::{cross_validate, cross_validate_with, stratified_folds, stratified_split, CvReport, MetricSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 0.5,
        }
    }
}

/// Two-class softmax (logistic) regression.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub w: DenseMatrix,
    pub b: DenseMatrix,
    pub config: ClassifierConfig,
}

fn class_counts(labels: &[Label]) -> [usize; 2] {
    let mut counts = [0; 2];
    for l in labels {
        counts[l.class()] += 1;
    }
    counts
}

/// Fits the head by full-batch gradient descent. Weights start at zero and
/// the bias at the log class priors, so zero epochs predicts the prior.
pub fn train_classifier(x: &DenseMatrix, labels: &[Label], config: &ClassifierConfig) -> Result<ClassifierModel> {
    if x.rows() != labels.len() {
        return Err(Error::dims("train_classifier", x.shape(), (labels.len(), 1)));
    }
    let counts = class_counts(labels);
    if counts.contains(&0) {
        return Err(Error::Validation("classifier training needs both classes".into()));
    }
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(Error::Config("classifier learning_rate must be positive".into()));
    }
    let n = labels.len() as f64;
    let mut model = ClassifierModel {
        w: DenseMatrix::zeros(x.cols(), 2),
        b: DenseMatrix::from_vec(1, 2, counts.iter().map(|&c| (c as f64 / n).ln()).collect())?,
        config: config.clone(),
    };
    let targets: Arc<[(usize, usize)]> = labels.iter().enumerate().map(|(i, l)| (i, l.class())).collect();
    for _ in 0..config.epochs {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let w = tape.leaf(model.w.clone());
        let b = tape.leaf(model.b.clone());
        let logits = tape.matmul(xv, w);
        let logits = tape.add_row(logits, b);
        let loss = tape.cross_entropy(logits, targets.clone());
        let g = tape.backward(loss);
        model.w.axpy(-config.learning_rate, &g.wrt(w))?;
        model.b.axpy(-config.learning_rate, &g.wrt(b))?;
    }
    if !(model.w.is_finite() && model.b.is_finite()) {
        return Err(Error::Numerical("classifier training diverged".into()));
    }
    Ok(model)
}

impl ClassifierModel {
    /// The head trained jointly with an embedding model.
    pub fn from_model(model: &MsGatModel) -> Self {
        Self {
            w: model.head().w.clone(),
            b: model.head().b.clone(),
            config: ClassifierConfig {
                epochs: model.config().epochs,
                learning_rate: model.config().learning_rate,
            },
        }
    }

    /// Malicious-class probability per row.
    pub fn predict_proba(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        let logits = x.matmul(&self.w)?;
        Ok((0..x.rows())
            .map(|r| {
                let mut p = [logits.get(r, 0) + self.b.get(0, 0), logits.get(r, 1) + self.b.get(0, 1)];
                softmax_in_place(&mut p);
                p[Label::Malicious.class()]
            })
            .collect())
    }

    pub fn predict(&self, x: &DenseMatrix) -> Result<Vec<Label>> {
        Ok(self.predict_proba(x)?.into_iter().map(label_for).collect())
    }
}

/// Malicious when the malicious probability exceeds one half.
pub fn label_for(p_malicious: f64) -> Label {
    if p_malicious > 0.5 {
        Label::Malicious
    } else {
        Label::Benign
    }
}

/// Confusion counts and the ratios derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub fp_rate: f64,
    pub f1: f64,
    pub acc: f64,
    /// Ratios whose denominator was zero; they are reported as 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

impl Metrics {
    pub fn from_counts(tp: usize, tn: usize, fp: usize, fn_: usize) -> Self {
        let mut undefined = Vec::new();
        let mut ratio = |name: &str, num: f64, den: f64| {
            if den == 0.0 {
                undefined.push(name.to_owned());
                0.0
            } else {
                num / den
            }
        };
        let (tpf, tnf, fpf, fnf) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
        let precision = ratio("precision", tpf, tpf + fpf);
        let recall = ratio("recall", tpf, tpf + fnf);
        let fp_rate = ratio("fp_rate", fpf, fpf + tnf);
        let f1 = ratio("f1", 2.0 * precision * recall, precision + recall);
        let acc = ratio("acc", tpf + tnf, tpf + tnf + fpf + fnf);
        Self {
            tp,
            tn,
            fp,
            fn_,
            precision,
            recall,
            fp_rate,
            f1,
            acc,
            undefined,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn evaluate(predictions: &[Label], truth: &[Label]) -> Result<Metrics> {
    if predictions.len() != truth.len() {
        return Err(Error::dims("evaluate", (predictions.len(), 1), (truth.len(), 1)));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&p, &t) in predictions.iter().zip(truth) {
        match (p, t) {
            (Label::Malicious, Label::Malicious) => tp += 1,
            (Label::Benign, Label::Benign) => tn += 1,
            (Label::Malicious, Label::Benign) => fp += 1,
            (Label::Benign, Label::Malicious) => fn_ += 1,
        }
    }
    Ok(Metrics::from_counts(tp, tn, fp, fn_))
}

/// Classification of one app.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub app: String,
    pub score: f64,
    pub label: Label,
    /// Set for out-of-sample apps with no in-sample neighbor.
    pub low_confidence: bool,
}

/// Verdicts from malicious probabilities.
pub fn verdicts(app_ids: &[String], scores: &[f64], isolated: &[bool]) -> Vec<Verdict> {
    app_ids
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(i, (app, &score))| Verdict {
            app: app.clone(),
            score,
            label: label_for(score),
            low_confidence: isolated.get(i).copied().unwrap_or(false),
        })
        .collect()
}
