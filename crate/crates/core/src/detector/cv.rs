use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, train_classifier, ClassifierConfig, Metrics};
use crate::error::{Error, Result};
use crate::hin::Label;
use crate::numerics::DenseMatrix;

fn shuffled_by_class(labels: &[Label], seed: u64) -> [Vec<usize>; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class = [Vec::new(), Vec::new()];
    for (i, l) in labels.iter().enumerate() {
        by_class[l.class()].push(i);
    }
    for c in &mut by_class {
        c.shuffle(&mut rng);
    }
    by_class
}

/// Fold index per sample. Each class is shuffled and dealt round-robin, so
/// every fold holds each class to within one sample.
pub fn stratified_folds(labels: &[Label], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    let by_class = shuffled_by_class(labels, seed);
    for (c, members) in by_class.iter().enumerate() {
        if members.len() < folds {
            return Err(Error::Validation(format!(
                "{} {} samples cannot fill {folds} folds",
                members.len(),
                Label::from_class(c).as_str()
            )));
        }
    }
    let mut out = vec![0; labels.len()];
    let mut offset = 0;
    for members in &by_class {
        for (pos, &i) in members.iter().enumerate() {
            out[i] = (offset + pos) % folds;
        }
        offset += members.len();
    }
    Ok(out)
}

/// Stratified train/test split; returns sorted index lists.
pub fn stratified_split(labels: &[Label], train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for members in shuffled_by_class(labels, seed) {
        let k = (members.len() as f64 * train_fraction).round() as usize;
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub precision: f64,
    pub recall: f64,
    pub fp_rate: f64,
    pub f1: f64,
    pub acc: f64,
}

impl MetricSummary {
    fn fields(m: &Metrics) -> [f64; 5] {
        [m.precision, m.recall, m.fp_rate, m.f1, m.acc]
    }

    fn from_fields(v: [f64; 5]) -> Self {
        Self {
            precision: v[0],
            recall: v[1],
            fp_rate: v[2],
            f1: v[3],
            acc: v[4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<Metrics>,
    pub mean: MetricSummary,
    /// Population standard deviation across folds.
    pub std: MetricSummary,
}

impl CvReport {
    pub fn from_folds(folds: Vec<Metrics>) -> Self {
        let n = folds.len().max(1) as f64;
        let mut mean = [0.0; 5];
        for m in &folds {
            for (acc, v) in mean.iter_mut().zip(MetricSummary::fields(m)) {
                *acc += v / n;
            }
        }
        let mut var = [0.0; 5];
        for m in &folds {
            for ((acc, v), mu) in var.iter_mut().zip(MetricSummary::fields(m)).zip(mean) {
                *acc += (v - mu) * (v - mu) / n;
            }
        }
        Self {
            folds,
            mean: MetricSummary::from_fields(mean),
            std: MetricSummary::from_fields(var.map(f64::sqrt)),
        }
    }
}

/// Runs `run(train, test)` for every fold in parallel; results keep fold
/// order.
pub fn cross_validate_with<F>(labels: &[Label], folds: usize, seed: u64, run: F) -> Result<CvReport>
where
    F: Fn(&[usize], &[usize]) -> Result<Metrics> + Sync,
{
    let assignment = stratified_folds(labels, folds, seed)?;
    let per_fold = (0..folds)
        .into_par_iter()
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| assignment[i] == f);
            run(&train, &test)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CvReport::from_folds(per_fold))
}

/// Cross-validates the logistic head on fixed embeddings.
pub fn cross_validate(
    x: &DenseMatrix,
    labels: &[Label],
    folds: usize,
    seed: u64,
    config: &ClassifierConfig,
) -> Result<CvReport> {
    if x.rows() != labels.len() {
        return Err(Error::dims("cross_validate", x.shape(), (labels.len(), 1)));
    }
    cross_validate_with(labels, folds, seed, |train, test| {
        let y: Vec<Label> = train.iter().map(|&i| labels[i]).collect();
        let model = train_classifier(&x.select_rows(train), &y, config)?;
        let pred = model.predict(&x.select_rows(test))?;
        let truth: Vec<Label> = test.iter().map(|&i| labels[i]).collect();
        evaluate(&pred, &truth)
    })
}
