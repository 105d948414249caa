//! Out-of-sample embedding without retraining.
//!
//! For each new app and each meta-structure, the most similar in-sample apps
//! are found through the incremental path counts; the new app's embedding is
//! the similarity-weighted mean of their stored per-structure embeddings,
//! fused with the model's structure weights.

mod output;

use std::cmp::Ordering;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hin::{AppBatch, Hin, Label};
use crate::metastructure::{pathsim_value, IncrementalAdjacency, IncrementalProgram};
use crate::msgat::{fuse, MsGatModel};
use crate::numerics::{DenseMatrix, SparseMatrix, Tape};

pub use output::{read_embeddings, write_audit, write_embedding_rows, write_embeddings, EmbeddingRows};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IncrementalConfig {
    /// Neighbors kept per structure.
    pub sigma: usize,
    pub fine_tune_beta: bool,
    pub fine_tune_steps: usize,
    pub fine_tune_learning_rate: f64,
}

impl Default for IncrementalConfig {
    fn default() -> Self {
        Self {
            sigma: 3,
            fine_tune_beta: false,
            fine_tune_steps: 100,
            fine_tune_learning_rate: 0.1,
        }
    }
}

impl IncrementalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma == 0 {
            return Err(Error::Config("sigma must be at least 1".into()));
        }
        if !(self.fine_tune_learning_rate.is_finite() && self.fine_tune_learning_rate > 0.0) {
            return Err(Error::Config("fine_tune_learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// In-sample × out-of-sample similarities under one structure.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub name: String,
    /// `L_in × L_out`, entries in `[0, 1]`.
    pub x: DenseMatrix,
}

fn structure_index(model: &MsGatModel, name: &str) -> Result<usize> {
    model
        .structures()
        .iter()
        .position(|s| s.name() == name)
        .ok_or_else(|| Error::Validation(format!("structure `{name}` is unknown to the model")))
}

/// Dense similarity matrix for one structure. Meta-graph similarities are
/// products of their parts' PathSim values.
pub fn similarity(model: &MsGatModel, inc: &IncrementalAdjacency) -> Result<SimilarityMatrix> {
    let k = structure_index(model, inc.name())?;
    let in_diags = &model.part_diags()[k];
    let views = inc.part_views();
    if views.len() != in_diags.len() {
        return Err(Error::Validation(format!("part count mismatch for `{}`", inc.name())));
    }
    let (rows, cols) = inc.psi_hat().shape();
    let mut x = DenseMatrix::filled(rows, cols, 1.0);
    for ((psi, out_diag), in_diag) in views.into_iter().zip(in_diags) {
        if in_diag.len() != rows {
            return Err(Error::dims("similarity", (in_diag.len(), 1), (rows, cols)));
        }
        for (j, &d_in) in in_diag.iter().enumerate() {
            for (o, &d_out) in out_diag.iter().enumerate() {
                let v = x.get(j, o) * pathsim_value(psi.get(j, o), d_in, d_out);
                x.set(j, o, v);
            }
        }
    }
    Ok(SimilarityMatrix {
        name: inc.name().to_owned(),
        x,
    })
}

/// Nonzero similarities of out app `o` under one structure, from per-part
/// transposed segments (`L_out × L_in`).
fn similarity_column(parts: &[(SparseMatrix, Vec<f64>)], in_diags: &[Vec<f64>], o: usize) -> Vec<(usize, f64)> {
    let (first, first_out) = &parts[0];
    let (cols, vals) = first.row(o);
    cols.iter()
        .zip(vals)
        .filter_map(|(&j, &v)| {
            let mut s = pathsim_value(v, in_diags[0][j], first_out[o]);
            for ((p, out_diag), in_diag) in parts[1..].iter().zip(&in_diags[1..]) {
                if s == 0.0 {
                    break;
                }
                s *= pathsim_value(p.get(o, j), in_diag[j], out_diag[o]);
            }
            (s > 0.0).then_some((j, s))
        })
        .collect()
}

/// Indices of the `sigma` largest nonzero values, ties by ascending index.
pub fn top_sigma(column: &[f64], sigma: usize) -> Vec<usize> {
    let candidates: Vec<(usize, f64)> = column
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(j, &v)| (j, v))
        .collect();
    select_top(candidates, sigma).into_iter().map(|(j, _)| j).collect()
}

fn select_top(mut candidates: Vec<(usize, f64)>, sigma: usize) -> Vec<(usize, f64)> {
    let by_rank = |a: &(usize, f64), b: &(usize, f64)| {
        b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
    };
    if candidates.len() > sigma {
        candidates.select_nth_unstable_by(sigma, by_rank);
        candidates.truncate(sigma);
    }
    candidates.sort_by(by_rank);
    candidates
}

/// `α_s = sim_s / Σ sim`.
pub fn neighbor_weights(sims: &[f64]) -> Result<Vec<f64>> {
    if sims.is_empty() {
        return Err(Error::Validation("neighbor weights need at least one neighbor".into()));
    }
    let total: f64 = sims.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Numerical("neighbor similarities sum to zero".into()));
    }
    Ok(sims.iter().map(|s| s / total).collect())
}

/// Neighbors chosen for one app under one structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub neighbors: Vec<usize>,
    pub sims: Vec<f64>,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutEmbedding {
    pub app_ids: Vec<String>,
    pub structure_names: Vec<String>,
    /// Fused `L_out × D` embedding.
    pub embedding: DenseMatrix,
    /// `Φ̂_k` per structure.
    pub per_structure: Vec<DenseMatrix>,
    pub beta: Vec<f64>,
    /// True when no structure produced any neighbor.
    pub isolated: Vec<bool>,
    /// `selections[k][o]`.
    pub selections: Vec<Vec<Selection>>,
}

impl OutEmbedding {
    pub fn len(&self) -> usize {
        self.app_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.app_ids.is_empty()
    }

    /// Re-fuses the per-structure embeddings with new weights.
    pub fn refuse(&mut self, beta: Vec<f64>) -> Result<()> {
        if self.per_structure.is_empty() {
            return Err(Error::Validation("no structures to fuse".into()));
        }
        self.embedding = fuse(&beta, &self.per_structure)?;
        self.beta = beta;
        Ok(())
    }
}

/// Incremental programs compiled once against the model's training HIN.
#[derive(Debug, Clone)]
pub struct Embedder<'m> {
    model: &'m MsGatModel,
    programs: Vec<IncrementalProgram>,
}

impl<'m> Embedder<'m> {
    pub fn new(model: &'m MsGatModel, hin: &Hin) -> Result<Self> {
        model.check_fingerprint(hin)?;
        let programs = model
            .structures()
            .par_iter()
            .map(|s| IncrementalProgram::prepare(hin, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { model, programs })
    }

    pub fn model(&self) -> &MsGatModel {
        self.model
    }

    pub fn embed(&self, batch: &AppBatch, cfg: &IncrementalConfig) -> Result<OutEmbedding> {
        cfg.validate()?;
        let model = self.model;
        let n_out = batch.len();
        let dim = model.dim();
        let per: Vec<(DenseMatrix, Vec<Selection>)> = self
            .programs
            .par_iter()
            .enumerate()
            .map(|(k, program)| -> Result<(DenseMatrix, Vec<Selection>)> {
                let parts = program.apply_parts(batch)?;
                let in_diags = &model.part_diags()[k];
                let phi = &model.structure_embeddings()[k];
                let rows: Vec<(Vec<f64>, Selection)> = (0..n_out)
                    .into_par_iter()
                    .map(|o| {
                        let picked = select_top(similarity_column(&parts, in_diags, o), cfg.sigma);
                        let mut row = vec![0.0; dim];
                        let (neighbors, sims): (Vec<usize>, Vec<f64>) = picked.into_iter().unzip();
                        let alpha = if neighbors.is_empty() {
                            Vec::new()
                        } else {
                            neighbor_weights(&sims).expect("positive similarities")
                        };
                        for (&j, &a) in neighbors.iter().zip(&alpha) {
                            for (r, &v) in row.iter_mut().zip(phi.row(j)) {
                                *r += a * v;
                            }
                        }
                        (row, Selection { neighbors, sims, alpha })
                    })
                    .collect();
                let mut data = Vec::with_capacity(n_out * dim);
                let mut selections = Vec::with_capacity(n_out);
                for (row, sel) in rows {
                    data.extend(row);
                    selections.push(sel);
                }
                Ok((DenseMatrix::from_vec(n_out, dim, data)?, selections))
            })
            .collect::<Result<Vec<_>>>()?;

        let (per_structure, selections): (Vec<DenseMatrix>, Vec<Vec<Selection>>) = per.into_iter().unzip();
        let isolated = (0..n_out)
            .map(|o| selections.iter().all(|s| s[o].neighbors.is_empty()))
            .collect();
        let beta = model.beta().to_vec();
        let embedding = fuse(&beta, &per_structure)?;
        Ok(OutEmbedding {
            app_ids: batch.app_ids().to_vec(),
            structure_names: model.structure_names().into_iter().map(str::to_owned).collect(),
            embedding,
            per_structure,
            beta,
            isolated,
            selections,
        })
    }
}

/// Embeds one batch, compiling the incremental programs on the fly.
pub fn embed_batch(model: &MsGatModel, hin: &Hin, batch: &AppBatch, cfg: &IncrementalConfig) -> Result<OutEmbedding> {
    Embedder::new(model, hin)?.embed(batch, cfg)
}

/// Re-optimizes the structure weights on a labeled calibration batch with the
/// classifier head frozen. Weights stay on the simplex through a softmax
/// parameterization initialized at the current weights.
pub fn fine_tune_beta(
    model: &MsGatModel,
    calibration: &OutEmbedding,
    labels: &[Option<Label>],
    steps: usize,
    learning_rate: f64,
) -> Result<Vec<f64>> {
    let targets: Vec<(usize, usize)> = labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|l| (i, l.class())))
        .collect();
    if targets.is_empty() {
        return Err(Error::Validation("calibration batch has no labeled apps".into()));
    }
    if labels.len() != calibration.len() {
        return Err(Error::dims("fine_tune_beta", (labels.len(), 1), (calibration.len(), 1)));
    }
    let targets: Arc<[(usize, usize)]> = targets.into();
    let k = calibration.per_structure.len();
    let mut theta: Vec<f64> = model.beta().iter().map(|b| b.max(1e-300).ln()).collect();
    let head = model.head();
    for _ in 0..steps {
        let mut tape = Tape::new();
        let t = tape.leaf(DenseMatrix::from_vec(1, k, theta.clone())?);
        let beta = tape.softmax_rows(t);
        let mut fused = None;
        for (i, phi) in calibration.per_structure.iter().enumerate() {
            let b = tape.element(beta, 0, i);
            let p = tape.leaf(phi.clone());
            let term = tape.scalar_mul(b, p);
            fused = Some(match fused {
                None => term,
                Some(acc) => tape.add(acc, term),
            });
        }
        let w = tape.leaf(head.w.clone());
        let bias = tape.leaf(head.b.clone());
        let logits = tape.matmul(fused.expect("k >= 1"), w);
        let logits = tape.add_row(logits, bias);
        let loss = tape.cross_entropy(logits, targets.clone());
        let g = tape.backward(loss).wrt(t);
        for (th, d) in theta.iter_mut().zip(g.as_slice()) {
            *th -= learning_rate * d;
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("structure weight tuning diverged".into()));
        }
    }
    if steps == 0 {
        return Ok(model.beta().to_vec());
    }
    let mut beta = theta;
    crate::numerics::tape::softmax_in_place(&mut beta);
    Ok(beta)
}
