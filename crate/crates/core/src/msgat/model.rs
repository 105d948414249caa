use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{build_features, masked_adjacency, FeatureMode};
use super::layers::{
    egat_on_tape, fuse, fuse_on_tape, AttentionGraph, ClassifierHead, EgatLayer, EgatVars,
    InterMsAttention,
};
use crate::error::{Error, Result};
use crate::hin::{Hin, Label};
use crate::metastructure::{build_all, AdjacencyMatrix, MetaStructure};
use crate::numerics::{DenseMatrix, SparseMatrix, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub tau: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub heads: usize,
    pub leaky_slope: f64,
    pub features: FeatureMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            tau: 0.1,
            epochs: 200,
            learning_rate: 0.5,
            seed: 0,
            heads: 1,
            leaky_slope: 0.2,
            features: FeatureMode::Incidence,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!("dim must be at least 2, got {}", self.dim)));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1), got {}", self.tau)));
        }
        if self.heads == 0 {
            return Err(Error::Config("heads must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::Config("leaky_slope must be finite".into()));
        }
        Ok(())
    }
}

/// Features and attention graphs of an in-sample HIN, shared by every
/// training step.
#[derive(Debug, Clone)]
pub struct TrainingGraph {
    features: Arc<SparseMatrix>,
    graphs: Vec<AttentionGraph>,
    part_diags: Vec<Vec<Vec<f64>>>,
}

impl TrainingGraph {
    pub fn new(hin: &Hin, adjs: &[AdjacencyMatrix], mode: FeatureMode, tau: f64) -> Result<Self> {
        let features = build_features(hin, mode);
        let graphs = adjs
            .par_iter()
            .map(|a| masked_adjacency(&features, a, tau).map(|m| AttentionGraph::from_masked(&m)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            features: Arc::new(features.into_sparse()),
            graphs,
            part_diags: adjs.iter().map(|a| a.part_diags()).collect(),
        })
    }

    pub fn features(&self) -> &SparseMatrix {
        &self.features
    }

    pub fn graphs(&self) -> &[AttentionGraph] {
        &self.graphs
    }
}

/// All trainable parameters, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<EgatLayer>,
    pub inter: InterMsAttention,
    pub head: ClassifierHead,
}

impl Params {
    pub fn init(seed: u64, in_dim: usize, num_structures: usize, cfg: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..num_structures)
            .map(|_| EgatLayer::init(&mut rng, in_dim, cfg.dim, cfg.heads, cfg.leaky_slope))
            .collect();
        let inter = InterMsAttention::init(&mut rng, cfg.dim);
        let head = ClassifierHead::init(&mut rng, cfg.dim);
        Self { layers, inter, head }
    }

    pub fn flatten(&self) -> Vec<&DenseMatrix> {
        let mut out: Vec<&DenseMatrix> = self.layers.iter().flat_map(|l| l.params()).collect();
        out.extend(self.inter.params());
        out.push(&self.head.w);
        out.push(&self.head.b);
        out
    }

    fn flatten_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out: Vec<&mut DenseMatrix> =
            self.layers.iter_mut().flat_map(|l| l.params_mut()).collect();
        out.extend(self.inter.params_mut());
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }

    /// Overwrites every parameter, in [`Params::flatten`] order.
    pub fn assign(&mut self, values: Vec<DenseMatrix>) -> Result<()> {
        let mut slots = self.flatten_mut();
        if slots.len() != values.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            if slot.shape() != v.shape() {
                return Err(Error::dims("assign", slot.shape(), v.shape()));
            }
            **slot = v;
        }
        Ok(())
    }
}

/// Builds the full training loss on one tape from parameter variables in
/// [`Params::flatten`] order. Used for gradient checking.
pub fn loss_on_tape(
    tape: &mut Tape,
    vars: &[Var],
    graph: &TrainingGraph,
    heads: usize,
    slope: f64,
    targets: Arc<[(usize, usize)]>,
) -> Var {
    let per_layer = 3 * heads;
    let k = graph.graphs.len();
    let phis: Vec<Var> = (0..k)
        .map(|s| {
            let v = EgatVars {
                heads: &vars[s * per_layer..(s + 1) * per_layer],
                slope,
            };
            egat_on_tape(tape, &v, &graph.features, &graph.graphs[s]).output
        })
        .collect();
    let base = k * per_layer;
    let (_, fused) = fuse_on_tape(tape, [vars[base], vars[base + 1], vars[base + 2]], &phis);
    let logits = tape.matmul(fused, vars[base + 3]);
    let logits = tape.add_row(logits, vars[base + 4]);
    tape.cross_entropy(logits, targets)
}

struct StructurePass {
    tape: Tape,
    params: Vec<Var>,
    output: Var,
}

fn structure_pass(layer: &EgatLayer, features: &Arc<SparseMatrix>, graph: &AttentionGraph) -> StructurePass {
    let mut tape = Tape::new();
    let params: Vec<Var> = layer.params().into_iter().map(|p| tape.leaf(p.clone())).collect();
    let output = egat_on_tape(
        &mut tape,
        &EgatVars {
            heads: &params,
            slope: layer.slope,
        },
        features,
        graph,
    )
    .output;
    StructurePass { tape, params, output }
}

/// Forward results of the whole model.
#[derive(Debug, Clone)]
pub struct Forward {
    pub phis: Vec<DenseMatrix>,
    pub beta: Vec<f64>,
    pub fused: DenseMatrix,
}

/// Per-structure layers run in parallel; results are collected in
/// structure order.
pub fn forward(params: &Params, graph: &TrainingGraph) -> Result<Forward> {
    let phis: Vec<DenseMatrix> = params
        .layers
        .par_iter()
        .zip(&graph.graphs)
        .map(|(layer, g)| {
            let pass = structure_pass(layer, &graph.features, g);
            pass.tape.value(pass.output).clone()
        })
        .collect();
    if phis.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical("non-finite structure embedding".into()));
    }
    let beta = super::layers::inter_ms_weights(&params.inter, &phis)?;
    let fused = fuse(&beta, &phis)?;
    Ok(Forward { phis, beta, fused })
}

/// Loss and gradients in [`Params::flatten`] order.
///
/// The fusion and head live on one tape; each structure's layer has its own
/// tape, seeded with the upstream gradient through `sum(Φ_k ⊙ G_k)`.
pub fn loss_and_gradients(
    params: &Params,
    graph: &TrainingGraph,
    targets: &Arc<[(usize, usize)]>,
) -> (f64, Vec<DenseMatrix>) {
    let mut passes: Vec<StructurePass> = params
        .layers
        .par_iter()
        .zip(&graph.graphs)
        .map(|(layer, g)| structure_pass(layer, &graph.features, g))
        .collect();

    let mut top = Tape::new();
    let phis: Vec<Var> = passes
        .iter()
        .map(|p| top.leaf(p.tape.value(p.output).clone()))
        .collect();
    let att = [&params.inter.w, &params.inter.b, &params.inter.q].map(|p| top.leaf(p.clone()));
    let hw = top.leaf(params.head.w.clone());
    let hb = top.leaf(params.head.b.clone());
    let (_, fused) = fuse_on_tape(&mut top, att, &phis);
    let logits = top.matmul(fused, hw);
    let logits = top.add_row(logits, hb);
    let loss = top.cross_entropy(logits, targets.clone());
    let loss_value = top.value(loss).get(0, 0);
    let top_grads = top.backward(loss);

    let layer_grads: Vec<Vec<DenseMatrix>> = passes
        .par_iter_mut()
        .zip(&phis)
        .map(|(pass, &phi)| {
            let upstream = top_grads.wrt(phi);
            let n = (upstream.rows() * upstream.cols()) as f64;
            let g = pass.tape.leaf(upstream);
            let prod = pass.tape.mul(pass.output, g);
            let mean = pass.tape.mean(prod);
            let seeded = pass.tape.scale(mean, n);
            let grads = pass.tape.backward(seeded);
            pass.params.iter().map(|&v| grads.wrt(v)).collect()
        })
        .collect();

    let mut out: Vec<DenseMatrix> = layer_grads.into_iter().flatten().collect();
    out.extend(att.iter().map(|&v| top_grads.wrt(v)));
    out.push(top_grads.wrt(hw));
    out.push(top_grads.wrt(hb));
    (loss_value, out)
}

/// Checks the label mask and turns it into `(row, class)` targets.
pub fn training_targets(hin: &Hin, mask: &[usize]) -> Result<Arc<[(usize, usize)]>> {
    let mut counts = [0usize; 2];
    let mut targets = Vec::with_capacity(mask.len());
    for &i in mask {
        let label = hin
            .labels()
            .get(i)
            .ok_or(Error::IndexOutOfRange {
                index: i,
                len: hin.num_apps(),
            })?
            .ok_or_else(|| Error::Validation(format!("training app {} is unlabeled", hin.app_ids()[i])))?;
        counts[label.class()] += 1;
        targets.push((i, label.class()));
    }
    for label in [Label::Benign, Label::Malicious] {
        let n = counts[label.class()];
        if n < 2 {
            return Err(Error::Validation(format!(
                "training mask has {n} {} apps, at least 2 are required",
                label.as_str()
            )));
        }
    }
    Ok(targets.into())
}

/// A trained in-sample model.
#[derive(Debug, Clone, PartialEq)]
pub struct MsGatModel {
    pub(crate) structures: Vec<MetaStructure>,
    pub(crate) params: Params,
    pub(crate) config: TrainConfig,
    pub(crate) phis: Vec<DenseMatrix>,
    pub(crate) beta: Vec<f64>,
    pub(crate) fused: DenseMatrix,
    /// Per structure, per part: in-sample self path counts.
    pub(crate) part_diags: Vec<Vec<Vec<f64>>>,
    pub(crate) fingerprint: String,
    pub(crate) loss_history: Vec<f64>,
}

impl MsGatModel {
    pub fn structures(&self) -> &[MetaStructure] {
        &self.structures
    }

    pub fn structure_names(&self) -> Vec<&str> {
        self.structures.iter().map(|s| s.name()).collect()
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Final per-structure embeddings `Φ_k`.
    pub fn structure_embeddings(&self) -> &[DenseMatrix] {
        &self.phis
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn embedding(&self) -> &DenseMatrix {
        &self.fused
    }

    pub fn part_diags(&self) -> &[Vec<Vec<f64>>] {
        &self.part_diags
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Loss before each gradient step.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn num_apps(&self) -> usize {
        self.fused.rows()
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.params.head
    }

    /// Malicious-class probability for each embedding row.
    pub fn predict_proba(&self, embedding: &DenseMatrix) -> Result<Vec<f64>> {
        let logits = embedding.matmul(&self.params.head.w)?;
        let b = self.params.head.b.as_slice();
        Ok((0..logits.rows())
            .map(|r| {
                let mut row = [logits.get(r, 0) + b[0], logits.get(r, 1) + b[1]];
                crate::numerics::tape::softmax_in_place(&mut row);
                row[Label::Malicious.class()]
            })
            .collect())
    }

    pub(crate) fn check_fingerprint(&self, hin: &Hin) -> Result<()> {
        let got = hin.fingerprint();
        if got != self.fingerprint {
            return Err(Error::Validation(format!(
                "HIN fingerprint {got} does not match the model's {}",
                self.fingerprint
            )));
        }
        Ok(())
    }

    /// Fused in-sample embedding `Φ`.
    pub fn embed_in_sample(&self, hin: &Hin) -> Result<DenseMatrix> {
        self.check_fingerprint(hin)?;
        Ok(self.fused.clone())
    }

    /// Recomputes the forward pass from stored parameters.
    pub fn recompute(&self, hin: &Hin, adjs: &[AdjacencyMatrix]) -> Result<Forward> {
        self.check_fingerprint(hin)?;
        let graph = TrainingGraph::new(hin, adjs, self.config.features, self.config.tau)?;
        forward(&self.params, &graph)
    }

    pub fn with_beta(mut self, beta: Vec<f64>) -> Result<Self> {
        self.set_beta(beta)?;
        Ok(self)
    }

    fn set_beta(&mut self, beta: Vec<f64>) -> Result<()> {
        self.fused = fuse(&beta, &self.phis)?;
        self.beta = beta;
        Ok(())
    }
}

/// Trains on every labeled app.
pub fn train(hin: &Hin, structures: &[MetaStructure], config: &TrainConfig) -> Result<MsGatModel> {
    let adjs = build_all(hin, structures)?;
    train_with(hin, structures, &adjs, config, &hin.labeled())
}

/// Trains with precomputed adjacencies on the apps in `mask`.
pub fn train_with(
    hin: &Hin,
    structures: &[MetaStructure],
    adjs: &[AdjacencyMatrix],
    config: &TrainConfig,
    mask: &[usize],
) -> Result<MsGatModel> {
    config.validate()?;
    if structures.is_empty() {
        return Err(Error::Config("at least one meta-structure is required".into()));
    }
    if adjs.len() != structures.len() || adjs.iter().zip(structures).any(|(a, s)| a.name() != s.name()) {
        return Err(Error::Validation("adjacencies do not match the structure list".into()));
    }
    if adjs.iter().any(|a| a.len() != hin.num_apps()) {
        return Err(Error::Validation("adjacency size differs from the HIN app count".into()));
    }
    let targets = training_targets(hin, mask)?;
    let graph = TrainingGraph::new(hin, adjs, config.features, config.tau)?;
    let mut params = Params::init(config.seed, graph.features.cols(), structures.len(), config);

    let mut loss_history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (loss, grads) = loss_and_gradients(&params, &graph, &targets);
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "training diverged at epoch {epoch} (loss {loss}); lower the learning rate"
            )));
        }
        loss_history.push(loss);
        for (p, g) in params.flatten_mut().into_iter().zip(&grads) {
            p.axpy(-config.learning_rate, g)?;
        }
    }

    let fwd = forward(&params, &graph)?;
    Ok(MsGatModel {
        structures: structures.to_vec(),
        params,
        config: config.clone(),
        phis: fwd.phis,
        beta: fwd.beta,
        fused: fwd.fused,
        part_diags: graph.part_diags,
        fingerprint: hin.fingerprint(),
        loss_history,
    })
}
