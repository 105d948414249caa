//! Attention layers and their tape forward passes.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, SparseMatrix, Tape, Var};

/// Logit offset inside `ln(Ψ'_ij + ε)`.
pub const EDGE_EPS: f64 = 1e-12;
pub const ELU_ALPHA: f64 = 1.0;

/// Glorot/Xavier uniform initialization.
pub(crate) fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> DenseMatrix {
    let s = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-s..s)).collect();
    DenseMatrix::from_raw(rows, cols, data)
}

/// The neighbor set and edge-weight bias a layer attends over.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGraph {
    /// Support of `Ψ'` plus self-loops.
    pub pattern: Arc<SparseMatrix>,
    /// `ln(Ψ'_ij + ε)` per stored entry, `nnz × 1`.
    pub bias: DenseMatrix,
}

impl AttentionGraph {
    /// Builds the attention graph from a masked, normalized adjacency.
    /// Added self-loops carry weight 0.
    pub fn from_masked(masked: &SparseMatrix) -> Self {
        let pattern = masked.with_diagonal(0.0);
        let bias = pattern.values().iter().map(|&w| (w + EDGE_EPS).ln()).collect();
        Self {
            bias: DenseMatrix::from_raw(pattern.nnz(), 1, bias),
            pattern: Arc::new(pattern),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.pattern.rows()
    }
}

/// One attention head: projection plus split attention vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EgatHead {
    pub w: DenseMatrix,
    pub a_src: DenseMatrix,
    pub a_dst: DenseMatrix,
}

/// Edge-weight aware graph attention layer; heads are averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct EgatLayer {
    pub heads: Vec<EgatHead>,
    pub slope: f64,
}

impl EgatLayer {
    pub fn init(rng: &mut ChaCha8Rng, in_dim: usize, dim: usize, heads: usize, slope: f64) -> Self {
        let heads = (0..heads)
            .map(|_| {
                let w = glorot(rng, in_dim, dim, in_dim, dim);
                let a = glorot(rng, 2 * dim, 1, 2 * dim, 1);
                let (src, dst) = a.as_slice().split_at(dim);
                EgatHead {
                    w,
                    a_src: DenseMatrix::from_raw(dim, 1, src.to_vec()),
                    a_dst: DenseMatrix::from_raw(dim, 1, dst.to_vec()),
                }
            })
            .collect();
        Self { heads, slope }
    }

    pub fn dim(&self) -> usize {
        self.heads[0].w.cols()
    }

    pub(crate) fn params(&self) -> Vec<&DenseMatrix> {
        self.heads
            .iter()
            .flat_map(|h| [&h.w, &h.a_src, &h.a_dst])
            .collect()
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        self.heads
            .iter_mut()
            .flat_map(|h| [&mut h.w, &mut h.a_src, &mut h.a_dst])
            .collect()
    }
}

/// Tape variables for one layer, ordered as [`EgatLayer::params`].
pub(crate) struct EgatVars<'a> {
    pub heads: &'a [Var],
    pub slope: f64,
}

pub(crate) struct EgatTrace {
    pub output: Var,
    pub attention: Vec<Var>,
}

pub(crate) fn egat_on_tape(
    tape: &mut Tape,
    vars: &EgatVars<'_>,
    features: &Arc<SparseMatrix>,
    graph: &AttentionGraph,
) -> EgatTrace {
    let mut sum: Option<Var> = None;
    let mut attention = Vec::new();
    for head in vars.heads.chunks(3) {
        let (w, a_src, a_dst) = (head[0], head[1], head[2]);
        let z = tape.spmm(features.clone(), w);
        let s = tape.matmul(z, a_src);
        let d = tape.matmul(z, a_dst);
        let e = tape.edge_gather(graph.pattern.clone(), s, d);
        let e = tape.leaky_relu(e, vars.slope);
        let e = tape.add_const(e, &graph.bias);
        let att = tape.masked_softmax(graph.pattern.clone(), e);
        let agg = tape.edge_spmm(graph.pattern.clone(), att, z);
        let out = tape.elu(agg, ELU_ALPHA);
        attention.push(att);
        sum = Some(match sum {
            None => out,
            Some(acc) => tape.add(acc, out),
        });
    }
    let n = vars.heads.len() / 3;
    let sum = sum.expect("at least one head");
    let output = if n == 1 { sum } else { tape.scale(sum, 1.0 / n as f64) };
    EgatTrace { output, attention }
}

/// Output of a standalone layer evaluation.
#[derive(Debug, Clone)]
pub struct EgatOutput {
    pub embedding: DenseMatrix,
    /// Attention coefficients per head, aligned with the graph pattern.
    pub attention: Vec<SparseMatrix>,
}

/// Evaluates one layer on `features` over `graph`.
pub fn egat_forward(layer: &EgatLayer, features: &SparseMatrix, graph: &AttentionGraph) -> Result<EgatOutput> {
    if features.rows() != graph.num_nodes() {
        return Err(Error::dims("egat_forward", features.shape(), graph.pattern.shape()));
    }
    if features.cols() != layer.heads[0].w.rows() {
        return Err(Error::dims("egat_forward", features.shape(), layer.heads[0].w.shape()));
    }
    let mut tape = Tape::new();
    let heads: Vec<Var> = layer.params().into_iter().map(|p| tape.leaf(p.clone())).collect();
    let trace = egat_on_tape(
        &mut tape,
        &EgatVars {
            heads: &heads,
            slope: layer.slope,
        },
        &Arc::new(features.clone()),
        graph,
    );
    let embedding = tape.value(trace.output).clone();
    if !embedding.is_finite() {
        return Err(Error::Numerical("non-finite attention layer output".into()));
    }
    let attention = trace
        .attention
        .iter()
        .map(|&a| graph.pattern.with_pattern_values(tape.value(a).as_slice().to_vec()))
        .collect();
    Ok(EgatOutput { embedding, attention })
}

/// Scores each structure's embedding: `mean_i qᵀ tanh(W φ_i + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterMsAttention {
    pub w: DenseMatrix,
    pub b: DenseMatrix,
    pub q: DenseMatrix,
}

impl InterMsAttention {
    pub fn init(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        Self {
            w: glorot(rng, dim, dim, dim, dim),
            b: DenseMatrix::zeros(1, dim),
            q: glorot(rng, dim, 1, dim, 1),
        }
    }

    pub(crate) fn params(&self) -> Vec<&DenseMatrix> {
        vec![&self.w, &self.b, &self.q]
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        vec![&mut self.w, &mut self.b, &mut self.q]
    }
}

/// Returns the `1 × K` fusion weights and the fused embedding.
pub(crate) fn fuse_on_tape(tape: &mut Tape, att: [Var; 3], phis: &[Var]) -> (Var, Var) {
    let [w, b, q] = att;
    let scores: Vec<Var> = phis
        .iter()
        .map(|&phi| {
            let h = tape.matmul(phi, w);
            let h = tape.add_row(h, b);
            let h = tape.tanh(h);
            let s = tape.matmul(h, q);
            tape.mean(s)
        })
        .collect();
    let scores = tape.concat(&scores);
    let beta = tape.softmax_rows(scores);
    let mut fused: Option<Var> = None;
    for (k, &phi) in phis.iter().enumerate() {
        let bk = tape.element(beta, 0, k);
        let term = tape.scalar_mul(bk, phi);
        fused = Some(match fused {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    (beta, fused.expect("at least one structure"))
}

/// Softmax fusion weights over structures.
pub fn inter_ms_weights(att: &InterMsAttention, phis: &[DenseMatrix]) -> Result<Vec<f64>> {
    if phis.is_empty() {
        return Err(Error::Validation("inter-structure attention needs K >= 1".into()));
    }
    let mut tape = Tape::new();
    let vars = [att.w.clone(), att.b.clone(), att.q.clone()].map(|p| tape.leaf(p));
    let phi_vars: Vec<Var> = phis.iter().map(|p| tape.leaf(p.clone())).collect();
    let (beta, _) = fuse_on_tape(&mut tape, vars, &phi_vars);
    Ok(tape.value(beta).as_slice().to_vec())
}

/// `Σ_k β_k Φ_k`.
pub fn fuse(beta: &[f64], phis: &[DenseMatrix]) -> Result<DenseMatrix> {
    if beta.len() != phis.len() || phis.is_empty() {
        return Err(Error::dims("fuse", (beta.len(), 1), (phis.len(), 1)));
    }
    let mut out = DenseMatrix::zeros(phis[0].rows(), phis[0].cols());
    for (&b, phi) in beta.iter().zip(phis) {
        out.axpy(b, phi)?;
    }
    Ok(out)
}

/// Softmax classification head, `D × 2` weights plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub w: DenseMatrix,
    pub b: DenseMatrix,
}

impl ClassifierHead {
    pub fn init(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        Self {
            w: glorot(rng, dim, 2, dim, 2),
            b: DenseMatrix::zeros(1, 2),
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn graph_from(triplets: &[(usize, usize, f64)], n: usize) -> AttentionGraph {
        AttentionGraph::from_masked(&SparseMatrix::from_triplets(n, n, triplets.iter().copied()).unwrap())
    }

    #[test]
    fn lone_node_attends_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = EgatLayer::init(&mut rng, 3, 4, 1, 0.2);
        let h = SparseMatrix::from_triplets(1, 3, [(0, 0, 1.0), (0, 2, 1.0)]).unwrap();
        let out = egat_forward(&layer, &h, &graph_from(&[], 1)).unwrap();
        let wh = h.spmm(&layer.heads[0].w).unwrap();
        let want = wh.map(|v| crate::numerics::tape::elu(v, ELU_ALPHA));
        assert_eq!(out.embedding, want);
        assert_eq!(out.attention[0].values(), &[1.0]);
    }

    #[test]
    fn identical_nodes_identical_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = EgatLayer::init(&mut rng, 2, 3, 2, 0.2);
        let h = SparseMatrix::from_triplets(2, 2, [(0, 0, 1.0), (1, 0, 1.0)]).unwrap();
        let g = graph_from(&[(0, 0, 0.5), (0, 1, 0.5), (1, 0, 0.5), (1, 1, 0.5)], 2);
        let out = egat_forward(&layer, &h, &g).unwrap();
        assert_eq!(out.embedding.row(0), out.embedding.row(1));
    }

    #[test]
    fn inter_weights_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let att = InterMsAttention::init(&mut rng, 3);
        let phi = glorot(&mut rng, 4, 3, 1, 1);
        assert_eq!(inter_ms_weights(&att, std::slice::from_ref(&phi)).unwrap(), vec![1.0]);
        let beta = inter_ms_weights(&att, &[phi.clone(), phi.clone(), phi]).unwrap();
        for b in beta {
            assert!((b - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(inter_ms_weights(&att, &[]).is_err());
    }

    #[test]
    fn inter_weights_match_scalar_oracle() {
        // Hand-set parameters, D = 2, two structures with two nodes each.
        let att = InterMsAttention {
            w: DenseMatrix::from_rows(&[vec![0.5, -1.0], vec![0.25, 2.0]]).unwrap(),
            b: DenseMatrix::from_rows(&[vec![0.1, -0.2]]).unwrap(),
            q: DenseMatrix::from_rows(&[vec![1.5], vec![-0.5]]).unwrap(),
        };
        let phis = [
            DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.5, -0.5]]).unwrap(),
            DenseMatrix::from_rows(&[vec![-1.0, 2.0], vec![0.0, 0.3]]).unwrap(),
        ];
        let score = |phi: &DenseMatrix| {
            let mut total = 0.0;
            for i in 0..2 {
                let (x0, x1) = (phi.get(i, 0), phi.get(i, 1));
                // Row vector times W: h_c = Σ_r x_r W[r][c].
                let h0 = (x0 * 0.5 + x1 * 0.25 + 0.1).tanh();
                let h1 = (-x0 + x1 * 2.0 - 0.2).tanh();
                total += 1.5 * h0 - 0.5 * h1;
            }
            total / 2.0
        };
        let (s0, s1) = (score(&phis[0]), score(&phis[1]));
        let z = s0.exp() + s1.exp();
        let want = [s0.exp() / z, s1.exp() / z];
        let got = inter_ms_weights(&att, &phis).unwrap();
        for k in 0..2 {
            assert!((got[k] - want[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn fuse_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = glorot(&mut rng, 3, 2, 1, 1);
        assert_eq!(fuse(&[1.0, 0.0], &[a.clone(), a.scale(7.0)]).unwrap(), a);
        let zero = fuse(&[0.5, 0.5], &[a.clone(), a.scale(-1.0)]).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 0.0));
        let mats: Vec<DenseMatrix> = (0..3).map(|_| glorot(&mut rng, 3, 2, 1, 1)).collect();
        let beta = [0.2, 0.3, 0.5];
        let got = fuse(&beta, &mats).unwrap();
        for r in 0..3 {
            for c in 0..2 {
                let want: f64 = (0..3).map(|k| beta[k] * mats[k].get(r, c)).sum();
                assert!((got.get(r, c) - want).abs() < 1e-15);
            }
        }
        assert!(fuse(&[1.0], &mats).is_err());
    }
}
