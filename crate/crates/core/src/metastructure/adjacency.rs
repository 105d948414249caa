//! App × app path-count matrices for meta-paths and meta-graphs, and the
//! PathSim similarity derived from them.

use rayon::prelude::*;

use super::dsl::{Hop, MetaPath, MetaStructure};
use crate::error::{Error, Result};
use crate::hin::Hin;
use crate::numerics::SparseMatrix;

/// Evaluation order for a chain of relation products.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ChainOrder {
    #[default]
    LeftToRight,
    /// Dynamic-programming bracketing that minimizes estimated
    /// intermediate nonzeros.
    MinFill,
}

/// Path counts of one meta-path (a single part) over in-sample apps.
#[derive(Debug, Clone, PartialEq)]
pub struct PartAdjacency {
    pub psi: SparseMatrix,
    pub diag: Vec<f64>,
}

impl PartAdjacency {
    fn new(psi: SparseMatrix) -> Self {
        let diag = psi.diagonal();
        Self { psi, diag }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    name: String,
    psi: SparseMatrix,
    diag: Vec<f64>,
    /// Per-part counts for meta-graphs; empty for meta-paths.
    parts: Vec<PartAdjacency>,
}

impl AdjacencyMatrix {
    pub(crate) fn from_parts(name: String, mut parts: Vec<PartAdjacency>) -> Result<Self> {
        if parts.len() == 1 {
            let p = parts.pop().expect("one part");
            return Ok(Self {
                name,
                psi: p.psi,
                diag: p.diag,
                parts,
            });
        }
        let mut psi = parts[0].psi.clone();
        for p in &parts[1..] {
            psi = psi.hadamard(&p.psi)?;
        }
        let diag = psi.diagonal();
        Ok(Self {
            name,
            psi,
            diag,
            parts,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn psi(&self) -> &SparseMatrix {
        &self.psi
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn len(&self) -> usize {
        self.psi.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.rows() == 0
    }

    pub fn is_graph(&self) -> bool {
        !self.parts.is_empty()
    }

    /// Part adjacencies; for a meta-path, a single view of itself.
    pub fn part_views(&self) -> Vec<(&SparseMatrix, &[f64])> {
        if self.parts.is_empty() {
            vec![(&self.psi, &self.diag)]
        } else {
            self.parts.iter().map(|p| (&p.psi, p.diag.as_slice())).collect()
        }
    }

    /// Per-part diagonals, the only in-sample state incremental similarity
    /// needs.
    pub fn part_diags(&self) -> Vec<Vec<f64>> {
        self.part_views().into_iter().map(|(_, d)| d.to_vec()).collect()
    }

    /// `2Ψ_ij / (Ψ_ii + Ψ_jj)` on this matrix's own counts.
    pub fn pathsim(&self, i: usize, j: usize) -> Result<f64> {
        let n = self.len();
        for idx in [i, j] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, len: n });
            }
        }
        Ok(pathsim_value(self.psi.get(i, j), self.diag[i], self.diag[j]))
    }

    /// Structure-level similarity: PathSim for meta-paths, the product of
    /// per-part PathSims for meta-graphs.
    pub fn similarity(&self, i: usize, j: usize) -> Result<f64> {
        if self.parts.is_empty() {
            return self.pathsim(i, j);
        }
        let n = self.len();
        for idx in [i, j] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, len: n });
            }
        }
        let sims: Vec<f64> = self
            .parts
            .iter()
            .map(|p| pathsim_value(p.psi.get(i, j), p.diag[i], p.diag[j]))
            .collect();
        metagraph_sim(&sims, self.parts.len())
    }
}

/// PathSim from raw counts; zero when both self-counts are zero.
#[inline]
pub fn pathsim_value(count: f64, self_i: f64, self_j: f64) -> f64 {
    let denom = self_i + self_j;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * count / denom
    }
}

/// Meta-graph similarity as the product of its parts' PathSim values.
pub fn metagraph_sim(part_sims: &[f64], expected_parts: usize) -> Result<f64> {
    if part_sims.len() != expected_parts {
        return Err(Error::Validation(format!(
            "meta-graph has {expected_parts} parts, got {} similarities",
            part_sims.len()
        )));
    }
    Ok(part_sims.iter().product())
}

pub(crate) fn hop_matrix(hin: &Hin, hop: Hop) -> SparseMatrix {
    let m = hin.relation(hop.relation);
    if hop.transposed {
        m.transpose()
    } else {
        m.clone()
    }
}

/// Multiplies a chain of matrices in the requested order.
pub fn chain_product(mats: &[SparseMatrix], order: ChainOrder) -> Result<SparseMatrix> {
    assert!(!mats.is_empty(), "empty chain");
    for w in mats.windows(2) {
        if w[0].cols() != w[1].rows() {
            return Err(Error::dims("chain", w[0].shape(), w[1].shape()));
        }
    }
    match order {
        ChainOrder::LeftToRight => {
            let mut acc = mats[0].clone();
            for m in &mats[1..] {
                acc = acc.spgemm(m)?;
            }
            Ok(acc)
        }
        ChainOrder::MinFill => {
            let split = min_fill_splits(mats);
            eval_split(mats, &split, 0, mats.len() - 1)
        }
    }
}

/// Estimated nonzeros of a product under independent uniform supports.
fn estimate_nnz(rows: usize, inner: usize, cols: usize, nnz_a: f64, nnz_b: f64) -> f64 {
    let cells = (rows * cols) as f64;
    if cells == 0.0 || inner == 0 {
        return 0.0;
    }
    let da = nnz_a / (rows * inner) as f64;
    let db = nnz_b / (inner * cols) as f64;
    cells * (1.0 - (1.0 - da * db).powi(inner as i32))
}

fn min_fill_splits(mats: &[SparseMatrix]) -> Vec<Vec<usize>> {
    let n = mats.len();
    let mut cost = vec![vec![0.0f64; n]; n];
    let mut nnz = vec![vec![0.0f64; n]; n];
    let mut split = vec![vec![0usize; n]; n];
    for (i, m) in mats.iter().enumerate() {
        nnz[i][i] = m.nnz() as f64;
    }
    for len in 2..=n {
        for i in 0..=n - len {
            let j = i + len - 1;
            cost[i][j] = f64::INFINITY;
            for k in i..j {
                let est = estimate_nnz(mats[i].rows(), mats[k].cols(), mats[j].cols(), nnz[i][k], nnz[k + 1][j]);
                let c = cost[i][k] + cost[k + 1][j] + est;
                if c < cost[i][j] {
                    cost[i][j] = c;
                    split[i][j] = k;
                    nnz[i][j] = est;
                }
            }
        }
    }
    split
}

fn eval_split(mats: &[SparseMatrix], split: &[Vec<usize>], i: usize, j: usize) -> Result<SparseMatrix> {
    if i == j {
        return Ok(mats[i].clone());
    }
    let k = split[i][j];
    eval_split(mats, split, i, k)?.spgemm(&eval_split(mats, split, k + 1, j)?)
}

fn part_adjacency(hin: &Hin, path: &MetaPath, order: ChainOrder) -> Result<PartAdjacency> {
    let mats: Vec<SparseMatrix> = path.hops().iter().map(|&h| hop_matrix(hin, h)).collect();
    let psi = chain_product(&mats, order)?;
    let n = hin.num_apps();
    if psi.shape() != (n, n) {
        return Err(Error::dims("build_adjacency", psi.shape(), (n, n)));
    }
    Ok(PartAdjacency::new(psi))
}

pub fn build_adjacency(hin: &Hin, m: &MetaStructure) -> Result<AdjacencyMatrix> {
    build_adjacency_with(hin, m, ChainOrder::LeftToRight)
}

pub fn build_adjacency_with(hin: &Hin, m: &MetaStructure, order: ChainOrder) -> Result<AdjacencyMatrix> {
    let parts = m
        .parts()
        .iter()
        .map(|p| part_adjacency(hin, p, order))
        .collect::<Result<Vec<_>>>()?;
    AdjacencyMatrix::from_parts(m.name().to_owned(), parts)
}

/// Builds every structure's adjacency, in parallel across structures.
pub fn build_all(hin: &Hin, structures: &[MetaStructure]) -> Result<Vec<AdjacencyMatrix>> {
    structures
        .par_iter()
        .map(|m| build_adjacency(hin, m))
        .collect()
}
