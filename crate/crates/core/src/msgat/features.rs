use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hin::{Hin, Relation};
use crate::metastructure::AdjacencyMatrix;
use crate::numerics::{DenseMatrix, SparseMatrix};

/// How app nodes are encoded as input features.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Concatenated entity incidence `[API | P | C | I | S]`.
    #[default]
    Incidence,
    /// One indicator column per app.
    Identity,
}

/// Binary app features, `L × F`, kept sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(SparseMatrix);

impl FeatureMatrix {
    pub fn as_sparse(&self) -> &SparseMatrix {
        &self.0
    }

    pub fn into_sparse(self) -> SparseMatrix {
        self.0
    }

    pub fn to_dense(&self) -> DenseMatrix {
        self.0.to_dense()
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.cols()
    }
}

pub fn build_features(hin: &Hin, mode: FeatureMode) -> FeatureMatrix {
    match mode {
        FeatureMode::Identity => FeatureMatrix(SparseMatrix::identity(hin.num_apps())),
        FeatureMode::Incidence => {
            let mut triplets = Vec::new();
            let mut offset = 0;
            for r in Relation::APP_RELATIONS {
                let m = hin.relation(r);
                for row in 0..m.rows() {
                    triplets.extend(m.row(row).0.iter().map(|&c| (row, offset + c, 1.0)));
                }
                offset += m.cols();
            }
            FeatureMatrix(
                SparseMatrix::from_triplets(hin.num_apps(), offset, triplets)
                    .expect("in-range incidence"),
            )
        }
    }
}

/// `Ψ' = normalize((H·Hᵀ) ⊙ Ψ)` with entries below `tau` removed. Only the
/// support of `Ψ` is evaluated.
pub fn masked_adjacency(features: &FeatureMatrix, adj: &AdjacencyMatrix, tau: f64) -> Result<SparseMatrix> {
    let h = features.as_sparse();
    let psi = adj.psi();
    if psi.rows() != h.rows() || psi.cols() != h.rows() {
        return Err(Error::dims("masked_adjacency", psi.shape(), (h.rows(), h.rows())));
    }
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::Config(format!("tau must lie in [0, 1), got {tau}")));
    }
    let mut triplets = Vec::with_capacity(psi.nnz());
    for i in 0..psi.rows() {
        let (cols, vals) = psi.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            let overlap = sparse_row_dot(h, i, j);
            if overlap != 0.0 {
                triplets.push((i, j, overlap * v));
            }
        }
    }
    let weighted = SparseMatrix::from_triplets(psi.rows(), psi.cols(), triplets)?;
    Ok(weighted.row_normalize()?.map_values(|v| if v < tau { 0.0 } else { v }))
}

fn sparse_row_dot(m: &SparseMatrix, a: usize, b: usize) -> f64 {
    let (ac, av) = m.row(a);
    let (bc, bv) = m.row(b);
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < ac.len() && j < bc.len() {
        match ac[i].cmp(&bc[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += av[i] * bv[j];
                i += 1;
                j += 1;
            }
        }
    }
    s
}
