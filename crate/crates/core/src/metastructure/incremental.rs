//! In-sample × out-of-sample path counts.
//!
//! For a chain `R₁ · M · R_lastᵀ` the segment is `Ψ̂ = R₁,in · M · R_last,outᵀ`.
//! [`IncrementalProgram`] precomputes the in-sample side `(R₁,in · M)ᵀ` once,
//! after which each new app costs one sparse row product per part.
//! Intermediate app nodes of longer chains range over in-sample apps only.

use super::adjacency::{chain_product, hop_matrix, ChainOrder};
use super::dsl::{MetaPath, MetaStructure};
use crate::error::{Error, Result};
use crate::hin::{AppBatch, EntityType, Hin, Relation};
use crate::numerics::SparseMatrix;

#[derive(Debug, Clone)]
struct PreparedPart {
    first: Relation,
    last: Relation,
    /// Product of the interior hops; `None` when the chain is `A-X-A`.
    middle: Option<SparseMatrix>,
    /// `(R₁,in · M)ᵀ`, shape `|X_last| × L_in`.
    in_side_t: SparseMatrix,
}

impl PreparedPart {
    fn prepare(hin: &Hin, path: &MetaPath) -> Result<Self> {
        let hops = path.hops();
        let first = hops[0];
        let last = hops[hops.len() - 1];
        debug_assert!(!first.transposed && last.transposed);
        let middle = if hops.len() > 2 {
            let mats: Vec<SparseMatrix> = hops[1..hops.len() - 1]
                .iter()
                .map(|&h| hop_matrix(hin, h))
                .collect();
            Some(chain_product(&mats, ChainOrder::LeftToRight)?)
        } else {
            None
        };
        let left = hin.relation(first.relation);
        let in_side = match &middle {
            Some(m) => left.spgemm(m)?,
            None => left.clone(),
        };
        Ok(Self {
            first: first.relation,
            last: last.relation,
            middle,
            in_side_t: in_side.transpose(),
        })
    }

    /// Ψ̂ᵀ rows (`L_out × L_in`) and the out apps' self counts.
    fn apply(&self, batch: &AppBatch) -> Result<(SparseMatrix, Vec<f64>)> {
        let out_last = batch.relation(self.last);
        let psi_t = out_last.spgemm(&self.in_side_t)?;
        let out_first = batch.relation(self.first);
        let q = match &self.middle {
            Some(m) => out_first.spgemm(m)?,
            None => out_first.clone(),
        };
        let diag = (0..batch.len())
            .map(|o| sparse_dot(q.row(o), out_last.row(o)))
            .collect();
        Ok((psi_t, diag))
    }
}

fn sparse_dot((ac, av): (&[usize], &[f64]), (bc, bv): (&[usize], &[f64])) -> f64 {
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

/// A meta-structure compiled against a fixed in-sample HIN, ready to
/// produce incremental segments for any number of batches.
#[derive(Debug, Clone)]
pub struct IncrementalProgram {
    name: String,
    in_apps: usize,
    catalog_sizes: [usize; 7],
    parts: Vec<PreparedPart>,
}

impl IncrementalProgram {
    pub fn prepare(hin: &Hin, m: &MetaStructure) -> Result<Self> {
        let parts = m
            .parts()
            .iter()
            .map(|p| PreparedPart::prepare(hin, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: m.name().to_owned(),
            in_apps: hin.num_apps(),
            catalog_sizes: EntityType::ALL.map(|t| hin.catalog(t).len()),
            parts,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_parts(&self) -> usize {
        self.parts.len()
    }

    fn check_aligned(&self, batch: &AppBatch) -> Result<()> {
        for r in Relation::APP_RELATIONS {
            let cols = batch.relation(r).cols();
            let want = self.catalog_sizes[r.target().index()];
            if cols != want {
                return Err(Error::Validation(format!(
                    "batch relation {r:?} has {cols} columns, in-sample catalog has {want}"
                )));
            }
        }
        Ok(())
    }

    /// Per-part transposed segments (`L_out × L_in`) and out self counts.
    pub fn apply_parts(&self, batch: &AppBatch) -> Result<Vec<(SparseMatrix, Vec<f64>)>> {
        self.check_aligned(batch)?;
        self.parts.iter().map(|p| p.apply(batch)).collect()
    }

    pub fn apply(&self, batch: &AppBatch) -> Result<IncrementalAdjacency> {
        let parts: Vec<(SparseMatrix, Vec<f64>)> = self
            .apply_parts(batch)?
            .into_iter()
            .map(|(psi_t, diag)| (psi_t.transpose(), diag))
            .collect();
        let mut psi_hat = parts[0].0.clone();
        let mut out_diag = parts[0].1.clone();
        for (p, d) in &parts[1..] {
            psi_hat = psi_hat.hadamard(p)?;
            for (acc, v) in out_diag.iter_mut().zip(d) {
                *acc *= v;
            }
        }
        debug_assert_eq!(psi_hat.shape(), (self.in_apps, batch.len()));
        Ok(IncrementalAdjacency {
            name: self.name.clone(),
            psi_hat,
            out_diag,
            parts: if parts.len() > 1 { parts } else { Vec::new() },
        })
    }
}

/// Path counts from in-sample apps (rows) to out-of-sample apps (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalAdjacency {
    name: String,
    psi_hat: SparseMatrix,
    out_diag: Vec<f64>,
    /// Per-part segments and self counts for meta-graphs; empty for paths.
    parts: Vec<(SparseMatrix, Vec<f64>)>,
}

impl IncrementalAdjacency {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn psi_hat(&self) -> &SparseMatrix {
        &self.psi_hat
    }

    pub fn out_diag(&self) -> &[f64] {
        &self.out_diag
    }

    pub fn part_views(&self) -> Vec<(&SparseMatrix, &[f64])> {
        if self.parts.is_empty() {
            vec![(&self.psi_hat, &self.out_diag)]
        } else {
            self.parts.iter().map(|(p, d)| (p, d.as_slice())).collect()
        }
    }

    /// PathSim between in-sample app `j` and out app `o`, given the
    /// in-sample diagonal of the same structure (meta-paths only).
    pub fn pathsim(&self, in_diag: &[f64], j: usize, o: usize) -> Result<f64> {
        if j >= self.psi_hat.rows() || j >= in_diag.len() {
            return Err(Error::IndexOutOfRange {
                index: j,
                len: self.psi_hat.rows().min(in_diag.len()),
            });
        }
        if o >= self.psi_hat.cols() {
            return Err(Error::IndexOutOfRange {
                index: o,
                len: self.psi_hat.cols(),
            });
        }
        Ok(super::adjacency::pathsim_value(
            self.psi_hat.get(j, o),
            in_diag[j],
            self.out_diag[o],
        ))
    }
}

pub fn build_incremental(hin: &Hin, batch: &AppBatch, m: &MetaStructure) -> Result<IncrementalAdjacency> {
    IncrementalProgram::prepare(hin, m)?.apply(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::{parse_manifest, PermissionTypeMap};
    use crate::metastructure::{build_adjacency, default_structures, parse_spec};

    fn three_apps() -> Hin {
        let text = r#"{"app":"a0","apis":["x","y"],"so_files":["s"]}
{"app":"a1","apis":["y"],"so_files":["s"]}
{"app":"a2","apis":["x"],"so_files":["t"]}"#;
        Hin::from_records(&parse_manifest(text.as_bytes()).unwrap(), &PermissionTypeMap::default()).unwrap()
    }

    fn batch(hin: &Hin, text: &str) -> AppBatch {
        AppBatch::from_records(&parse_manifest(text.as_bytes()).unwrap(), hin).unwrap()
    }

    #[test]
    fn new_app_with_both_apis() {
        let hin = three_apps();
        let b = batch(&hin, r#"{"app":"n","apis":["x","y"]}"#);
        let inc = build_incremental(&hin, &b, &parse_spec("MP1: A-API-A").unwrap()[0]).unwrap();
        let col: Vec<f64> = (0..3).map(|j| inc.psi_hat().get(j, 0)).collect();
        assert_eq!(col, [2.0, 1.0, 1.0]);
        assert_eq!(inc.out_diag(), &[2.0]);
    }

    #[test]
    fn unconnected_new_app() {
        let hin = three_apps();
        let b = batch(&hin, r#"{"app":"n"}"#);
        let inc = build_incremental(&hin, &b, &parse_spec("MP1: A-API-A").unwrap()[0]).unwrap();
        assert_eq!(inc.psi_hat().nnz(), 0);
        assert_eq!(inc.out_diag(), &[0.0]);
    }

    #[test]
    fn duplicate_matches_in_sample_column() {
        let hin = three_apps();
        let b = batch(
            &hin,
            r#"{"app":"c0","apis":["x","y"],"so_files":["s"]}
{"app":"c2","apis":["x"],"so_files":["t"]}"#,
        );
        for m in default_structures() {
            let adj = build_adjacency(&hin, &m).unwrap();
            let inc = build_incremental(&hin, &b, &m).unwrap();
            for (o, a) in [(0usize, 0usize), (1, 2)] {
                for j in 0..3 {
                    assert_eq!(inc.psi_hat().get(j, o), adj.psi().get(j, a), "{}", m.name());
                }
                assert_eq!(inc.out_diag()[o], adj.diag()[a], "{}", m.name());
            }
        }
    }

    #[test]
    fn misaligned_batch_rejected() {
        let hin = three_apps();
        let other = {
            let text = r#"{"app":"z","apis":["p","q","r"]}"#;
            Hin::from_records(&parse_manifest(text.as_bytes()).unwrap(), &PermissionTypeMap::default()).unwrap()
        };
        let b = batch(&other, r#"{"app":"n","apis":["p"]}"#);
        let m = &parse_spec("MP1: A-API-A").unwrap()[0];
        assert!(matches!(build_incremental(&hin, &b, m), Err(Error::Validation(_))));
    }
}
