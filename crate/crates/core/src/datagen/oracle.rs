use crate::error::{Error, Result};
use crate::hin::Hin;
use crate::metastructure::{Hop, MetaPath, MetaStructure};

/// Maximum number of partial paths an oracle call may visit.
pub const ORACLE_LIMIT: u64 = 1_000_000;

fn linked(hin: &Hin, hop: Hop, u: usize, v: usize) -> bool {
    let m = hin.relation(hop.relation);
    let (r, c) = if hop.transposed { (v, u) } else { (u, v) };
    m.get(r, c) != 0.0
}

/// Number of concrete entity sequences from app `i` to app `j` that follow
/// the meta-path's type chain, by exhaustive enumeration.
pub fn oracle_path_count(hin: &Hin, path: &MetaPath, i: usize, j: usize) -> Result<u64> {
    let n = hin.num_apps();
    if i >= n || j >= n {
        return Err(Error::IndexOutOfRange { index: i.max(j), len: n });
    }
    let chain = path.chain();
    let hops = path.hops();
    let mut visited = 0u64;
    let mut count = 0u64;
    // Explicit stack of (depth, node).
    let mut stack = vec![(0usize, i)];
    while let Some((depth, u)) = stack.pop() {
        visited += 1;
        if visited > ORACLE_LIMIT {
            return Err(Error::Validation(format!(
                "path enumeration for `{}` exceeds {ORACLE_LIMIT} steps",
                path.name()
            )));
        }
        if depth == hops.len() {
            if u == j {
                count += 1;
            }
            continue;
        }
        let next_type = chain[depth + 1];
        for v in 0..hin.catalog(next_type).len() {
            if linked(hin, hops[depth], u, v) {
                stack.push((depth + 1, v));
            }
        }
    }
    Ok(count)
}

/// PathSim from enumerated counts; meta-graphs multiply their parts'
/// values. Zero denominators give 0.
pub fn oracle_sim(hin: &Hin, structure: &MetaStructure, i: usize, j: usize) -> Result<f64> {
    let mut sim = 1.0;
    for part in structure.parts() {
        let cij = oracle_path_count(hin, part, i, j)? as f64;
        let cii = oracle_path_count(hin, part, i, i)? as f64;
        let cjj = oracle_path_count(hin, part, j, j)? as f64;
        let den = cii + cjj;
        sim *= if den == 0.0 { 0.0 } else { 2.0 * cij / den };
    }
    Ok(sim)
}
