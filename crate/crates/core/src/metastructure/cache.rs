//! On-disk cache of built adjacency matrices (`A000`, `A001`, ... sections,
//! one per structure, each holding the name and the per-part CSR counts).

use std::path::Path;

use super::adjacency::{AdjacencyMatrix, PartAdjacency};
use crate::container::{Container, Decoder, Encoder};
use crate::error::{Error, Result};

pub const ADJ_MAGIC: [u8; 8] = *b"HINADJC\0";
pub const ADJ_FORMAT_VERSION: u32 = 1;

fn tag(i: usize) -> Result<[u8; 4]> {
    if i >= 1000 {
        return Err(Error::Format("too many structures for the adjacency cache".into()));
    }
    let mut t = [b'A'; 4];
    t[1..].copy_from_slice(format!("{i:03}").as_bytes());
    Ok(t)
}

pub fn save_adjacencies(path: &Path, fingerprint: &str, adjs: &[AdjacencyMatrix]) -> Result<()> {
    let mut c = Container::new(ADJ_MAGIC, ADJ_FORMAT_VERSION);
    let mut head = Encoder::new();
    head.str(fingerprint).usize(adjs.len());
    c.push(*b"HEAD", head.finish());
    for (i, adj) in adjs.iter().enumerate() {
        let mut e = Encoder::new();
        e.str(adj.name());
        let views = adj.part_views();
        e.usize(views.len());
        for (psi, _) in views {
            e.sparse(psi);
        }
        c.push(tag(i)?, e.finish());
    }
    c.write(path)
}

/// Loads a cache, returning the HIN fingerprint it was built from.
pub fn load_adjacencies(path: &Path) -> Result<(String, Vec<AdjacencyMatrix>)> {
    let c = Container::read(path, ADJ_MAGIC, ADJ_FORMAT_VERSION)?;
    let mut head = Decoder::new(c.section(*b"HEAD")?);
    let fingerprint = head.str()?;
    let count = head.usize()?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut d = Decoder::new(c.section(tag(i)?)?);
        let name = d.str()?;
        let n = d.usize()?;
        let parts = (0..n)
            .map(|_| {
                let psi = d.sparse()?;
                let diag = psi.diagonal();
                Ok(PartAdjacency { psi, diag })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(AdjacencyMatrix::from_parts(name, parts)?);
    }
    Ok((fingerprint, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::{parse_manifest, Hin, PermissionTypeMap};
    use crate::metastructure::{build_all, parse_spec};

    #[test]
    fn cache_round_trip() {
        let text = r#"{"app":"a0","apis":["x","y"],"so_files":["s"]}
{"app":"a1","apis":["y"],"so_files":["s"]}"#;
        let hin = Hin::from_records(&parse_manifest(text.as_bytes()).unwrap(), &PermissionTypeMap::default()).unwrap();
        let structures = parse_spec("MP1: A-API-A\nMG: (MP1) & (A-S-A)").unwrap();
        let adjs = build_all(&hin, &structures).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adj.bin");
        save_adjacencies(&path, &hin.fingerprint(), &adjs).unwrap();
        let (fp, back) = load_adjacencies(&path).unwrap();
        assert_eq!(fp, hin.fingerprint());
        assert_eq!(back, adjs);
    }
}
