//! Binary HIN archive.
//!
//! Sections: `META` (JSON `{format_version, counts}`), `CAT0`..`CAT6` (entity
//! ids per [`EntityType`]), `LABL` (one byte per app: 0 none, 1 malicious,
//! 2 benign) and `REL0`..`REL5` (CSR matrices per [`Relation`]).

use std::path::Path;

use serde_json::json;

use super::{Catalog, EntityCatalog, EntityType, Hin, Label, Relation};
use crate::container::{Container, Decoder, Encoder};
use crate::error::{Error, Result};

pub const HIN_MAGIC: [u8; 8] = *b"HINARCH\0";
pub const HIN_FORMAT_VERSION: u32 = 1;

fn tag(prefix: &[u8; 3], i: usize) -> [u8; 4] {
    [prefix[0], prefix[1], prefix[2], b'0' + i as u8]
}

pub(super) fn encode(hin: &Hin) -> Container {
    let mut c = Container::new(HIN_MAGIC, HIN_FORMAT_VERSION);
    let counts: serde_json::Map<String, serde_json::Value> = EntityType::ALL
        .iter()
        .map(|t| (t.token().to_owned(), json!(hin.catalog(*t).len())))
        .collect();
    let meta = json!({ "format_version": HIN_FORMAT_VERSION, "counts": counts });
    c.push(*b"META", serde_json::to_vec(&meta).expect("json"));
    for t in EntityType::ALL {
        let mut e = Encoder::new();
        e.strings(hin.catalog(t).ids());
        c.push(tag(b"CAT", t.index()), e.finish());
    }
    let labels = hin
        .labels()
        .iter()
        .map(|l| match l {
            None => 0,
            Some(Label::Malicious) => 1,
            Some(Label::Benign) => 2,
        })
        .collect();
    c.push(*b"LABL", labels);
    for r in Relation::ALL {
        let mut e = Encoder::new();
        e.sparse(hin.relation(r));
        c.push(tag(b"REL", r.index()), e.finish());
    }
    c
}

pub fn save_hin(hin: &Hin, path: &Path) -> Result<()> {
    encode(hin).write(path)
}

pub fn load_hin(path: &Path) -> Result<Hin> {
    decode(&Container::read(path, HIN_MAGIC, HIN_FORMAT_VERSION)?)
}

fn decode(c: &Container) -> Result<Hin> {
    let mut catalogs = EntityCatalog::default();
    for t in EntityType::ALL {
        let ids = Decoder::new(c.section(tag(b"CAT", t.index()))?).strings()?;
        *catalogs.get_mut(t) = Catalog::from_ids(ids)?;
    }
    let labels = c
        .section(*b"LABL")?
        .iter()
        .map(|b| match b {
            0 => Ok(None),
            1 => Ok(Some(Label::Malicious)),
            2 => Ok(Some(Label::Benign)),
            other => Err(Error::Format(format!("bad label byte {other}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut relations = Vec::with_capacity(6);
    for r in Relation::ALL {
        relations.push(Decoder::new(c.section(tag(b"REL", r.index()))?).sparse()?);
    }
    Hin::new(catalogs, relations.try_into().expect("six relations"), labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::{parse_manifest, parse_permission_map};

    fn fig3() -> Hin {
        let text = r#"{"app":"App1","apis":["openConnection"],"permissions":["READ_SMS"],"classes":["PrintStream"],"label":"malicious"}
{"app":"App2","permissions":["SEND_SMS"],"classes":["PrintStream"],"so_files":["libnative-lib"],"label":"benign"}"#;
        let map = parse_permission_map("READ_SMS,SMS\nSEND_SMS,SMS\n".as_bytes()).unwrap();
        Hin::from_records(&parse_manifest(text.as_bytes()).unwrap(), &map).unwrap()
    }

    #[test]
    fn round_trip_is_identity_and_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.bin");
        let hin = fig3();
        save_hin(&hin, &path).unwrap();
        let back = load_hin(&path).unwrap();
        assert_eq!(back, hin);
        let first = std::fs::read(&path).unwrap();
        save_hin(&back, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn altered_checksum_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.bin");
        save_hin(&fig3(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[30] ^= 0x01; // inside the checksum field
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_hin(&path), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.bin");
        save_hin(&fig3(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99;
        std::fs::write(&path, bytes).unwrap();
        let err = load_hin(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
