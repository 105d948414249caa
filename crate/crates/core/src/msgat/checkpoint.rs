//! Model checkpoint file.
//!
//! A [`Container`] with magic `MSGATCKP`, format version 1, sections in order:
//!
//! | tag    | contents                                                     |
//! |--------|--------------------------------------------------------------|
//! | `CONF` | training config as JSON                                      |
//! | `STRC` | structure definitions, one per line, in model order          |
//! | `FPRT` | fingerprint of the training HIN                              |
//! | `PARM` | tensor count, then every parameter (dense) in fixed order    |
//! | `PHIK` | structure count, then each `Φ_k` (dense)                     |
//! | `BETA` | fusion weights (f64 list)                                    |
//! | `DIAG` | per structure: part count, then each part's diagonal         |
//! | `LOSS` | loss history (f64 list)                                      |
//!
//! The fused embedding is recomputed from `BETA` and `PHIK` on load.

use std::path::Path;

use super::model::{MsGatModel, Params};
use crate::container::{Container, Decoder, Encoder};
use crate::error::{Error, Result};
use crate::metastructure::parse_spec;
use crate::numerics::DenseMatrix;

pub const MODEL_MAGIC: [u8; 8] = *b"MSGATCKP";
pub const MODEL_VERSION: u32 = 1;

impl MsGatModel {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new(MODEL_MAGIC, MODEL_VERSION);
        c.push(*b"CONF", serde_json::to_vec(&self.config).expect("config serializes"));
        let text: Vec<String> = self.structures.iter().map(|s| s.to_string()).collect();
        c.push(*b"STRC", text.join("\n").into_bytes());
        c.push(*b"FPRT", self.fingerprint.as_bytes().to_vec());

        let mut e = Encoder::new();
        let params = self.params.flatten();
        e.usize(params.len());
        for p in params {
            e.dense(p);
        }
        c.push(*b"PARM", e.finish());

        let mut e = Encoder::new();
        e.usize(self.phis.len());
        for p in &self.phis {
            e.dense(p);
        }
        c.push(*b"PHIK", e.finish());

        let mut e = Encoder::new();
        e.f64s(&self.beta);
        c.push(*b"BETA", e.finish());

        let mut e = Encoder::new();
        e.usize(self.part_diags.len());
        for parts in &self.part_diags {
            e.usize(parts.len());
            for d in parts {
                e.f64s(d);
            }
        }
        c.push(*b"DIAG", e.finish());

        let mut e = Encoder::new();
        e.f64s(&self.loss_history);
        c.push(*b"LOSS", e.finish());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let config: super::TrainConfig = serde_json::from_slice(c.section(*b"CONF")?)
            .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        config.validate()?;
        let text = std::str::from_utf8(c.section(*b"STRC")?)
            .map_err(|_| Error::Format("structure section is not utf-8".into()))?;
        let structures = parse_spec(text)?;
        let fingerprint = String::from_utf8(c.section(*b"FPRT")?.to_vec())
            .map_err(|_| Error::Format("fingerprint is not utf-8".into()))?;

        let mut d = Decoder::new(c.section(*b"PARM")?);
        let n = d.usize()?;
        let values = (0..n).map(|_| d.dense()).collect::<Result<Vec<DenseMatrix>>>()?;
        let in_dim = values.first().map_or(0, |w| w.rows());
        let mut params = Params::init(0, in_dim, structures.len(), &config);
        params.assign(values)?;

        let mut d = Decoder::new(c.section(*b"PHIK")?);
        let k = d.usize()?;
        let phis = (0..k).map(|_| d.dense()).collect::<Result<Vec<_>>>()?;
        let beta = Decoder::new(c.section(*b"BETA")?).f64s()?;

        let mut d = Decoder::new(c.section(*b"DIAG")?);
        let k_diag = d.usize()?;
        let mut part_diags = Vec::with_capacity(k_diag);
        for _ in 0..k_diag {
            let parts = d.usize()?;
            part_diags.push((0..parts).map(|_| d.f64s()).collect::<Result<Vec<_>>>()?);
        }
        let loss_history = Decoder::new(c.section(*b"LOSS")?).f64s()?;

        let k = structures.len();
        if phis.len() != k || beta.len() != k || part_diags.len() != k {
            return Err(Error::Format("checkpoint sections disagree on structure count".into()));
        }
        for (s, parts) in structures.iter().zip(&part_diags) {
            if parts.len() != s.parts().len() {
                return Err(Error::Format(format!("diagonal part count mismatch for {}", s.name())));
            }
        }
        let fused = super::fuse(&beta, &phis).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self {
            structures,
            params,
            config,
            phis,
            beta,
            fused,
            part_diags,
            fingerprint,
            loss_history,
        })
    }
}

pub fn save_model(model: &MsGatModel, path: &Path) -> Result<()> {
    model.to_container().write(path)
}

pub fn load_model(path: &Path) -> Result<MsGatModel> {
    MsGatModel::from_container(&Container::read(path, MODEL_MAGIC, MODEL_VERSION)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msgat::model::tests::six_apps;
    use crate::msgat::{train, TrainConfig};

    #[test]
    fn round_trip_is_byte_stable() {
        let (hin, s) = six_apps();
        let cfg = TrainConfig {
            dim: 3,
            epochs: 4,
            heads: 2,
            ..TrainConfig::default()
        };
        let model = train(&hin, &s, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.params, model.params);
        assert_eq!(back.phis, model.phis);
        assert_eq!(back.beta, model.beta);
        assert_eq!(back.embedding(), model.embedding());
        assert_eq!(back.part_diags, model.part_diags);
        assert_eq!(back.to_container().to_bytes(), model.to_container().to_bytes());
        assert_eq!(std::fs::read(&path).unwrap(), back.to_container().to_bytes());
    }

    #[test]
    fn corrupt_checkpoint_rejected() {
        let (hin, s) = six_apps();
        let model = train(&hin, &s, &TrainConfig { dim: 2, epochs: 0, ..TrainConfig::default() }).unwrap();
        let mut bytes = model.to_container().to_bytes();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        assert!(Container::from_bytes(&bytes, MODEL_MAGIC, MODEL_VERSION).is_err());
    }
}
