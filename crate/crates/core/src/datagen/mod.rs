//! Synthetic app populations with planted label signal, and brute-force
//! oracles for path counts and similarities.
//!
//! Every entity type is split into a malicious-leaning and a benign-leaning
//! pool. Each entity an app draws comes from its own class's pool with
//! probability `p_sig` and from the other pool otherwise, so `p_sig = 1`
//! separates the classes completely and `p_sig = 0.5` carries no signal.

mod oracle;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hin::{AppBatch, Hin, Label, ManifestRecord, PermissionTypeMap, PERMISSION_TYPES};

pub use oracle::{oracle_path_count, oracle_sim, ORACLE_LIMIT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_in: usize,
    pub n_out: usize,
    pub apis: usize,
    pub permissions: usize,
    pub classes: usize,
    pub interfaces: usize,
    pub so_files: usize,
    /// Probability that a drawn entity comes from the app's own class pool.
    pub p_sig: f64,
    /// Expected fraction of a type's catalog drawn per app, on top of one
    /// guaranteed draw.
    pub density: f64,
    pub malicious_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_in: 2000,
            n_out: 200,
            apis: 400,
            permissions: 50,
            classes: 300,
            interfaces: 100,
            so_files: 60,
            p_sig: 0.9,
            density: 0.02,
            malicious_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    fn counts(&self) -> [(usize, &'static str); 5] {
        [
            (self.apis, "api"),
            (self.permissions, "perm"),
            (self.classes, "class"),
            (self.interfaces, "iface"),
            (self.so_files, "so"),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_in == 0 {
            return Err(Error::Config("n_in must be positive".into()));
        }
        for (n, name) in self.counts() {
            if n < 2 {
                return Err(Error::Config(format!("need at least 2 {name} entities, got {n}")));
            }
        }
        if !(0.5..=1.0).contains(&self.p_sig) {
            return Err(Error::Config(format!("p_sig must lie in [0.5, 1], got {}", self.p_sig)));
        }
        if !(0.0..=1.0).contains(&self.density) {
            return Err(Error::Config(format!("density must lie in [0, 1], got {}", self.density)));
        }
        if !(0.0..=1.0).contains(&self.malicious_fraction) {
            return Err(Error::Config(format!(
                "malicious_fraction must lie in [0, 1], got {}",
                self.malicious_fraction
            )));
        }
        Ok(())
    }
}

/// A generated dataset: labeled in-sample records, an unlabeled batch and
/// its ground truth, plus the same data already ingested.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub in_records: Vec<ManifestRecord>,
    pub out_records: Vec<ManifestRecord>,
    pub out_labels: Vec<Label>,
    pub permission_map: PermissionTypeMap,
    pub hin: Hin,
    pub batch: AppBatch,
}

/// Permission `i` has type `PERMISSION_TYPES[i % 7]`.
pub fn permission_map(permissions: usize) -> PermissionTypeMap {
    let mut map = PermissionTypeMap::default();
    for i in 0..permissions {
        map.insert(&format!("perm{i}"), PERMISSION_TYPES[i % PERMISSION_TYPES.len()])
            .expect("known type");
    }
    map
}

fn class_labels(rng: &mut ChaCha8Rng, n: usize, malicious_fraction: f64) -> Vec<Label> {
    let k = (n as f64 * malicious_fraction).round() as usize;
    let mut labels: Vec<Label> = (0..n)
        .map(|i| if i < k { Label::Malicious } else { Label::Benign })
        .collect();
    labels.shuffle(rng);
    labels
}

fn draw_app(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig, id: String, label: Label) -> ManifestRecord {
    let mut lists: Vec<Vec<String>> = Vec::with_capacity(5);
    for (n, prefix) in cfg.counts() {
        // Malicious pool: [0, half); benign pool: [half, n).
        let half = n / 2;
        let extra = Binomial::new((n - 1) as u64, cfg.density).expect("valid density").sample(rng) as usize;
        let mut picked = BTreeSet::new();
        for _ in 0..1 + extra {
            let own = rng.random_bool(cfg.p_sig);
            let malicious_pool = own == (label == Label::Malicious);
            let e = if malicious_pool {
                rng.random_range(0..half)
            } else {
                rng.random_range(half..n)
            };
            picked.insert(e);
        }
        lists.push(picked.into_iter().map(|e| format!("{prefix}{e}")).collect());
    }
    let mut it = lists.into_iter();
    let mut next = || it.next().expect("five lists");
    ManifestRecord {
        app: id,
        apis: next(),
        permissions: next(),
        classes: next(),
        interfaces: next(),
        so_files: next(),
        label: Some(label),
    }
}

/// Generates a dataset and ingests it through the manifest path.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let in_labels = class_labels(&mut rng, cfg.n_in, cfg.malicious_fraction);
    let out_labels = class_labels(&mut rng, cfg.n_out, cfg.malicious_fraction);
    let in_records: Vec<ManifestRecord> = in_labels
        .iter()
        .enumerate()
        .map(|(i, &l)| draw_app(&mut rng, cfg, format!("app{i}"), l))
        .collect();
    let out_records: Vec<ManifestRecord> = out_labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let mut r = draw_app(&mut rng, cfg, format!("new{i}"), l);
            r.label = None;
            r
        })
        .collect();
    let map = permission_map(cfg.permissions);
    let numbered = |rs: &[ManifestRecord]| -> Vec<(usize, ManifestRecord)> {
        rs.iter().cloned().enumerate().map(|(i, r)| (i + 1, r)).collect()
    };
    let hin = Hin::from_records(&numbered(&in_records), &map)?;
    let batch = AppBatch::from_records(&numbered(&out_records), &hin)?;
    Ok(SyntheticData {
        in_records,
        out_records,
        out_labels,
        permission_map: map,
        hin,
        batch,
    })
}

/// A small random HIN for oracle comparisons: up to `max_apps` apps, up to
/// `max_entities` entities per type, random edge density, random
/// permission types. Labels are absent.
pub fn random_hin(seed: u64, max_apps: usize, max_entities: usize) -> Hin {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_apps = rng.random_range(1..=max_apps.max(1));
    let density: f64 = rng.random_range(0.1..0.7);
    let counts: Vec<usize> = (0..5).map(|_| rng.random_range(1..=max_entities.max(1))).collect();
    let mut map = PermissionTypeMap::default();
    let n_types = rng.random_range(1..=PERMISSION_TYPES.len());
    for p in 0..counts[1] {
        map.insert(&format!("p{p}"), PERMISSION_TYPES[rng.random_range(0..n_types)])
            .expect("known type");
    }
    let records: Vec<(usize, ManifestRecord)> = (0..n_apps)
        .map(|i| {
            let mut pick = |n: usize, prefix: &str| -> Vec<String> {
                (0..n).filter(|_| rng.random_bool(density)).map(|e| format!("{prefix}{e}")).collect()
            };
            let rec = ManifestRecord {
                app: format!("a{i}"),
                apis: pick(counts[0], "api"),
                permissions: pick(counts[1], "p"),
                classes: pick(counts[2], "c"),
                interfaces: pick(counts[3], "i"),
                so_files: pick(counts[4], "s"),
                label: None,
            };
            (i + 1, rec)
        })
        .collect();
    Hin::from_records(&records, &map).expect("generated records are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::{EntityType, Relation};
    use crate::metastructure::{build_adjacency, default_structures};

    fn small(p_sig: f64, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n_in: 120,
            n_out: 20,
            apis: 40,
            permissions: 12,
            classes: 30,
            interfaces: 10,
            so_files: 8,
            p_sig,
            density: 0.05,
            seed,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate(&small(0.9, 3)).unwrap();
        let b = generate(&small(0.9, 3)).unwrap();
        assert_eq!(a.in_records, b.in_records);
        assert_eq!(a.out_records, b.out_records);
        assert_eq!(a.hin.fingerprint(), b.hin.fingerprint());
        assert_ne!(a.in_records, generate(&small(0.9, 4)).unwrap().in_records);
    }

    #[test]
    fn every_app_has_each_entity_type() {
        let d = generate(&small(0.9, 1)).unwrap();
        for i in 0..d.hin.num_apps() {
            for r in Relation::APP_RELATIONS {
                assert!(!d.hin.relation(r).row(i).0.is_empty());
            }
        }
        assert_eq!(d.batch.len(), 20);
        assert_eq!(d.out_labels.len(), 20);
        assert!(d.out_records.iter().all(|r| r.label.is_none()));
        let malicious = d.hin.labels().iter().filter(|l| **l == Some(Label::Malicious)).count();
        assert_eq!(malicious, 60);
    }

    #[test]
    fn full_signal_separates_classes() {
        let d = generate(&small(1.0, 2)).unwrap();
        let labels = d.hin.labels();
        for m in default_structures().iter().filter(|m| !m.is_graph() && m.parts()[0].chain().len() == 3) {
            let adj = build_adjacency(&d.hin, m).unwrap();
            for i in 0..d.hin.num_apps() {
                for &j in adj.psi().row(i).0 {
                    assert_eq!(labels[i], labels[j], "{}", m.name());
                }
            }
        }
    }

    #[test]
    fn permission_types_follow_index() {
        let d = generate(&small(0.9, 5)).unwrap();
        assert_eq!(d.permission_map.type_of("perm9"), Some("PHONE"));
        let perms = d.hin.catalog(EntityType::Permission);
        let types = d.hin.catalog(EntityType::PermissionType);
        let r3 = d.hin.relation(Relation::PermissionType);
        for p in 0..perms.len() {
            let idx: usize = perms.id(p)["perm".len()..].parse().unwrap();
            let t = r3.row(p).0[0];
            assert_eq!(types.id(t), PERMISSION_TYPES[idx % 7]);
        }
    }

    #[test]
    fn degenerate_configs_rejected() {
        for cfg in [
            SyntheticConfig { n_in: 0, ..small(0.9, 0) },
            SyntheticConfig { apis: 1, ..small(0.9, 0) },
            SyntheticConfig { p_sig: 0.3, ..small(0.9, 0) },
            SyntheticConfig { density: 1.5, ..small(0.9, 0) },
        ] {
            assert!(matches!(generate(&cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn random_hins_are_valid_and_bounded() {
        for seed in 0..20 {
            let h = random_hin(seed, 10, 8);
            assert!(h.num_apps() <= 10);
            for t in EntityType::ALL {
                if t != EntityType::App {
                    assert!(h.catalog(t).len() <= 8);
                }
            }
        }
    }
}
