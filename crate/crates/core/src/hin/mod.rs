//! The heterogeneous information network: per-type entity catalogs, the six
//! app-centric relation matrices and optional app labels.

mod archive;
mod manifest;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SparseMatrix;

pub use archive::{load_hin, save_hin};
pub use manifest::{
    load_batch, load_manifest, parse_manifest, parse_permission_map, write_manifest,
    write_permission_map, ManifestRecord, PermissionTypeMap, PERMISSION_TYPES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityType {
    App,
    Api,
    Permission,
    PermissionType,
    Class,
    Interface,
    SoFile,
}

impl EntityType {
    pub const ALL: [EntityType; 7] = [
        EntityType::App,
        EntityType::Api,
        EntityType::Permission,
        EntityType::PermissionType,
        EntityType::Class,
        EntityType::Interface,
        EntityType::SoFile,
    ];

    /// Short token used by the meta-structure DSL.
    pub fn token(self) -> &'static str {
        match self {
            EntityType::App => "A",
            EntityType::Api => "API",
            EntityType::Permission => "P",
            EntityType::PermissionType => "PT",
            EntityType::Class => "C",
            EntityType::Interface => "I",
            EntityType::SoFile => "S",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for EntityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EntityType::ALL
            .into_iter()
            .find(|t| t.token() == s)
            .ok_or_else(|| Error::Validation(format!("unknown entity type token `{s}`")))
    }
}

/// The six relations. All but `PermissionType` have apps as rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    AppApi,
    AppPermission,
    PermissionType,
    AppClass,
    AppInterface,
    AppSoFile,
}

impl Relation {
    pub const ALL: [Relation; 6] = [
        Relation::AppApi,
        Relation::AppPermission,
        Relation::PermissionType,
        Relation::AppClass,
        Relation::AppInterface,
        Relation::AppSoFile,
    ];

    pub fn source(self) -> EntityType {
        match self {
            Relation::PermissionType => EntityType::Permission,
            _ => EntityType::App,
        }
    }

    pub fn target(self) -> EntityType {
        match self {
            Relation::AppApi => EntityType::Api,
            Relation::AppPermission => EntityType::Permission,
            Relation::PermissionType => EntityType::PermissionType,
            Relation::AppClass => EntityType::Class,
            Relation::AppInterface => EntityType::Interface,
            Relation::AppSoFile => EntityType::SoFile,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Relation linking `from` to `to`, with `true` when it must be used
    /// transposed.
    pub fn between(from: EntityType, to: EntityType) -> Option<(Relation, bool)> {
        Relation::ALL.into_iter().find_map(|r| {
            if r.source() == from && r.target() == to {
                Some((r, false))
            } else if r.source() == to && r.target() == from {
                Some((r, true))
            } else {
                None
            }
        })
    }

    /// Relations whose rows are apps, in feature-concatenation order.
    pub const APP_RELATIONS: [Relation; 5] = [
        Relation::AppApi,
        Relation::AppPermission,
        Relation::AppClass,
        Relation::AppInterface,
        Relation::AppSoFile,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Malicious,
    Benign,
}

impl Label {
    /// Class index used by classifiers; malicious is the positive class.
    pub fn class(self) -> usize {
        match self {
            Label::Benign => 0,
            Label::Malicious => 1,
        }
    }

    pub fn from_class(c: usize) -> Self {
        if c == 1 {
            Label::Malicious
        } else {
            Label::Benign
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Malicious => "malicious",
            Label::Benign => "benign",
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "malicious" => Ok(Label::Malicious),
            "benign" => Ok(Label::Benign),
            other => Err(Error::Validation(format!("unknown label `{other}`"))),
        }
    }
}

/// Ordered unique identifiers of one entity type.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Catalog {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn from_ids(ids: Vec<String>) -> Result<Self> {
        let mut c = Catalog::default();
        for id in ids {
            if c.index.contains_key(&id) {
                return Err(Error::Validation(format!("duplicate identifier `{id}`")));
            }
            c.push(id);
        }
        Ok(c)
    }

    /// Returns the index of `id`, appending it if new.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        self.push(id.to_owned())
    }

    fn push(&mut self, id: String) -> usize {
        let i = self.ids.len();
        self.index.insert(id.clone(), i);
        self.ids.push(id);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityCatalog {
    catalogs: [Catalog; 7],
}

impl EntityCatalog {
    pub fn get(&self, t: EntityType) -> &Catalog {
        &self.catalogs[t.index()]
    }

    pub fn get_mut(&mut self, t: EntityType) -> &mut Catalog {
        &mut self.catalogs[t.index()]
    }

    pub fn len(&self, t: EntityType) -> usize {
        self.get(t).len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hin {
    catalogs: EntityCatalog,
    relations: [SparseMatrix; 6],
    labels: Vec<Option<Label>>,
}

impl Hin {
    /// Assembles and validates a HIN.
    pub fn new(
        catalogs: EntityCatalog,
        relations: [SparseMatrix; 6],
        labels: Vec<Option<Label>>,
    ) -> Result<Self> {
        let hin = Self {
            catalogs,
            relations,
            labels,
        };
        hin.validate()?;
        Ok(hin)
    }

    /// Checks relation shapes against the catalogs, binary entries, and
    /// that every permission has exactly one type.
    pub fn validate(&self) -> Result<()> {
        for r in Relation::ALL {
            let m = self.relation(r);
            let want = (self.catalogs.len(r.source()), self.catalogs.len(r.target()));
            if m.shape() != want {
                return Err(Error::Validation(format!(
                    "relation {r:?} has shape {:?}, catalogs imply {want:?}",
                    m.shape()
                )));
            }
            if m.values().iter().any(|&v| v != 1.0) {
                return Err(Error::Validation(format!("relation {r:?} is not binary")));
            }
        }
        let types = self.relation(Relation::PermissionType);
        for (p, sum) in types.row_sums().into_iter().enumerate() {
            if sum != 1.0 {
                return Err(Error::Validation(format!(
                    "permission `{}` has {sum} types, expected exactly 1",
                    self.catalogs.get(EntityType::Permission).id(p)
                )));
            }
        }
        if self.labels.len() != self.num_apps() {
            return Err(Error::Validation(format!(
                "{} labels for {} apps",
                self.labels.len(),
                self.num_apps()
            )));
        }
        Ok(())
    }

    pub fn catalogs(&self) -> &EntityCatalog {
        &self.catalogs
    }

    pub fn catalog(&self, t: EntityType) -> &Catalog {
        self.catalogs.get(t)
    }

    pub fn relation(&self, r: Relation) -> &SparseMatrix {
        &self.relations[r.index()]
    }

    pub fn relations(&self) -> &[SparseMatrix; 6] {
        &self.relations
    }

    pub fn labels(&self) -> &[Option<Label>] {
        &self.labels
    }

    pub fn num_apps(&self) -> usize {
        self.catalogs.len(EntityType::App)
    }

    pub fn app_ids(&self) -> &[String] {
        self.catalog(EntityType::App).ids()
    }

    /// Indices of labeled apps.
    pub fn labeled(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i].is_some()).collect()
    }

    /// SHA-256 over the canonical archive payload, hex encoded.
    pub fn fingerprint(&self) -> String {
        crate::container::sha256_hex(&archive::encode(self).payload())
    }

    /// Entity count of app `i` across the five app relations.
    pub fn app_degree(&self, i: usize) -> usize {
        Relation::APP_RELATIONS
            .iter()
            .map(|&r| self.relation(r).row(i).0.len())
            .sum()
    }

    /// The same network with every catalog sorted by identifier, so that
    /// manifests differing only in line order give identical HINs.
    pub fn canonical(&self) -> Hin {
        let mut catalogs = EntityCatalog::default();
        let mut new_index: Vec<Vec<usize>> = Vec::with_capacity(7);
        for t in EntityType::ALL {
            let old = self.catalog(t);
            let mut order: Vec<usize> = (0..old.len()).collect();
            order.sort_by(|&a, &b| old.id(a).cmp(old.id(b)));
            let mut map = vec![0; old.len()];
            for (pos, &o) in order.iter().enumerate() {
                map[o] = pos;
            }
            *catalogs.get_mut(t) =
                Catalog::from_ids(order.iter().map(|&o| old.id(o).to_owned()).collect()).expect("unique ids");
            new_index.push(map);
        }
        let relations = Relation::ALL.map(|r| {
            let m = self.relation(r);
            let (src, tgt) = (&new_index[r.source().index()], &new_index[r.target().index()]);
            let triplets = (0..m.rows()).flat_map(|i| m.row(i).0.iter().map(move |&j| (src[i], tgt[j], 1.0)));
            SparseMatrix::from_triplets(m.rows(), m.cols(), triplets).expect("permuted indices in range")
        });
        let app_map = &new_index[EntityType::App.index()];
        let mut labels = vec![None; self.labels.len()];
        for (old, &l) in self.labels.iter().enumerate() {
            labels[app_map[old]] = l;
        }
        Hin::new(catalogs, relations, labels).expect("permutation preserves validity")
    }
}

/// Out-of-sample apps projected onto a base HIN's catalogs.
#[derive(Debug, Clone, PartialEq)]
pub struct AppBatch {
    app_ids: Vec<String>,
    relations: [SparseMatrix; 6],
    labels: Vec<Option<Label>>,
    dropped: usize,
}

impl AppBatch {
    pub(crate) fn new(
        app_ids: Vec<String>,
        relations: [SparseMatrix; 6],
        labels: Vec<Option<Label>>,
        dropped: usize,
    ) -> Self {
        Self {
            app_ids,
            relations,
            labels,
            dropped,
        }
    }

    pub fn app_ids(&self) -> &[String] {
        &self.app_ids
    }

    pub fn len(&self) -> usize {
        self.app_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.app_ids.is_empty()
    }

    /// Rows are batch apps for app relations; `PermissionType` is the base
    /// HIN's matrix.
    pub fn relation(&self, r: Relation) -> &SparseMatrix {
        &self.relations[r.index()]
    }

    /// Labels carried by the batch file, if any (used only as ground truth).
    pub fn labels(&self) -> &[Option<Label>] {
        &self.labels
    }

    /// Entity references that were not in the base catalogs.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    /// Sub-batch with the listed apps, in order.
    pub fn select(&self, apps: &[usize]) -> AppBatch {
        let relations = std::array::from_fn(|i| {
            let r = Relation::ALL[i];
            if r == Relation::PermissionType {
                self.relations[i].clone()
            } else {
                self.relations[i].select_rows(apps)
            }
        });
        AppBatch {
            app_ids: apps.iter().map(|&a| self.app_ids[a].clone()).collect(),
            relations,
            labels: apps.iter().map(|&a| self.labels[a]).collect(),
            dropped: 0,
        }
    }
}
