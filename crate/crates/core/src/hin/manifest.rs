//! Line-delimited JSON app manifests and the permission-type CSV.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AppBatch, Catalog, EntityCatalog, EntityType, Hin, Label, Relation};
use crate::error::{Error, Result};
use crate::numerics::SparseMatrix;

/// Android permission protection groups accepted in the permission map.
pub const PERMISSION_TYPES: [&str; 7] = [
    "NORMAL", "CONTACTS", "PHONE", "CALENDAR", "LOCATION", "STORAGE", "SMS",
];

/// One app and the entities it contains.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub app: String,
    #[serde(default)]
    pub apis: Vec<String>,
    #[serde(default)]
    pub permissions: Vec<String>,
    #[serde(default)]
    pub classes: Vec<String>,
    #[serde(default)]
    pub interfaces: Vec<String>,
    #[serde(default)]
    pub so_files: Vec<String>,
    #[serde(default)]
    pub label: Option<Label>,
}

impl ManifestRecord {
    fn entities(&self, r: Relation) -> &[String] {
        match r {
            Relation::AppApi => &self.apis,
            Relation::AppPermission => &self.permissions,
            Relation::AppClass => &self.classes,
            Relation::AppInterface => &self.interfaces,
            Relation::AppSoFile => &self.so_files,
            Relation::PermissionType => &[],
        }
    }
}

/// Permission → type assignment, in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PermissionTypeMap {
    entries: Vec<(String, String)>,
    index: HashMap<String, usize>,
}

impl PermissionTypeMap {
    pub fn insert(&mut self, permission: &str, ty: &str) -> Result<()> {
        if !PERMISSION_TYPES.contains(&ty) {
            return Err(Error::Validation(format!("unknown permission type `{ty}`")));
        }
        match self.index.get(permission) {
            Some(&i) if self.entries[i].1 != ty => Err(Error::Validation(format!(
                "permission `{permission}` mapped to both `{}` and `{ty}`",
                self.entries[i].1
            ))),
            Some(_) => Ok(()),
            None => {
                self.index.insert(permission.to_owned(), self.entries.len());
                self.entries.push((permission.to_owned(), ty.to_owned()));
                Ok(())
            }
        }
    }

    pub fn type_of(&self, permission: &str) -> Option<&str> {
        self.index.get(permission).map(|&i| self.entries[i].1.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }
}

pub fn parse_permission_map(reader: impl BufRead) -> Result<PermissionTypeMap> {
    let mut map = PermissionTypeMap::default();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (n == 0 && line == "permission,type") {
            continue;
        }
        let (perm, ty) = line.split_once(',').ok_or_else(|| Error::Parse {
            line: line_no,
            message: "expected `permission,type`".into(),
        })?;
        map.insert(perm.trim(), ty.trim()).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
    }
    Ok(map)
}

/// Parses records, returning each with its 1-based line number.
pub fn parse_manifest(reader: impl BufRead) -> Result<Vec<(usize, ManifestRecord)>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: format!("malformed record: {e}"),
        })?;
        if rec.app.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty app id".into(),
            });
        }
        out.push((line_no, rec));
    }
    Ok(out)
}

fn open(path: &Path) -> Result<BufReader<std::fs::File>> {
    std::fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: &Path, permission_type_map: &Path) -> Result<Hin> {
    let map = parse_permission_map(open(permission_type_map)?)?;
    let records = parse_manifest(open(path)?)?;
    Hin::from_records(&records, &map)
}

pub fn load_batch(path: &Path, base: &Hin) -> Result<AppBatch> {
    let records = parse_manifest(open(path)?)?;
    AppBatch::from_records(&records, base)
}

impl Hin {
    /// Builds a HIN from parsed records. Catalogs are ordered by first
    /// appearance; permission types by the first permission that uses them.
    pub fn from_records(records: &[(usize, ManifestRecord)], map: &PermissionTypeMap) -> Result<Hin> {
        let mut catalogs = EntityCatalog::default();
        let mut rows: [Vec<Vec<usize>>; 6] = Default::default();
        let mut perm_type: Vec<usize> = Vec::new();
        let mut labels = Vec::with_capacity(records.len());

        for (line, rec) in records {
            let apps = catalogs.get_mut(EntityType::App);
            if apps.get(&rec.app).is_some() {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("duplicate app id `{}`", rec.app),
                });
            }
            apps.intern(&rec.app);
            labels.push(rec.label);
            for r in Relation::APP_RELATIONS {
                let mut row = Vec::with_capacity(rec.entities(r).len());
                for id in rec.entities(r) {
                    let cat = catalogs.get_mut(r.target());
                    let before = cat.len();
                    let idx = cat.intern(id);
                    if r == Relation::AppPermission && idx == before {
                        let ty = map.type_of(id).ok_or_else(|| Error::Parse {
                            line: *line,
                            message: format!("permission `{id}` has no type mapping"),
                        })?;
                        perm_type.push(catalogs.get_mut(EntityType::PermissionType).intern(ty));
                    }
                    row.push(idx);
                }
                rows[r.index()].push(row);
            }
        }
        rows[Relation::PermissionType.index()] = perm_type.into_iter().map(|t| vec![t]).collect();

        let relations = build_relations(&catalogs, &rows)?;
        Hin::new(catalogs, relations, labels)
    }
}

fn build_relations(catalogs: &EntityCatalog, rows: &[Vec<Vec<usize>>; 6]) -> Result<[SparseMatrix; 6]> {
    let mut out: Vec<SparseMatrix> = Vec::with_capacity(6);
    for r in Relation::ALL {
        let m = SparseMatrix::from_row_sets(catalogs.len(r.target()), &rows[r.index()])?;
        // from_row_sets sizes rows by the list; catalogs may be larger only for
        // the empty case, where both are zero.
        debug_assert_eq!(m.rows(), catalogs.len(r.source()));
        out.push(m);
    }
    Ok(out.try_into().expect("six relations"))
}

impl AppBatch {
    /// Projects records onto `base`'s catalogs; unknown entities are counted
    /// and dropped.
    pub fn from_records(records: &[(usize, ManifestRecord)], base: &Hin) -> Result<AppBatch> {
        let base_apps = base.catalog(EntityType::App);
        let mut seen = HashSet::new();
        let mut app_ids = Vec::with_capacity(records.len());
        let mut labels = Vec::with_capacity(records.len());
        let mut rows: [Vec<Vec<usize>>; 6] = Default::default();
        let mut dropped = 0;
        for (line, rec) in records {
            if base_apps.get(&rec.app).is_some() {
                return Err(Error::Validation(format!(
                    "line {line}: app id `{}` collides with an in-sample app",
                    rec.app
                )));
            }
            if !seen.insert(rec.app.clone()) {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("duplicate app id `{}`", rec.app),
                });
            }
            app_ids.push(rec.app.clone());
            labels.push(rec.label);
            for r in Relation::APP_RELATIONS {
                let cat: &Catalog = base.catalog(r.target());
                let mut row = Vec::new();
                for id in rec.entities(r) {
                    match cat.get(id) {
                        Some(i) => row.push(i),
                        None => dropped += 1,
                    }
                }
                rows[r.index()].push(row);
            }
        }
        let relations: Vec<SparseMatrix> = Relation::ALL
            .into_iter()
            .map(|r| {
                if r == Relation::PermissionType {
                    Ok(base.relation(r).clone())
                } else {
                    SparseMatrix::from_row_sets(base.catalog(r.target()).len(), &rows[r.index()])
                }
            })
            .collect::<Result<_>>()?;
        Ok(AppBatch::new(
            app_ids,
            relations.try_into().expect("six relations"),
            labels,
            dropped,
        ))
    }
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for rec in records {
        serde_json::to_writer(&mut buf, rec).map_err(|e| Error::Validation(e.to_string()))?;
        buf.push(b'\n');
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_permission_map(path: &Path, map: &PermissionTypeMap) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "permission,type").expect("vec write");
    for (p, t) in map.entries() {
        writeln!(buf, "{p},{t}").expect("vec write");
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
