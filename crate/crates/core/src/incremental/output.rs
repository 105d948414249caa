use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::OutEmbedding;
use crate::error::{Error, Result};
use crate::hin::Hin;
use crate::numerics::DenseMatrix;

/// One line per app: `app_id`, isolated flag (`0`/`1`), then `D` values,
/// tab-separated.
pub fn write_embeddings(path: &Path, out: &OutEmbedding) -> Result<()> {
    write_embedding_rows(path, &out.app_ids, &out.isolated, &out.embedding)
}

/// Writes rows in the embedding TSV format.
pub fn write_embedding_rows(path: &Path, app_ids: &[String], isolated: &[bool], rows: &DenseMatrix) -> Result<()> {
    if app_ids.len() != rows.rows() || isolated.len() != rows.rows() {
        return Err(Error::dims("write_embedding_rows", (app_ids.len(), 1), rows.shape()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (o, id) in app_ids.iter().enumerate() {
        let mut line = format!("{id}\t{}", u8::from(isolated[o]));
        for v in rows.row(o) {
            line.push('\t');
            line.push_str(&v.to_string());
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rows of an embedding TSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRows {
    pub app_ids: Vec<String>,
    pub isolated: Vec<bool>,
    pub rows: DenseMatrix,
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingRows> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut app_ids = Vec::new();
    let mut isolated = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    for (n, line) in text.lines().enumerate() {
        let err = |message: String| Error::Parse { line: n + 1, message };
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default();
        let flag = match fields.next() {
            Some("0") => false,
            Some("1") => true,
            other => return Err(err(format!("isolated flag must be 0 or 1, got {other:?}"))),
        };
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|_| err(format!("invalid number `{f}`"))))
            .collect::<Result<Vec<_>>>()?;
        if *dim.get_or_insert(values.len()) != values.len() {
            return Err(err(format!("expected {} values, got {}", dim.unwrap_or(0), values.len())));
        }
        app_ids.push(id.to_owned());
        isolated.push(flag);
        data.extend(values);
    }
    let rows = DenseMatrix::from_vec(app_ids.len(), dim.unwrap_or(0), data)?;
    Ok(EmbeddingRows { app_ids, isolated, rows })
}

#[derive(Serialize)]
struct AuditStructure<'a> {
    structure: &'a str,
    neighbors: Vec<&'a str>,
    sims: &'a [f64],
    alpha: &'a [f64],
}

#[derive(Serialize)]
struct AuditLine<'a> {
    app: &'a str,
    isolated: bool,
    structures: Vec<AuditStructure<'a>>,
}

/// Line-delimited JSON: per app, the selected neighbors, similarities and
/// weights under every structure.
pub fn write_audit(path: &Path, out: &OutEmbedding, hin: &Hin) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let ids = hin.app_ids();
    for (o, app) in out.app_ids.iter().enumerate() {
        let structures = out
            .structure_names
            .iter()
            .zip(&out.selections)
            .map(|(name, sel)| {
                let s = &sel[o];
                AuditStructure {
                    structure: name,
                    neighbors: s.neighbors.iter().map(|&j| ids[j].as_str()).collect(),
                    sims: &s.sims,
                    alpha: &s.alpha,
                }
            })
            .collect();
        let line = AuditLine {
            app,
            isolated: out.isolated[o],
            structures,
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
