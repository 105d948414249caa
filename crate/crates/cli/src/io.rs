use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use hinmal_core::detector::Verdict;
use hinmal_core::hin::Label;
use hinmal_core::{Error, Result};

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_verdicts(path: &Path, verdicts: &[Verdict]) -> Result<()> {
    write_lines(path, verdicts)
}

pub fn read_verdicts(path: &Path) -> Result<Vec<Verdict>> {
    read_lines(path)
}

/// Ground-truth line: `{"app": ..., "label": "malicious" | "benign"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRecord {
    pub app: String,
    pub label: Label,
}

pub fn write_truth(path: &Path, truth: &[TruthRecord]) -> Result<()> {
    write_lines(path, truth)
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRecord>> {
    read_lines(path)
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
