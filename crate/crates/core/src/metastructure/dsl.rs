//! Meta-structure definitions and their text format.
//!
//! One structure per line, `#` starts a comment:
//!
//! ```text
//! MP1: A-API-A
//! MP6: A-P-PT-P-A
//! MG2: (MP1) & (A-S-A)
//! ```
//!
//! A meta-graph part is either an inline chain or the name of a meta-path
//! defined on an earlier line.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::hin::{EntityType, Relation};

/// Registry used when no structure file is supplied.
pub const DEFAULT_STRUCTURES: &str = "\
# Meta-paths
MP1: A-API-A
MP2: A-C-A
MP3: A-I-A
MP4: A-S-A
MP5: A-P-A
MP6: A-P-PT-P-A
# Meta-graphs
MG1: (MP1) & (MP5)
MG2: (MP1) & (MP4)
MG3: (MP2) & (MP5)
";

/// One relation traversal in a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Hop {
    pub relation: Relation,
    pub transposed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaPath {
    name: String,
    chain: Vec<EntityType>,
    hops: Vec<Hop>,
}

impl MetaPath {
    pub fn new(name: impl Into<String>, chain: Vec<EntityType>) -> Result<Self> {
        let name = name.into();
        if chain.len() < 3 {
            return Err(Error::Validation(format!(
                "meta-path `{name}` needs at least three types"
            )));
        }
        if chain[0] != EntityType::App || chain[chain.len() - 1] != EntityType::App {
            return Err(Error::Validation(format!(
                "meta-path `{name}` must start and end with A"
            )));
        }
        let hops = chain
            .windows(2)
            .map(|w| {
                Relation::between(w[0], w[1])
                    .map(|(relation, transposed)| Hop {
                        relation,
                        transposed,
                    })
                    .ok_or_else(|| {
                        Error::Validation(format!(
                            "meta-path `{name}`: no relation between {} and {}",
                            w[0], w[1]
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { name, chain, hops })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn chain(&self) -> &[EntityType] {
        &self.chain
    }

    /// Relation traversals, one per adjacent type pair.
    pub fn hops(&self) -> &[Hop] {
        &self.hops
    }

    pub fn is_palindrome(&self) -> bool {
        self.chain.iter().eq(self.chain.iter().rev())
    }

    fn chain_text(&self) -> String {
        self.chain
            .iter()
            .map(|t| t.token())
            .collect::<Vec<_>>()
            .join("-")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaGraph {
    name: String,
    parts: Vec<MetaPath>,
}

impl MetaGraph {
    pub fn new(name: impl Into<String>, parts: Vec<MetaPath>) -> Result<Self> {
        let name = name.into();
        if parts.len() < 2 {
            return Err(Error::Validation(format!(
                "meta-graph `{name}` needs at least two parts"
            )));
        }
        Ok(Self { name, parts })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn parts(&self) -> &[MetaPath] {
        &self.parts
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetaStructure {
    Path(MetaPath),
    Graph(MetaGraph),
}

impl MetaStructure {
    pub fn name(&self) -> &str {
        match self {
            MetaStructure::Path(p) => p.name(),
            MetaStructure::Graph(g) => g.name(),
        }
    }

    /// Component meta-paths; a meta-path is its own single part.
    pub fn parts(&self) -> &[MetaPath] {
        match self {
            MetaStructure::Path(p) => std::slice::from_ref(p),
            MetaStructure::Graph(g) => g.parts(),
        }
    }

    pub fn is_graph(&self) -> bool {
        matches!(self, MetaStructure::Graph(_))
    }

    /// Same structure under a different name.
    pub fn renamed(&self, name: &str) -> MetaStructure {
        let mut out = self.clone();
        match &mut out {
            MetaStructure::Path(p) => p.name = name.to_owned(),
            MetaStructure::Graph(g) => g.name = name.to_owned(),
        }
        out
    }

    /// The adjacency program: each part is a chain of products, parts are
    /// combined by Hadamard product.
    pub fn program(&self) -> Vec<Step> {
        let mut steps = Vec::new();
        for (i, part) in self.parts().iter().enumerate() {
            for (k, hop) in part.hops().iter().enumerate() {
                steps.push(if k == 0 {
                    Step::Load(*hop)
                } else {
                    Step::Spgemm(*hop)
                });
            }
            if i > 0 {
                steps.push(Step::Hadamard);
            }
        }
        steps
    }
}

/// One instruction of a compiled adjacency program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    /// Start a new part with this relation (transposed if flagged).
    Load(Hop),
    /// Multiply the current part on the right by this relation.
    Spgemm(Hop),
    /// Combine the last two parts elementwise.
    Hadamard,
}

impl fmt::Display for MetaStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetaStructure::Path(p) => write!(f, "{}: {}", p.name, p.chain_text()),
            MetaStructure::Graph(g) => {
                let parts: Vec<String> = g
                    .parts
                    .iter()
                    .map(|p| format!("({})", p.chain_text()))
                    .collect();
                write!(f, "{}: {}", g.name, parts.join(" & "))
            }
        }
    }
}

fn parse_chain(name: &str, text: &str) -> Result<MetaPath> {
    let chain = text
        .split('-')
        .map(|tok| tok.trim().parse::<EntityType>())
        .collect::<Result<Vec<_>>>()?;
    MetaPath::new(name, chain)
}

/// Parses a structure file into validated structures, in file order.
pub fn parse_spec(text: &str) -> Result<Vec<MetaStructure>> {
    let mut out: Vec<MetaStructure> = Vec::new();
    let mut paths: HashMap<String, MetaPath> = HashMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let err = |e: Error| Error::Parse {
            line: line_no,
            message: match e {
                Error::Validation(m) => m,
                other => other.to_string(),
            },
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (name, body) = line.split_once(':').ok_or_else(|| Error::Parse {
            line: line_no,
            message: "expected `NAME: definition`".into(),
        })?;
        let name = name.trim();
        let body = body.trim();
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(err(Error::Validation(format!("invalid structure name `{name}`"))));
        }
        if out.iter().any(|s| s.name() == name) {
            return Err(err(Error::Validation(format!("duplicate structure name `{name}`"))));
        }
        let structure = if body.starts_with('(') {
            let parts = body
                .split('&')
                .enumerate()
                .map(|(i, p)| {
                    let p = p.trim();
                    let inner = p
                        .strip_prefix('(')
                        .and_then(|s| s.strip_suffix(')'))
                        .ok_or_else(|| Error::Validation(format!("part `{p}` must be parenthesized")))?
                        .trim();
                    if inner.contains('-') {
                        parse_chain(&format!("{name}/{}", i + 1), inner)
                    } else {
                        paths
                            .get(inner)
                            .cloned()
                            .ok_or_else(|| Error::Validation(format!("unknown meta-path `{inner}`")))
                    }
                })
                .collect::<Result<Vec<_>>>()
                .map_err(err)?;
            MetaStructure::Graph(MetaGraph::new(name, parts).map_err(err)?)
        } else {
            let path = parse_chain(name, body).map_err(err)?;
            paths.insert(name.to_owned(), path.clone());
            MetaStructure::Path(path)
        };
        out.push(structure);
    }
    Ok(out)
}

pub fn default_structures() -> Vec<MetaStructure> {
    parse_spec(DEFAULT_STRUCTURES).expect("default registry parses")
}
