//! Meta-paths, meta-graphs and the adjacency algebra over a HIN.

mod adjacency;
mod cache;
mod dsl;
mod incremental;

pub use adjacency::{
    build_adjacency, build_adjacency_with, build_all, chain_product, metagraph_sim, pathsim_value,
    AdjacencyMatrix, ChainOrder, PartAdjacency,
};
pub use cache::{load_adjacencies, save_adjacencies};
pub use dsl::{
    default_structures, parse_spec, Hop, MetaGraph, MetaPath, MetaStructure, Step,
    DEFAULT_STRUCTURES,
};
pub use incremental::{build_incremental, IncrementalAdjacency, IncrementalProgram};
