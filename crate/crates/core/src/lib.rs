//! Schema routing for natural-language querying over many databases.
//!
//! The pipeline: load a [`catalog::SchemaCatalog`], build the
//! [`graph::SchemaGraph`], synthesize question/schema pairs by random walks
//! ([`synth`]), fit a scorer and route questions with graph-constrained
//! diverse beam decoding ([`router`]). [`baseline`] provides the BM25
//! comparison point and [`eval`] the routing metrics.

pub mod baseline;
pub mod catalog;
pub mod desk;
pub mod eval;
pub mod fixtures;
pub mod graph;
pub mod protocol;
pub mod router;
pub mod serialize;
pub mod sqlparse;
pub mod synth;
pub mod vocab;

pub use catalog::{load_catalog, normalize, SchemaCatalog};
pub use graph::{build_graph, EdgeKind, NodeId, QuerySchema, SchemaGraph};
pub use serialize::{dfs_serialize, enumerate_serializations, parse_serialization, SerializedSchema};
