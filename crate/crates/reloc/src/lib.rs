//! Three-stage relocalization of a single query frame against an optimized
//! map: appearance retrieval over the keypoint vocabulary, a cheap
//! junction/structure-graph filter, and feature matching with PnP on the
//! surviving candidates.
//!
//! Everything is read-only over the map; queries may run concurrently
//! against one loaded map.

mod graph;
mod stages;

pub use graph::{structure_score, JunctionGraph, SimilarityScore, StructureMode};
pub use stages::{
    relocalize, run_query_batch, stage1_retrieve, stage2_structure_filter, stage3_match_and_pnp,
    RelocConfig, RelocResult, RelocStatus, StageTwoScore,
};

#[derive(Debug, thiserror::Error)]
pub enum RelocError {
    #[error("the map has no keypoint vocabulary")]
    MissingVocabulary,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
