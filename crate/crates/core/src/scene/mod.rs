//! Procedural scenes, morphological statistics, MCQ synthesis and the
//! rule-based trace verifier.

pub mod atom;
pub mod dataset;
pub mod generate;
pub mod mcq;
pub mod morpho;
pub mod types;
pub mod verify;

pub use atom::{EvidenceAtom, Predicate};
pub use dataset::{forge_dataset, read_dataset, write_dataset, CategoryWeights, Dataset, ForgeConfig};
pub use generate::{generate_scene, GenerationParams, Layout};
pub use mcq::{synthesize_mcq, McqSample, Template};
pub use morpho::{classify_clustering, compute_morphostats, MorphoStats};
pub use types::*;
pub use verify::{gate, verify_trace, TraceVerdict};
