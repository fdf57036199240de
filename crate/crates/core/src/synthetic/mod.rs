//! Procedural face-like data for experiments without real scans.

mod corpus;
mod template;

pub use corpus::{gen_synthetic_corpus, Latents, SyntheticCorpusSpec};
pub use template::{face_height, procedural_template, DEFAULT_TEMPLATE_GRID};
