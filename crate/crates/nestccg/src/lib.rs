//! Chunk-graph attentive GCN supertagging and CCG parsing.
//!
//! The pipeline: an unsupervised PMI lexicon segments text into n-grams
//! ([`lexicon`]); lexicon matches against a sentence merge into chunks
//! whose adjacency matrix carries in-chunk and cross-chunk edges
//! ([`chunk_graph`]); a graph-convolutional tagger with positional
//! attention over those edges assigns supertags ([`agcn`]); and a CKY
//! search over supertag candidates builds CCG derivations
//! ([`derivation`]).

pub mod agcn;
pub mod categories;
pub mod chunk_graph;
pub mod corpus;
pub mod derivation;
pub mod error;
pub mod lexicon;
pub mod par;
pub mod tensor;

pub use error::{Error, Result};
