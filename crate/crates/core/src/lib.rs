//! Moral-foundation prediction for short social-media text.
//!
//! The pipeline normalizes tweets, links entity mentions against a
//! knowledge base, refines the annotations, merges entity abstracts and
//! properties into enrichment documents, selects foundation-discriminative
//! words by cPMId, soft-encodes them through embedding similarity, and
//! trains one binary LSTM classifier per foundation. A text with no
//! positive foundation is Non-moral.
//!
//! Modules follow the pipeline stages:
//!
//! * [`corpus`] — data model, normalization, gold labels, agreement.
//! * [`linking`] — entity linking and annotation refinement.
//! * [`knowledge`] — KB clients and enrichment documents.
//! * [`features`] — embeddings, dictionary vectors, cPMId, soft encoding.
//! * [`model`] — per-foundation classifiers and training.
//! * [`eval`] — cross-validated experiments and reports.

pub mod corpus;
pub mod eval;
pub mod features;
pub mod knowledge;
pub mod linking;
pub mod model;
pub mod net;
