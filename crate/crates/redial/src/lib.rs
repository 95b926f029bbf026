//! A context-rewriting engine for multi-party dialogue generation.
//!
//! The pipeline scores dialogue discourse coherence with a trainable
//! addressee-recognition head, samples and prunes candidate context rewrites
//! through pluggable text-generation backends, calibrates coherence and
//! response-quality feedback with coefficient-of-variation weighting, builds
//! pairwise preference datasets for external DPO training, and drives an
//! iterative self-evolution loop plus a threshold-gated adaptive-rewriting
//! inference path.
//!
//! Start with the runnable programs under `examples/`; each demonstrates one
//! capability end to end against deterministic mock backends.

pub mod arhead;
pub mod backends;
pub mod corpus;
pub mod metrics;
