//! Probing whether text and audio embedding spaces share structure: an
//! embedding store, contrastive linear probes, Procrustes alignment and
//! zero-shot retrieval evaluation.

pub mod embedstore;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod linalg;
pub mod probe;
pub mod seed;

pub use error::{Error, Result};
