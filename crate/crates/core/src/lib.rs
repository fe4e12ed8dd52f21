//! Continual indexing for generative retrieval.
//!
//! Documents are identified by product-quantization codes. New sessions of
//! documents update the codebook incrementally without touching codes that
//! were already issued, and a small linear docid decoder is trained with
//! memory-bank rehearsal, pseudo-query pairs and an elastic weight
//! consolidation penalty so that earlier documents stay retrievable.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod decoder;
pub mod error;
pub mod harness;
pub mod ipq;
pub mod metrics;
pub mod pq;
pub mod rehearsal;
pub mod repr;
pub mod vector;

pub use error::{Error, Result};
pub use pq::{Codebook, DocId, PqCode};
pub use vector::{RandomSource, Vector};
