//! Joint entity alignment and missing-triple recovery for two incomplete
//! knowledge graphs.
//!
//! Two embedding channels are trained side by side:
//!
//! * a translation channel ([`transitivity`]) that embeds entities and
//!   relations of both graphs in one L1 space, tied together by seed links;
//! * a relation-aware attention GNN ([`proximity`]) over name features.
//!
//! Their cosine similarity matrices are fused and greedily matched
//! ([`alignment`]); confident matches are bootstrapped into the seed set and
//! a link detector ([`recovery`]) fills triples that one graph is missing.
//! [`train`] runs the whole loop and [`experiment`] wraps it into
//! reproducible recipes with JSON reports.

pub mod alignment;
pub mod error;
pub mod experiment;
pub mod grad;
pub mod kg;
pub mod layout;
pub mod proximity;
pub mod recovery;
pub mod train;
pub mod transitivity;

pub use error::{Error, Result};
