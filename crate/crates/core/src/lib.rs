//! Split-inference two-tower ranking.
//!
//! A query/member tower network is trained as one model ([`nncore`]), carved
//! into three versioned bundles ([`splitter`]) and served by three tiers: an
//! offline [`indexer`] that stores compressed member vectors in the forward
//! index, an online [`frontend`] that evaluates the query arm from a token
//! [`embedstore`] dictionary, and [`searcher`] shards behind a [`broker`] that
//! evaluate the similarity layer per hit.

mod binio;
pub mod bench;
pub mod broker;
pub mod embedstore;
pub mod error;
pub mod eval;
mod field_keys;
pub mod frontend;
pub mod indexer;
pub mod latency;
pub mod nncore;
pub mod pipeline;
pub mod searcher;
pub mod splitter;
pub mod synth;
pub mod wire;

pub use error::{Error, Result};
