//! Bag-to-bag similarity metrics for synthetic traffic generation, and a
//! validation harness that checks whether a metric recovers the order of
//! increasingly corrupted copies of a reference bag.

pub mod align;
pub mod cluster;
pub mod corpus;
pub mod distributional;
pub mod error;
pub mod harness;
pub mod lm;
pub mod manipulate;
pub mod metric;
pub mod par;
pub mod rng;
pub mod sim;
pub mod synth;

pub use corpus::{Bag, Corpus, EmbeddingTable, Sentence, Span};
pub use error::{Error, Result};
pub use metric::{Metric, MetricConfig};
