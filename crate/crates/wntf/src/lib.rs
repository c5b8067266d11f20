//! Wasserstein nonnegative tensor factorization with graph regularization.
//!
//! The crate factors a nonnegative data tensor into a rank-R Kruskal model
//! by alternating entropic-transport scaling updates per mode with
//! multiplicative factor updates, optionally smoothing the sample factor
//! over a nearest-neighbor affinity graph. Baseline factorizations
//! (KL-NMF, graph-regularized NMF, and their tensor counterparts) and a
//! clustering evaluation harness round out the experiment pipeline driven
//! by the `wntf` CLI.

pub mod error;
pub mod eval;
pub mod factorize;
pub mod graph;
pub mod tensor;
pub mod transport;

pub use error::{Error, Result};
