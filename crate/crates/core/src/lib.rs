//! Panel-data causal inference for daily usage metrics.
//!
//! Synthetic-control estimation with simplex-constrained ridge weights,
//! placebo inference and robustness checks, single-group
//! difference-in-differences with a multiplier bootstrap, and the
//! decomposition of simultaneous treatments via a composite unit.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod decomp;
pub mod did;
pub mod error;
pub mod panel;
pub mod robustness;
pub mod scm;
pub mod simgen;
pub mod smooth;
pub mod stats;

pub use error::{Error, Result};
pub use panel::PanelDataset;
