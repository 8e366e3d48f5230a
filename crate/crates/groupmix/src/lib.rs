//! Group-robust training on synthetic group-shifted datasets.
//!
//! The toolkit trains a small deterministic MLP under several group-robust
//! objectives — plain ERM, unconditional and class-conditional MixUp,
//! two-phase buffer upweighting, class-conditional group interpolation, and
//! exponentiated-gradient group reweighting — on generated datasets where a
//! confounder is spuriously correlated with the label, and evaluates
//! worst-group accuracy under a group shift at test time.
//!
//! Start with the runnable programs in `examples/`, one per capability, or
//! the `groupmix` binary (`generate`, `train`, `evaluate`, `reproduce-toy`,
//! `gradcheck`, `theorem-check`, `sweep`).

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod identify;
pub mod losses;
pub mod mix;
pub mod nn;
pub mod report;
pub mod rng;
pub mod train;
mod textfmt;

pub use error::{Error, ErrorCategory, Result};
