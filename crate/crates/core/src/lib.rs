//! Early-warning indicators for extreme short-term volatility, built from
//! daily transaction-graph snapshots.
//!
//! The crate is organised bottom-up:
//!
//! * [`ledger`] turns normalized transaction records into an evolution matrix
//!   (one column per day, one row per user or user pair).
//! * [`linalg`] holds the dense numerical core: the L2,1 norm, robust
//!   non-negative matrix factorization, fixed-basis encoding, SVD and rank
//!   estimation.
//! * [`volatility`] computes Garman-Klass volatility and extreme-event labels.
//! * [`indicator`] fits the non-negative auto-regressive indicator and the
//!   volume and SVD + ridge baselines.
//! * [`evaluation`] computes ROC / precision-recall curves and their areas.
//! * [`pipeline`] runs rolling-window backtests and sensitivity sweeps.
//! * [`synth`] generates planted synthetic datasets with known signal.
//! * [`io`] reads and writes the on-disk matrix, table and model formats.

pub mod error;
pub mod evaluation;
pub mod indicator;
pub mod io;
pub mod ledger;
pub mod linalg;
pub mod pipeline;
pub mod synth;
pub mod volatility;

pub use error::{Error, Result};
