//! Time-delay neural network system identification.
//!
//! Reconstructs one output series (for instance a heart-surface electrogram)
//! from one input series (a body-surface lead) with a single-hidden-layer
//! network fed by a tapped delay line. Weights are fitted by
//! Levenberg-Marquardt and the hidden size and delay window are chosen by an
//! exhaustive search scored with Pearson correlation on held-out data.
//!
//! Modules:
//! - [`signal`]: detrending, slicing, autocorrelation, delay matrices.
//! - [`network`]: the model, prediction with primed delay state, Jacobian.
//! - [`optimizer`]: Levenberg-Marquardt training.
//! - [`search`]: the `(N, d)` grid search with run logging.
//! - [`metrics`]: Pearson correlation, mse, ridge FIR baseline, evaluation.
//! - [`dataset`]: recording files, manifests, synthetic generators.

pub mod dataset;
pub mod error;
pub mod metrics;
pub mod network;
pub mod optimizer;
pub mod search;
pub mod signal;

pub use error::{Error, Result};
pub use network::{DelayState, PrimePolicy, TdannModel};
pub use signal::{SegmentBounds, TimeSeries};
