//! Federated learning simulator built around loss decomposition.
//!
//! The crate trains small classifiers across simulated clients with
//! label-skewed data and provides:
//!
//! * margin-controlled local training (`CE + λ·ln(1 + ‖f(x)‖²)`), with an
//!   optional FedProx term ([`local`]);
//! * principal-gradient server aggregation: calibrated eigen-directions of
//!   the round's gradient Gram matrix, per-client revision with length
//!   correction, and weighted aggregation ([`aggregation`]);
//! * per-round decomposition of the global loss into local,
//!   distribution-shift and aggregation terms ([`metrics`]);
//! * seeded synthetic data, Dirichlet partitioning and per-client shortcut
//!   features ([`data`]);
//! * a deterministic round loop with JSON-lines/CSV metrics and binary
//!   checkpoints ([`orchestrator`]).
//!
//! Runnable walkthroughs of each capability live in `examples/`; the
//! `fedld` binary exposes the `partition`, `run`, `ablate` and `inspect`
//! commands.

pub mod aggregation;
pub mod data;
pub mod error;
pub mod linalg;
pub mod local;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod seed;

pub use aggregation::{AggregationKind, AggregationMode, PrincipalBasis, Revision};
pub use data::{ClientDataset, Dataset, FederationSpec, MixtureSpec};
pub use error::{Error, Result};
pub use linalg::{EigenPair, Matrix};
pub use local::{FlatGradient, LocalConfig};
pub use metrics::RoundMetrics;
pub use model::{Architecture, LossReport, ModelParams, ModelShape};
pub use orchestrator::{DataSource, RunConfig, RunSummary};
