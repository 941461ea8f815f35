//! Online prediction of co-movement patterns.
//!
//! The crate chains per-object future location prediction ([`flp`]) with
//! online evolving-cluster detection ([`evolving`]) and scores predicted
//! clusters against the clusters found on the real positions
//! ([`evaluation`]). [`pipeline`] wires the pieces into a replayable
//! streaming engine; [`synth`] generates fleets with known ground truth.
//!
//! Data-parallel inner loops (pairwise distances, mini-batch gradients,
//! per-object prediction, cluster matching) run on rayon when the
//! `parallel` feature is enabled and fall back to plain iterators otherwise.
//! See [`Execution`].

pub mod evaluation;
pub mod evolving;
pub mod exec;
pub mod flp;
pub mod geo;
pub mod io;
pub mod pipeline;
pub mod preprocess;
pub mod stats;
pub mod synth;

pub use evaluation::{MatchReport, SimWeights};
pub use evolving::{DetectionParams, EvolvingCluster, Mode, TimeSlice};
pub use exec::Execution;
pub use geo::{Mbr, ObjectId, TimeInterval, TimestampedPoint, Trajectory};
pub use preprocess::PreprocessConfig;
