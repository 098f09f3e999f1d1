//! A laboratory for alternating gradient descent and its competitors on
//! network matrix games.
//!
//! The crate is organized around the lifecycle of an experiment:
//!
//! * [`game`] — game representation, validation, classification, the
//!   two-meta-agent reduction, norms and rate thresholds;
//! * [`dynamics`] — the update rules (simultaneous, alternating, round-robin,
//!   optimistic, cached optimistic) and the trajectory runner;
//! * [`diagnostics`] — conserved energy, exact regret and utility
//!   identities, bounded orbits, time-average convergence, recurrence,
//!   volume preservation;
//! * [`chaos`] — exact integer geometry of the expanding coordination orbit;
//! * [`gamegen`] — seeded random games and the named counterexample
//!   instances;
//! * [`experiments`] — the paired comparison harness with interval
//!   statistics from [`stats`];
//! * [`io`] — the JSON game file format.

pub mod chaos;
pub mod compensated;
pub mod diagnostics;
pub mod dynamics;
pub mod experiments;
pub mod game;
pub mod gamegen;
pub mod io;
pub mod linalg;
pub mod stats;

pub use dynamics::{Algorithm, Budget, JointState, LearningRates, Trajectory};
pub use game::{
    classify_game, learning_rate_threshold, make_network_game, reduce_to_meta,
    shift_linear_payouts, weighted_norm, GameClassification, MetaGame, NetworkGame,
};
pub use linalg::{spectral_norm, DenseMatrix, SpectralEstimate};
