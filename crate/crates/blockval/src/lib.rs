//! Exact cooperative-game data valuation over federated data blocks.
//!
//! The crate enumerates every subset of a small set of data blocks, computes
//! exact valuation metrics (Shapley, leave-one-out, Banzhaf, Beta Shapley,
//! and the two-stage client/block metric), extracts the linear coefficients
//! of each metric, plans and executes the overvaluation attack against them,
//! and drives a deterministic FedAvg simulator that serves as a realistic
//! utility oracle. Downstream reward allocation, data selection, and the
//! experiment runner used by the `blockval` CLI live here as well.

pub mod attack;
pub mod axioms;
pub mod downstream;
pub mod error;
pub mod experiment;
pub mod flsim;
pub mod game;
pub mod valuation;

pub use error::{Error, Result};
pub use game::{build_utility_table, GameStructure, Mask, UtilityOracle, UtilityTable};
pub use valuation::{CoefficientTable, Metric, SemivalueWeights, Valuation};
