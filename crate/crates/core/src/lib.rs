//! Simulation of annotation strategies in cross-silo federated learning.
//!
//! Clients hold disjoint shards of a dataset with a small labeled seed set
//! and an annotation budget spent over several rounds. Each round they pick
//! instances to label by random sampling, by separate active learning (every
//! client scores its pool with a model trained on its own labels) or by
//! federated active learning (every client scores its pool with one model
//! trained by FedAvg across all clients). After annotation a main-task model
//! is trained by FedAvg and evaluated on a shared test set.
//!
//! The modules build on each other:
//!
//! - [`nn`]: a small multilayer perceptron with hand-written backpropagation,
//! - [`data`]: synthetic blobs, CSV/IDX loading, partitioning and client pools,
//! - [`fed`]: FedAvg with weighted aggregation and loss-threshold stopping,
//! - [`strategies`]: informativeness scorers and top-b / core-set selection,
//! - [`orchestrator`]: the random, separate and federated AL round loops,
//! - [`harness`]: TOML experiment configs, repeated runs and CSV results.
//!
//! Everything is seeded; results do not depend on the number of threads.

pub mod data;
pub mod error;
pub mod fed;
pub mod harness;
pub mod nn;
pub mod orchestrator;
pub mod rng;
pub mod strategies;

pub use error::{Error, Result};
