//! Topological neural networks over simplicial complexes, augmented with
//! persistent homology.
//!
//! The crate is organized bottom-up:
//!
//! - [`complex`]: simplicial complexes, validation, clique lifting, adjacency.
//! - [`filtration`]: filtering functions and simplex rankings (vertex-color,
//!   i-simplex-color, geometric).
//! - [`persistence`]: persistence diagrams (union-find and matrix reduction),
//!   RePHINE diagrams, and brute-force Betti oracles.
//! - [`autodiff`]: scalar reverse-mode tape, MLPs, DeepSets, optimizers.
//! - [`vectorize`]: diagram vectorizers (PersLay form, per-vertex MLPs,
//!   DeepSets over RePHINE tuples).
//! - [`tnn`]: message-passing layers over graphs and simplicial complexes,
//!   including E(n)-equivariant layers with coordinate updates.
//! - [`model`]: the TopNet layer, TOGL/PersLay/RePHINE aggregation variants,
//!   discrete and continuous-depth (ODE) models, discretization-error
//!   experiments.
//! - [`expressivity`]: 1-WL and simplicial WL color refinement,
//!   color-disconnecting sets, and a searched counterexample certificate.
//! - [`harness`]: datasets, synthetic generators, training loops, experiment
//!   drivers behind the `topnet` CLI.

pub mod autodiff;
pub mod complex;
pub mod expressivity;
pub mod filtration;
pub mod harness;
pub mod model;
pub mod persistence;
pub mod tnn;
pub mod vectorize;
