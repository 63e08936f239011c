//! Set-oriented analysis of random dynamical systems.
//!
//! The crate discretizes a compact state window into boxes, drives the
//! system with an ensemble of sampled noise paths, builds per-sample
//! combinatorial chain-step maps, and computes on the aggregated relation:
//! the random chain recurrent set, the chain transitive components with
//! their partial order, the attractor-repeller lattice with basins, and a
//! complete Lyapunov function (entrance-time pair functions summed with
//! base-3 weights), together with a verification harness that certifies the
//! defining properties along simulated trajectories.
//!
//! Heavy loops are data-parallel over rayon (the `parallel` feature, on by
//! default) with a sequential fallback; both paths produce bit-identical
//! results.

pub mod boxmap;
pub mod cocycle;
pub mod conley;
pub mod config;
pub mod error;
pub mod expr;
pub mod graph;
pub mod grid;
pub mod lyapunov;
pub mod noise;
pub mod par;
pub mod pipeline;
pub mod util;
pub mod verify;

pub use error::{Error, Result};
pub use par::Exec;
