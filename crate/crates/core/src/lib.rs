//! Large-deviation toolkit for jump-Markov dynamics on graphon networks.
//!
//! The crate covers the whole pipeline for the spatial SIS model and its
//! generalisations: sampling W-random networks ([`graphon`]), exact
//! simulation ([`simulator`]), the large-N density equation ([`meanfield`]),
//! rate-function evaluation ([`rate_function`]) and most-likely transition
//! paths ([`action_path`]).

pub mod action_path;
pub mod compare;
pub mod error;
pub mod graphon;
pub mod grid;
pub mod meanfield;
pub mod model;
pub mod rate_function;
pub mod simulator;

pub use error::{Error, Result};
