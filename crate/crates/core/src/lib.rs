//! Decoherent histories of coarse-grained densities on a lattice, with a
//! statistical tier for large-N variance scaling.

pub mod densities;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod histories;
pub mod lattice;
pub mod operator;
pub mod statistics;

pub use error::{Error, Result};
