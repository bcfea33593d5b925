//! Motif-based model-level explanations for molecular graph classifiers.
//!
//! The crate is `no_std` (with `alloc`): dataset files, checkpoints and the
//! command line live in the companion `mage` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod chem;
pub mod motif;
pub mod nn;
pub mod target;
pub mod motif_id;
pub mod junction;
pub mod generator;
pub mod eval;
