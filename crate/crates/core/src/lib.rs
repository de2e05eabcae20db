//! Allocation-only core of the augmenta toolkit.
//!
//! Everything here is deterministic and free of IO: text primitives, the
//! augmentation transforms, instruction generation and filtering, the
//! instruction ranker and the few-shot metrics. The `augmenta` crate adds
//! files, network backends and the command line on top.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod augment;
pub mod chat;
pub mod eval;
pub mod hashing;
pub mod instructgen;
pub mod model;
pub mod rng;
pub mod selector;
pub mod text;
