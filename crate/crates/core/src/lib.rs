//! Havens: page-based memory regions with software parity protection.
//!
//! A [`Arena`] owns a flat store of fixed-size pages. Havens are created
//! inside it, grow by bump allocation and are released all at once. Havens
//! tagged [`Protection::Parity`] keep one parity bit per 64-bit word plus a
//! pair of XOR correction signatures, which is enough to detect any
//! odd-weight corruption of a word and to rebuild a single bad word from the
//! rest of the region.
//!
//! The [`fault`] module plans and applies seeded bit-flip campaigns that
//! bypass every barrier, and [`cg`] hosts a preconditioned conjugate
//! gradient workload whose data structures can be placed in protected or
//! plain havens.
//!
//! The crate is `no_std` and only needs `alloc`.
#![no_std]
#![warn(missing_docs)]

extern crate alloc;

pub mod arena;
pub mod cg;
mod error;
pub mod fault;
pub mod parity;

pub use arena::{
    Arena, ArenaMap, BlockRef, HavenExtent, HavenHandle, HavenStats, Mode, Protection, WORD_BYTES,
};
pub use error::HavenError;
pub use parity::{parity_bit, Overhead, ParityState, ScrubReport};

/// Result alias used throughout the crate.
pub type Result<T, E = HavenError> = core::result::Result<T, E>;
