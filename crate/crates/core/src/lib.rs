//! Belief propagation with quantum messages (BPQM) on binary linear codes
//! over pure-state channels.
//!
//! The crate is organised bottom-up:
//!
//! - [`gf2`]: bit vectors and matrices over GF(2), minimal-span generators.
//! - [`dist`]: distributions over `F_2^m` and the classical message algebra.
//! - [`mpg`]: message-passing graphs, encoding, node ensembles and BPQM
//!   success probabilities.
//! - [`graphs`]: MPG constructions from Tanner graphs, unicyclic graphs and
//!   trellises, plus convolutional code sections.
//! - [`oracle`]: small dense state-vector checks (Helstrom, PGM, node unitaries).
//! - [`density`]: density evolution for turbo codes under windowed BPQM.

pub mod density;
pub mod dist;
pub mod gf2;
pub mod graphs;
pub mod mpg;
pub mod oracle;

pub use dist::{Distribution, GridParams};
pub use gf2::{BitMatrix, BitVector};
pub use mpg::{message_ensemble, success_probability, MessageEnsemble, Mpg};
