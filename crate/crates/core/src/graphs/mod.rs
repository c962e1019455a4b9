//! MPG constructions for codes with tree-like structure.
//!
//! Every construction first builds a Forney-style factor graph of linear
//! constraints ([`factor`]) and then orients it around the target bit. The
//! node generators are taken from the standard forms for each node type and
//! are checked against the underlying relation before use.

pub mod conv;
pub mod factor;
pub mod tanner;
pub mod trellis;
pub mod unicyclic;

use crate::gf2::Gf2Error;
use crate::mpg::MpgError;
use thiserror::Error;

pub use conv::{turbo_window, ConvCode, WindowGraph, WindowLeaf};
pub use tanner::tree_tanner_mpg;
pub use trellis::{state_dim_oracle, trellis_from_msgm, trellis_mpg, Trellis};
pub use unicyclic::unicyclic_mpg;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("Tanner graph is not a tree: {0}")]
    NotATree(String),
    #[error("Tanner graph does not have exactly one cycle: {0}")]
    NotUnicyclic(String),
    #[error("generator matrix does not have the LR property")]
    NotLR,
    #[error("bit {0} is zero in every codeword")]
    BitIdenticallyZero(usize),
    #[error("invalid polynomial: {0}")]
    InvalidPolynomial(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("factor is not a valid encoding channel: {0}")]
    InvalidNode(String),
    #[error(transparent)]
    Gf2(#[from] Gf2Error),
    #[error(transparent)]
    Mpg(#[from] MpgError),
}
