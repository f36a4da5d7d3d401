//! Equivariant hypergraph neural networks.
//!
//! The crate is organized around a small dense-array engine with reverse-mode
//! differentiation ([`array`]), a sparse hypergraph representation with a
//! bridge to dense symmetric tensor sequences ([`hypergraph`]), brute-force
//! maximally expressive equivariant linear layers used as correctness oracles
//! at tiny scale ([`oracle`]), the practical sparse layer family
//! ([`layers`]), dataset generation and loading ([`tasks`]), a training
//! harness ([`train`]), theorem-check batteries ([`verify`]), and a runtime
//! cost benchmark ([`bench`]).

pub mod array;
pub mod bench;
pub mod error;
pub mod hypergraph;
pub mod layers;
pub mod oracle;
pub mod rng;
pub mod tasks;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
