//! Minimal reverse-mode differentiable array engine.
//!
//! The operator set is closed: exactly what the encoder, decoder and loss need.
//! See [`Op`] for the catalog.

mod array;
pub mod dft;
mod gradcheck;
mod graph;
mod kernels;
mod ops;

pub use array::{Array, ComplexArray};
pub use dft::{dft, idft};
pub use gradcheck::{
    fd_check, fd_check_against, fd_check_entries, fd_check_smooth, FdStats, DEFAULT_STEP,
};
pub use graph::{Gradients, Graph, IouEntry, NodeId, Op, Shift, VarifocalTargets};
