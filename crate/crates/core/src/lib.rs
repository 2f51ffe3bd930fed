//! Parametric energy-bound analysis for a small toy ISA.
//!
//! The pipeline has two phases:
//!
//! 1. **Block modeling.** The program is split into basic blocks, each block is
//!    rewritten into an isolated, runnable harness form, and an evolutionary
//!    algorithm searches the block's input space for maximal and minimal energy
//!    against a deterministic virtual-chip simulator ([`simkernel`], [`evo`]).
//! 2. **Static composition.** The control-flow graph is translated into a
//!    Horn-clause IR, per-direction cost equations are set up from the block
//!    bounds, and a recurrence solver produces closed-form upper/lower energy
//!    bound functions of the input data size ([`hcir`], [`solver`]).
//!
//! [`bounds`] orchestrates the pipeline and answers budget queries.

pub mod bounds;
pub mod cfg;
pub mod energy;
pub mod evo;
pub mod hcir;
pub mod isa;
pub mod simkernel;
pub mod solver;

pub use energy::Energy;
