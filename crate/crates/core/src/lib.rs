//! Multi-instruction, multi-warp (MIMW) kernel toolkit.
//!
//! The crate is `no_std` (it needs `alloc`) and contains everything that is
//! pure computation:
//!
//! - [`ir`]: the kernel IR, its textual form (parser and printer) and
//!   structural validation.
//! - [`layout`]: the layout-encoding lattice and the constraint
//!   insertion / backward / forward / resolve pass pipeline.
//! - [`sync`]: the mbarrier state machine and the cluster legality pass.
//! - [`clc`]: the cluster-launch-control tile queue and response ABI.
//! - [`sim`]: a deterministic cooperative simulator with a happens-before
//!   race detector.
//! - [`kernels`]: dense reference oracles for the shipped kernel corpus.
//!
//! File formats, the CLI and corpus discovery live in the `mimw` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod clc;
pub mod diag;
pub mod ir;
pub mod kernels;
pub mod layout;
pub mod pipeline;
pub mod sim;
pub mod sync;
pub mod tensor;

pub use diag::{Diagnostic, Severity};
pub use ir::{parse_kernel, print_ir, validate, KernelProgram, ParseError, Stage};
pub use layout::{LayoutEncoding, ResolvedProgram};
pub use pipeline::{compile, compile_program, CompileError, Compiled, PipelineOptions};
pub use sim::{simulate, SimConfig, SimError, SimFault, SimResult};
pub use tensor::Tensor;
