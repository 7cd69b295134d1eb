//! Hardware-aware neural architecture codesign.
//!
//! A global multi-objective search (NSGA-II) over a categorical MLP space
//! scores candidates on accuracy and FPGA cost surrogates (estimated
//! resources, clock cycles, or bit operations). A selected architecture is
//! then compressed by iterative magnitude pruning with 8-bit
//! quantization-aware training.

pub mod data;
pub mod estimator;
pub mod ir;
pub mod local;
pub mod moo;
pub mod pipeline;
pub mod rng;
pub mod space;
pub mod train;
