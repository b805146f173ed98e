//! A desk-scale laboratory for consistency-aware group-relative policy
//! optimisation on a procedurally generated spatial-reasoning benchmark.
//!
//! Pipeline: [`scene`] forges scenes and multiple-choice questions with
//! machine-checkable gold traces, [`policy`] is a linear-softmax trace and
//! answer policy with exact gradients, [`reward`] scores trajectories
//! (accuracy, format, logical consistency under option permutation),
//! [`sft`] and [`grpo`] train it, [`eval`] measures accuracy, drift and
//! reasoning/answer alignment, and [`harness`] wires everything together.

pub mod error;
pub mod eval;
pub mod exec;
pub mod grpo;
pub mod harness;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod scene;
pub mod sft;

pub use error::{Error, Result};
pub use exec::Exec;
