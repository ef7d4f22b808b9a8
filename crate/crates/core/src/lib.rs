//! Curriculum-aware group-relative policy optimization at desk scale.
//!
//! Everything in this crate is pure computation over in-memory values and
//! builds without `std`.

#![no_std]
// Range checks are written as `!(x > 0.0)` on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod math;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod vocab;
pub mod taskgen;
pub mod grpo;
pub mod warmup;
pub mod joint;
pub mod refinery;
