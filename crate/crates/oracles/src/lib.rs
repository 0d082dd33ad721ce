//! Reference implementations for tests. Everything here is written as plain
//! loops straight from the defining formulas, shares no code with the tape,
//! and is generic over the scalar so the same oracle can run at `f64` or at
//! 128-bit precision.

pub mod metrics;
pub mod model;
pub mod real;

pub use real::{Ext, Real};
