//! Shift-robustness evaluation for conditional exponential-family mechanisms.
//!
//! Given a sample with a per-row loss column and a declared factorized model,
//! estimates how the expected loss moves when selected conditionals have
//! their natural parameters shifted, and finds worst-case shifts inside a
//! ball or ellipsoid.

pub mod estimation;
pub mod families;
pub mod model;
pub mod regress;
pub mod rng;
pub mod table;
pub mod worst_case;
