//! Workbench: request types shared by the CLI and the HTTP service, the
//! append-only run store and the `/v1` router.

pub mod error;
pub mod http;
pub mod ops;
pub mod store;

pub use error::WorkbenchError;
pub use store::{RunRecord, RunStore};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
