//! Pipeline driver behind the `asca` binary: config parsing and
//! validation, run orchestration, and artifact rendering. The heavy
//! machinery lives in `asca-core`; this crate turns a declarative TOML
//! document into a deterministic artifact directory.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod svg;
