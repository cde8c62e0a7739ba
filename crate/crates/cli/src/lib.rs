//! Command-line pipeline: dataset generation, training, evaluation, the
//! stencil study and figure data.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod plot;

use thiserror::Error;

/// A usage or configuration error raised by the CLI itself.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct Invalid(pub String);

/// Whether `e` is the user's fault (exit code 1) rather than a runtime
/// failure (exit code 2).
pub fn is_validation(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<Invalid>().is_some()
            || c.downcast_ref::<tmn_core::Error>()
                .is_some_and(tmn_core::Error::is_validation)
    })
}

pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub fn exit_code(e: &anyhow::Error) -> i32 {
    if is_validation(e) {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

/// One-line JSON error report for stderr.
pub fn error_line(e: &anyhow::Error) -> String {
    let kind = if is_validation(e) { "validation" } else { "runtime" };
    let chain: Vec<String> = e.chain().map(ToString::to_string).collect();
    serde_json::json!({ "error": kind, "message": chain.join(": ") }).to_string()
}

/// Package version plus `git describe` when built from a checkout.
pub const CODE_VERSION: &str = env!("TMN_CODE_VERSION");

pub fn code_version() -> String {
    CODE_VERSION.to_string()
}
