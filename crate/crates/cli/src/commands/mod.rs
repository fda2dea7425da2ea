pub mod enhance;
pub mod eval;
pub mod report;
pub mod split;
pub mod ssl;
pub mod synth;

use std::path::Path;

use crate::Failure;

/// Writes a JSON value as UTF-8 with a trailing LF, pretty-printed.
pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::data(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| Failure::data(format!("write {}: {e}", path.display())))
}

/// File-level parallelism cap from `PHASESSL_THREADS` (0 or unset: rayon
/// default).
pub fn thread_cap() -> usize {
    std::env::var("PHASESSL_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0)
}
