pub mod dipoles;
pub mod layout;
pub mod magnetics;
pub mod modes;
pub mod noisefit;
pub mod strayfield;
pub mod synth;
pub mod transport;

use std::path::Path;

use crate::error::{CliError, CliResult};

pub fn read_input(path: &Path) -> CliResult<String> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    if text.trim().is_empty() {
        return Err(CliError::input(format!("{} is empty", path.display())));
    }
    Ok(text)
}

/// Prefixes schema diagnostics with the file they came from.
pub fn in_file<T>(path: &Path, r: penning_probe::Result<T>) -> CliResult<T> {
    r.map_err(|e| match CliError::from(e) {
        CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
        other => other,
    })
}
