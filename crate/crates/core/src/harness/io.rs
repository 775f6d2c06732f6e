//! Output formatting and run provenance.

use std::path::Path;

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

/// 17 significant digits, enough for an exact round trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Argument(format!("bad number {s:?}: {e}")))
}

/// Package version plus the source revision when available.
pub fn version_stamp() -> String {
    let rev = std::process::Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into());
    format!("{} {} ({rev})", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

/// Writes `manifest.toml`: the command, a version stamp and a copy of the
/// configuration.
pub fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let body = format!(
        "# {}\n# command: {command}\n\n{}",
        version_stamp(),
        cfg.to_toml_string()?
    );
    std::fs::write(dir.join("manifest.toml"), body)?;
    Ok(())
}
