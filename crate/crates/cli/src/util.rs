//! Small IO helpers that keep path context on every error, so a failing
//! batch run names the file that broke it.

use serde::de::DeserializeOwned;
use serde::Serialize;
use splatrig::error::{Error, Result};
use std::path::Path;

/// Rewraps IO and parse errors so the message starts with the path.
pub fn with_path(err: Error, path: &Path) -> Error {
    match err {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| with_path(Error::Io(e), path))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("artifact serialization cannot fail");
    std::fs::write(path, text + "\n").map_err(|e| with_path(Error::Io(e), path))
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| with_path(Error::Io(e), path))
}

/// Mean of a non-empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
