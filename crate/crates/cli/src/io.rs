//! On-disk formats: event CSVs, the simulation manifest, model and report JSON.

use crate::error::{CliError, CliResult};
use hawkes_emv::simulate::TruthSpec;
use hawkes_emv::{EventSequence, FittedModel};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Written by `simulate`; lists one event file per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub case: Option<u8>,
    pub truth: TruthSpec,
    pub t_end: f64,
    pub t_phi: f64,
    pub sequences: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub seed: u64,
    /// Relative to the manifest's directory.
    pub file: String,
    pub n_events: usize,
}

/// Written by `fit`: the window plus everything needed to rebuild the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub t_end: f64,
    pub t_phi: f64,
    pub n_sequences: usize,
    pub n_events: usize,
    pub model: FittedModel,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

pub fn read_events(path: &Path, t_end: f64) -> CliResult<EventSequence> {
    EventSequence::read_csv(path, t_end).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Two-column CSV with the given header.
pub fn curve_csv(header: (&str, &str), points: &[(f64, f64)]) -> String {
    let mut out = format!("{},{}\n", header.0, header.1);
    for (x, y) in points {
        let _ = writeln!(out, "{x},{y}");
    }
    out
}

/// Parse a two-column CSV written by [`curve_csv`], checking the header.
#[cfg(test)]
pub fn read_curve_csv(text: &str, header: (&str, &str)) -> CliResult<Vec<(f64, f64)>> {
    let mut lines = text.lines();
    let expected = format!("{},{}", header.0, header.1);
    if lines.next() != Some(expected.as_str()) {
        return Err(CliError::input(format!("expected header {expected:?}")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let parse = |s: Option<&str>| s.and_then(|v| v.trim().parse::<f64>().ok());
            let mut fields = line.split(',');
            match (parse(fields.next()), parse(fields.next()), fields.next()) {
                (Some(x), Some(y), None) => Ok((x, y)),
                _ => Err(CliError::input(format!("line {}: malformed row {line:?}", i + 2))),
            }
        })
        .collect()
}

/// Data files named in a manifest, resolved against its directory.
pub fn manifest_files(manifest_path: &Path, manifest: &Manifest) -> Vec<PathBuf> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    manifest.sequences.iter().map(|e| dir.join(&e.file)).collect()
}
