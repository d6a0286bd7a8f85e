//! Line-delimited JSON primitives shared by every file-backed stage.
//!
//! All pipeline artifacts are UTF-8 JSONL. Writers are atomic (temp file in
//! the destination directory, then rename) so a killed run never leaves a
//! half-written artifact under its final name — at worst a stage's previous
//! complete version plus an orphaned temp file. Readers can optionally
//! tolerate a torn trailing line, which is exactly the state an interrupted
//! append-style producer leaves behind.

use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> JsonlError {
    JsonlError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serializes `items` one-per-line to `path`, atomically.
pub fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), JsonlError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
    ));
    {
        let file = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        let mut w = BufWriter::new(file);
        for item in items {
            let line = serde_json::to_string(item).map_err(|e| JsonlError::Malformed {
                path: path.display().to_string(),
                line: 0,
                message: format!("serialization failed: {e}"),
            })?;
            w.write_all(line.as_bytes()).map_err(|e| io_err(&tmp, e))?;
            w.write_all(b"\n").map_err(|e| io_err(&tmp, e))?;
        }
        w.flush().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Reads every line of `path` as `T`. Any malformed line is an error naming
/// the 1-based line number.
pub fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    read_lines_impl(path, false).map(|(items, _)| items)
}

/// Reads `path` tolerantly: malformed lines are skipped and counted instead
/// of failing the read. This is the resume path — an interrupted writer can
/// leave a torn final line.
pub fn read_lines_tolerant<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, usize), JsonlError> {
    read_lines_impl(path, true)
}

fn read_lines_impl<T: DeserializeOwned>(
    path: &Path,
    tolerant: bool,
) -> Result<(Vec<T>, usize), JsonlError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    let mut skipped = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(&line) {
            Ok(item) => items.push(item),
            Err(e) if tolerant => {
                let _ = e;
                skipped += 1;
            }
            Err(e) => {
                return Err(JsonlError::Malformed {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok((items, skipped))
}

/// Writes arbitrary text atomically (same temp-and-rename discipline).
pub fn write_text(path: &Path, text: &str) -> Result<(), JsonlError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
    ));
    fs::write(&tmp, text).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}
