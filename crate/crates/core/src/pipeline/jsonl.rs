//! Line-delimited JSON persistence for pipeline stages.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::PipelineError;

fn io_err(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Io { path: path.to_path_buf(), message: e.to_string() }
}

/// Reads every record; a missing file is a [`PipelineError::MissingInput`].
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingInput(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| PipelineError::Json {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads records left by an interrupted run. A missing file yields nothing
/// and an unparseable final line (a partial write) is dropped.
pub fn read_partial<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::with_capacity(lines.len());
    for (n, line) in lines.iter().enumerate() {
        match serde_json::from_str(line) {
            Ok(rec) => out.push(rec),
            Err(_) if n + 1 == lines.len() => {
                log::warn!("{}: dropping truncated final record", path.display());
            }
            Err(e) => {
                return Err(PipelineError::Json { path: path.to_path_buf(), line: n + 1, message: e.to_string() })
            }
        }
    }
    Ok(out)
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes all records to a temporary file and renames it over `path`.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let tmp = tmp_path(path);
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(|e| io_err(&tmp, e))?);
        for r in records {
            serde_json::to_writer(&mut w, r).expect("record serializes");
            w.write_all(b"\n").map_err(|e| io_err(&tmp, e))?;
        }
        w.flush().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Sorts records by key, keeping the first record seen for each key.
pub fn canonical_order<T, K: Ord>(mut records: Vec<T>, key: impl Fn(&T) -> K) -> Vec<T> {
    records.sort_by_key(|r| key(r));
    records.dedup_by(|a, b| key(a) == key(b));
    records
}

/// Rewrites `path` in canonical key order.
pub fn canonicalize<T, K>(path: &Path, key: impl Fn(&T) -> K) -> Result<usize, PipelineError>
where
    T: Serialize + DeserializeOwned,
    K: Ord,
{
    let records = canonical_order(read_jsonl::<T>(path)?, key);
    write_jsonl(path, &records)?;
    Ok(records.len())
}

/// Appends records one line at a time, flushing after each so an
/// interrupted run leaves at most one partial line.
pub struct JsonlAppender {
    path: PathBuf,
    writer: Mutex<BufWriter<File>>,
}

impl JsonlAppender {
    pub fn open(path: &Path) -> Result<Self, PipelineError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| io_err(path, e))?;
        Ok(Self { path: path.to_path_buf(), writer: Mutex::new(BufWriter::new(file)) })
    }

    pub fn append<T: Serialize>(&self, record: &T) -> Result<(), PipelineError> {
        let mut line = serde_json::to_vec(record).expect("record serializes");
        line.push(b'\n');
        let mut w = self.writer.lock().expect("appender lock");
        w.write_all(&line).map_err(|e| io_err(&self.path, e))?;
        w.flush().map_err(|e| io_err(&self.path, e))
    }
}
