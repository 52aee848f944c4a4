//! Line-delimited JSON helpers shared by every stage file.
//!
//! Appenders write one object per line and flush after each write. Readers
//! tolerate a torn final line (a crash mid-append); [`repair_tail`] drops it
//! before new lines are appended.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl JsonlError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        JsonlError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Reads every line of `path` into `T`. A malformed *final* line without a
/// trailing newline is treated as a torn write and ignored; any other
/// malformed line is an error.
pub fn read_all<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let mut raw = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut raw))
        .map_err(|e| JsonlError::io(path, e))?;
    let ends_clean = raw.is_empty() || raw.ends_with('\n');
    let lines: Vec<&str> = raw.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(_) if i + 1 == lines.len() && !ends_clean => break,
            Err(e) => {
                return Err(JsonlError::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Like [`read_all`] but a missing file yields an empty vector.
pub fn read_all_or_empty<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    if path.exists() {
        read_all(path)
    } else {
        Ok(Vec::new())
    }
}

/// Writes `items` to `path` atomically (temp file in the same directory, then rename).
pub fn write_all_atomic<T: Serialize>(path: &Path, items: &[T]) -> Result<(), JsonlError> {
    atomic_write(path, |w| {
        for item in items {
            serde_json::to_writer(&mut *w, item).map_err(io::Error::other)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

/// Serializes one JSON document atomically.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), JsonlError> {
    atomic_write(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(io::Error::other)?;
        w.write_all(b"\n")
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, JsonlError> {
    let raw = fs::read_to_string(path).map_err(|e| JsonlError::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| JsonlError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Runs `body` against a buffered temp file next to `path`, then renames it
/// into place. On any error the temp file is discarded and `path` is untouched.
pub fn atomic_write<F>(path: &Path, body: F) -> Result<(), JsonlError>
where
    F: FnOnce(&mut BufWriter<&mut File>) -> io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::env::current_dir().map_err(|e| JsonlError::io(path, e))?,
    };
    fs::create_dir_all(&dir).map_err(|e| JsonlError::io(&dir, e))?;
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(&dir).map_err(|e| JsonlError::io(path, e))?;
    {
        let file = tmp.as_file_mut();
        let mut w = BufWriter::new(file);
        body(&mut w).map_err(|e| JsonlError::io(path, e))?;
        w.flush().map_err(|e| JsonlError::io(path, e))?;
    }
    tmp.persist(path)
        .map_err(|e| JsonlError::io(path, e.error))?;
    Ok(())
}

/// Append-only writer; each `append` is one flushed line.
#[derive(Debug)]
pub struct Appender {
    file: File,
    path: String,
}

impl Appender {
    /// Opens `path` for appending, creating it if needed, after dropping any torn tail.
    pub fn open(path: &Path) -> Result<Self, JsonlError> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir).map_err(|e| JsonlError::io(dir, e))?;
            }
        }
        repair_tail(path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| JsonlError::io(path, e))?;
        Ok(Appender {
            file,
            path: path.display().to_string(),
        })
    }

    pub fn append<T: Serialize>(&mut self, item: &T) -> Result<(), JsonlError> {
        let mut line = serde_json::to_vec(item)?;
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.flush())
            .map_err(|e| JsonlError::Io {
                path: self.path.clone(),
                source: e,
            })
    }
}

/// Truncates a file to its last complete line. Missing files are fine.
pub fn repair_tail(path: &Path) -> Result<(), JsonlError> {
    if !path.exists() {
        return Ok(());
    }
    let bytes = fs::read(path).map_err(|e| JsonlError::io(path, e))?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    set_len(path, keep as u64)
}

/// Keeps only the first `n` lines of `path`. Missing files are fine when `n == 0`.
pub fn truncate_lines(path: &Path, n: usize) -> Result<(), JsonlError> {
    if !path.exists() {
        return if n == 0 {
            Ok(())
        } else {
            Err(JsonlError::io(
                path,
                io::Error::new(io::ErrorKind::NotFound, "expected existing file"),
            ))
        };
    }
    let file = File::open(path).map_err(|e| JsonlError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut offset = 0u64;
    let mut buf = Vec::new();
    for _ in 0..n {
        buf.clear();
        let read = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| JsonlError::io(path, e))?;
        if read == 0 || !buf.ends_with(b"\n") {
            return Err(JsonlError::Parse {
                path: path.display().to_string(),
                line: 0,
                message: format!("file holds fewer than {n} complete lines"),
            });
        }
        offset += read as u64;
    }
    set_len(path, offset)
}

fn set_len(path: &Path, len: u64) -> Result<(), JsonlError> {
    let mut f = OpenOptions::new()
        .write(true)
        .open(path)
        .map_err(|e| JsonlError::io(path, e))?;
    f.set_len(len).map_err(|e| JsonlError::io(path, e))?;
    f.seek(SeekFrom::End(0)).map_err(|e| JsonlError::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        n: u32,
    }

    #[test]
    fn torn_tail_is_ignored_then_repaired() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rows.jsonl");
        fs::write(&p, "{\"n\":1}\n{\"n\":2}\n{\"n\":").unwrap();
        let rows: Vec<Row> = read_all(&p).unwrap();
        assert_eq!(rows, vec![Row { n: 1 }, Row { n: 2 }]);

        let mut app = Appender::open(&p).unwrap();
        app.append(&Row { n: 3 }).unwrap();
        let rows: Vec<Row> = read_all(&p).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2], Row { n: 3 });
    }

    #[test]
    fn malformed_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rows.jsonl");
        fs::write(&p, "{\"n\":1}\nnope\n{\"n\":2}\n").unwrap();
        assert!(read_all::<Row>(&p).is_err());
    }

    #[test]
    fn truncate_keeps_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rows.jsonl");
        write_all_atomic(&p, &[Row { n: 1 }, Row { n: 2 }, Row { n: 3 }]).unwrap();
        truncate_lines(&p, 2).unwrap();
        let rows: Vec<Row> = read_all(&p).unwrap();
        assert_eq!(rows, vec![Row { n: 1 }, Row { n: 2 }]);
        assert!(truncate_lines(&p, 5).is_err());
    }
}
