//! Line-delimited JSON logs and atomic small-file writes.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Append-only file holding one JSON object per line.
#[derive(Debug)]
pub struct JsonlLog<T> {
    path: PathBuf,
    writer: Mutex<()>,
    _marker: PhantomData<fn() -> T>,
}

impl<T: Serialize + DeserializeOwned> JsonlLog<T> {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            writer: Mutex::new(()),
            _marker: PhantomData,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, item: &T) -> io::Result<()> {
        self.append_all(std::slice::from_ref(item))
    }

    pub fn append_all(&self, items: &[T]) -> io::Result<()> {
        if items.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for item in items {
            serde_json::to_writer(&mut buf, item)?;
            buf.push(b'\n');
        }
        let _guard = self.writer.lock().unwrap();
        if let Some(parent) = self.path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        file.write_all(&buf)?;
        file.flush()
    }

    /// Reads every line. A missing file is an empty log. A torn final line
    /// (no trailing newline, unparsable) is ignored; any other bad line is
    /// an error.
    pub fn load(&self) -> io::Result<Vec<T>> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>()?;
        let mut out = Vec::with_capacity(lines.len());
        let last = lines.len().saturating_sub(1);
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(item) => out.push(item),
                Err(_) if i == last => {
                    tracing::warn!(path = %self.path.display(), "ignoring torn final log line");
                }
                Err(e) => {
                    return Err(io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("{}:{}: {e}", self.path.display(), i + 1),
                    ))
                }
            }
        }
        Ok(out)
    }

    pub fn truncate(&self) -> io::Result<()> {
        let _guard = self.writer.lock().unwrap();
        match fs::remove_file(&self.path) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
            _ => Ok(()),
        }
    }
}

/// Write via a temp file and rename so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_tolerates_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let log: JsonlLog<Vec<u32>> = JsonlLog::new(dir.path().join("x.jsonl"));
        assert!(log.load().unwrap().is_empty());
        log.append(&vec![1, 2]).unwrap();
        log.append_all(&[vec![3], vec![]]).unwrap();
        let mut f = OpenOptions::new().append(true).open(log.path()).unwrap();
        f.write_all(b"[4, 5").unwrap();
        assert_eq!(log.load().unwrap(), vec![vec![1, 2], vec![3], vec![]]);
        log.truncate().unwrap();
        assert!(log.load().unwrap().is_empty());
    }
}
