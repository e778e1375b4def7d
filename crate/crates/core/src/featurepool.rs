//! Append-only embedding pools with immutable snapshots.
//!
//! A pool is a sequence of segments; every append adds one segment and
//! never touches existing ones, so a snapshot is just a list of `Arc`s to
//! the segments that existed when it was taken.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::embed::EmbeddingVector;

const MAGIC: &[u8; 8] = b"FPOOL\0v1";
const HEADER_LEN: u64 = 8 + 4 + 8;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("id {0:?} is already in the pool")]
    DuplicateId(String),
    #[error("vector dimension {actual} does not match pool dimension {expected}")]
    Dimension { expected: usize, actual: usize },
    #[error("pool file is corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One row to append: the item id, a recency stamp used for tie-breaking
/// (unix seconds), and its embedding.
#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub id: String,
    pub recency: i64,
    pub vector: EmbeddingVector,
}

#[derive(Debug)]
struct Segment {
    ids: Vec<String>,
    recency: Vec<i64>,
    values: Vec<f32>,
}

/// Borrowed view of one pool row.
#[derive(Debug, Clone, Copy)]
pub struct RowRef<'a> {
    pub id: &'a str,
    pub recency: i64,
    pub values: &'a [f32],
}

#[derive(Debug, Clone)]
pub struct FeaturePool {
    dim: usize,
    segments: Arc<Vec<Arc<Segment>>>,
    index: HashMap<String, usize>,
    rows: usize,
    generation: u64,
}

impl FeaturePool {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            segments: Arc::new(Vec::new()),
            index: HashMap::new(),
            rows: 0,
            generation: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Checks an append without performing it.
    pub fn validate(&self, entries: &[PoolEntry]) -> Result<(), PoolError> {
        let mut fresh = std::collections::HashSet::with_capacity(entries.len());
        for e in entries {
            if e.vector.dim() != self.dim {
                return Err(PoolError::Dimension {
                    expected: self.dim,
                    actual: e.vector.dim(),
                });
            }
            if self.index.contains_key(&e.id) || !fresh.insert(e.id.as_str()) {
                return Err(PoolError::DuplicateId(e.id.clone()));
            }
        }
        Ok(())
    }

    /// Appends rows as a new generation. On error the pool is unchanged.
    /// An empty append is a no-op and does not bump the generation.
    pub fn append(&mut self, entries: Vec<PoolEntry>) -> Result<u64, PoolError> {
        self.validate(&entries)?;
        if entries.is_empty() {
            return Ok(self.generation);
        }
        let mut seg = Segment {
            ids: Vec::with_capacity(entries.len()),
            recency: Vec::with_capacity(entries.len()),
            values: Vec::with_capacity(entries.len() * self.dim),
        };
        for (offset, e) in entries.into_iter().enumerate() {
            self.index.insert(e.id.clone(), self.rows + offset);
            seg.ids.push(e.id);
            seg.recency.push(e.recency);
            seg.values.extend_from_slice(e.vector.as_slice());
        }
        self.rows += seg.ids.len();
        Arc::make_mut(&mut self.segments).push(Arc::new(seg));
        self.generation += 1;
        Ok(self.generation)
    }

    pub fn snapshot(&self) -> PoolSnapshot {
        PoolSnapshot {
            dim: self.dim,
            segments: Arc::clone(&self.segments),
            rows: self.rows,
            generation: self.generation,
        }
    }
}

/// Immutable view of a pool generation.
#[derive(Debug, Clone)]
pub struct PoolSnapshot {
    dim: usize,
    segments: Arc<Vec<Arc<Segment>>>,
    rows: usize,
    generation: u64,
}

impl PoolSnapshot {
    pub fn empty(dim: usize) -> Self {
        FeaturePool::new(dim).snapshot()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn rows(&self) -> impl Iterator<Item = RowRef<'_>> + '_ {
        let dim = self.dim;
        self.segments.iter().flat_map(move |seg| {
            seg.ids
                .iter()
                .zip(&seg.recency)
                .zip(seg.values.chunks_exact(dim))
                .map(|((id, &recency), values)| RowRef {
                    id,
                    recency,
                    values,
                })
        })
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.segments.iter().flat_map(|s| s.ids.iter().map(String::as_str))
    }

    /// Row-major copy of the whole matrix.
    pub fn to_matrix(&self) -> Vec<f32> {
        self.segments.iter().flat_map(|s| s.values.iter().copied()).collect()
    }
}

/// On-disk pool: `<name>.pool` holds a header (magic, dimension as u32,
/// row count as u64, all little-endian) followed by row-major LE f32
/// values; `<name>.ids` holds one `id<TAB>recency` line per row.
#[derive(Debug, Clone)]
pub struct PoolFile {
    matrix: PathBuf,
    ids: PathBuf,
}

impl PoolFile {
    pub fn new(dir: &Path, name: &str) -> Self {
        Self {
            matrix: dir.join(format!("{name}.pool")),
            ids: dir.join(format!("{name}.ids")),
        }
    }

    pub fn matrix_path(&self) -> &Path {
        &self.matrix
    }

    pub fn exists(&self) -> bool {
        self.matrix.exists()
    }

    /// Appends rows at the tail and then rewrites the row count.
    pub fn append(&self, dim: usize, entries: &[PoolEntry]) -> Result<(), PoolError> {
        if let Some(parent) = self.matrix.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&self.matrix)?;
        let existing = if file.metadata()?.len() == 0 {
            write_header(&mut file, dim, 0)?;
            0
        } else {
            let (file_dim, rows) = read_header(&mut file)?;
            if file_dim != dim {
                return Err(PoolError::Dimension {
                    expected: file_dim,
                    actual: dim,
                });
            }
            rows
        };
        file.seek(SeekFrom::Start(HEADER_LEN + (existing * dim * 4) as u64))?;
        let mut w = BufWriter::new(&mut file);
        for e in entries {
            for v in e.vector.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        drop(w);
        let mut ids = OpenOptions::new().create(true).append(true).open(&self.ids)?;
        let mut buf = String::new();
        for e in entries {
            buf.push_str(&e.id);
            buf.push('\t');
            buf.push_str(&e.recency.to_string());
            buf.push('\n');
        }
        ids.write_all(buf.as_bytes())?;
        ids.flush()?;
        write_header(&mut file, dim, existing + entries.len())?;
        file.flush()?;
        Ok(())
    }

    /// Replaces the files with the full contents of `pool`.
    pub fn write_full(&self, pool: &PoolSnapshot) -> Result<(), PoolError> {
        for p in [&self.matrix, &self.ids] {
            match fs::remove_file(p) {
                Err(e) if e.kind() != io::ErrorKind::NotFound => return Err(e.into()),
                _ => {}
            }
        }
        let entries: Vec<PoolEntry> = pool
            .rows()
            .map(|r| PoolEntry {
                id: r.id.to_string(),
                recency: r.recency,
                vector: EmbeddingVector::from_stored(r.values.to_vec()),
            })
            .collect();
        self.append(pool.dim(), &entries)
    }

    pub fn load(&self, dim: usize) -> Result<FeaturePool, PoolError> {
        let mut pool = FeaturePool::new(dim);
        if !self.matrix.exists() {
            return Ok(pool);
        }
        let mut file = File::open(&self.matrix)?;
        let (file_dim, rows) = read_header(&mut file)?;
        if file_dim != dim {
            return Err(PoolError::Dimension {
                expected: dim,
                actual: file_dim,
            });
        }
        let mut raw = Vec::new();
        file.read_to_end(&mut raw)?;
        if raw.len() < rows * dim * 4 {
            return Err(PoolError::Corrupt(format!(
                "{} rows declared but only {} bytes of data",
                rows,
                raw.len()
            )));
        }
        let id_lines: Vec<String> =
            BufReader::new(File::open(&self.ids)?).lines().collect::<Result<_, _>>()?;
        if id_lines.len() < rows {
            return Err(PoolError::Corrupt(format!(
                "{rows} rows declared but {} ids present",
                id_lines.len()
            )));
        }
        let mut entries = Vec::with_capacity(rows);
        for (i, line) in id_lines.iter().take(rows).enumerate() {
            let (id, recency) = line
                .rsplit_once('\t')
                .ok_or_else(|| PoolError::Corrupt(format!("bad id line {}", i + 1)))?;
            let recency = recency
                .parse()
                .map_err(|_| PoolError::Corrupt(format!("bad recency on line {}", i + 1)))?;
            let values = raw[i * dim * 4..(i + 1) * dim * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            entries.push(PoolEntry {
                id: id.to_string(),
                recency,
                vector: EmbeddingVector::from_stored(values),
            });
        }
        pool.append(entries)?;
        Ok(pool)
    }
}

fn write_header(file: &mut File, dim: usize, rows: usize) -> io::Result<()> {
    file.seek(SeekFrom::Start(0))?;
    let mut header = Vec::with_capacity(HEADER_LEN as usize);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&(dim as u32).to_le_bytes());
    header.extend_from_slice(&(rows as u64).to_le_bytes());
    file.write_all(&header)
}

fn read_header(file: &mut File) -> Result<(usize, usize), PoolError> {
    file.seek(SeekFrom::Start(0))?;
    let mut header = [0u8; HEADER_LEN as usize];
    file.read_exact(&mut header)
        .map_err(|_| PoolError::Corrupt("short header".into()))?;
    if &header[..8] != MAGIC {
        return Err(PoolError::Corrupt("bad magic".into()));
    }
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let rows = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
    Ok((dim, rows))
}
