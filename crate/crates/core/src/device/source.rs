//! Host-side origins of chunk data: an in-memory point set, or a file on disk.

use std::fs::File;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::io::dataset::{self, HEADER_BYTES};
use crate::points::PointMatrix;

static NEXT_SOURCE_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) fn next_source_id() -> u64 {
    NEXT_SOURCE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Something the pipeline can stage chunks from. Positions are rows of the
/// (rearranged) point sequence; each row carries the original point id.
pub trait ChunkSource: Sync {
    /// Identity used to tell whether a chunk is already resident on a device.
    fn source_id(&self) -> u64;
    fn len(&self) -> usize;
    fn dim(&self) -> usize;
    /// Replaces `points` and `ids` with the rows `[lo, hi)`.
    fn read_chunk(
        &self,
        lo: usize,
        hi: usize,
        points: &mut Vec<f32>,
        ids: &mut Vec<u32>,
    ) -> Result<()>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A point matrix in its original order; row `i` has id `i`.
pub struct MatrixSource<'a> {
    id: u64,
    points: &'a PointMatrix,
}

impl<'a> MatrixSource<'a> {
    pub fn new(points: &'a PointMatrix) -> Self {
        Self {
            id: next_source_id(),
            points,
        }
    }
}

impl ChunkSource for MatrixSource<'_> {
    fn source_id(&self) -> u64 {
        self.id
    }

    fn len(&self) -> usize {
        self.points.n()
    }

    fn dim(&self) -> usize {
        self.points.d()
    }

    fn read_chunk(
        &self,
        lo: usize,
        hi: usize,
        points: &mut Vec<f32>,
        ids: &mut Vec<u32>,
    ) -> Result<()> {
        let d = self.points.d();
        points.clear();
        points.extend_from_slice(&self.points.as_slice()[lo * d..hi * d]);
        ids.clear();
        ids.extend(lo as u32..hi as u32);
        Ok(())
    }
}

/// Rows stored in a dataset file and read on demand with positioned reads.
/// The original ids stay in memory.
#[derive(Debug)]
pub struct FileSource {
    id: u64,
    file: File,
    n: usize,
    d: usize,
    ids: Vec<u32>,
}

impl FileSource {
    /// Writes `points` (already in leaf order) to `path` and opens it.
    pub fn create(path: &Path, points: &PointMatrix, ids: Vec<u32>) -> Result<Self> {
        dataset::write_binary(path, points)?;
        Self::open(path, ids)
    }

    pub fn open(path: &Path, ids: Vec<u32>) -> Result<Self> {
        let (n, d) = dataset::read_binary_header(path)?;
        if ids.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} ids given for a file of {n} rows",
                ids.len()
            )));
        }
        Ok(Self {
            id: next_source_id(),
            file: File::open(path)?,
            n,
            d,
            ids,
        })
    }
}

impl ChunkSource for FileSource {
    fn source_id(&self) -> u64 {
        self.id
    }

    fn len(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn read_chunk(
        &self,
        lo: usize,
        hi: usize,
        points: &mut Vec<f32>,
        ids: &mut Vec<u32>,
    ) -> Result<()> {
        let mut bytes = vec![0u8; (hi - lo) * self.d * 4];
        let offset = HEADER_BYTES + (lo * self.d * 4) as u64;
        read_exact_at(&self.file, &mut bytes, offset)?;
        points.clear();
        points.extend(
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
        );
        ids.clear();
        ids.extend_from_slice(&self.ids[lo..hi]);
        Ok(())
    }
}

#[cfg(unix)]
fn read_exact_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    use std::os::unix::fs::FileExt;
    file.read_exact_at(buf, offset)
}

#[cfg(not(unix))]
fn read_exact_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    use std::io::{Read, Seek, SeekFrom};
    let mut f = file.try_clone()?;
    f.seek(SeekFrom::Start(offset))?;
    f.read_exact(buf)
}
