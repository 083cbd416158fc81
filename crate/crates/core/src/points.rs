//! Dense point sets and the squared Euclidean distance kernel.

use crate::error::{Error, Result};

/// A dense `n x d` row-major single-precision point set.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
}

impl PointMatrix {
    /// Wraps `data` as a matrix of `data.len() / d` rows. Rejects empty sets,
    /// ragged payloads and non-finite values.
    pub fn new(d: usize, data: Vec<f32>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("dimensionality must be >= 1".into()));
        }
        if data.is_empty() {
            return Err(Error::InvalidArgument("point set must not be empty".into()));
        }
        if !data.len().is_multiple_of(d) {
            return Err(Error::InvalidArgument(format!(
                "payload of {} values is not a multiple of d={d}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value at point {}, coordinate {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self {
            n: data.len() / d,
            d,
            data,
        })
    }

    /// A query set with no points. Reference sets are never empty.
    pub fn empty(d: usize) -> Self {
        Self {
            n: 0,
            d,
            data: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::InvalidArgument(format!(
                    "row {i} has {} values, expected {d}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(d, data)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.d)
    }

    /// Copies the rows in `range` into a new matrix.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Result<Self> {
        Self::new(
            self.d,
            self.data[range.start * self.d..range.end * self.d].to_vec(),
        )
    }

    /// Gathers rows by index, in the given order.
    pub fn gather(&self, idx: &[u32]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            data.extend_from_slice(self.row(i as usize));
        }
        Self {
            n: idx.len(),
            d: self.d,
            data,
        }
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }
}

/// Squared Euclidean distance, accumulated left to right in single precision.
///
/// Every engine goes through this function so that distances are bit-identical
/// regardless of which engine produced them.
///
/// Panics if the two vectors differ in length.
#[inline]
pub fn sq_euclidean(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len(), "sq_euclidean: dimension mismatch");
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let t = x - y;
        acc += t * t;
    }
    acc
}
