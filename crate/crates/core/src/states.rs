//! Flat storage for batches of `d`-dimensional state tuples.

use alloc::vec::Vec;

use rand::Rng;

use crate::{Error, Result};

/// Row-major table of `len` tuples, each holding `dims` state indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateBatch {
    dims: usize,
    states: Vec<usize>,
}

impl StateBatch {
    pub fn new(dims: usize) -> Self {
        assert!(dims > 0, "state tuples need at least one dimension");
        Self {
            dims,
            states: Vec::new(),
        }
    }

    pub fn from_flat(dims: usize, states: Vec<usize>) -> Result<Self> {
        if dims == 0 || !states.len().is_multiple_of(dims) {
            return Err(Error::shape("flat state buffer is not a whole number of tuples"));
        }
        Ok(Self { dims, states })
    }

    pub fn from_rows<I, R>(dims: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[usize]>,
    {
        let mut batch = Self::new(dims);
        for row in rows {
            batch.push(row.as_ref())?;
        }
        Ok(batch)
    }

    pub fn push(&mut self, row: &[usize]) -> Result<()> {
        if row.len() != self.dims {
            return Err(Error::shape("tuple length differs from batch dimension"));
        }
        self.states.extend_from_slice(row);
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.states[i * self.dims..(i + 1) * self.dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.states.chunks_exact(self.dims)
    }

    pub fn as_flat(&self) -> &[usize] {
        &self.states
    }

    pub fn max_state(&self) -> Option<usize> {
        self.states.iter().copied().max()
    }

    /// Draws `count` rows uniformly with replacement.
    pub fn resample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<StateBatch> {
        if self.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let mut out = StateBatch::new(self.dims);
        out.states.reserve(count * self.dims);
        for _ in 0..count {
            let i = rng.random_range(0..self.len());
            out.states.extend_from_slice(self.row(i));
        }
        Ok(out)
    }
}
