//! Ordered datums with a removal mask.
//!
//! Removal never deletes or reorders storage, so an index names the same datum
//! for the forgetter, the retrain oracle and the reports. Reads of masked items
//! through [`Dataset::datum`] are counted; evaluation code that legitimately
//! looks at removed items uses [`Dataset::datum_unaudited`].

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Borrowed view of one datum: feature vector plus optional class label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Datum<'a> {
    pub x: &'a [f64],
    pub label: Option<usize>,
}

impl<'a> Datum<'a> {
    pub fn new(x: &'a [f64]) -> Self {
        Self { x, label: None }
    }

    pub fn labelled(x: &'a [f64], label: usize) -> Self {
        Self { x, label: Some(label) }
    }
}

#[derive(Debug)]
pub struct Dataset {
    dim: usize,
    items: Vec<f64>,
    labels: Option<Vec<usize>>,
    active: Vec<bool>,
    n_active: usize,
    masked_reads: AtomicU64,
}

impl Clone for Dataset {
    fn clone(&self) -> Self {
        Self {
            dim: self.dim,
            items: self.items.clone(),
            labels: self.labels.clone(),
            active: self.active.clone(),
            n_active: self.n_active,
            masked_reads: AtomicU64::new(self.masked_reads()),
        }
    }
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.items == other.items
            && self.labels == other.labels
            && self.active == other.active
    }
}

impl Dataset {
    /// Builds an all-active dataset from row vectors of common dimension.
    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<usize>>) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        let mut items = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
            }
            items.extend_from_slice(r);
        }
        Self::from_flat(dim, items, labels)
    }

    pub fn from_flat(dim: usize, items: Vec<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        if dim == 0 {
            if !items.is_empty() {
                return Err(Error::DimensionMismatch { expected: 1, got: 0 });
            }
        } else if !items.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: items.len() % dim });
        }
        if items.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let n = if dim == 0 { 0 } else { items.len() / dim };
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: l.len() });
            }
        }
        Ok(Self {
            dim,
            items,
            labels,
            active: vec![true; n],
            n_active: n,
            masked_reads: AtomicU64::new(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total number of stored items, active or not.
    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn n_active(&self) -> usize {
        self.n_active
    }

    pub fn is_active(&self, index: usize) -> bool {
        self.active.get(index).copied().unwrap_or(false)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn label(&self, index: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[index])
    }

    /// Datum access used by training and forgetting; reading a masked item is counted.
    pub fn datum(&self, index: usize) -> Datum<'_> {
        if !self.active[index] {
            self.masked_reads.fetch_add(1, Ordering::Relaxed);
        }
        self.datum_unaudited(index)
    }

    /// Datum access for evaluation of removed sets; not counted.
    pub fn datum_unaudited(&self, index: usize) -> Datum<'_> {
        Datum { x: &self.items[index * self.dim..(index + 1) * self.dim], label: self.label(index) }
    }

    /// Number of reads of masked items through [`Self::datum`].
    pub fn masked_reads(&self) -> u64 {
        self.masked_reads.load(Ordering::Relaxed)
    }

    /// Active indices in storage order.
    pub fn active_indices(&self) -> Vec<usize> {
        self.active.iter().enumerate().filter_map(|(i, &a)| a.then_some(i)).collect()
    }

    pub fn removed_indices(&self) -> Vec<usize> {
        self.active.iter().enumerate().filter_map(|(i, &a)| (!a).then_some(i)).collect()
    }

    /// Iterator over active datums in storage order.
    pub fn iter_active(&self) -> impl Iterator<Item = (usize, Datum<'_>)> + '_ {
        (0..self.len()).filter(|&i| self.active[i]).map(move |i| (i, self.datum_unaudited(i)))
    }

    /// Masked copy with `indices` removed. See [`dataset_remove`].
    pub fn remove(&self, indices: &[usize]) -> Result<Dataset> {
        let mut out = self.clone();
        out.remove_in_place(indices)?;
        Ok(out)
    }

    /// Masks `indices`; on error the dataset is left unchanged.
    pub fn remove_in_place(&mut self, indices: &[usize]) -> Result<()> {
        let mut seen = vec![false; self.len()];
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange { index: i, len: self.len() });
            }
            if !self.active[i] || seen[i] {
                return Err(Error::IndexAlreadyRemoved(i));
            }
            seen[i] = true;
        }
        for &i in indices {
            self.active[i] = false;
        }
        self.n_active -= indices.len();
        Ok(())
    }

    /// Copy restricted to the given items (all active), preserving their relative order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut items = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = self.labels.as_ref().map(|_| Vec::with_capacity(indices.len()));
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange { index: i, len: self.len() });
            }
            items.extend_from_slice(self.datum_unaudited(i).x);
            if let (Some(l), Some(src)) = (labels.as_mut(), self.labels.as_ref()) {
                l.push(src[i]);
            }
        }
        Dataset::from_flat(self.dim, items, labels)
    }
}

/// Returns a copy of `d` with `indices` masked out. Storage and indexing are unchanged.
pub fn dataset_remove(d: &Dataset, indices: &[usize]) -> Result<Dataset> {
    d.remove(indices)
}
