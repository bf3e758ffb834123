use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Confidence in `[0, 1]` for each ground atom, indexed by atom position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValuationVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> ValuationVector<T> {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![T::zero(); len],
        }
    }

    /// Wraps raw values, clamping each entry into `[0, 1]`.
    pub fn from_clamped(values: Vec<T>) -> Self {
        Self {
            values: values.into_iter().map(|v| v.max(T::zero()).min(T::one())).collect(),
        }
    }

    /// Wraps raw values, returning `None` if any entry lies outside `[0, 1]` or is NaN.
    pub fn try_from_vec(values: Vec<T>) -> Option<Self> {
        values
            .iter()
            .all(|v| *v >= T::zero() && *v <= T::one())
            .then_some(Self { values })
    }

    /// Grows the vector to `len` entries, padding with zeros.
    pub fn resized(mut self, len: usize) -> Self {
        self.values.resize(len, T::zero());
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.values.iter()
    }

    /// Sets entry `i` to `max(current, v)` after clamping `v` into `[0, 1]`.
    pub fn raise(&mut self, i: usize, v: T) {
        let v = v.max(T::zero()).min(T::one());
        if v > self.values[i] {
            self.values[i] = v;
        }
    }
}

impl<T> Index<usize> for ValuationVector<T> {
    type Output = T;

    fn index(&self, i: usize) -> &T {
        &self.values[i]
    }
}

impl<T> IndexMut<usize> for ValuationVector<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.values[i]
    }
}
