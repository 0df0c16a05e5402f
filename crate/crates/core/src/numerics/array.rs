//! Dense row-major `f64` array with explicit shape.

use crate::error::{CoreError, Result};

/// Dense array of 64-bit reals in row-major order.
///
/// The shape product always equals the data length, and entries are expected
/// to stay finite; [`Array::validate_finite`] surfaces violations as errors
/// at module boundaries rather than panicking in hot loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    /// Builds an array, checking the shape product and entry finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(CoreError::ShapeMismatch {
                context: "Array::new",
                expected: shape,
                got: vec![data.len()],
            });
        }
        let a = Array { shape, data };
        a.validate_finite("Array::new")?;
        Ok(a)
    }

    /// Zero-filled array of the given shape.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Array { shape, data: vec![0.0; n] }
    }

    /// Same shape as `self`, zero-filled.
    pub fn zeros_like(&self) -> Self {
        Array { shape: self.shape.clone(), data: vec![0.0; self.data.len()] }
    }

    /// Builds from a function of the flat index. No finiteness check; the
    /// caller controls the generator.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Array { shape, data: (0..n).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Errors if any entry is NaN or infinite.
    pub fn validate_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(CoreError::NonFinite { context: context.to_string() })
        }
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, other: &Array) -> Result<Array> {
        if self.shape != other.shape {
            return Err(CoreError::ShapeMismatch {
                context: "Array::add",
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Array { shape: self.shape.clone(), data })
    }

    /// Scales every entry in place.
    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Resets every entry to zero, keeping the allocation.
    pub fn fill_zero(&mut self) {
        for v in &mut self.data {
            *v = 0.0;
        }
    }

    /// Number of rows of a 2-D array.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of columns of a 2-D array.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    /// Immutable view of row `r` of a 2-D array.
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// Mutable view of row `r` of a 2-D array.
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    /// Entry accessor for 2-D arrays.
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    /// Mutable entry accessor for 2-D arrays.
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        let cols = self.cols();
        &mut self.data[r * cols + c]
    }
}
