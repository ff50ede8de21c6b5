//! Dense, row-major `f64` tensors with explicit shapes.
//!
//! Tensors are immutable values with shared storage, so cloning is cheap and
//! no operation ever mutates its inputs. Scalars are rank-1 tensors of shape
//! `[1]`; matrices are rank-2 `[rows, cols]`.

use std::fmt;
use std::rc::Rc;

/// An immutable dense tensor of `f64` values.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor from a shape and row-major data.
    ///
    /// Panics if the shape's element count does not match `data.len()`.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        let count: usize = shape.iter().product();
        assert_eq!(
            count,
            data.len(),
            "shape {:?} implies {} elements, got {}",
            shape,
            count,
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data: Rc::new(data),
        }
    }

    /// A tensor of zeros.
    pub fn zeros(shape: &[usize]) -> Self {
        let count = shape.iter().product();
        Tensor::new(shape, vec![0.0; count])
    }

    /// A tensor with every element set to `value`.
    pub fn full(shape: &[usize], value: f64) -> Self {
        let count = shape.iter().product();
        Tensor::new(shape, vec![value; count])
    }

    /// A scalar, represented as shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Tensor::new(&[1], vec![value])
    }

    /// The shape as a slice.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// True when the tensor has no elements.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row-major data slice.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Copies the data out as a `Vec`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    /// Number of rows; requires rank 2.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() requires rank 2, shape {:?}", self.shape);
        self.shape[0]
    }

    /// Number of columns; requires rank 2.
    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() requires rank 2, shape {:?}", self.shape);
        self.shape[1]
    }

    /// Element at `(row, col)`; requires rank 2.
    pub fn get2(&self, row: usize, col: usize) -> f64 {
        let c = self.cols();
        self.data[row * c + col]
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() requires exactly one element, shape {:?}", self.shape);
        self.data[0]
    }

    /// Applies `f` elementwise, producing a new tensor of the same shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::new(&self.shape, self.data.iter().map(|&x| f(x)).collect())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, x) in self.data.iter().take(PREVIEW).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{x}")?;
        }
        if self.data.len() > PREVIEW {
            write!(f, ", …")?;
        }
        write!(f, "]")
    }
}
