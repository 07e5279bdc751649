use std::fmt;

use super::{NumericsError, Scalar};

/// Dimensions of a [`Tensor4`], in `(batch, height, width, channel)` order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape4 {
    pub const fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self { n, h, w, c }
    }

    pub const fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of pixel positions, `n * h * w`.
    pub const fn positions(&self) -> usize {
        self.n * self.h * self.w
    }

    /// Elements held by one sample, `h * w * c`.
    pub const fn sample_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub const fn with_channels(self, c: usize) -> Self {
        Self { c, ..self }
    }

    pub const fn offset(&self, n: usize, y: usize, x: usize, ch: usize) -> usize {
        ((n * self.h + y) * self.w + x) * self.c + ch
    }

    fn validate(&self) -> Result<(), NumericsError> {
        if self.n == 0 || self.h == 0 || self.w == 0 || self.c == 0 {
            return Err(NumericsError::EmptyDimension { shape: *self });
        }
        Ok(())
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.h, self.w, self.c)
    }
}

/// Dense row-major 4-D array laid out as `(batch, height, width, channel)`,
/// so the channel vector of one pixel is contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T = f32> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(shape: Shape4) -> Result<Self, NumericsError> {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: Shape4, value: T) -> Result<Self, NumericsError> {
        shape.validate()?;
        Ok(Self {
            shape,
            data: vec![value; shape.len()],
        })
    }

    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self, NumericsError> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(NumericsError::DataLength {
                shape,
                expected: shape.len(),
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(
        shape: Shape4,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Result<Self, NumericsError> {
        shape.validate()?;
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for y in 0..shape.h {
                for x in 0..shape.w {
                    for c in 0..shape.c {
                        data.push(f(n, y, x, c));
                    }
                }
            }
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, n: usize, y: usize, x: usize, c: usize) -> T {
        self.data[self.shape.offset(n, y, x, c)]
    }

    pub fn set(&mut self, n: usize, y: usize, x: usize, c: usize, value: T) {
        let i = self.shape.offset(n, y, x, c);
        self.data[i] = value;
    }

    /// The contiguous `h * w * c` block of sample `n`.
    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.shape.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks equally shaped single-sample tensors along the batch axis.
    pub fn stack(items: &[Tensor4<T>]) -> Result<Self, NumericsError> {
        let first = items.first().ok_or(NumericsError::EmptyDimension {
            shape: Shape4::new(0, 0, 0, 0),
        })?;
        let per = first.shape;
        let mut data = Vec::with_capacity(per.len() * items.len());
        for item in items {
            let s = item.shape;
            if (s.h, s.w, s.c) != (per.h, per.w, per.c) {
                return Err(NumericsError::ShapeMismatch {
                    context: "stack",
                    expected: per,
                    actual: s,
                });
            }
            data.extend_from_slice(&item.data);
        }
        let n = data.len() / per.sample_len();
        Self::from_vec(Shape4::new(n, per.h, per.w, per.c), data)
    }
}
