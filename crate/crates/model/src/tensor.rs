use crate::elem::Elem;

/// Per-sample shape `(channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Dense NCHW batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E> {
    pub n: usize,
    pub shape: Shape,
    pub data: Vec<E>,
}

impl<E: Elem> Tensor<E> {
    pub fn zeros(n: usize, shape: Shape) -> Self {
        Self {
            n,
            shape,
            data: vec![E::zero(); n * shape.len()],
        }
    }

    pub fn from_vec(n: usize, shape: Shape, data: Vec<E>) -> Self {
        assert_eq!(data.len(), n * shape.len(), "tensor data does not match its shape");
        Self { n, shape, data }
    }

    pub fn sample(&self, i: usize) -> &[E] {
        let len = self.shape.len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [E] {
        let len = self.shape.len();
        &mut self.data[i * len..(i + 1) * len]
    }
}
