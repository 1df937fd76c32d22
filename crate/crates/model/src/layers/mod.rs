//! Minimal CNN building blocks with hand-written backward passes.
//!
//! Every layer processes samples independently in inference mode, so
//! outputs never depend on how inputs are batched. Parameters are allocated
//! lazily by [`Layer::init`]; shapes and parameter counts are available
//! before that, which lets full-size architectures be inspected cheaply.

mod act;
mod conv;
mod dense;
mod pool;

use rand_chacha::ChaCha8Rng;

use crate::elem::Elem;
use crate::tensor::{Shape, Tensor};

pub use act::{Dropout, Relu};
pub use conv::Conv2d;
pub use dense::Dense;
pub use pool::{AvgPool, GlobalAvgPool, MaxPool};

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<E> {
    pub shape: Vec<usize>,
    pub value: Vec<E>,
    pub grad: Vec<E>,
}

impl<E: Elem> Param<E> {
    pub fn new(shape: Vec<usize>) -> Self {
        Self {
            shape,
            value: Vec::new(),
            grad: Vec::new(),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_allocated(&self) -> bool {
        !self.value.is_empty() || self.numel() == 0
    }

    pub fn zero_grad(&mut self) {
        if self.grad.len() == self.numel() {
            self.grad.fill(E::zero());
        } else {
            self.grad = vec![E::zero(); self.numel()];
        }
    }

    pub(crate) fn grad_mut(&mut self) -> &mut [E] {
        if self.grad.len() != self.numel() {
            self.grad = vec![E::zero(); self.numel()];
        }
        &mut self.grad
    }
}

pub type ParamVisitor<'a, E> = dyn FnMut(&str, &mut Param<E>) + 'a;

pub trait Layer<E: Elem>: Send + Sync {
    fn output_shape(&self, input: Shape) -> Shape;

    fn param_count(&self) -> usize {
        0
    }

    fn init(&mut self, _rng: &mut ChaCha8Rng) {}

    /// With `train` set the layer keeps what it needs for [`Layer::backward`].
    fn forward(&mut self, x: Tensor<E>, train: bool) -> Tensor<E>;

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, grad: Tensor<E>) -> Tensor<E>;

    fn visit_params(&mut self, _prefix: &str, _f: &mut ParamVisitor<'_, E>) {}
}

/// Named layers applied in order.
#[derive(Default)]
pub struct Sequential<E: Elem> {
    layers: Vec<(String, Box<dyn Layer<E>>)>,
}

impl<E: Elem> Sequential<E> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(mut self, name: impl Into<String>, layer: impl Layer<E> + 'static) -> Self {
        self.layers.push((name.into(), Box::new(layer)));
        self
    }

    pub fn add(&mut self, name: impl Into<String>, layer: impl Layer<E> + 'static) {
        self.layers.push((name.into(), Box::new(layer)));
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(|(n, _)| n.as_str())
    }

    /// Output shape after each named layer.
    pub fn trace_shapes(&self, input: Shape) -> Vec<(String, Shape)> {
        let mut s = input;
        self.layers
            .iter()
            .map(|(name, l)| {
                s = l.output_shape(s);
                (name.clone(), s)
            })
            .collect()
    }
}

impl<E: Elem> Layer<E> for Sequential<E> {
    fn output_shape(&self, input: Shape) -> Shape {
        self.layers.iter().fold(input, |s, (_, l)| l.output_shape(s))
    }

    fn param_count(&self) -> usize {
        self.layers.iter().map(|(_, l)| l.param_count()).sum()
    }

    fn init(&mut self, rng: &mut ChaCha8Rng) {
        for (_, l) in &mut self.layers {
            l.init(rng);
        }
    }

    fn forward(&mut self, x: Tensor<E>, train: bool) -> Tensor<E> {
        self.layers.iter_mut().fold(x, |x, (_, l)| l.forward(x, train))
    }

    fn backward(&mut self, grad: Tensor<E>) -> Tensor<E> {
        self.layers.iter_mut().rev().fold(grad, |g, (_, l)| l.backward(g))
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, E>) {
        for (name, l) in &mut self.layers {
            l.visit_params(&join(prefix, name), f);
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Parallel branches over the same input, concatenated along channels.
pub struct Concat<E: Elem> {
    branches: Vec<Sequential<E>>,
    out_channels: Vec<usize>,
}

impl<E: Elem> Concat<E> {
    pub fn new(branches: Vec<Sequential<E>>) -> Self {
        assert!(!branches.is_empty(), "concat needs at least one branch");
        Self {
            branches,
            out_channels: Vec::new(),
        }
    }
}

impl<E: Elem> Layer<E> for Concat<E> {
    fn output_shape(&self, input: Shape) -> Shape {
        let shapes: Vec<Shape> = self.branches.iter().map(|b| b.output_shape(input)).collect();
        let (h, w) = (shapes[0].h, shapes[0].w);
        assert!(
            shapes.iter().all(|s| s.h == h && s.w == w),
            "concat branches disagree on spatial size: {shapes:?}"
        );
        Shape::new(shapes.iter().map(|s| s.c).sum(), h, w)
    }

    fn param_count(&self) -> usize {
        self.branches.iter().map(|b| b.param_count()).sum()
    }

    fn init(&mut self, rng: &mut ChaCha8Rng) {
        for b in &mut self.branches {
            b.init(rng);
        }
    }

    fn forward(&mut self, x: Tensor<E>, train: bool) -> Tensor<E> {
        let n = x.n;
        let last = self.branches.len() - 1;
        let mut outs = Vec::with_capacity(self.branches.len());
        let mut x = Some(x);
        for (i, b) in self.branches.iter_mut().enumerate() {
            let input = if i == last { x.take().expect("input kept for last branch") } else { x.clone().expect("input") };
            outs.push(b.forward(input, train));
        }
        let (h, w) = (outs[0].shape.h, outs[0].shape.w);
        let shape = Shape::new(outs.iter().map(|o| o.shape.c).sum(), h, w);
        let mut out = Tensor::zeros(n, shape);
        for s in 0..n {
            let mut off = 0;
            let dst = out.sample_mut(s);
            for o in &outs {
                let src = o.sample(s);
                dst[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        if train {
            self.out_channels = outs.iter().map(|o| o.shape.c).collect();
        }
        out
    }

    fn backward(&mut self, grad: Tensor<E>) -> Tensor<E> {
        let (n, plane) = (grad.n, grad.shape.plane());
        let mut total: Option<Tensor<E>> = None;
        let mut c_off = 0;
        for (b, &c) in self.branches.iter_mut().zip(&self.out_channels) {
            let shape = Shape::new(c, grad.shape.h, grad.shape.w);
            let mut g = Tensor::zeros(n, shape);
            for s in 0..n {
                let src = &grad.sample(s)[c_off * plane..(c_off + c) * plane];
                g.sample_mut(s).copy_from_slice(src);
            }
            c_off += c;
            let dx = b.backward(g);
            match &mut total {
                None => total = Some(dx),
                Some(t) => {
                    for (a, v) in t.data.iter_mut().zip(&dx.data) {
                        *a += *v;
                    }
                }
            }
        }
        total.expect("at least one branch")
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, E>) {
        for (i, b) in self.branches.iter_mut().enumerate() {
            b.visit_params(&join(prefix, &format!("branch{i}")), f);
        }
    }
}

/// He-normal initialisation for a weight with the given fan-in.
pub(crate) fn he_normal<E: Elem>(n: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Vec<E> {
    use rand_distr::{Distribution, StandardNormal};
    let std = (2.0 / fan_in as f64).sqrt();
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            E::of(z * std)
        })
        .collect()
}


#[cfg(test)]
mod tests {
    use super::testing::check_layer;
    use super::*;

    fn branch(cin: usize, cout: usize, k: usize) -> Sequential<f64> {
        Sequential::new().push("conv", Conv2d::new(cin, cout, (k, k), 1, (k / 2, k / 2)))
    }

    #[test]
    fn concat_shapes_and_gradients() {
        let mut c = Concat::new(vec![branch(3, 2, 1), branch(3, 4, 3)]);
        assert_eq!(c.output_shape(Shape::new(3, 6, 6)), Shape::new(6, 6, 6));
        check_layer(&mut c, 2, Shape::new(3, 6, 6), 1e-5);
    }

    #[test]
    fn sequential_names_params() {
        let mut s: Sequential<f64> = Sequential::new()
            .push("conv1", Conv2d::new(1, 2, (3, 3), 1, (1, 1)))
            .push("relu1", Relu::default())
            .push("fc", Dense::new(2 * 4 * 4, 1));
        let mut names = Vec::new();
        s.visit_params("net", &mut |n, _| names.push(n.to_string()));
        assert_eq!(names, ["net.conv1.weight", "net.conv1.bias", "net.fc.weight", "net.fc.bias"]);
        assert_eq!(s.param_count(), 2 * 9 + 2 + 32 + 1);
    }
}
