use super::Layer;
use crate::elem::Elem;
use crate::tensor::{Shape, Tensor};

fn pooled(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(len + 2 * pad >= k, "pool window larger than input");
    (len + 2 * pad - k) / stride + 1
}

/// Max pooling without padding.
pub struct MaxPool {
    k: usize,
    stride: usize,
    argmax: Vec<u32>,
    in_shape: Option<Shape>,
}

impl MaxPool {
    pub fn new(k: usize, stride: usize) -> Self {
        Self {
            k,
            stride,
            argmax: Vec::new(),
            in_shape: None,
        }
    }
}

impl<E: Elem> Layer<E> for MaxPool {
    fn output_shape(&self, input: Shape) -> Shape {
        Shape::new(
            input.c,
            pooled(input.h, self.k, self.stride, 0),
            pooled(input.w, self.k, self.stride, 0),
        )
    }

    fn forward(&mut self, x: Tensor<E>, train: bool) -> Tensor<E> {
        let os = <Self as Layer<E>>::output_shape(self, x.shape);
        let (h, w) = (x.shape.h, x.shape.w);
        let mut out = Tensor::zeros(x.n, os);
        if train {
            self.argmax.clear();
            self.argmax.reserve(x.n * os.len());
            self.in_shape = Some(x.shape);
        }
        for s in 0..x.n {
            let xs = x.sample(s);
            let dst = out.sample_mut(s);
            for c in 0..os.c {
                let plane = &xs[c * h * w..(c + 1) * h * w];
                for oy in 0..os.h {
                    for ox in 0..os.w {
                        let (y0, x0) = (oy * self.stride, ox * self.stride);
                        let mut best = y0 * w + x0;
                        for dy in 0..self.k {
                            for dx in 0..self.k {
                                let i = (y0 + dy) * w + x0 + dx;
                                if plane[i] > plane[best] {
                                    best = i;
                                }
                            }
                        }
                        dst[(c * os.h + oy) * os.w + ox] = plane[best];
                        if train {
                            self.argmax.push(best as u32);
                        }
                    }
                }
            }
        }
        out
    }

    fn backward(&mut self, grad: Tensor<E>) -> Tensor<E> {
        let in_shape = self.in_shape.take().expect("max-pool backward without a training forward");
        let plane = in_shape.plane();
        let mut dx = Tensor::zeros(grad.n, in_shape);
        let per_c = grad.shape.plane();
        for s in 0..grad.n {
            let g = grad.sample(s);
            let d = dx.sample_mut(s);
            for (j, &gv) in g.iter().enumerate() {
                let c = j / per_c;
                let src = self.argmax[s * grad.shape.len() + j] as usize;
                d[c * plane + src] += gv;
            }
        }
        dx
    }
}

/// Average pooling with zero padding; padded positions are not counted.
pub struct AvgPool {
    k: usize,
    stride: usize,
    pad: usize,
    in_shape: Option<Shape>,
}

impl AvgPool {
    pub fn new(k: usize, stride: usize, pad: usize) -> Self {
        Self {
            k,
            stride,
            pad,
            in_shape: None,
        }
    }

    fn window(&self, o: usize, len: usize) -> (usize, usize) {
        let start = (o * self.stride) as isize - self.pad as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + self.k as isize) as usize).min(len);
        (lo, hi)
    }
}

impl<E: Elem> Layer<E> for AvgPool {
    fn output_shape(&self, input: Shape) -> Shape {
        Shape::new(
            input.c,
            pooled(input.h, self.k, self.stride, self.pad),
            pooled(input.w, self.k, self.stride, self.pad),
        )
    }

    fn forward(&mut self, x: Tensor<E>, train: bool) -> Tensor<E> {
        let os = <Self as Layer<E>>::output_shape(self, x.shape);
        let (h, w) = (x.shape.h, x.shape.w);
        let mut out = Tensor::zeros(x.n, os);
        for s in 0..x.n {
            let xs = x.sample(s);
            let dst = out.sample_mut(s);
            for c in 0..os.c {
                let plane = &xs[c * h * w..(c + 1) * h * w];
                for oy in 0..os.h {
                    let (y0, y1) = self.window(oy, h);
                    for ox in 0..os.w {
                        let (x0, x1) = self.window(ox, w);
                        let mut acc = E::zero();
                        for yy in y0..y1 {
                            for xx in x0..x1 {
                                acc += plane[yy * w + xx];
                            }
                        }
                        dst[(c * os.h + oy) * os.w + ox] = acc / E::of(((y1 - y0) * (x1 - x0)) as f64);
                    }
                }
            }
        }
        if train {
            self.in_shape = Some(x.shape);
        }
        out
    }

    fn backward(&mut self, grad: Tensor<E>) -> Tensor<E> {
        let in_shape = self.in_shape.take().expect("avg-pool backward without a training forward");
        let (h, w) = (in_shape.h, in_shape.w);
        let os = grad.shape;
        let mut dx = Tensor::zeros(grad.n, in_shape);
        for s in 0..grad.n {
            let g = grad.sample(s);
            let d = dx.sample_mut(s);
            for c in 0..os.c {
                for oy in 0..os.h {
                    let (y0, y1) = self.window(oy, h);
                    for ox in 0..os.w {
                        let (x0, x1) = self.window(ox, w);
                        let share = g[(c * os.h + oy) * os.w + ox] / E::of(((y1 - y0) * (x1 - x0)) as f64);
                        for yy in y0..y1 {
                            for xx in x0..x1 {
                                d[c * h * w + yy * w + xx] += share;
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Mean over each channel's spatial plane.
#[derive(Default)]
pub struct GlobalAvgPool {
    in_shape: Option<Shape>,
}

impl<E: Elem> Layer<E> for GlobalAvgPool {
    fn output_shape(&self, input: Shape) -> Shape {
        Shape::new(input.c, 1, 1)
    }

    fn forward(&mut self, x: Tensor<E>, train: bool) -> Tensor<E> {
        let plane = x.shape.plane();
        let mut out = Tensor::zeros(x.n, Shape::new(x.shape.c, 1, 1));
        for s in 0..x.n {
            let xs = x.sample(s);
            for (c, o) in out.sample_mut(s).iter_mut().enumerate() {
                *o = xs[c * plane..(c + 1) * plane].iter().copied().sum::<E>() / E::of(plane as f64);
            }
        }
        if train {
            self.in_shape = Some(x.shape);
        }
        out
    }

    fn backward(&mut self, grad: Tensor<E>) -> Tensor<E> {
        let in_shape = self.in_shape.take().expect("global pool backward without a training forward");
        let plane = in_shape.plane();
        let mut dx = Tensor::zeros(grad.n, in_shape);
        for s in 0..grad.n {
            let g = grad.sample(s).to_vec();
            for (c, chunk) in dx.sample_mut(s).chunks_mut(plane).enumerate() {
                chunk.fill(g[c] / E::of(plane as f64));
            }
        }
        dx
    }
}
