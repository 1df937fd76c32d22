use rand_chacha::ChaCha8Rng;

use super::{he_normal, join, Layer, Param, ParamVisitor};
use crate::elem::{gemm, Elem, Mat};
use crate::tensor::{Shape, Tensor};

/// 2-D convolution with bias, lowered to GEMM through im2col one sample at
/// a time.
pub struct Conv2d<E: Elem> {
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    ph: usize,
    pw: usize,
    weight: Param<E>,
    bias: Param<E>,
    input: Option<Tensor<E>>,
    cols: Vec<E>,
}

impl<E: Elem> Conv2d<E> {
    pub fn new(cin: usize, cout: usize, kernel: (usize, usize), stride: usize, pad: (usize, usize)) -> Self {
        assert!(stride >= 1 && kernel.0 >= 1 && kernel.1 >= 1);
        Self {
            cin,
            cout,
            kh: kernel.0,
            kw: kernel.1,
            stride,
            ph: pad.0,
            pw: pad.1,
            weight: Param::new(vec![cout, cin, kernel.0, kernel.1]),
            bias: Param::new(vec![cout]),
            input: None,
            cols: Vec::new(),
        }
    }

    /// "Same" padding for odd kernels at stride 1.
    pub fn same(cin: usize, cout: usize, kernel: (usize, usize)) -> Self {
        Self::new(cin, cout, kernel, 1, (kernel.0 / 2, kernel.1 / 2))
    }

    /// No padding.
    pub fn valid(cin: usize, cout: usize, kernel: (usize, usize), stride: usize) -> Self {
        Self::new(cin, cout, kernel, stride, (0, 0))
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.ph == 0 && self.pw == 0
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let hp = h + 2 * self.ph;
        let wp = w + 2 * self.pw;
        assert!(hp >= self.kh && wp >= self.kw, "conv kernel larger than padded input {h}x{w}");
        ((hp - self.kh) / self.stride + 1, (wp - self.kw) / self.stride + 1)
    }

    fn im2col(&self, x: &[E], h: usize, w: usize, ho: usize, wo: usize, cols: &mut [E]) {
        let hw = ho * wo;
        for ci in 0..self.cin {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ki) as isize - self.ph as isize;
                        let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            out_row.fill(E::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pw as isize;
                            *d = if ix < 0 || ix >= w as isize { E::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[E], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [E]) {
        let hw = ho * wo;
        for ci in 0..self.cin {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * hw..(row + 1) * hw];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ki) as isize - self.ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kj) as isize - self.pw as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<E: Elem> Layer<E> for Conv2d<E> {
    fn output_shape(&self, input: Shape) -> Shape {
        assert_eq!(input.c, self.cin, "conv expects {} input channels", self.cin);
        let (ho, wo) = self.out_hw(input.h, input.w);
        Shape::new(self.cout, ho, wo)
    }

    fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    fn init(&mut self, rng: &mut ChaCha8Rng) {
        self.weight.value = he_normal(self.weight.numel(), self.k(), rng);
        self.bias.value = vec![E::zero(); self.cout];
    }

    fn forward(&mut self, x: Tensor<E>, train: bool) -> Tensor<E> {
        let out_shape = self.output_shape(x.shape);
        let (h, w) = (x.shape.h, x.shape.w);
        let (ho, wo) = (out_shape.h, out_shape.w);
        let (k, hw) = (self.k(), ho * wo);
        let mut out = Tensor::zeros(x.n, out_shape);
        let mut cols = std::mem::take(&mut self.cols);
        if !self.is_pointwise() {
            cols.resize(k * hw, E::zero());
        }
        let wmat = Mat::row_major(&self.weight.value, self.cout, k);
        for s in 0..x.n {
            let dst = out.sample_mut(s);
            for (o, b) in self.bias.value.iter().enumerate() {
                dst[o * hw..(o + 1) * hw].fill(*b);
            }
            let xs = x.sample(s);
            let colmat = if self.is_pointwise() {
                Mat::row_major(xs, k, hw)
            } else {
                self.im2col(xs, h, w, ho, wo, &mut cols);
                Mat::row_major(&cols, k, hw)
            };
            gemm(wmat, colmat, E::one(), dst);
        }
        self.cols = cols;
        if train {
            self.input = Some(x);
        }
        out
    }

    fn backward(&mut self, grad: Tensor<E>) -> Tensor<E> {
        let x = self.input.take().expect("conv backward without a training forward");
        let (h, w) = (x.shape.h, x.shape.w);
        let (ho, wo) = (grad.shape.h, grad.shape.w);
        let (k, hw, cout) = (self.k(), ho * wo, self.cout);
        let pointwise = self.is_pointwise();
        let mut dx = Tensor::zeros(x.n, x.shape);
        let mut cols = std::mem::take(&mut self.cols);
        let mut dcols = Vec::new();
        if !pointwise {
            cols.resize(k * hw, E::zero());
            dcols.resize(k * hw, E::zero());
        }
        self.weight.grad_mut();
        self.bias.grad_mut();
        let mut dw = std::mem::take(&mut self.weight.grad);
        let wt = Mat::row_major(&self.weight.value, cout, k).t();
        for s in 0..x.n {
            let g = Mat::row_major(grad.sample(s), cout, hw);
            let colmat = if pointwise {
                Mat::row_major(x.sample(s), k, hw)
            } else {
                self.im2col(x.sample(s), h, w, ho, wo, &mut cols);
                Mat::row_major(&cols, k, hw)
            };
            gemm(g, colmat.t(), E::one(), &mut dw);
            for (o, acc) in self.bias.grad.iter_mut().enumerate() {
                *acc += grad.sample(s)[o * hw..(o + 1) * hw].iter().copied().sum::<E>();
            }
            if pointwise {
                gemm(wt, g, E::zero(), dx.sample_mut(s));
            } else {
                gemm(wt, g, E::zero(), &mut dcols);
                self.col2im(&dcols, h, w, ho, wo, dx.sample_mut(s));
            }
        }
        self.weight.grad = dw;
        self.cols = cols;
        dx
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, E>) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
