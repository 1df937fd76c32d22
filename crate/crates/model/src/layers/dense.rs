use rand_chacha::ChaCha8Rng;

use super::{he_normal, join, Layer, Param, ParamVisitor};
use crate::elem::{gemm, Elem, Mat};
use crate::tensor::{Shape, Tensor};

/// Fully connected layer over the flattened per-sample input.
pub struct Dense<E: Elem> {
    fin: usize,
    fout: usize,
    weight: Param<E>,
    bias: Param<E>,
    input: Option<Tensor<E>>,
}

impl<E: Elem> Dense<E> {
    pub fn new(fin: usize, fout: usize) -> Self {
        Self {
            fin,
            fout,
            weight: Param::new(vec![fout, fin]),
            bias: Param::new(vec![fout]),
            input: None,
        }
    }
}

impl<E: Elem> Layer<E> for Dense<E> {
    fn output_shape(&self, input: Shape) -> Shape {
        assert_eq!(input.len(), self.fin, "dense expects {} inputs, got {input:?}", self.fin);
        Shape::new(self.fout, 1, 1)
    }

    fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    fn init(&mut self, rng: &mut ChaCha8Rng) {
        self.weight.value = he_normal(self.weight.numel(), self.fin, rng);
        self.bias.value = vec![E::zero(); self.fout];
    }

    fn forward(&mut self, x: Tensor<E>, train: bool) -> Tensor<E> {
        let os = self.output_shape(x.shape);
        let mut out = Tensor::zeros(x.n, os);
        // Weight-major product `W · x` per sample keeps outputs independent
        // of the batch composition.
        let w = Mat::row_major(&self.weight.value, self.fout, self.fin);
        for s in 0..x.n {
            let dst = out.sample_mut(s);
            dst.copy_from_slice(&self.bias.value);
            gemm(w, Mat::row_major(x.sample(s), self.fin, 1), E::one(), dst);
        }
        if train {
            self.input = Some(x);
        }
        out
    }

    fn backward(&mut self, grad: Tensor<E>) -> Tensor<E> {
        let x = self.input.take().expect("dense backward without a training forward");
        let n = x.n;
        let g = Mat::row_major(&grad.data, n, self.fout);
        gemm(g.t(), Mat::row_major(&x.data, n, self.fin), E::one(), self.weight.grad_mut());
        let db = self.bias.grad_mut();
        for s in 0..n {
            for (acc, v) in db.iter_mut().zip(grad.sample(s)) {
                *acc += *v;
            }
        }
        let mut dx = Tensor::zeros(n, x.shape);
        gemm(g, Mat::row_major(&self.weight.value, self.fout, self.fin), E::zero(), &mut dx.data);
        dx
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, E>) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
