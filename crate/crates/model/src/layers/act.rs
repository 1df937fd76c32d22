use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Layer;
use crate::elem::Elem;
use crate::tensor::{Shape, Tensor};

#[derive(Default)]
pub struct Relu {
    active: Vec<bool>,
}

impl<E: Elem> Layer<E> for Relu {
    fn output_shape(&self, input: Shape) -> Shape {
        input
    }

    fn forward(&mut self, mut x: Tensor<E>, train: bool) -> Tensor<E> {
        for v in &mut x.data {
            if *v < E::zero() {
                *v = E::zero();
            }
        }
        if train {
            self.active.clear();
            self.active.extend(x.data.iter().map(|&v| v > E::zero()));
        }
        x
    }

    fn backward(&mut self, mut grad: Tensor<E>) -> Tensor<E> {
        assert_eq!(self.active.len(), grad.data.len(), "relu backward without a matching forward");
        for (g, &a) in grad.data.iter_mut().zip(&self.active) {
            if !a {
                *g = E::zero();
            }
        }
        grad
    }
}

/// Inverted dropout: active only in training, identity at inference.
pub struct Dropout {
    p: f64,
    rng: ChaCha8Rng,
    keep: Vec<bool>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
        Self {
            p,
            rng: ChaCha8Rng::seed_from_u64(0),
            keep: Vec::new(),
        }
    }
}

impl<E: Elem> Layer<E> for Dropout {
    fn output_shape(&self, input: Shape) -> Shape {
        input
    }

    fn init(&mut self, rng: &mut ChaCha8Rng) {
        self.rng = ChaCha8Rng::seed_from_u64(rng.random());
    }

    fn forward(&mut self, mut x: Tensor<E>, train: bool) -> Tensor<E> {
        if !train || self.p == 0.0 {
            self.keep.clear();
            return x;
        }
        let scale = E::of(1.0 / (1.0 - self.p));
        self.keep.clear();
        for v in &mut x.data {
            let keep = self.rng.random::<f64>() >= self.p;
            self.keep.push(keep);
            *v = if keep { *v * scale } else { E::zero() };
        }
        x
    }

    fn backward(&mut self, mut grad: Tensor<E>) -> Tensor<E> {
        if self.keep.is_empty() {
            return grad;
        }
        let scale = E::of(1.0 / (1.0 - self.p));
        for (g, &k) in grad.data.iter_mut().zip(&self.keep) {
            *g = if k { *g * scale } else { E::zero() };
        }
        grad
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::check_layer;
    use super::*;

    #[test]
    fn relu_gradients() {
        check_layer(&mut Relu::default(), 2, Shape::new(3, 4, 4), 1e-6);
    }

    #[test]
    fn dropout_is_identity_at_inference() {
        let mut d = Dropout::new(0.5);
        let x = Tensor::from_vec(1, Shape::new(4, 1, 1), vec![1.0f32, 2.0, 3.0, 4.0]);
        assert_eq!(d.forward(x.clone(), false), x);
        let y = d.forward(x.clone(), true);
        assert!(y.data.iter().zip(&x.data).all(|(a, b)| *a == 0.0 || *a == 2.0 * b));
    }
}
