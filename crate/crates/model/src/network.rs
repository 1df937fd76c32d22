use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{architecture_registry, input_shape, Architecture, BuildElem};
use crate::elem::Elem;
use crate::layers::{Layer, Param, Sequential};
use crate::tensor::{Shape, Tensor};

/// A single-logit binary classifier.
pub struct Network<E: Elem> {
    pub architecture: Architecture,
    body: Sequential<E>,
    input: Shape,
    initialized: bool,
}

impl<E: BuildElem> Network<E> {
    /// Builds the layer graph without allocating parameters.
    pub fn new(architecture: Architecture) -> Self {
        let spec = architecture_registry()
            .get(architecture.name())
            .expect("every architecture is registered");
        let body = E::build(spec.as_ref());
        let input = input_shape(spec.input_px());
        assert_eq!(body.output_shape(input), Shape::new(1, 1, 1), "{architecture} must end in one logit");
        Self {
            architecture,
            body,
            input,
            initialized: false,
        }
    }
}

impl<E: Elem> Network<E> {
    pub fn init(&mut self, seed: u64) {
        self.body.init(&mut ChaCha8Rng::seed_from_u64(seed));
        self.initialized = true;
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn param_count(&self) -> usize {
        self.body.param_count()
    }

    pub fn layer_shapes(&self) -> Vec<(String, Shape)> {
        self.body.trace_shapes(self.input)
    }

    pub fn logits(&mut self, x: Tensor<E>, train: bool) -> Vec<E> {
        assert!(self.initialized, "network used before init");
        assert_eq!(x.shape, self.input, "input shape mismatch");
        self.body.forward(x, train).data
    }

    /// Backpropagates `dloss/dlogit` per sample into the parameter gradients.
    pub fn backward(&mut self, dlogits: &[E]) {
        let g = Tensor::from_vec(dlogits.len(), Shape::new(1, 1, 1), dlogits.to_vec());
        self.body.backward(g);
    }

    pub fn zero_grad(&mut self) {
        self.body.visit_params("", &mut |_, p| p.zero_grad());
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<E>)) {
        self.body.visit_params("", f);
    }

    /// Name → (shape, values) for every parameter.
    pub fn state(&mut self) -> BTreeMap<String, (Vec<usize>, Vec<E>)> {
        let mut out = BTreeMap::new();
        self.visit_params(&mut |name, p| {
            out.insert(name.to_string(), (p.shape.clone(), p.value.clone()));
        });
        out
    }

    /// Overwrites parameters present in `state` with matching shapes.
    /// Returns the names that were loaded.
    pub fn load_state(&mut self, state: &BTreeMap<String, (Vec<usize>, Vec<E>)>) -> Vec<String> {
        let mut loaded = Vec::new();
        self.visit_params(&mut |name, p| {
            if let Some((shape, values)) = state.get(name) {
                if *shape == p.shape && values.len() == p.numel() {
                    p.value = values.clone();
                    loaded.push(name.to_string());
                }
            }
        });
        if !loaded.is_empty() {
            self.initialized = true;
        }
        loaded
    }

    pub fn param_names(&mut self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |n, _| names.push(n.to_string()));
        names
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy on logits and its gradient w.r.t. each logit.
pub fn bce_with_logits<E: Elem>(logits: &[E], labels: &[bool]) -> (f64, Vec<E>) {
    assert_eq!(logits.len(), labels.len());
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            let z = z.to_f64();
            let y = if y { 1.0 } else { 0.0 };
            loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            E::of((sigmoid(z) - y) / n)
        })
        .collect();
    (loss / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_reference_values() {
        let (l, g) = bce_with_logits(&[0.0f64], &[true]);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g[0] + 0.5).abs() < 1e-12);
        let (l, _) = bce_with_logits(&[800.0f64, -800.0], &[true, false]);
        assert!(l.is_finite() && l < 1e-12);
    }

    #[test]
    fn sigmoid_is_bounded() {
        for z in [-1e6, -40.0, 0.0, 40.0, 1e6] {
            let s = sigmoid(z);
            assert!((0.0..=1.0).contains(&s));
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn state_round_trip() {
        let mut a: Network<f32> = Network::new(Architecture::CompactRef);
        a.init(1);
        let mut b: Network<f32> = Network::new(Architecture::CompactRef);
        b.init(2);
        let sa = a.state();
        assert_ne!(sa, b.state());
        assert_eq!(b.load_state(&sa).len(), sa.len());
        assert_eq!(sa, b.state());
    }
}
