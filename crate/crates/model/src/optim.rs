use std::collections::HashMap;

use crate::elem::Elem;
use crate::network::Network;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<E> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    moments: HashMap<String, (Vec<E>, Vec<E>)>,
}

impl<E: Elem> Adam<E> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, net: &mut Network<E>) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (lr, eps) = (self.lr, self.eps);
        let moments = &mut self.moments;
        net.visit_params(&mut |name, p| {
            if p.grad.len() != p.value.len() {
                return;
            }
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![E::zero(); p.value.len()], vec![E::zero(); p.value.len()]));
            for i in 0..p.value.len() {
                let g = p.grad[i].to_f64();
                let mi = b1 * m[i].to_f64() + (1.0 - b1) * g;
                let vi = b2 * v[i].to_f64() + (1.0 - b2) * g * g;
                m[i] = E::of(mi);
                v[i] = E::of(vi);
                if lr != 0.0 {
                    let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                    p.value[i] -= E::of(update);
                }
            }
        });
    }
}
