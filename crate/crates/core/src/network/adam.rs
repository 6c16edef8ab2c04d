use serde::{Deserialize, Serialize};

use super::{GradientSet, Network};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// ADAM moments and hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub hyper: AdamHyper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl<T: Real> AdamState<T> {
    pub fn new(net: &Network<T>, hyper: AdamHyper) -> Self {
        let zeros: Vec<Vec<T>> = net.params().map(|p| vec![T::zero(); p.len()]).collect();
        Self {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            hyper,
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.hyper.learning_rate = lr;
    }
}

/// One bias-corrected ADAM update of every parameter.
pub fn adam_step<T: Real>(net: &mut Network<T>, grads: &GradientSet<T>, state: &mut AdamState<T>) -> Result<()> {
    let names: Vec<String> = net.config().tensor_table().into_iter().map(|(n, _)| n).collect();
    let sizes: Vec<usize> = net.params().map(Vec::len).collect();
    let congruent = |t: &[Vec<T>]| t.len() == sizes.len() && t.iter().zip(&sizes).all(|(a, &n)| a.len() == n);
    if !congruent(&grads.tensors) || !congruent(&state.first_moment) || !congruent(&state.second_moment) {
        return Err(Error::ShapeMismatch(
            "gradients / ADAM moments do not match the network".into(),
        ));
    }
    if let Some(i) = grads.tensors.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::Training(format!("non-finite gradient in {}", names[i])));
    }

    state.step += 1;
    let h = state.hyper;
    let t = state.step as i32;
    let c1 = 1.0 - h.beta1.powi(t);
    let c2 = 1.0 - h.beta2.powi(t);
    let (b1, b2) = (T::of(h.beta1), T::of(h.beta2));
    let (ob1, ob2) = (T::of(1.0 - h.beta1), T::of(1.0 - h.beta2));
    let (inv_c1, inv_c2) = (T::of(1.0 / c1), T::of(1.0 / c2));
    let lr = T::of(h.learning_rate);
    let eps = T::of(h.epsilon);
    for (((p, g), m), v) in net
        .params_mut()
        .zip(&grads.tensors)
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + ob1 * g[i];
            v[i] = b2 * v[i] + ob2 * g[i] * g[i];
            let mh = m[i] * inv_c1;
            let vh = v[i] * inv_c2;
            p[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}
