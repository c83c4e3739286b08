use crate::error::{shape_mismatch, Error, Result};
use crate::nn::params::ParamStore;
use crate::tensor::{Element, Tensor};

/// Bias-corrected ADAM state for every tensor of one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamState<T: Element> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Element> AdamState<T> {
    /// Moments at zero, with (beta1, beta2, eps) = (0.9, 0.999, 1e-8).
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        let zeros = || store.values().iter().map(|p| vec![T::zero(); p.numel()]).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One update of every parameter in `store`; `grads[i]` belongs to the
/// `i`-th tensor of the store.
pub fn adam_step<T: Element>(store: &mut ParamStore<T>, grads: &[Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::Config(format!(
            "adam_step: {} parameters, {} gradients, {} moment slots",
            store.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (id, g) in store.ids().zip(grads) {
        if g.shape() != store.get(id).shape() {
            return Err(shape_mismatch("adam_step", store.get(id).shape(), g.shape()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (tb1, tb2, lr, eps) = (T::of(b1), T::of(b2), T::of(state.lr), T::of(state.eps));
    let (ic1, ic2) = (T::of(1.0 / c1), T::of(1.0 / c2));
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let g = grads[k].data();
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        let p = store.get(id);
        let shape = p.shape().to_vec();
        let mut data = p.clone().into_vec();
        for i in 0..data.len() {
            m[i] = tb1 * m[i] + (T::one() - tb1) * g[i];
            v[i] = tb2 * v[i] + (T::one() - tb2) * g[i] * g[i];
            let mh = m[i] * ic1;
            let vh = v[i] * ic2;
            data[i] -= lr * mh / (vh.sqrt() + eps);
        }
        store.set(id, Tensor::new(&shape, data)?)?;
    }
    Ok(())
}
