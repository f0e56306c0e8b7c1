use std::collections::BTreeMap;

use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// First and second moment estimates for every parameter of one network,
/// plus the number of updates applied so far.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub(crate) m: BTreeMap<String, Tensor>,
    pub(crate) v: BTreeMap<String, Tensor>,
    pub t: u64,
}

impl AdamState {
    /// Zero moments shaped like `params`, `t = 0`.
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(n, p)| (n.to_owned(), Tensor::zeros_like(p)))
                .collect::<BTreeMap<_, _>>()
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.m.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.v.get(name)
    }
}

/// One bias-corrected Adam update of every parameter from its gradient
/// slot. Gradients are left in place.
pub fn adam_step(
    params: &mut ParamStore,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    state.t += 1;
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (name, value, grad) in params.iter_update() {
        let (Some(m), Some(v)) = (state.m.get_mut(name), state.v.get_mut(name)) else {
            return Err(Error::Contract(format!("optimizer state has no entry for {name}")));
        };
        if m.shape() != value.shape() || v.shape() != value.shape() {
            return Err(Error::shape(format!(
                "optimizer moments for {name} do not match shape {:?}",
                value.shape()
            )));
        }
        let theta = value.data_mut().iter_mut();
        let moments = m.data_mut().iter_mut().zip(v.data_mut().iter_mut());
        for ((p, (mi, vi)), &g) in theta.zip(moments).zip(grad.data()) {
            let g = g as f64;
            let m_new = beta1 * *mi as f64 + (1.0 - beta1) * g;
            let v_new = beta2 * *vi as f64 + (1.0 - beta2) * g * g;
            let step = lr * (m_new / c1) / ((v_new / c2).sqrt() + eps);
            *mi = m_new as f32;
            *vi = v_new as f32;
            *p = (*p as f64 - step) as f32;
        }
    }
    Ok(())
}
