use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{LxlError, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub step: u64,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

/// First/second moment estimates keyed by parameter name. Each parameter keeps its own step
/// count so parameters introduced mid-training get fresh bias correction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState<T = f32> {
    moments: BTreeMap<String, Moments<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new() -> Self {
        AdamState {
            moments: BTreeMap::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Moments<T>> {
        self.moments.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, m: Moments<T>) {
        self.moments.insert(name.into(), m);
    }

    /// Drops moments for parameters that no longer exist or changed shape.
    pub fn retain_matching(&mut self, params: &ParamStore<T>) {
        self.moments
            .retain(|name, mo| params.get(name).is_some_and(|p| p.shape() == mo.m.shape()));
    }
}

/// One Adam update over every parameter that has a gradient.
///
/// All gradients are validated before any parameter changes, so an error leaves
/// `params` and `state` untouched.
pub fn adam_step<T: Element>(
    params: &mut ParamStore<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| LxlError::Validation(format!("gradient for unknown parameter {name}")))?;
        if p.shape() != g.shape() {
            return Err(LxlError::shape(format!("gradient {name}"), p.shape(), g.shape()));
        }
        if let Some(mo) = state.moments.get(name) {
            if mo.m.shape() != g.shape() {
                return Err(LxlError::shape(format!("adam state {name}"), g.shape(), mo.m.shape()));
            }
        }
        if !g.all_finite() {
            return Err(LxlError::NonFinite(format!("gradient of {name}")));
        }
    }
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one, lr, eps) = (T::one(), cfg.lr, T::of(cfg.eps));
    for (name, g) in grads {
        let mo = state.moments.entry(name.clone()).or_insert_with(|| Moments {
            step: 0,
            m: Tensor::zeros(g.shape()),
            v: Tensor::zeros(g.shape()),
        });
        mo.step += 1;
        let c1 = T::of(1.0 - cfg.beta1.powi(mo.step as i32));
        let c2 = T::of(1.0 - cfg.beta2.powi(mo.step as i32));
        let step_size = T::of(lr);
        let p = params.get_mut(name).expect("validated");
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(mo.m.data_mut().iter_mut())
            .zip(mo.v.data_mut().iter_mut())
        {
            *mv = b1 * *mv + (one - b1) * gv;
            *vv = b2 * *vv + (one - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= step_size * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
