use crate::error::{Error, Result};
use crate::network::ParamStore;

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(len: usize) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn reset(&mut self) {
        self.m.fill(0.0);
        self.v.fill(0.0);
        self.t = 0;
    }

    /// One update. Non-finite gradients leave parameters and moments untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore, lr: f64, wd: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(self.m.len(), grads.len()));
        }
        if let Some((name, idx)) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient {
                path: format!("{name}[{idx}]"),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let shrink = 1.0 - lr * wd;
        for (((p, &g), m), v) in params
            .data_mut()
            .iter_mut()
            .zip(grads.data())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *p = *p * shrink - lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// `ema <- decay * ema + (1 - decay) * params`.
pub fn ema_update(ema: &mut ParamStore, params: &ParamStore, decay: f64) -> Result<()> {
    if ema.len() != params.len() {
        return Err(Error::shape(ema.len(), params.len()));
    }
    for (e, &p) in ema.data_mut().iter_mut().zip(params.data()) {
        *e = decay * *e + (1.0 - decay) * p;
    }
    Ok(())
}
