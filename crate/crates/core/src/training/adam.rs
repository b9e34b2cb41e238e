use super::AdamParams;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// Adam with decoupled weight decay:
/// `p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub params: AdamParams,
    step: u64,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Adam {
    pub fn new(params: AdamParams) -> Self {
        Self { params, step: 0, moments: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every trainable parameter in `store` that has a
    /// gradient. Parameters without one are left untouched. A non-finite
    /// gradient aborts before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let mut work = Vec::new();
        for id in store.trainable_ids() {
            let t = store.get(id);
            if let Some(g) = t.grad() {
                if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                    let name = &store.entries()[id.index()].name;
                    return Err(Error::Numeric(format!("non-finite gradient {bad} for parameter {name}")));
                }
                work.push((id, g));
            }
        }
        self.step += 1;
        for (id, g) in work {
            let mut p = store.get(id).to_vec();
            self.update(id.index(), &mut p, &g);
            store.set(id, p)?;
        }
        Ok(())
    }

    /// Updates one slot in place using the current step count.
    fn update(&mut self, slot: usize, p: &mut [f64], g: &[f64]) {
        let AdamParams { lr, weight_decay, beta1, beta2, eps } = self.params;
        if self.moments.len() <= slot {
            self.moments.resize(slot + 1, None);
        }
        let (m, v) = self.moments[slot].get_or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()]));
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps) - lr * weight_decay * p[i];
        }
    }
}
