//! Parameterized layers built on [`Tensor`].
//!
//! Layers do not own their tensors. Every trainable parameter and every
//! running-statistics buffer lives in a [`ParamStore`] in declaration order;
//! layers hold [`ParamId`] handles into it. The optimizer and checkpoint code
//! walk the store directly.

mod attention;
mod layers;
mod transformer;

pub use attention::MultiHeadAttention;
pub use layers::{dropout, Dropout, LayerNorm, Linear, ProjectionHead};
pub use transformer::TransformerLayer;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{finite_diff_check, GradCheckReport, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub kind: ParamKind,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, kind: ParamKind) -> ParamId {
        let value = match kind {
            ParamKind::Trainable => value.requiring_grad(),
            ParamKind::Buffer => value.detach(),
        };
        self.entries.push(ParamEntry { name: name.into(), value, kind });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    /// Replaces a value, keeping its kind; trainable values become fresh leaves.
    pub fn set(&mut self, id: ParamId, data: Vec<f64>) -> Result<()> {
        let entry = &mut self.entries[id.0];
        let t = Tensor::from_vec(data, entry.value.shape())?;
        entry.value = match entry.kind {
            ParamKind::Trainable => t.requiring_grad(),
            ParamKind::Buffer => t,
        };
        Ok(())
    }

    /// Installs `value` as-is (it keeps its own gradient tracking).
    pub fn replace(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "replacing {} of shape {:?} with {:?}",
                entry.name,
                entry.value.shape(),
                value.shape()
            )));
        }
        entry.value = value;
        Ok(())
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&id| self.entries[id.0].kind == ParamKind::Trainable).collect()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Copies every value whose name appears in `other` with the same shape.
    pub fn load_matching(&mut self, other: &ParamStore) -> Result<usize> {
        let mut copied = 0;
        for i in 0..self.entries.len() {
            if let Some(j) = other.find(&self.entries[i].name) {
                let src = &other.entries[j.0].value;
                if src.shape() != self.entries[i].value.shape() {
                    return Err(Error::Shape(format!(
                        "parameter {} has shape {:?} in source, {:?} here",
                        self.entries[i].name,
                        src.shape(),
                        self.entries[i].value.shape()
                    )));
                }
                self.set(ParamId(i), src.to_vec())?;
                copied += 1;
            }
        }
        Ok(copied)
    }
}

/// Per-forward-pass state: mode, dropout randomness and pending buffer updates.
pub struct Ctx<'a> {
    store: &'a ParamStore,
    train: bool,
    frozen: bool,
    rng: Rng,
    draws: u64,
    updates: Vec<(ParamId, Vec<f64>)>,
}

impl<'a> Ctx<'a> {
    pub fn train(store: &'a ParamStore, rng: Rng) -> Self {
        Self { store, train: true, frozen: false, rng, draws: 0, updates: Vec::new() }
    }

    pub fn eval(store: &'a ParamStore) -> Self {
        Self { store, train: false, frozen: false, rng: Rng::new(0), draws: 0, updates: Vec::new() }
    }

    /// Evaluation without gradient tracking through parameters.
    pub fn frozen(store: &'a ParamStore) -> Self {
        Self { frozen: true, ..Self::eval(store) }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn param(&self, id: ParamId) -> Tensor {
        let t = self.store.get(id);
        if self.frozen {
            t.detach()
        } else {
            t.clone()
        }
    }

    /// Fresh random stream for one stochastic op in this pass.
    pub fn next_rng(&mut self) -> Rng {
        self.draws += 1;
        self.rng.split(self.draws)
    }

    /// Latest value of a buffer, including updates pending in this pass.
    pub(crate) fn buffer(&self, id: ParamId) -> Vec<f64> {
        self.updates
            .iter()
            .rev()
            .find(|(u, _)| *u == id)
            .map(|(_, d)| d.clone())
            .unwrap_or_else(|| self.store.get(id).to_vec())
    }

    pub(crate) fn push_update(&mut self, id: ParamId, data: Vec<f64>) {
        self.updates.push((id, data));
    }

    /// Buffer updates recorded during a training pass, to be applied with
    /// [`ParamStore::set`] once the pass is over.
    pub fn into_updates(self) -> Vec<(ParamId, Vec<f64>)> {
        self.updates
    }
}

impl ParamStore {
    pub fn apply_updates(&mut self, updates: Vec<(ParamId, Vec<f64>)>) -> Result<()> {
        for (id, data) in updates {
            self.set(id, data)?;
        }
        Ok(())
    }
}

/// Finite-difference check of a forward pass over every trainable parameter
/// in `store` plus the given `inputs`.
///
/// `f` receives a store whose trainable entries are the tensors under test,
/// followed by the inputs.
pub fn module_gradcheck<F>(store: &ParamStore, inputs: &[Tensor], f: F, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &[Tensor]) -> Result<Tensor>,
{
    let ids = store.trainable_ids();
    let mut params: Vec<Tensor> = inputs.to_vec();
    params.extend(ids.iter().map(|&id| store.get(id).detach()));
    let n_inputs = inputs.len();
    finite_diff_check(
        |p| {
            let mut s = store.clone();
            for (&id, t) in ids.iter().zip(&p[n_inputs..]) {
                s.replace(id, t.clone())?;
            }
            f(&s, &p[..n_inputs])
        },
        &params,
        eps,
    )
}

pub(crate) fn uniform_tensor(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::from_vec(data, shape).expect("shape and buffer agree")
}

#[cfg(test)]
mod tests;
