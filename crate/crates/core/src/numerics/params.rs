use std::collections::BTreeMap;
use std::sync::Arc;

use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<F: Real> {
    pub name: String,
    pub value: Arc<Tensor<F>>,
    /// Whether weight decay applies (weight matrices only).
    pub decay: bool,
}

/// Named trainable tensors in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore<F: Real = f32> {
    params: Vec<Parameter<F>>,
    by_name: BTreeMap<String, ParamId>,
}

impl<F: Real> ParameterStore<F> {
    pub fn new() -> Self {
        ParameterStore {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>, decay: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value: Arc::new(value),
            decay,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<F> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].value
    }

    /// Mutable access; copies the tensor if a tape still shares it.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<F>> {
        self.params.iter()
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<G: Real>(&self) -> ParameterStore<G> {
        ParameterStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: Arc::new(p.value.cast()),
                    decay: p.decay,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Replaces every value from named records; names and shapes must match
    /// the registered set exactly.
    pub fn assign_named(&mut self, records: Vec<(String, Tensor<f32>)>) -> Result<()> {
        if records.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                records.len(),
                self.params.len()
            )));
        }
        for (name, t) in records {
            let id = self
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name}")))?;
            let current = self.value(id);
            if current.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: shape {:?} does not match expected {:?}",
                    t.shape(),
                    current.shape()
                )));
            }
            self.params[id.0].value = Arc::new(t.cast());
        }
        Ok(())
    }
}

/// Lazily records parameters on a tape, at most once each.
#[derive(Debug)]
pub struct Binder {
    vars: Vec<Option<Var>>,
    requires_grad: bool,
}

impl Binder {
    pub fn new<F: Real>(store: &ParameterStore<F>, requires_grad: bool) -> Self {
        Binder {
            vars: vec![None; store.len()],
            requires_grad,
        }
    }

    pub fn bind<F: Real>(&mut self, tape: &mut Tape<F>, store: &ParameterStore<F>, id: ParamId) -> Result<Var> {
        if let Some(v) = self.vars[id.0] {
            return Ok(v);
        }
        let v = tape.leaf_shared(Arc::clone(&store.get(id).value), self.requires_grad)?;
        self.vars[id.0] = Some(v);
        Ok(v)
    }

    pub fn var(&self, id: ParamId) -> Option<Var> {
        self.vars[id.0]
    }
}

/// Per-parameter gradient sums, reduced in a fixed order.
#[derive(Clone, Debug)]
pub struct GradBuffer<F: Real> {
    bufs: Vec<Vec<F>>,
}

impl<F: Real> GradBuffer<F> {
    pub fn zeros(store: &ParameterStore<F>) -> Self {
        GradBuffer {
            bufs: store.iter().map(|p| vec![F::zero(); p.value.len()]).collect(),
        }
    }

    pub fn collect(&mut self, tape: &Tape<F>, binder: &Binder) {
        for (i, buf) in self.bufs.iter_mut().enumerate() {
            if let Some(g) = binder.var(ParamId(i)).and_then(|v| tape.grad(v)) {
                for (a, &b) in buf.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }

    pub fn add(&mut self, other: &GradBuffer<F>) {
        for (a, b) in self.bufs.iter_mut().zip(&other.bufs) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn get(&self, id: ParamId) -> &[F] {
        &self.bufs[id.0]
    }

    pub fn is_finite(&self) -> bool {
        self.bufs.iter().flatten().all(|v| v.is_finite())
    }
}
