use std::collections::HashMap;

use crate::error::{NumericsError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to one parameter storage. Two modules that hold the same `ParamId`
/// share the storage itself, not a copy of it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param<S> {
    pub name: String,
    pub tensor: Tensor<S>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
    by_name: HashMap<String, ParamId>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Registers a new parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param { name, tensor });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<S>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Overwrites the value of `id`, keeping its shape.
    pub fn assign(&mut self, id: ParamId, value: &Tensor<S>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.tensor.shape() != value.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "assign",
                detail: format!(
                    "{}: {:?} vs {:?}",
                    p.name,
                    p.tensor.shape(),
                    value.shape()
                ),
            });
        }
        p.tensor = value.clone();
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Dense gradient buffers, one per parameter, plus which ones a backward pass reached.
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    bufs: Vec<Vec<S>>,
    touched: Vec<bool>,
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros_like(store: &ParamStore<S>) -> Self {
        Self {
            bufs: store
                .params
                .iter()
                .map(|p| vec![S::zero(); p.tensor.len()])
                .collect(),
            touched: vec![false; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> &[S] {
        &self.bufs[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [S] {
        self.touched[id.0] = true;
        &mut self.bufs[id.0]
    }

    pub fn touched(&self, id: ParamId) -> bool {
        self.touched[id.0]
    }

    pub fn zero(&mut self) {
        for (b, t) in self.bufs.iter_mut().zip(self.touched.iter_mut()) {
            if *t {
                b.iter_mut().for_each(|v| *v = S::zero());
                *t = false;
            }
        }
    }

    /// `self += other`, visiting only buffers `other` touched.
    pub fn add_assign(&mut self, other: &Gradients<S>) {
        for (i, ob) in other.bufs.iter().enumerate() {
            if other.touched[i] {
                self.touched[i] = true;
                for (a, &b) in self.bufs[i].iter_mut().zip(ob) {
                    *a += b;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: S) {
        for (b, &t) in self.bufs.iter_mut().zip(&self.touched) {
            if t {
                b.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.bufs.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn global_norm(&self) -> f64 {
        self.bufs
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }
}
