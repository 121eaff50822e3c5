//! Named parameter storage shared by models, optimizers and checkpoints.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters by canonical name: `(shape, values)`.
pub type NamedParams = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Excluded from weight decay (norm gains, biases).
    pub no_decay: bool,
}

/// Ordered parameter collection. Names are canonical `module/block/layer/tensor`
/// paths and must be unique.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    version: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.add_with(name, value, false)
    }

    pub fn add_no_decay(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.add_with(name, value, true)
    }

    fn add_with(&mut self, name: impl Into<String>, value: Tensor, no_decay: bool) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name,
            value,
            grad,
            no_decay,
        });
        self.version += 1;
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    /// Mutable access to a value; bumps the version so cached kernels are dropped.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        self.version += 1;
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        self.version += 1;
        &mut self.params
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Monotone counter bumped on every mutation of parameter values.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) {
        let dst = self.params[id.0].grad.data_mut();
        for (d, s) in dst.iter_mut().zip(g.data()) {
            *d += s;
        }
    }

    /// Flat name → values map, in canonical (sorted) order.
    pub fn to_named(&self) -> NamedParams {
        self.params
            .iter()
            .map(|p| (p.name.clone(), (p.value.shape().to_vec(), p.value.data().to_vec())))
            .collect()
    }

    /// Overwrites values from a named map; every parameter must be present with
    /// a matching shape.
    pub fn load_named(&mut self, named: &NamedParams) -> Result<()> {
        if named.len() != self.params.len() {
            return Err(Error::Compatibility(format!(
                "checkpoint has {} tensors, model has {}",
                named.len(),
                self.params.len()
            )));
        }
        for p in &mut self.params {
            let (shape, data) = named
                .get(&p.name)
                .ok_or_else(|| Error::Compatibility(format!("missing parameter `{}`", p.name)))?;
            if shape.as_slice() != p.value.shape() {
                return Err(Error::Compatibility(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    p.name,
                    shape,
                    p.value.shape()
                )));
            }
            p.value = Tensor::new(shape, data.clone())
                .map_err(|e| Error::Compatibility(format!("parameter `{}`: {e}", p.name)))?;
        }
        self.version += 1;
        Ok(())
    }
}
