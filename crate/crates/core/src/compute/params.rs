use std::collections::BTreeMap;

use super::{ComputeError, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// One trainable tensor with its Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub first_moment: Matrix,
    pub second_moment: Matrix,
    /// Whether L2 regularization applies to this tensor.
    pub decay: bool,
}

/// Named parameters plus the shared Adam step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix, decay: bool) -> Result<ParamId, ComputeError> {
        let name = name.into();
        if self.id(&name).is_some() {
            return Err(ComputeError::InvalidArgument(format!("duplicate parameter '{name}'")));
        }
        let zeros = Matrix::zeros(value.raw_dim());
        self.params.push(Param {
            name,
            first_moment: zeros.clone(),
            second_moment: zeros,
            value,
            decay,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Restores a parameter including optimizer state.
    pub fn push(&mut self, param: Param) -> Result<ParamId, ComputeError> {
        if self.id(&param.name).is_some() {
            return Err(ComputeError::InvalidArgument(format!(
                "duplicate parameter '{}'",
                param.name
            )));
        }
        let dim = param.value.raw_dim();
        if param.first_moment.raw_dim() != dim || param.second_moment.raw_dim() != dim {
            return Err(ComputeError::ShapeMismatch {
                op: "param moments",
                left: param.value.shape().to_vec(),
                right: param.first_moment.shape().to_vec(),
            });
        }
        self.params.push(param);
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Gradients keyed by parameter. Parameters that took no part in the loss
/// have no entry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Matrix>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads.iter().map(|(&id, g)| (id, g))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: Matrix) {
        match self.grads.get_mut(&id) {
            Some(g) => *g += &grad,
            None => {
                self.grads.insert(id, grad);
            }
        }
    }
}
