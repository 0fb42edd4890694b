use crate::nn::{Real, Tensor};

/// A named tensor owned by a module. Running statistics are stored as
/// non-trainable parameters so they travel through the same checkpoint path.
#[derive(Clone, Debug)]
pub struct Param<S> {
    id: String,
    trainable: bool,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
}

impl<S: Real> Param<S> {
    pub fn new(id: impl Into<String>, value: Tensor<S>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param {
            id: id.into(),
            trainable: true,
            value,
            grad,
        }
    }

    pub fn buffer(id: impl Into<String>, value: Tensor<S>) -> Self {
        Param {
            trainable: false,
            ..Param::new(id, value)
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(S::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything that owns parameters. Visiting order is deterministic and defines
/// the checkpoint layout and optimizer buffer order.
pub trait Module<S: Real> {
    fn params(&self) -> Vec<&Param<S>>;
    fn params_mut(&mut self) -> Vec<&mut Param<S>>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_trainable(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| p.is_trainable())
            .map(|p| p.len())
            .sum()
    }
}

/// Joins a scope prefix and a leaf name with a dot.
pub(crate) fn scoped(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
