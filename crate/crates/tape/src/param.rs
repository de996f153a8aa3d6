use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// A trainable tensor with its most recent gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    value: Tensor,
    #[serde(skip)]
    grad: Option<Tensor>,
    requires_grad: bool,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        Self {
            value,
            grad: None,
            requires_grad: true,
        }
    }

    /// A parameter excluded from differentiation and optimization.
    pub fn frozen(value: Tensor) -> Self {
        Self {
            value,
            grad: None,
            requires_grad: false,
        }
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    /// Gradient from the last backward pass; zeros before any.
    pub fn grad(&self) -> Tensor {
        self.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.value.shape()))
    }

    pub fn grad_ref(&self) -> Option<&Tensor> {
        self.grad.as_ref()
    }

    pub fn set_grad(&mut self, grad: Tensor) {
        assert_eq!(
            grad.shape(),
            self.value.shape(),
            "gradient shape must match parameter shape"
        );
        self.grad = Some(grad);
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}
