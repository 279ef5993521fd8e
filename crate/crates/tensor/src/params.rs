use indexmap::IndexMap;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Named trainable parameters plus non-trainable buffers (running
/// statistics), both in registration order.
pub struct ParamStore<T: Element> {
    params: IndexMap<String, Tensor<T>>,
    buffers: IndexMap<String, Tensor<T>>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore { params: IndexMap::new(), buffers: IndexMap::new() }
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    fn check_free(&self, name: &str) -> Result<()> {
        if self.params.contains_key(name) || self.buffers.contains_key(name) {
            return Err(TensorError::DuplicateParam(name.to_string()));
        }
        Ok(())
    }

    /// Registers `tensor` as a trainable leaf and returns the shared handle.
    pub fn register_param(&mut self, name: &str, tensor: Tensor<T>) -> Result<Tensor<T>> {
        self.check_free(name)?;
        let p = tensor.into_param();
        self.params.insert(name.to_string(), p.clone());
        Ok(p)
    }

    pub fn register_buffer(&mut self, name: &str, tensor: Tensor<T>) -> Result<Tensor<T>> {
        self.check_free(name)?;
        let b = tensor.detach();
        self.buffers.insert(name.to_string(), b.clone());
        Ok(b)
    }

    pub fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.params.get(name).ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor<T>> {
        self.buffers.get(name).ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Resets every parameter gradient to zeros, so parameters that do not
    /// take part in the next backward pass read as zero.
    pub fn zero_grad(&self) {
        self.params.values().for_each(Tensor::zero_grad);
    }
}
