use alloc::string::String;
use alloc::vec::Vec;

use crate::tensor::Scalar;

/// Name, shape and position of one trainable array.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named trainable arrays packed into one contiguous buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    specs: Vec<ParamSpec>,
    values: Vec<T>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { specs: Vec::new(), values: Vec::new() }
    }

    /// Reserves a zero-filled array and returns its offset.
    pub fn alloc(&mut self, name: String, shape: &[usize]) -> usize {
        let offset = self.values.len();
        let spec = ParamSpec { name, shape: shape.to_vec(), offset };
        self.values.resize(offset + spec.len(), T::zero());
        self.specs.push(spec);
        offset
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.specs
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.offset..s.offset + s.len()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let spec = self.specs.iter().find(|s| s.name == name)?;
        let range = spec.offset..spec.offset + spec.len();
        Some(&mut self.values[range])
    }
}
