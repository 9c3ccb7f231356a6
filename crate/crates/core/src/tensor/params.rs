use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Trainable, subject to decoupled weight decay.
    Decayed,
    /// Trainable, excluded from weight decay (biases, norm affines, scalars).
    NotDecayed,
    /// Non-trainable state carried with the parameters (running statistics).
    Buffer,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::Buffer)
    }
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    kind: ParamKind,
    value: Tensor,
}

/// Named tensors with insertion-ordered, deterministic iteration.
#[derive(Clone, Debug, Default)]
pub struct ParameterSet {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(invalid(format!("duplicate parameter name `{name}`")));
        }
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(Entry { name, kind, value });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|i| &self.entries[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.id(name)?;
        Some(&mut self.entries[i].value)
    }

    pub fn value(&self, id: usize) -> &Tensor {
        &self.entries[id].value
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.entries[id].value
    }

    pub fn name(&self, id: usize) -> &str {
        &self.entries[id].name
    }

    pub fn kind(&self, id: usize) -> ParamKind {
        self.entries[id].kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str, ParamKind, &Tensor)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i, e.name.as_str(), e.kind, &e.value))
    }

    /// Number of trainable scalars (buffers excluded).
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind.trainable())
            .map(|e| e.value.len())
            .sum()
    }

    /// Replaces every value, keeping names and kinds. Shapes must match.
    pub fn assign(&mut self, other: &ParameterSet) -> Result<()> {
        if other.len() != self.len() {
            return Err(invalid("parameter set sizes differ"));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(invalid(format!("parameter `{}` does not match `{}`", dst.name, src.name)));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }
}
