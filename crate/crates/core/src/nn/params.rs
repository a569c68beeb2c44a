use crate::tensor::{Array, NodeId, Tape, Tensor};

/// Ordered, named parameter tensors of one network.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor>) -> Self {
        assert_eq!(names.len(), tensors.len());
        ParamSet { names, tensors }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn refs(&self) -> Vec<&Tensor> {
        self.tensors.iter().collect()
    }

    pub fn values(&self) -> Vec<Array> {
        self.tensors.iter().map(|t| t.value().clone()).collect()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn node_ids(&self) -> Vec<Option<NodeId>> {
        self.tensors.iter().map(|t| t.node_id()).collect()
    }

    /// Same values as fresh leaves on `tape`.
    pub fn to_leaves(&self, tape: &Tape) -> ParamSet {
        ParamSet {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| tape.param(t.value().clone()))
                .collect(),
        }
    }

    /// Same values without lineage.
    pub fn detached(&self) -> ParamSet {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.detach()).collect(),
        }
    }

    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> ParamSet {
        assert_eq!(tensors.len(), self.tensors.len());
        ParamSet {
            names: self.names.clone(),
            tensors,
        }
    }

    pub fn with_values(&self, values: Vec<Array>) -> ParamSet {
        self.with_tensors(values.into_iter().map(Tensor::constant).collect())
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(&self.tensors)
    }

    /// Bitwise equality of all values.
    pub fn bitwise_eq(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.data()
                        .iter()
                        .zip(b.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}
