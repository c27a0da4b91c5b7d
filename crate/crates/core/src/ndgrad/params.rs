use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Trainable tensors plus a frozen copy used as a stop-gradient target.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    names: Vec<String>,
    values: Vec<Tensor>,
    snapshot: Vec<Tensor>,
}

impl Parameters {
    pub fn new(named: Vec<(String, Tensor)>) -> Self {
        let (names, values): (Vec<_>, Vec<_>) = named.into_iter().unzip();
        let snapshot = values.clone();
        Parameters {
            names,
            values,
            snapshot,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    /// Direct access to the live tensors. The snapshot is left untouched.
    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn snapshot(&self) -> &[Tensor] {
        &self.snapshot
    }

    pub fn refresh_snapshot(&mut self) {
        self.snapshot.clone_from(&self.values);
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Replaces the live tensors, checking shapes, and refreshes the snapshot.
    pub fn assign(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.values.len()
            || values.iter().zip(&self.values).any(|(a, b)| !a.same_shape(b))
        {
            return Err(Error::usage("parameter shapes do not match"));
        }
        self.values = values;
        self.refresh_snapshot();
        Ok(())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::usage(format!(
                "flat vector has {} entries, parameters have {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut offset = 0;
        for t in &mut self.values {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        self.refresh_snapshot();
        Ok(())
    }

    /// Binds the live tensors as trainable leaves.
    pub fn bind(&self, g: &mut Graph) -> Result<Vec<Var>> {
        self.values.iter().map(|t| g.param(t.clone())).collect()
    }

    /// Binds the snapshot as constants.
    pub fn bind_snapshot(&self, g: &mut Graph) -> Result<Vec<Var>> {
        self.snapshot.iter().map(|t| g.constant(t.clone())).collect()
    }
}
