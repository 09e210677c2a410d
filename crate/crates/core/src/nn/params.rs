use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, Tensor2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, each with a gradient accumulator of the same shape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor2>,
    grads: Vec<Tensor2>,
}

/// Gradients laid out like a [`ParamStore`]; one per backward worker.
pub type GradBuffer = Vec<Tensor2>;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor2) -> ParamId {
        let name = name.into();
        assert!(self.id_of(&name).is_none(), "duplicate parameter {name}");
        self.grads.push(Tensor2::zeros(value.rows(), value.cols()));
        self.values.push(value);
        self.names.push(name);
        ParamId(self.values.len() - 1)
    }

    /// Adds a tensor drawn uniformly from `[-1/√fan_in, 1/√fan_in]`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.add(
            name,
            Tensor2::from_vec(rows, cols, data).expect("sized above"),
        )
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor2 {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor2 {
        &self.grads[id.0]
    }

    pub fn grads(&self) -> &[Tensor2] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [Tensor2] {
        &mut self.grads
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.data().len()).sum()
    }

    pub fn zero_buffer(&self) -> GradBuffer {
        self.values
            .iter()
            .map(|v| Tensor2::zeros(v.rows(), v.cols()))
            .collect()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    /// Adds a worker's gradients into the accumulators.
    pub fn accumulate(&mut self, buffer: &GradBuffer) {
        for (g, b) in self.grads.iter_mut().zip(buffer) {
            g.add_scaled(b, 1.0);
        }
    }

    /// Gradient ascent: `value += lr * grad`, then the accumulators are cleared.
    /// With no preceding backward pass the accumulators are zero and nothing moves.
    pub fn sgd_step(&mut self, lr: f64) {
        for (v, g) in self.values.iter_mut().zip(&self.grads) {
            v.add_scaled(g, lr);
        }
        self.zero_grad();
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor2::is_finite)
    }

    pub fn to_records(&self) -> Vec<ParamRecord> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(name, v)| ParamRecord {
                name: name.clone(),
                shape: [v.rows(), v.cols()],
                values: v.data().to_vec(),
            })
            .collect()
    }

    /// Overwrites values from checkpoint records; every parameter must be
    /// present with a matching shape.
    pub fn load_records(&mut self, records: &[ParamRecord]) -> Result<(), NnError> {
        if records.len() != self.len() {
            return Err(NnError::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.len(),
                records.len()
            )));
        }
        for rec in records {
            let id = self
                .id_of(&rec.name)
                .ok_or_else(|| NnError::Checkpoint(format!("unknown parameter {}", rec.name)))?;
            let current = &self.values[id.0];
            if [current.rows(), current.cols()] != rec.shape {
                return Err(NnError::Checkpoint(format!(
                    "parameter {} has shape {:?}, checkpoint has {:?}",
                    rec.name,
                    current.shape(),
                    rec.shape
                )));
            }
            self.values[id.0] = Tensor2::from_vec(rec.shape[0], rec.shape[1], rec.values.clone())
                .map_err(|e| NnError::Checkpoint(format!("{}: {e}", rec.name)))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}
