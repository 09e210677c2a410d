use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Linear,
    Relu,
}

/// `activation(x · W + b)`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), fan_in, fan_out, fan_in, rng);
        let bias = store.add_uniform(format!("{name}.bias"), 1, fan_out, fan_in, rng);
        Self {
            weight,
            bias,
            activation,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w)?;
        let out = tape.add_row(xw, b)?;
        Ok(match self.activation {
            Activation::Linear => out,
            Activation::Relu => tape.relu(out),
        })
    }
}

/// `x + second(relu(first(x)))`; width-preserving.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub first: Dense,
    pub second: Dense,
}

impl ResidualBlock {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, rng: &mut impl Rng) -> Self {
        Self {
            first: Dense::new(
                store,
                &format!("{name}.0"),
                width,
                width,
                Activation::Relu,
                rng,
            ),
            second: Dense::new(
                store,
                &format!("{name}.1"),
                width,
                width,
                Activation::Linear,
                rng,
            ),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let h = self.first.forward(tape, store, x)?;
        let f = self.second.forward(tape, store, h)?;
        tape.add(x, f)
    }
}
