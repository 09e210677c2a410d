use rand::Rng;

use crate::nn::{Activation, Dense, NnError, ParamStore, ResidualBlock, Tape, Var};

/// Input projection, a stack of residual blocks, and a scalar head applied
/// row-wise: one score per candidate row.
#[derive(Clone, Debug)]
pub struct PolicyNet {
    input: Dense,
    blocks: Vec<ResidualBlock>,
    head: Dense,
}

impl PolicyNet {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_width: usize,
        width: usize,
        blocks: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let input = Dense::new(
            store,
            &format!("{name}.input"),
            input_width,
            width,
            Activation::Relu,
            rng,
        );
        let blocks = (0..blocks)
            .map(|b| ResidualBlock::new(store, &format!("{name}.block{b}"), width, rng))
            .collect();
        let head = Dense::new(
            store,
            &format!("{name}.head"),
            width,
            1,
            Activation::Linear,
            rng,
        );
        Self {
            input,
            blocks,
            head,
        }
    }

    /// Maps an n×input_width matrix to an n×1 score column.
    pub fn scores(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let mut h = self.input.forward(tape, store, x)?;
        for block in &self.blocks {
            h = block.forward(tape, store, h)?;
        }
        self.head.forward(tape, store, h)
    }
}
