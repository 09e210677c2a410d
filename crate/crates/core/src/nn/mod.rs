//! Small dense-network substrate: matrices, a parameter store with gradient
//! accumulators, dense and residual layers, masked softmax, and a tape for
//! reverse-mode gradients.

mod layers;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use layers::{Activation, Dense, ResidualBlock};
pub use params::{GradBuffer, ParamId, ParamRecord, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor2;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("every entry is masked; no action available")]
    NoAction,
    #[error("score {0} is not finite")]
    NonFinite(usize),
    #[error("index {0} is outside the unmasked support")]
    OutsideSupport(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Softmax over the unmasked entries (`mask[i] == true` means allowed);
/// masked entries get exactly zero.
pub fn masked_softmax(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>, NnError> {
    if scores.len() != mask.len() {
        return Err(NnError::Shape(format!(
            "{} scores, {} mask entries",
            scores.len(),
            mask.len()
        )));
    }
    if let Some(i) = (0..scores.len()).find(|&i| mask[i] && !scores[i].is_finite()) {
        return Err(NnError::NonFinite(i));
    }
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &ok)| ok)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(NnError::NoAction);
    }
    let mut out: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(&s, &ok)| if ok { (s - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// Central-difference derivative of `f` with respect to every scalar of
/// every parameter, in store order.
pub fn finite_difference_gradient(
    store: &ParamStore,
    h: f64,
    mut f: impl FnMut(&ParamStore) -> f64,
) -> GradBuffer {
    let mut probe = store.clone();
    let mut out = store.zero_buffer();
    for id in store.ids() {
        for k in 0..store.value(id).data().len() {
            let orig = store.value(id).data()[k];
            probe.value_mut(id).data_mut()[k] = orig + h;
            let up = f(&probe);
            probe.value_mut(id).data_mut()[k] = orig - h;
            let down = f(&probe);
            probe.value_mut(id).data_mut()[k] = orig;
            out[id.index()].data_mut()[k] = (up - down) / (2.0 * h);
        }
    }
    out
}

/// Euclidean norm of all entries of a gradient buffer.
pub fn grad_norm(grads: &GradBuffer) -> f64 {
    grads
        .iter()
        .flat_map(|t| t.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so its norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_grad_norm(grads: &mut GradBuffer, max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for t in grads.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over all entries.
pub fn max_relative_error(a: &GradBuffer, b: &GradBuffer, floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
