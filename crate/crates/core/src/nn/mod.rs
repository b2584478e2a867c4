//! Dense numerical core: graph encoder, readout, inner-product head, losses
//! and Adam, each with an explicit backward pass.

mod adam;
mod dense;
mod encoder;
mod gradcheck;
mod loss;
mod readout;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use dense::{dot, Dense};
pub use encoder::{gnn_backward, gnn_forward, EncoderCache, EncoderGrads, ModelParams, Propagator};
pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use loss::{bce_with_logits, proj_head, sigmoid, softmax_xent};
pub use readout::{readout, readout_backward, readout_forward, ReadoutCache};

use crate::rng::RngStream;

/// Uniform in ±sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut RngStream) -> Dense {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = Dense::zeros(rows, cols);
    m.as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = rng.uniform(-bound, bound));
    m
}
