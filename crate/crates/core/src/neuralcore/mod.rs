//! Dense networks trained from scratch: batched forward/backward passes,
//! focal and cross-entropy losses, Adam, and step learning-rate decay.

mod adam;
mod loss;
mod mlp;
mod schedule;

pub use adam::{adam_step, AdamState};
pub use loss::{
    action_loss, focal_loss, focal_loss_vec, softmax, softmax_cross_entropy, ActionHead, FocalParams,
    PROB_CLAMP,
};
pub use mlp::{sigmoid, Activation, DenseLayer, ForwardCache, Gradients, MlpModel};
pub use schedule::LrSchedule;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
