//! Loss, optimizer, schedule and the resumable training loop.

mod optim;
mod trainer;

pub use optim::{lr_at, Adam};
pub use trainer::{
    layer_groups, loss_and_grads, mse, mse_loss, run, sample_batch, trace_csv, train, TraceRow,
    TrainConfig, TrainState,
};
