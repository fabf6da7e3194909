//! Dense and recurrent classifier networks trained with hand-written
//! backpropagation through time.
//!
//! Weights are plain [`ndarray`] matrices. Batches have shape
//! `(b, l, f)`; dense-only networks use `l = 1`. Training runs in `f32`,
//! the gradient checks in `f64`.

mod checkpoint;
mod network;
mod spec;
mod train;

pub use checkpoint::{write_history_csv, CHECKPOINT_VERSION};
pub use network::{argmax_rows, cross_entropy, softmax, Mode, Network, Scalar};
pub use spec::{param_count, Activation, Architecture, LayerKind, LayerSpec, NetworkSpec};
pub use train::{
    batch_tensor, train, Adam, ClassifierModel, EpochRecord, PlateauSchedule, TrainConfig,
};

#[cfg(test)]
mod tests;
