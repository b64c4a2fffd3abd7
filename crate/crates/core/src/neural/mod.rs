//! Attention encoder-decoder with its own reverse-mode differentiation,
//! used to harvest soft-alignment matrices between translation words and
//! phoneme sequences.

mod checkpoint;
mod matrix;
mod model;
pub mod tape;
mod train;
mod vocab;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use matrix::{average_matrices, format_g17, SoftAlignmentMatrix, ROW_SUM_TOLERANCE};
pub use model::{EncodedPair, Model, ModelConfig};
pub use train::{
    fit, gradient_check, mean_loss, relative_error, train_model, EpochLog, GradCheckReport,
    SeqPair, TrainConfig, TrainingLog,
};
pub use vocab::Vocab;

/// Parameters of a model whose output layer ignores everything but its
/// bias, so the loss depends only on `out.b`.
pub fn constant_output_model(model: &Model<f64>) -> Model<f64> {
    let mut m = model.clone();
    let w = m.output_weight();
    m.params.get_mut(w).data.iter_mut().for_each(|x| *x = 0.0);
    m
}

/// Identifies the output bias tensor.
pub fn output_bias_index(model: &Model<f64>) -> usize {
    model.output_bias().0
}
