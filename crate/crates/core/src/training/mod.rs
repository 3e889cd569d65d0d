//! Loss, optimizer, training loop and the sliding-window inference driver.

mod adam;
mod data;
mod infer;
mod loss;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use data::{aec_signals, fit_input_norm, BlockSet, UtteranceSpectra, BLOCK_FRAMES};
pub use infer::{estimated_near_end_frames, infer_stream, predict_frames, EmitFrame, InferConfig, InferOutput};
pub use loss::{loss_grad, loss_j, LossConfig, VarianceAxis, VARIANCE_COEFF};
pub use train::{train, train_from, LogRecord, TrainConfig, TrainObserver, TrainOutcome, TrainState};
