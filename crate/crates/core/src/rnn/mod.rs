//! Single-layer LSTM sequence classifier with exact backpropagation
//! through time, an adaptive-moment optimizer and a JSON model file.

mod lstm;
mod model;
mod optim;

pub use lstm::{cell_forward, loss_and_grads, sequence_forward, Example, Gradients, LstmParams, GATES};
pub use model::{load_model, save_model, LstmModel, MODEL_VERSION};
pub use optim::{clip_global_norm, optimizer_step, TrainState, CLIP_NORM};
