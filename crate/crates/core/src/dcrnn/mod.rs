//! Diffusion-convolutional recurrent forecaster.

mod cell;
mod diffusion;
mod model;

pub use cell::{dcgru_step, step_backward, step_forward, CellParams, StepCache};
pub use diffusion::{diffusion_conv, diffusion_stack, diffusion_stack_backward, transition_matrix, DiffusionFilter};
pub use model::{
    batch_loss, forecast_prepared, loss_and_gradients, masked_mae, seq2seq_forward, DcgruConfig, DcgruModel,
    ForecastOutput, PreparedWindow, MODEL_FORMAT, MODEL_VERSION,
};
